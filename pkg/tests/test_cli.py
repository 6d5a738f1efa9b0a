import json
import shutil
import subprocess
import sys
from importlib import resources

import jsonschema
import numpy as np
import pytest

from vokit.cli import main
from vokit.correspondence import DepthMap
from vokit.fileio import load_assignments, load_trajectory, save_matches, save_trajectory, write_depth_pfm
from vokit.geometry import Pose
from vokit.regressor import init_params, load_checkpoint, RegressorConfig
from vokit.robust_pose import MatchSet
from vokit.trajectory import Trajectory, accumulate, ate


def schema(name):
    return json.loads(resources.files("vokit").joinpath("schemas", f"{name}.schema.json").read_text())


def run(capsys, *argv):
    try:
        code = main([str(a) for a in argv])
    except SystemExit as e:  # argparse usage errors and --help
        code = e.code
    out = capsys.readouterr()
    return code, out.out, out.err


def run_json(capsys, *argv, schema_name=None):
    code, out, err = run(capsys, *argv)
    assert code == 0, err
    doc = json.loads(out)
    if schema_name:
        jsonschema.validate(doc, schema(schema_name))
    return doc


@pytest.fixture
def synth(tmp_path, capsys):
    def make(name, *extra, pairs=4):
        m, p, k = (tmp_path / f"{name}.jsonl", tmp_path / f"{name}.txt", tmp_path / f"{name}_k.json")
        code, _, err = run(capsys, "synth", "--pairs", pairs, "--out-matches", m, "--out-poses", p, "--out-intrinsics", k, *extra)
        assert code == 0, err
        return m, p, k

    return make


class TestSchemasShipped:
    def test_all_valid_schemas(self):
        files = [f for f in resources.files("vokit").joinpath("schemas").iterdir() if f.name.endswith(".json")]
        assert len(files) >= 7
        for f in files:
            jsonschema.Draft202012Validator.check_schema(json.loads(f.read_text()))


class TestUsage:
    def test_unknown_flag(self, capsys):
        code, _, _ = run(capsys, "eval-traj", "--est", "a", "--gt", "b", "--bogus")
        assert code == 1

    def test_no_command(self, capsys):
        assert run(capsys)[0] == 1

    def test_missing_file_is_data_error(self, tmp_path, capsys):
        assert run(capsys, "eval-traj", "--est", tmp_path / "nope", "--gt", tmp_path / "nope")[0] == 2

    def test_console_script(self, tmp_path):
        exe = shutil.which("vokit")
        cmd = [exe] if exe else [sys.executable, "-m", "vokit.cli"]
        r = subprocess.run(cmd + ["--help"], capture_output=True, text=True)
        assert r.returncode == 0 and "eval-traj" in r.stdout


class TestSynth:
    def test_outputs_and_determinism(self, tmp_path, capsys, synth):
        m1, p1, k1 = synth("a", "--outliers", "0.2", "--noise", "0.5", "--seed", "3")
        m2, p2, _ = synth("b", "--outliers", "0.2", "--noise", "0.5", "--seed", "3")
        assert m1.read_bytes() == m2.read_bytes() and p1.read_bytes() == p2.read_bytes()
        for line in m1.read_text().splitlines():
            jsonschema.validate(json.loads(line), schema("matches_line"))
        jsonschema.validate(json.loads(k1.read_text()), schema("intrinsics"))
        assert len(load_trajectory(p1)) == 5


class TestGenGt:
    def test_homography_identity(self, tmp_path, capsys, rng):
        k = rng.uniform(0, 600, (12, 2))
        (tmp_path / "kp.jsonl").write_text(json.dumps({"pair_id": "p", "kpts0": k.tolist(), "kpts1": k.tolist(), "homography": np.eye(3).tolist()}) + "\n")
        doc = run_json(capsys, "gen-gt", "--mode", "homography", "--matches", tmp_path / "kp.jsonl", "--out", tmp_path / "a.json", schema_name="gen_gt_summary")
        assert doc["total_matches"] == 12 and doc["seed"] == 0
        jsonschema.validate(json.loads((tmp_path / "a.json").read_text()), schema("assignment"))
        (pid, a), = load_assignments(tmp_path / "a.json")
        assert a.matches0.tolist() == list(range(12)) and a.matches1.tolist() == list(range(12))

    def test_depth_identity(self, tmp_path, capsys, rng):
        k = rng.uniform([10, 10], [630, 470], (10, 2))
        (tmp_path / "kp.jsonl").write_text(json.dumps({"pair_id": "p0", "kpts0": k.tolist(), "kpts1": k[::-1].tolist()}) + "\n")
        write_depth_pfm(DepthMap(np.full((480, 640), 5.0)), tmp_path / "d.pfm")
        save_trajectory(accumulate([Pose.identity()]), tmp_path / "gt.txt")
        (tmp_path / "k.json").write_text(json.dumps({"fx": 320, "fy": 320, "cx": 320, "cy": 240, "width": 640, "height": 480}))
        run_json(
            capsys, "gen-gt", "--mode", "depth", "--matches", tmp_path / "kp.jsonl", "--depth", tmp_path / "d.pfm",
            "--intrinsics", tmp_path / "k.json", "--pose-gt", tmp_path / "gt.txt", "--out", tmp_path / "a.json",
            schema_name="gen_gt_summary",
        )
        (_, a), = load_assignments(tmp_path / "a.json")
        assert a.matches0.tolist() == list(range(9, -1, -1))

    def test_depth_missing_input(self, tmp_path, capsys):
        (tmp_path / "kp.jsonl").write_text('{"pair_id":"p","kpts0":[[0,0]],"kpts1":[[0,0]]}\n')
        code, _, err = run(capsys, "gen-gt", "--mode", "depth", "--matches", tmp_path / "kp.jsonl", "--out", tmp_path / "a.json")
        assert code == 1 and "--depth" in err


class TestEvalMatches:
    def test_noiseless(self, capsys, synth):
        m, p, k = synth("clean", "--trajectory")
        doc = run_json(capsys, "eval-matches", "--matches", m, "--pose-gt", p, "--intrinsics", k, schema_name="metrics_matches")
        assert all(v == pytest.approx(1.0, abs=1e-9) for v in doc["aggregate"]["auc"].values())
        assert doc["aggregate"]["precision"]["0.0001"] == 1.0 and doc["seed"] == 0

    def test_outliers_auc(self, capsys, synth):
        m, p, k = synth("dirty", "--outliers", "0.3", "--seed", "1", pairs=20)
        doc = run_json(capsys, "eval-matches", "--matches", m, "--pose-gt", p, "--intrinsics", k, "--seed", "1", schema_name="metrics_matches")
        assert doc["aggregate"]["auc"]["5"] >= 0.95

    def test_empty_file(self, tmp_path, capsys, synth):
        _, p, k = synth("x")
        (tmp_path / "empty.jsonl").write_text("")
        assert run(capsys, "eval-matches", "--matches", tmp_path / "empty.jsonl", "--pose-gt", p, "--intrinsics", k)[0] == 2

    def test_short_trajectory(self, tmp_path, capsys, synth):
        m, _, k = synth("x")
        save_trajectory(accumulate([Pose.identity()]), tmp_path / "short.txt")
        assert run(capsys, "eval-matches", "--matches", m, "--pose-gt", tmp_path / "short.txt", "--intrinsics", k)[0] == 2

    def test_csv_and_rerun(self, capsys, synth):
        m, p, k = synth("c", "--noise", "1", "--outliers", "0.2")
        argv = ("eval-matches", "--matches", m, "--pose-gt", p, "--intrinsics", k, "--output", "csv", "--seed", "4")
        a, b = run(capsys, *argv), run(capsys, *argv)
        assert a == b and a[1].splitlines()[0].startswith("pair_id,num_matches,pose_error_deg")
        assert len(a[1].splitlines()) == 5


class TestTrainInfer:
    SMALL = {"model": {"model_dim": 16, "ffn_dim": 32, "num_layers": 2, "num_heads": 2, "dropout_rate": 0.0}}

    @pytest.fixture
    def cfg(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(self.SMALL))
        return path

    def test_zero_steps_is_init(self, tmp_path, capsys, cfg):
        doc = run_json(capsys, "train", "--synthetic", 4, "--config", cfg, "--steps", 0, "--seed", 5, "--checkpoint-out", tmp_path / "c.ck", schema_name="train_summary")
        assert doc["steps_run"] == 0 and doc["final"] is None
        ck = load_checkpoint(tmp_path / "c.ck")
        assert ck.params.equals(init_params(RegressorConfig(**self.SMALL["model"]), 5))

    def test_resume_bitwise(self, tmp_path, capsys, cfg):
        common = ("train", "--synthetic", 6, "--config", cfg, "--batch-size", 4, "--seed", 2)
        run_json(capsys, *common, "--steps", 8, "--checkpoint-out", tmp_path / "full.ck", "--log", tmp_path / "full.csv")
        run_json(capsys, *common, "--steps", 5, "--checkpoint-out", tmp_path / "a.ck", "--log", tmp_path / "part.csv")
        run_json(capsys, *common, "--steps", 3, "--checkpoint-in", tmp_path / "a.ck", "--checkpoint-out", tmp_path / "b.ck", "--log", tmp_path / "part.csv")
        assert (tmp_path / "full.ck").read_bytes() == (tmp_path / "b.ck").read_bytes()
        assert (tmp_path / "full.csv").read_text() == (tmp_path / "part.csv").read_text()

    def test_data_requires_pose_gt(self, tmp_path, capsys, synth):
        m, _, _ = synth("d")
        assert run(capsys, "train", "--data", m, "--checkpoint-out", tmp_path / "c.ck")[0] == 1

    def test_non_finite_exit(self, tmp_path, capsys, cfg):
        code, _, err = run(capsys, "train", "--synthetic", 2, "--config", cfg, "--learning-rate", "1e300", "--steps", 5, "--checkpoint-out", tmp_path / "c.ck")
        assert code == 2 and "NonFiniteLoss" in err

    def test_overfit_end_to_end(self, tmp_path, capsys, cfg, synth):
        # same seed and point count as the synth fixture, so the data coincide
        m, p, _ = synth("fit", "--points", 16)
        run_json(capsys, "train", "--data", m, "--pose-gt", p, "--config", cfg, "--steps", 600, "--learning-rate", "3e-3", "--checkpoint-out", tmp_path / "c.ck")
        doc = run_json(capsys, "infer", "--checkpoint", tmp_path / "c.ck", "--matches", m, "--out", tmp_path / "est.txt")
        assert doc["num_poses"] == 5
        est, gt = load_trajectory(tmp_path / "est.txt"), load_trajectory(p)
        assert ate(est, gt, "none") < 0.1
        np.testing.assert_array_equal(est.translations[0], 0)

    def test_infer_start_pose(self, tmp_path, capsys, cfg, synth):
        m, _, _ = synth("s")
        run_json(capsys, "train", "--synthetic", 2, "--config", cfg, "--steps", 1, "--checkpoint-out", tmp_path / "c.ck")
        code, out, _ = run(capsys, "infer", "--checkpoint", tmp_path / "c.ck", "--matches", m, "--start-pose", "1 2 3 0 0 0 1")
        assert code == 0 and out.splitlines()[0].startswith("1 2 3 0 0 0 1")
        assert run(capsys, "infer", "--checkpoint", tmp_path / "c.ck", "--matches", m, "--start-pose", "1 2 3")[0] == 1

    def test_infer_degenerate(self, tmp_path, capsys, synth):
        from vokit.regressor import Normalizer, save_checkpoint

        params = init_params(RegressorConfig(**self.SMALL["model"]))
        for v in params.tensors.values():
            v[...] = 0
        save_checkpoint(tmp_path / "z.ck", params, Normalizer(640, 480))
        m, _, _ = synth("z")
        code, _, err = run(capsys, "infer", "--checkpoint", tmp_path / "z.ck", "--matches", m)
        assert code == 2 and "DegenerateInput" in err and "pair 'seed0'" in err


class TestEvalTraj:
    def write_line(self, path, step, n=30):
        save_trajectory(accumulate([Pose(np.eye(3), [step, 0, 0])] * (n - 1)), path)

    def test_identical(self, tmp_path, capsys):
        self.write_line(tmp_path / "gt.txt", 1.0)
        doc = run_json(capsys, "eval-traj", "--est", tmp_path / "gt.txt", "--gt", tmp_path / "gt.txt", "--kitti-lengths", "desk", schema_name="metrics_trajectory")
        assert doc["ate_m"] == 0 and doc["rpe"]["dt_m"] == 0 and doc["kitti"] == {"dt_pct": 0.0, "dr_deg_per_m": 0.0}

    def test_scale_drift(self, tmp_path, capsys):
        self.write_line(tmp_path / "gt.txt", 1.0)
        self.write_line(tmp_path / "est.txt", 1.01)
        doc = run_json(capsys, "eval-traj", "--est", tmp_path / "est.txt", "--gt", tmp_path / "gt.txt", "--kitti-lengths", "5,10", schema_name="metrics_trajectory")
        assert abs(doc["kitti"]["dt_pct"] - 1.0) < 1e-9

    def test_too_short_for_kitti(self, tmp_path, capsys):
        self.write_line(tmp_path / "gt.txt", 1.0, n=4)
        doc = run_json(capsys, "eval-traj", "--est", tmp_path / "gt.txt", "--gt", tmp_path / "gt.txt", schema_name="metrics_trajectory")
        assert doc["kitti"] is None

    def test_length_mismatch(self, tmp_path, capsys):
        self.write_line(tmp_path / "a.txt", 1.0, n=5)
        self.write_line(tmp_path / "b.txt", 1.0, n=6)
        assert run(capsys, "eval-traj", "--est", tmp_path / "a.txt", "--gt", tmp_path / "b.txt")[0] == 2

    def test_csv(self, tmp_path, capsys):
        self.write_line(tmp_path / "gt.txt", 1.0, n=6)
        code, out, _ = run(capsys, "eval-traj", "--est", tmp_path / "gt.txt", "--gt", tmp_path / "gt.txt", "--output", "csv")
        assert code == 0 and out.splitlines()[0] == "step,dt_m,dr_deg" and len(out.splitlines()) == 6

    def test_quiet(self, tmp_path, capsys):
        self.write_line(tmp_path / "gt.txt", 1.0, n=6)
        assert run(capsys, "eval-traj", "--est", tmp_path / "gt.txt", "--gt", tmp_path / "gt.txt", "--quiet") == (0, "", "")
