import json
import math
import struct

import numpy as np
import pytest

from vokit.correspondence import Assignment, DepthMap
from vokit.epipolar import CameraIntrinsics
from vokit.errors import BadQuaternion, ParseError, SchemaError, UnsupportedFormat
from vokit.fileio import (
    format_trajectory,
    iter_keypoint_pairs,
    load_assignments,
    load_depth_pfm,
    load_intrinsics,
    load_matches,
    load_trajectory,
    parse_trajectory,
    save_assignments,
    save_intrinsics,
    save_matches,
    save_trajectory,
    write_depth_pfm,
)
from vokit.geometry import Pose, random_rotation
from vokit.robust_pose import MatchSet
from vokit.trajectory import Trajectory, accumulate


class TestTrajectoryFiles:
    def test_identity_line(self):
        tr = parse_trajectory("0 0 0 0 0 0 1\n")
        np.testing.assert_array_equal(tr.rotations[0], np.eye(3))
        np.testing.assert_array_equal(tr.translations[0], 0)

    def test_quarter_turn(self):
        tr = parse_trajectory("# header\n\n1.5 0 0 0 0 0.7071068 0.7071068\n")
        np.testing.assert_allclose(tr.translations[0], [1.5, 0, 0])
        np.testing.assert_allclose(tr.rotations[0], [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-7)

    def test_wrong_field_count(self):
        with pytest.raises(ParseError) as e:
            parse_trajectory("0 0 0 0 0 0 1\n0 0 0 0 0 1\n")
        assert e.value.line == 2

    def test_bad_quaternion(self):
        with pytest.raises(BadQuaternion):
            parse_trajectory("0 0 0 0 0 0 1.01\n")
        with pytest.warns(UserWarning):
            tr = parse_trajectory("0 0 0 0 0 0 1.0001\n")
        np.testing.assert_allclose(tr.rotations[0], np.eye(3), atol=1e-12)

    @pytest.mark.parametrize("bad", ["nan", "inf", "x"])
    def test_non_finite(self, bad):
        with pytest.raises(ParseError) as e:
            parse_trajectory(f"0 0 0 0 0 0 1\n0 {bad} 0 0 0 0 1\n")
        assert e.value.line == 2

    def test_round_trip(self, tmp_path, rng):
        rels = [Pose(random_rotation(rng), rng.normal(size=3) * 100) for _ in range(20)]
        tr = accumulate(rels, Pose(random_rotation(rng), [1e-7, 3.0, -2e5]))
        save_trajectory(tr, tmp_path / "t.txt")
        back = load_trajectory(tmp_path / "t.txt")
        assert back.allclose(tr, atol=1e-12)

    def test_identity_text(self):
        tr = Trajectory(np.tile(np.eye(3), (3, 1, 1)), np.zeros((3, 3)))
        assert format_trajectory(tr) == "0 0 0 0 0 0 1\n" * 3

    def test_tum(self, tmp_path):
        stamps = [0.1, 0.2 + 1e-9, 1234567.123456789]
        tr = Trajectory(np.tile(np.eye(3), (3, 1, 1)), np.arange(9.0).reshape(3, 3), stamps)
        save_trajectory(tr, tmp_path / "t.tum", "tum")
        back = load_trajectory(tmp_path / "t.tum", "tum")
        assert back.timestamps.tolist() == stamps
        with pytest.raises(ParseError):
            parse_trajectory("1 0 0 0 0 0 0 1\n1 0 0 0 0 0 0 1\n", "tum")


class TestMatchFiles:
    def test_single(self, tmp_path):
        p = tmp_path / "m.jsonl"
        p.write_text('{"kpts0":[[1,2]],"kpts1":[[3,4]],"conf":[0.9],"pair_id":"a"}\n')
        (m,) = load_matches(p)
        assert len(m) == 1 and m.pair_id == "a" and m.kpts1.tolist() == [[3, 4]]

    @pytest.mark.parametrize(
        "line,field",
        [
            ('{"kpts0":[[1,2],[1,1]],"kpts1":[[3,4]],"conf":[0.9],"pair_id":"b"}', None),
            ('{"kpts0":[[1,2]],"kpts1":[[3,4]],"conf":[1.2],"pair_id":"b"}', "conf"),
            ('{"kpts0":[[1,2]],"kpts1":[[3,"x"]],"conf":[0.5],"pair_id":"b"}', "kpts1"),
            ('{"kpts0":[[1,NaN]],"kpts1":[[3,4]],"conf":[0.5],"pair_id":"b"}', "kpts0"),
            ('{"kpts1":[[3,4]],"conf":[0.5],"pair_id":"b"}', "kpts0"),
        ],
    )
    def test_schema_errors(self, tmp_path, line, field):
        p = tmp_path / "m.jsonl"
        p.write_text(line + "\n")
        with pytest.raises(SchemaError) as e:
            load_matches(p)
        assert e.value.pair_id == "b"
        if field:
            assert e.value.field == field

    def test_bit_exact(self, tmp_path, rng):
        ms = [MatchSet(rng.uniform(0, 640, (50, 2)), rng.uniform(0, 640, (50, 2)), rng.random(50), f"p{i}") for i in range(3)]
        save_matches(ms, tmp_path / "m.jsonl")
        back = load_matches(tmp_path / "m.jsonl")
        for a, b in zip(ms, back):
            assert a.pair_id == b.pair_id
            for x, y in ((a.kpts0, b.kpts0), (a.kpts1, b.kpts1), (a.confidence, b.confidence)):
                assert x.tobytes() == y.tobytes()
        save_matches(back, tmp_path / "n.jsonl")
        assert (tmp_path / "m.jsonl").read_bytes() == (tmp_path / "n.jsonl").read_bytes()

    def test_keypoint_pairs(self, tmp_path):
        p = tmp_path / "k.jsonl"
        p.write_text(
            json.dumps({"pair_id": "x", "kpts0": [[0, 0], [1, 1]], "kpts1": [[2, 2]], "homography": np.eye(3).tolist(), "colors0": [[0, 0, 0], [1, 1, 1]]})
            + "\n"
        )
        (kp,) = iter_keypoint_pairs(p)
        assert len(kp.kpts0) == 2 and len(kp.kpts1) == 1 and kp.colors1 is None
        np.testing.assert_array_equal(kp.homography, np.eye(3))
        p.write_text(json.dumps({"pair_id": "y", "kpts0": [[0, 0]], "kpts1": [], "homography": [[1, 0], [0, 1]]}) + "\n")
        with pytest.raises(SchemaError):
            list(iter_keypoint_pairs(p))


def write_pfm(path, header: bytes, values, fmt):
    path.write_bytes(header + struct.pack(fmt, *values))


class TestDepth:
    def test_row_flip_big_endian(self, tmp_path):
        write_pfm(tmp_path / "d.pfm", b"Pf\n2 2\n1.0\n", [1, 2, 3, 4], ">4f")
        d = load_depth_pfm(tmp_path / "d.pfm")
        np.testing.assert_array_equal(d.values, [[3, 4], [1, 2]])

    def test_little_endian(self, tmp_path):
        write_pfm(tmp_path / "d.pfm", b"Pf\n3 1\n-1.0\n", [1.5, 2.5, 3.5], "<3f")
        np.testing.assert_array_equal(load_depth_pfm(tmp_path / "d.pfm").values, [[1.5, 2.5, 3.5]])

    def test_color_rejected(self, tmp_path):
        write_pfm(tmp_path / "d.pfm", b"PF\n1 1\n-1.0\n", [1, 2, 3], "<3f")
        with pytest.raises(UnsupportedFormat):
            load_depth_pfm(tmp_path / "d.pfm")

    @pytest.mark.parametrize("blob", [b"P6\n1 1\n255\n\0\0\0", b"Pf\n2 2\n-1.0\n\0\0\0\0", b"Pf\nx 2\n-1.0\n"])
    def test_malformed(self, tmp_path, blob):
        (tmp_path / "d.pfm").write_bytes(blob)
        with pytest.raises(ParseError):
            load_depth_pfm(tmp_path / "d.pfm")

    @pytest.mark.parametrize("le", [True, False])
    def test_round_trip(self, tmp_path, rng, le):
        d = DepthMap(rng.uniform(0.5, 30, (4, 5)).astype(np.float32))
        write_depth_pfm(d, tmp_path / "d.pfm", little_endian=le)
        np.testing.assert_array_equal(load_depth_pfm(tmp_path / "d.pfm").values, d.values)


class TestSmallFiles:
    def test_intrinsics(self, tmp_path):
        k = CameraIntrinsics(320, 321, 319.5, 239.5, 640, 480)
        save_intrinsics(k, tmp_path / "k.json")
        assert load_intrinsics(tmp_path / "k.json") == (k, k)
        k1 = CameraIntrinsics(100, 100, 50, 50, 100, 100)
        save_intrinsics(k, tmp_path / "k2.json", k1)
        assert load_intrinsics(tmp_path / "k2.json") == (k, k1)
        (tmp_path / "bad.json").write_text('{"fx": 1}')
        with pytest.raises(SchemaError):
            load_intrinsics(tmp_path / "bad.json")
        (tmp_path / "worse.json").write_text("{")
        with pytest.raises(ParseError):
            load_intrinsics(tmp_path / "worse.json")

    def test_assignments(self, tmp_path):
        recs = [("a", Assignment([1, -1], [-1, 0])), ("b", Assignment([-1], [-1, -1]))]
        save_assignments(recs, tmp_path / "a.json", seed=4)
        doc = json.loads((tmp_path / "a.json").read_text())
        assert doc["seed"] == 4 and doc["pairs"][0]["num_matches"] == 1
        back = load_assignments(tmp_path / "a.json")
        assert [p for p, _ in back] == ["a", "b"]
        assert back[0][1].matches0.tolist() == [1, -1]
        (tmp_path / "x.json").write_text('{"pairs": [{"pair_id": "a"}]}')
        with pytest.raises(SchemaError):
            load_assignments(tmp_path / "x.json")
