import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vokit.epipolar import (
    CameraIntrinsics,
    HingeLossInput,
    epipolar_errors,
    essential_from_pose,
    fundamental_from_essential,
    hinge_loss,
    sampson_error,
)
from vokit.errors import AllZeroConfidence, ConfigError, DegenerateTranslation, VokitError
from vokit.geometry import Pose, random_rotation
from vokit.synthetic import DEFAULT_INTRINSICS, SyntheticSceneConfig, generate_synthetic_pair


def point_line_distance_sq(M, x0, x1):
    """Squared length of the smallest 4D move of (x0, x1) onto x1ᵀ M x0 = 0, by Gauss-Newton."""
    out = []
    for a, b in zip(x0, x1):
        p = np.array([a[0], a[1], b[0], b[1]])
        for _ in range(20):  # Gauss-Newton projection onto x1ᵀ M x0 = 0
            h0, h1 = np.array([p[0], p[1], 1.0]), np.array([p[2], p[3], 1.0])
            r = h1 @ M @ h0
            J = np.concatenate([(M.T @ h1)[:2], (M @ h0)[:2]])
            p = p - J * r / (J @ J)
        out.append(float(np.sum((p - np.array([a[0], a[1], b[0], b[1]])) ** 2)))
    return np.array(out)


class TestIntrinsics:
    def test_validation(self):
        with pytest.raises(ConfigError):
            CameraIntrinsics(0, 1, 0, 0, 10, 10)
        with pytest.raises(ConfigError):
            CameraIntrinsics(1, 1, 0, 0, 0, 10)

    def test_normalize_round_trip(self, rng):
        pts = rng.uniform(0, 640, size=(20, 2))
        K = DEFAULT_INTRINSICS
        np.testing.assert_allclose(K.denormalize(K.normalize(pts)), pts, atol=1e-12)
        assert CameraIntrinsics.from_dict(K.to_dict()) == K


class TestEssential:
    def test_read_off(self):
        E = essential_from_pose(Pose(np.eye(3), [1, 0, 0]))
        np.testing.assert_allclose(E, np.array([[0, 0, 0], [0, 0, -1], [0, 1, 0]]) / math.sqrt(2), atol=1e-15)

    def test_scale_invariance(self, rng):
        R = random_rotation(rng)
        t = rng.normal(size=3)
        np.testing.assert_allclose(essential_from_pose(Pose(R, t)), essential_from_pose(Pose(R, 5 * t)), atol=1e-15)

    def test_pure_rotation(self):
        with pytest.raises(DegenerateTranslation):
            essential_from_pose(Pose(np.eye(3), [0, 0, 1e-13]))

    def test_essential_invariants(self, rng):
        E = essential_from_pose(Pose(random_rotation(rng), rng.normal(size=3)))
        s = np.linalg.svd(E, compute_uv=False)
        assert s[2] < 1e-9 * s[0] and abs(s[0] - s[1]) < 1e-6 * s[0]
        assert np.linalg.norm(E) == pytest.approx(1.0)

    @given(st.integers(0, 10_000))
    def test_scene_projection_oracle(self, seed):
        m, gt = generate_synthetic_pair(SyntheticSceneConfig(num_points=50, seed=seed))
        K = DEFAULT_INTRINSICS
        E = essential_from_pose(gt)
        h0 = np.column_stack([K.normalize(m.kpts0), np.ones(len(m))])
        h1 = np.column_stack([K.normalize(m.kpts1), np.ones(len(m))])
        assert np.abs(np.einsum("ij,jk,ik->i", h1, E, h0)).max() < 1e-12
        F = fundamental_from_essential(E, K, K)
        p0 = np.column_stack([m.kpts0, np.ones(len(m))])
        p1 = np.column_stack([m.kpts1, np.ones(len(m))])
        assert np.abs(np.einsum("ij,jk,ik->i", p1, F, p0)).max() < 1e-9

    def test_fundamental_identity_intrinsics(self, rng):
        E = essential_from_pose(Pose(random_rotation(rng), rng.normal(size=3)))
        K = CameraIntrinsics(1, 1, 0, 0, 10, 10)
        np.testing.assert_allclose(fundamental_from_essential(E, K, K), E, atol=1e-15)

    def test_fundamental_rank_two(self, rng):
        for _ in range(10):
            E = essential_from_pose(Pose(random_rotation(rng), rng.normal(size=3)))
            K0 = CameraIntrinsics(*rng.uniform(100, 500, 2), *rng.uniform(100, 300, 2), 640, 480)
            s = np.linalg.svd(fundamental_from_essential(E, K0, DEFAULT_INTRINSICS), compute_uv=False)
            assert s[2] < 1e-9 * s[0] and s[1] > 1e-6 * s[0]


class TestSampson:
    def test_zero_iff_residual_zero(self, rng):
        E = essential_from_pose(Pose(random_rotation(rng), rng.normal(size=3)))
        x0, x1 = rng.normal(size=(100, 2)), rng.normal(size=(100, 2))
        e = sampson_error(E, x0, x1)
        assert np.all(e > 0)

    def test_first_order_oracle(self, rng):
        m, gt = generate_synthetic_pair(SyntheticSceneConfig(num_points=100, seed=4))
        K = DEFAULT_INTRINSICS
        E = essential_from_pose(gt)
        x0 = K.normalize(m.kpts0)
        x1 = K.normalize(m.kpts1) + rng.uniform(-0.01, 0.01, size=(100, 2))
        got = sampson_error(E, x0, x1)
        want = point_line_distance_sq(E, x0, x1)
        np.testing.assert_allclose(got, want, rtol=0.1)

    def test_epipolar_errors_spaces(self):
        m, gt = generate_synthetic_pair(SyntheticSceneConfig(num_points=30, seed=2))
        K = DEFAULT_INTRINSICS
        assert np.max(epipolar_errors(m, gt, K, K)) < 1e-20
        assert np.max(epipolar_errors(m, gt, K, K, pixel_space=True)) < 1e-12

    def test_length_mismatch(self):
        with pytest.raises(VokitError):
            sampson_error(np.eye(3), np.zeros((2, 2)), np.zeros((3, 2)))


class TestHinge:
    def test_hand_cases(self):
        r = hinge_loss(HingeLossInput([[0.1, 0.3]], [[1.0, 3.0]], base_loss=10.0, alpha=0.2))
        assert abs(r.total - 10.175) < 1e-12 and abs(r.per_image[0] - 0.175) < 1e-12
        r = hinge_loss(HingeLossInput([[100.0, 100.0]], [[1.0, 3.0]], base_loss=10.0, alpha=0.2))
        assert abs(r.total - 12.0) < 1e-12

    def test_zero_errors(self, rng):
        r = hinge_loss(HingeLossInput([np.zeros(5), np.zeros(3)], [rng.random(5), rng.random(3)], 3.25))
        assert r.total == 3.25

    def test_empty_image_contributes_zero(self):
        r = hinge_loss(HingeLossInput([[], [0.2]], [[], [0.5]], 1.0))
        assert r.per_image[0] == 0.0 and r.per_image[1] == pytest.approx(0.2)

    def test_all_zero_confidence_warns(self):
        with pytest.warns(AllZeroConfidence):
            r = hinge_loss(HingeLossInput([[0.5, 0.1]], [[0.0, 0.0]], 1.0))
        assert r.total == 1.0
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            hinge_loss(HingeLossInput([[0.0]], [[0.0]], 1.0))

    def test_batch_normalization(self):
        inp = dict(errors=[[1.0], [1.0]], confidences=[[1.0], [3.0]], base_loss=100.0)
        per_img = hinge_loss(HingeLossInput(**inp)).per_image
        per_batch = hinge_loss(HingeLossInput(**inp, normalize="batch")).per_image
        np.testing.assert_allclose(per_img, [1.0, 1.0])
        np.testing.assert_allclose(per_batch, [0.5, 1.0])

    def test_infinite_error_clips(self):
        r = hinge_loss(HingeLossInput([[np.inf, 0.0]], [[1.0, 0.0]], 2.0))
        assert r.total == pytest.approx(2.4)

    @given(
        st.lists(
            st.lists(st.tuples(st.floats(0, 1e3), st.floats(0, 5)), min_size=0, max_size=8), min_size=1, max_size=5
        ),
        st.floats(0.0, 50.0),
        st.floats(0.01, 1.0),
    )
    def test_bounds_and_monotonic(self, images, base, alpha):
        errs = [[e for e, _ in img] for img in images]
        confs = [[c for _, c in img] for img in images]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", AllZeroConfidence)
            r = hinge_loss(HingeLossInput(errs, confs, base, alpha))
            assert base - 1e-12 <= r.total <= base * (1 + len(images) * alpha) + 1e-9
            bumped = [[e * 1.5 + 0.1 for e in img] for img in errs]
            assert hinge_loss(HingeLossInput(bumped, confs, base, alpha)).total >= r.total - 1e-12

    @pytest.mark.parametrize(
        "kw",
        [
            dict(errors=[[1.0]], confidences=[[1.0, 2.0]], base_loss=1.0),
            dict(errors=[[-1.0]], confidences=[[1.0]], base_loss=1.0),
            dict(errors=[[1.0]], confidences=[[-0.1]], base_loss=1.0),
            dict(errors=[[1.0]], confidences=[[1.0]], base_loss=1.0, alpha=0.0),
            dict(errors=[[1.0]], confidences=[[1.0]], base_loss=1.0, normalize="pair"),
            dict(errors=[[1.0]], confidences=[], base_loss=1.0),
        ],
    )
    def test_validation(self, kw):
        with pytest.raises(VokitError):
            HingeLossInput(**kw)
