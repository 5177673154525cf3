import numpy as np
import pytest

from cogs import gaussians as gs
from cogs.errors import ConfigurationError

from helpers import central_diff, assert_grads_close


def quat_about_z(angle):
    return np.array([np.cos(angle / 2), 0.0, 0.0, np.sin(angle / 2)])


class TestCovarianceFromRS:
    def test_identity(self):
        sigma = gs.covariance_from_rs(np.array([1.0, 0, 0, 0]), np.zeros(3))
        np.testing.assert_allclose(sigma, np.eye(3), atol=1e-15)

    def test_diagonal_scales(self):
        sigma = gs.covariance_from_rs(
            np.array([1.0, 0, 0, 0]), np.log([2.0, 3.0, 4.0])
        )
        np.testing.assert_allclose(sigma, np.diag([4.0, 9.0, 16.0]), atol=1e-12)

    def test_rotated_matches_matrix_product(self):
        # oracle: build R and S explicitly and multiply
        q = quat_about_z(np.pi / 2)
        ls = np.array([np.log(2.0), 0.0, 0.0])
        sigma = gs.covariance_from_rs(q, ls)
        R = gs.quat_to_rotmat(q)
        S = np.diag(np.exp(ls))
        np.testing.assert_allclose(sigma, R @ S @ S.T @ R.T, atol=1e-12)
        # 90 deg about z maps the x-axis ellipsoid onto y
        np.testing.assert_allclose(sigma, np.diag([1.0, 4.0, 1.0]), atol=1e-12)

    def test_eigenvalues_are_squared_scales(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            q = rng.normal(size=4)
            q /= np.linalg.norm(q)
            ls = rng.uniform(-1.5, 1.0, 3)
            sigma = gs.covariance_from_rs(q, ls)
            ev = np.sort(np.linalg.eigvalsh(sigma))
            np.testing.assert_allclose(ev, np.sort(np.exp(2 * ls)), rtol=1e-9)

    def test_sign_flip_invariance(self):
        rng = np.random.default_rng(3)
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        ls = rng.uniform(-1, 1, 3)
        np.testing.assert_array_equal(
            gs.covariance_from_rs(q, ls), gs.covariance_from_rs(-q, ls)
        )

    def test_batched_matches_single(self):
        rng = np.random.default_rng(11)
        qs = rng.normal(size=(5, 4))
        qs /= np.linalg.norm(qs, axis=1, keepdims=True)
        ls = rng.uniform(-1, 1, (5, 3))
        batch = gs.covariance_from_rs(qs, ls)
        for i in range(5):
            np.testing.assert_allclose(batch[i], gs.covariance_from_rs(qs[i], ls[i]))


class TestCovarianceBackward:
    def test_zero_cotangent(self):
        gq, gl = gs.covariance_from_rs_backward(
            np.array([1.0, 0, 0, 0]), np.zeros(3), np.zeros((3, 3))
        )
        assert not np.any(gq) and not np.any(gl)

    def test_identity_scale_gradient(self):
        # d/ds of exp(2s) at s=0 is 2 per axis
        _, gl = gs.covariance_from_rs_backward(
            np.array([1.0, 0, 0, 0]), np.zeros(3), np.eye(3)
        )
        np.testing.assert_allclose(gl, [2.0, 2.0, 2.0], atol=1e-12)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(23)
        for _ in range(10):
            q = rng.normal(size=4)
            q /= np.linalg.norm(q)
            ls = rng.uniform(-1.0, 1.0, 3)
            G = rng.normal(size=(3, 3))
            G = 0.5 * (G + G.T)

            gq, gl = gs.covariance_from_rs_backward(q, ls, G)
            fq = central_diff(lambda x: np.sum(G * gs.covariance_from_rs(x, ls)), q, 1e-6)
            fl = central_diff(lambda x: np.sum(G * gs.covariance_from_rs(q, x)), ls, 1e-6)
            assert_grads_close(gq, fq, 1e-5, label="rotation")
            assert_grads_close(gl, fl, 1e-5, label="log_scale")


class TestShEval:
    def test_degree0_constant_band(self):
        c = np.array([[0.3, -0.1, 0.2]])
        out = gs.sh_eval(c, np.array([0.0, 0.0, 1.0]), 0)
        np.testing.assert_allclose(out, np.maximum(0.5 + gs.SH_C0 * c[0], 0.0))

    def test_degree0_view_independent(self):
        rng = np.random.default_rng(5)
        c = rng.uniform(-1, 1, (1, 3))
        d1 = rng.normal(size=3)
        d1 /= np.linalg.norm(d1)
        d2 = rng.normal(size=3)
        d2 /= np.linalg.norm(d2)
        np.testing.assert_array_equal(gs.sh_eval(c, d1, 0), gs.sh_eval(c, d2, 0))

    def test_degree1_zero_band1_is_symmetric(self):
        coeffs = np.zeros((4, 3))
        coeffs[0] = [0.4, 0.2, 0.1]
        a = gs.sh_eval(coeffs, np.array([1.0, 0, 0]), 1)
        b = gs.sh_eval(coeffs, np.array([0.0, 1.0, 0]), 1)
        np.testing.assert_array_equal(a, b)

    def test_degree1_band_ordering(self):
        # oracle: tabulated real band-1 basis with the (-y, z, -x) ordering
        rng = np.random.default_rng(9)
        coeffs = rng.uniform(-0.5, 0.5, (4, 3))
        d = np.array([0.0, 0.0, 1.0])
        want = 0.5 + gs.SH_C0 * coeffs[0] + gs.SH_C1 * (
            -d[1] * coeffs[1] + d[2] * coeffs[2] - d[0] * coeffs[3]
        )
        np.testing.assert_allclose(gs.sh_eval(coeffs, d, 1), np.maximum(want, 0), atol=1e-6)

    def test_count_mismatch_raises(self):
        with pytest.raises(ConfigurationError):
            gs.sh_eval(np.zeros((4, 3)), np.array([0.0, 0, 1.0]), 0)

    @pytest.mark.parametrize("degree", [0, 1, 2, 3])
    def test_backward_matches_fd(self, degree):
        rng = np.random.default_rng(degree + 40)
        k = (degree + 1) ** 2
        coeffs = rng.uniform(-0.4, 0.4, (k, 3))
        coeffs[0] += 0.5  # keep channels away from the zero clamp
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        g = rng.normal(size=3)

        gc, gd = gs.sh_eval_backward(coeffs, d, degree, g)
        fc = central_diff(lambda x: np.sum(g * gs.sh_eval(x, d, degree)), coeffs, 1e-6)
        fd = central_diff(lambda x: np.sum(g * gs.sh_eval(coeffs, x, degree)), d, 1e-6)
        assert_grads_close(gc, fc, 1e-6, label=f"coeffs deg{degree}")
        assert_grads_close(gd, fd, 1e-6, label=f"dir deg{degree}")


class TestQuaternions:
    def test_rotmat_backward_matches_fd(self):
        rng = np.random.default_rng(77)
        q = rng.normal(size=4)
        G = rng.normal(size=(3, 3))
        analytic = gs.quat_to_rotmat_backward(q, G)
        numeric = central_diff(lambda x: np.sum(G * gs.quat_to_rotmat(x)), q, 1e-6)
        assert_grads_close(analytic, numeric, 1e-6)

    def test_hamilton_product(self):
        i = np.array([0.0, 1, 0, 0])
        j = np.array([0.0, 0, 1, 0])
        np.testing.assert_allclose(gs.quat_multiply(i, j), [0, 0, 0, 1], atol=1e-15)
        np.testing.assert_allclose(gs.quat_multiply(j, i), [0, 0, 0, -1], atol=1e-15)

    def test_normalize_backward_matches_fd(self):
        rng = np.random.default_rng(4)
        v = rng.normal(size=(3, 4))
        g = rng.normal(size=(3, 4))
        analytic = gs.normalize_rows_backward(v, g)
        numeric = central_diff(lambda x: np.sum(g * gs.normalize_rows(x)), v, 1e-6)
        assert_grads_close(analytic, numeric, 1e-6)


class TestCloudInvariants:
    def test_validate_catches_non_unit_rotation(self):
        cloud = GaussianCloudFactory()
        cloud.rotations[0] *= 1.01
        with pytest.raises(ConfigurationError):
            cloud.validate()

    def test_renormalization_stability(self):
        cloud = GaussianCloudFactory()
        sigma_before = gs.covariance_from_rs(cloud.rotations, cloud.log_scales)
        renorm = gs.normalize_rows(cloud.rotations)
        sigma_after = gs.covariance_from_rs(renorm, cloud.log_scales)
        assert np.max(np.abs(sigma_before - sigma_after)) < 1e-6


def GaussianCloudFactory(n=6, seed=0):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return gs.GaussianCloud(
        positions=rng.normal(size=(n, 3)),
        rotations=q,
        log_scales=rng.uniform(-1, 0, (n, 3)),
        opacity_logits=rng.normal(size=n),
        sh_coeffs=rng.normal(size=(n, 4, 3)) * 0.2,
    )
