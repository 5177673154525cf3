import numpy as np
import pytest

from cogs import gaussians as gs
from cogs import raster
from cogs.errors import StateError
from cogs.gaussians import Camera, GaussianCloud
from cogs.raster import RasterSettings

from helpers import assert_grads_close, random_cloud, make_camera

# full-image evaluation: the 3-sigma truncation boundary is not
# differentiable, so gradient checks disable it
EXACT = RasterSettings(cutoff_sigma=None)


def single_gaussian_cloud(depth=3.0, opacity_logit=0.0, rgb=(1.0, 1.0, 1.0),
                          log_scale=-0.5, sh_degree=0):
    k = (sh_degree + 1) ** 2
    sh = np.zeros((1, k, 3))
    sh[0, 0] = (np.asarray(rgb) - 0.5) / gs.SH_C0
    return GaussianCloud(
        positions=np.array([[0.0, 0.0, -depth]]),
        rotations=np.array([[1.0, 0.0, 0.0, 0.0]]),
        log_scales=np.full((1, 3), log_scale),
        opacity_logits=np.array([opacity_logit]),
        sh_coeffs=sh,
    )


class TestProjectGaussian:
    def test_on_axis_projection(self):
        cam = Camera(width=100, height=100, fx=100, fy=100, cx=50, cy=50,
                     cam_to_world=np.eye(4))
        p = raster.project_gaussian(np.array([0.0, 0.0, -2.0]), 0.01 * np.eye(3), cam)
        np.testing.assert_allclose(p.mean2d, [50.0, 50.0], atol=1e-12)
        assert p.view_depth == 2.0

    def test_behind_camera_is_culled(self):
        cam = make_camera()
        assert raster.project_gaussian(np.array([0.0, 0.0, 1.0]), np.eye(3), cam) is None

    def test_just_inside_near_plane_is_kept(self):
        cam = make_camera()
        assert raster.project_gaussian(np.array([0.0, 0.0, -0.02]), np.eye(3), cam) is not None

    def test_isotropic_cov_matches_fd_jacobian(self):
        # oracle: finite-difference Jacobian of the exact projection map
        f, depth, s = 64.0, 2.0, 0.15
        cam = Camera(width=64, height=64, fx=f, fy=f, cx=32, cy=32,
                     cam_to_world=np.eye(4))
        mu = np.array([0.0, 0.0, -depth])
        sigma = s**2 * np.eye(3)

        def project_pt(p):
            d = -p[2]
            return np.array([cam.cx + cam.fx * p[0] / d, cam.cy - cam.fy * p[1] / d])

        h = 1e-5
        J = np.zeros((2, 3))
        for j in range(3):
            dp = np.zeros(3)
            dp[j] = h
            J[:, j] = (project_pt(mu + dp) - project_pt(mu - dp)) / (2 * h)
        expected = J @ sigma @ J.T + 0.3 * np.eye(2)
        got = raster.project_gaussian(mu, sigma, cam)
        np.testing.assert_allclose(got.cov2d, expected, rtol=1e-6)
        np.testing.assert_allclose(got.cov2d, (f / depth) ** 2 * s**2 * np.eye(2) + 0.3 * np.eye(2),
                                   rtol=1e-9)


class TestRenderForward:
    def test_empty_cloud(self):
        cloud = single_gaussian_cloud()
        empty = GaussianCloud(
            positions=np.zeros((0, 3)), rotations=np.zeros((0, 4)),
            log_scales=np.zeros((0, 3)), opacity_logits=np.zeros(0),
            sh_coeffs=np.zeros((0, 1, 3)),
        )
        out = raster.render(empty, make_camera(), background=(0.2, 0.4, 0.6))
        assert np.all(out.final_transmittance == 1.0)
        np.testing.assert_allclose(out.image, np.broadcast_to([0.2, 0.4, 0.6], out.image.shape))

    def test_single_opaque_splat_hits_alpha_clamp(self):
        cloud = single_gaussian_cloud(opacity_logit=20.0, rgb=(1, 1, 1), log_scale=1.0)
        cam = make_camera(width=17, height=17)  # odd size: center pixel on axis
        out = raster.render(cloud, cam, background=(0, 0, 0))
        center = out.image[8, 8]
        np.testing.assert_allclose(center, [0.999, 0.999, 0.999], atol=1e-6)

    def test_two_splat_compositing(self):
        # front red alpha .5, back blue alpha .5 -> (0.5, 0, 0.25), by Eq. expansion
        sh = np.zeros((2, 1, 3))
        sh[0, 0] = (np.array([1.0, 0, 0]) - 0.5) / gs.SH_C0
        sh[1, 0] = (np.array([0.0, 0, 1.0]) - 0.5) / gs.SH_C0
        cloud = GaussianCloud(
            positions=np.array([[0.0, 0.0, -2.0], [0.0, 0.0, -4.0]]),
            rotations=np.tile([1.0, 0, 0, 0], (2, 1)),
            log_scales=np.full((2, 3), 1.5),
            opacity_logits=np.zeros(2),
            sh_coeffs=sh,
        )
        cam = make_camera(width=17, height=17)
        out = raster.render(cloud, cam, background=(0, 0, 0), settings=EXACT)
        np.testing.assert_allclose(out.image[8, 8], [0.5, 0.0, 0.25], atol=1e-3)
        np.testing.assert_allclose(out.final_transmittance[8, 8], 0.25, atol=1e-3)

    def test_storage_order_invariance(self):
        rng = np.random.default_rng(0)
        cloud = random_cloud(rng, n=10)
        cam = make_camera(32, 32)
        ref = raster.render(cloud, cam).image
        perm = rng.permutation(10)
        shuffled = GaussianCloud(
            positions=cloud.positions[perm], rotations=cloud.rotations[perm],
            log_scales=cloud.log_scales[perm], opacity_logits=cloud.opacity_logits[perm],
            sh_coeffs=cloud.sh_coeffs[perm],
        )
        np.testing.assert_array_equal(raster.render(shuffled, cam).image, ref)

    def test_compositing_conservation(self):
        # with c=1 the accumulated weights and the leftover transmittance sum to 1
        rng = np.random.default_rng(1)
        cloud = random_cloud(rng, n=12)
        cloud.sh_coeffs[:] = 0.0
        cloud.sh_coeffs[:, 0, :] = 0.5 / gs.SH_C0  # constant color 1
        cam = make_camera(24, 24)
        out = raster.render(cloud, cam, background=(0, 0, 0), settings=EXACT)
        total = out.image[:, :, 0] + out.final_transmittance
        np.testing.assert_allclose(total, np.ones_like(total), atol=1e-6)

    def test_translation_equivariance_bitwise(self):
        rng = np.random.default_rng(2)
        cloud = random_cloud(rng, n=6)
        # dyadic coordinates keep the world shift exact in floating point
        cloud.positions = np.round(cloud.positions * 2**16) / 2**16
        cam = make_camera(24, 24)
        ref = raster.render(cloud, cam).image

        shift = np.array([1024.0, -512.0, 256.0])
        moved = cloud.copy()
        moved.positions = cloud.positions + shift
        pose = np.eye(4)
        pose[:3, 3] = shift
        cam2 = Camera(width=24, height=24, fx=cam.fx, fy=cam.fy, cx=cam.cx, cy=cam.cy,
                      cam_to_world=pose)
        np.testing.assert_array_equal(raster.render(moved, cam2).image, ref)

    def test_mask_mode_requires_logits(self):
        cloud = single_gaussian_cloud()
        with pytest.raises(StateError):
            raster.render(cloud, make_camera(), mode="mask", attribute=0)

    def test_mask_partition_bound(self):
        rng = np.random.default_rng(3)
        cloud = random_cloud(rng, n=10, with_masks=True, n_attrs=3)
        cam = make_camera(24, 24)
        total = np.zeros((24, 24))
        for a in range(3):
            out = raster.render(cloud, cam, mode="mask", attribute=a, settings=EXACT)
            assert out.image.min() >= 0.0 and out.image.max() <= 1.0
            total += out.image
        T = raster.render(cloud, cam, settings=EXACT).final_transmittance
        assert np.max(total + T) <= 1.0 + 1e-6

    def test_mask_stack_matches_per_attribute(self):
        rng = np.random.default_rng(4)
        cloud = random_cloud(rng, n=7, with_masks=True, n_attrs=3)
        cam = make_camera(16, 16)
        stack = raster.render(cloud, cam, mode="mask_stack").image
        for a in range(3):
            single = raster.render(cloud, cam, mode="mask", attribute=a).image
            np.testing.assert_array_equal(stack[:, :, a], single)


class TestRenderBackward:
    def test_zero_cotangent(self):
        rng = np.random.default_rng(5)
        cloud = random_cloud(rng, n=5)
        cam = make_camera()
        g = raster.render_backward(cloud, cam, np.zeros((16, 16, 3)))
        for arr in (g.positions, g.rotations, g.log_scales, g.opacity_logits, g.sh_coeffs):
            assert not np.any(arr)

    def test_opacity_gradient_sign(self):
        cloud = single_gaussian_cloud(opacity_logit=0.0, rgb=(1, 1, 1))
        cam = make_camera(17, 17)
        gimg = np.zeros((17, 17, 3))
        gimg[8, 8, :] = 1.0  # loss = rendered value at the splat center
        g = raster.render_backward(cloud, cam, gimg, settings=EXACT)
        assert g.opacity_logits[0] > 0

    def grad_check(self, mode, seed, n=8, size=16, attribute=None, tol=1e-3):
        rng = np.random.default_rng(seed)
        cloud = random_cloud(rng, n=n, with_masks=mode != "color")
        cam = make_camera(size, size)
        bg = (0.1, 0.3, 0.2) if mode == "color" else None
        channels = {"color": (size, size, 3), "mask": (size, size)}[mode]
        gimg = rng.normal(size=channels)

        def loss(c):
            out = raster.render(c, cam, mode=mode, background=bg,
                                attribute=attribute, settings=EXACT)
            return float(np.sum(gimg * out.image))

        g = raster.render_backward(cloud, cam, gimg, mode=mode, background=bg,
                                   attribute=attribute, settings=EXACT)
        step = 1e-4
        checks = {
            "positions": (cloud.positions, g.positions),
            "rotations": (cloud.rotations, g.rotations),
            "log_scales": (cloud.log_scales, g.log_scales),
            "opacity_logits": (cloud.opacity_logits, g.opacity_logits),
        }
        if mode == "color":
            checks["sh_coeffs"] = (cloud.sh_coeffs, g.sh_coeffs)
        else:
            checks["mask_logits"] = (cloud.mask_logits, g.mask_logits)
        for name, (arr, analytic) in checks.items():
            fd = np.zeros_like(arr)
            flat_arr = arr.ravel()
            flat_fd = fd.ravel()
            for i in range(flat_arr.size):
                orig = flat_arr[i]
                flat_arr[i] = orig + step
                fp = loss(cloud)
                flat_arr[i] = orig - step
                fm = loss(cloud)
                flat_arr[i] = orig
                flat_fd[i] = (fp - fm) / (2 * step)
            assert_grads_close(analytic, fd, tol, abs_floor=1e-6,
                               label=f"{mode}/{name} seed{seed}")

    @pytest.mark.parametrize("seed", [10, 11])
    def test_color_mode_gradients(self, seed):
        self.grad_check("color", seed)

    def test_mask_mode_gradients(self):
        self.grad_check("mask", 12, attribute=1)

    def test_truncated_forward_close_to_exact(self):
        # the 3-sigma boxes drop only tail mass from the image
        rng = np.random.default_rng(13)
        cloud = random_cloud(rng, n=6)
        cam = make_camera(24, 24)
        truncated = raster.render(cloud, cam).image
        exact = raster.render(cloud, cam, settings=EXACT).image
        assert np.max(np.abs(truncated - exact)) < 0.05
