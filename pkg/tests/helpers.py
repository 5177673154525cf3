"""Shared test utilities: finite differences and random scene builders."""
import numpy as np

from cogs.gaussians import Camera, GaussianCloud


def central_diff(f, x, step=1e-5):
    """Central finite differences of scalar f over a flat copy of x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.ravel()
    xf = x.ravel()
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + step
        fp = f(x)
        xf[i] = orig - step
        fm = f(x)
        xf[i] = orig
        flat[i] = (fp - fm) / (2.0 * step)
    return grad


def assert_grads_close(analytic, numeric, rel_tol, abs_floor=1e-6, label=""):
    """Relative comparison wherever |analytic| exceeds abs_floor."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    mask = scale > abs_floor
    if not np.any(mask):
        return
    rel = np.abs(analytic - numeric)[mask] / scale[mask]
    worst = float(rel.max())
    assert worst < rel_tol, f"{label}: max relative gradient error {worst:.3e} >= {rel_tol}"


def random_cloud(rng, n=8, sh_degree=1, with_masks=False, n_attrs=2,
                 depth_span=(2.0, 6.0), min_depth_gap=0.05):
    """Random cloud in front of an identity-pose camera at z in -depth_span.

    Depths are spaced by at least min_depth_gap so finite-difference probes
    cannot flip the global sort. Opacities stay moderate so the alpha clamp
    and the early-stop threshold are never grazed.
    """
    lo, hi = depth_span
    depths = np.sort(rng.uniform(lo, hi, size=n))
    for i in range(1, n):
        depths[i] = max(depths[i], depths[i - 1] + min_depth_gap)
    positions = np.stack(
        [rng.uniform(-0.8, 0.8, n), rng.uniform(-0.8, 0.8, n), -depths], axis=1
    )
    rotations = rng.normal(size=(n, 4))
    rotations /= np.linalg.norm(rotations, axis=1, keepdims=True)
    log_scales = rng.uniform(np.log(0.05), np.log(0.35), size=(n, 3))
    opacity_logits = rng.uniform(-2.0, 1.5, size=n)
    k = (sh_degree + 1) ** 2
    sh = np.zeros((n, k, 3))
    sh[:, 0, :] = rng.uniform(-0.8, 0.8, size=(n, 3))
    if k > 1:
        sh[:, 1:, :] = rng.uniform(-0.15, 0.15, size=(n, k - 1, 3))
    masks = rng.normal(0.0, 0.7, size=(n, n_attrs)) if with_masks else None
    return GaussianCloud(
        positions=positions,
        rotations=rotations,
        log_scales=log_scales,
        opacity_logits=opacity_logits,
        sh_coeffs=sh,
        mask_logits=masks,
    )


def make_camera(width=16, height=16, f=20.0):
    return Camera(
        width=width, height=height, fx=f, fy=f,
        cx=width / 2.0, cy=height / 2.0, cam_to_world=np.eye(4),
    )
