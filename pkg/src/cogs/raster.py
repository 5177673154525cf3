"""Differentiable CPU splatting: project 3D Gaussians, composite front-to-back.

The forward pass projects every Gaussian to a screen-space 2D Gaussian
(EWA affine approximation), sorts globally by camera depth and alpha-blends
per pixel. The backward pass recomputes per-splat quantities in a
back-to-front sweep (no per-splat tape is kept) and returns analytic
gradients for every learnable parameter class.

Conventions: the camera looks along its -z axis, pixel centers sit at
integer coordinates, and view depth is camera-space -z.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from . import gaussians as gs
from .errors import ConfigurationError, StateError
from .gaussians import Camera, GaussianCloud


@dataclass(frozen=True)
class RasterSettings:
    """Rasterizer constants; all tunable, defaults follow common splatting practice."""

    near_plane: float = 0.01
    alpha_clamp: float = 0.999
    stop_transmittance: float = 1e-4
    cov2d_dilation: float = 0.3
    # Influence radius in standard deviations; None evaluates every splat on
    # the full image (exact, used by gradient checks where the truncation
    # boundary would break finite differences).
    cutoff_sigma: Optional[float] = 3.0


DEFAULT_SETTINGS = RasterSettings()


@dataclass
class Projected2DGaussian:
    mean2d: np.ndarray
    cov2d: np.ndarray
    view_depth: float
    color: Optional[np.ndarray] = None
    alpha_scale: Optional[float] = None


@dataclass
class RenderOutput:
    image: np.ndarray
    final_transmittance: np.ndarray
    per_pixel_contrib_count: np.ndarray
    # accumulated compositing weight each gaussian deposited, cloud-aligned
    per_splat_contrib: Optional[np.ndarray] = None


@dataclass
class CloudGradients:
    positions: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh_coeffs: np.ndarray
    mask_logits: Optional[np.ndarray]
    # screen-space position gradient magnitudes feed density control
    mean2d: np.ndarray
    visible: np.ndarray


def project_gaussian(mu, sigma, camera: Camera, settings: RasterSettings = DEFAULT_SETTINGS):
    """Project one Gaussian; returns a Projected2DGaussian or None when culled."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    Rv = camera.rotation_w2c
    p = Rv @ (mu - camera.center)
    depth = -p[2]
    if depth < settings.near_plane:
        return None
    J = _projection_jacobian(p[None, :], camera)[0]
    M = Rv @ sigma @ Rv.T
    cov2d = J @ M @ J.T + settings.cov2d_dilation * np.eye(2)
    u = camera.cx + camera.fx * p[0] / depth
    v = camera.cy - camera.fy * p[1] / depth
    return Projected2DGaussian(mean2d=np.array([u, v]), cov2d=cov2d, view_depth=float(depth))


def project_points(positions, camera: Camera):
    """Pinhole-project world points; returns ((N,2) pixel coords, (N,) depth).

    Depth is camera-space -z; points behind the camera get negative depth.
    """
    pos = np.asarray(positions, dtype=np.float64)
    p = (pos - camera.center) @ camera.rotation_w2c.T
    depth = -p[:, 2]
    u = camera.cx + camera.fx * p[:, 0] / depth
    v = camera.cy - camera.fy * p[:, 1] / depth
    return np.stack([u, v], axis=1), depth


def _projection_jacobian(p, camera: Camera):
    """Jacobian of (u, v) wrt camera-space point, per row of p (M, 3) -> (M, 2, 3)."""
    d = -p[:, 2]
    J = np.zeros((p.shape[0], 2, 3))
    J[:, 0, 0] = camera.fx / d
    J[:, 0, 2] = camera.fx * p[:, 0] / d**2
    J[:, 1, 1] = -camera.fy / d
    J[:, 1, 2] = -camera.fy * p[:, 1] / d**2
    return J


class _Projection:
    """Batched projection of the visible subset, caching backward inputs."""

    def __init__(self, cloud: GaussianCloud, camera: Camera, settings: RasterSettings):
        self.camera = camera
        self.settings = settings
        pos = np.asarray(cloud.positions, dtype=np.float64)
        raw_q = np.asarray(cloud.rotations, dtype=np.float64)
        logs = np.asarray(cloud.log_scales, dtype=np.float64)
        Rv = camera.rotation_w2c
        rel = pos - camera.center
        p = rel @ Rv.T
        depth = -p[:, 2]
        sel = np.flatnonzero(depth >= settings.near_plane)
        self.n_total = cloud.count
        self.sel = sel
        self.Rv = Rv
        self.p = p[sel]
        self.depth = depth[sel]
        self.rel = rel[sel]
        self.raw_q = raw_q[sel]
        self.q_hat = gs.normalize_rows(self.raw_q)
        self.logs = logs[sel]
        self.sigma = gs.covariance_from_rs(self.q_hat, self.logs)
        self.M3 = np.einsum("ij,njk,lk->nil", Rv, self.sigma, Rv)
        self.J = _projection_jacobian(self.p, camera)
        cov2d = np.einsum("nij,njk,nlk->nil", self.J, self.M3, self.J)
        cov2d[:, 0, 0] += settings.cov2d_dilation
        cov2d[:, 1, 1] += settings.cov2d_dilation
        self.cov2d = cov2d
        self.mean2d = np.stack(
            [
                camera.cx + camera.fx * self.p[:, 0] / self.depth,
                camera.cy - camera.fy * self.p[:, 1] / self.depth,
            ],
            axis=1,
        )
        a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
        det = a * c - b * b
        self.inv = np.stack([c / det, -b / det, a / det], axis=1)  # (ia, ib, ic)
        mid = 0.5 * (a + c)
        lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
        if settings.cutoff_sigma is None:
            self.radius = np.full(len(sel), np.inf)
        else:
            self.radius = settings.cutoff_sigma * np.sqrt(lam_max)
        self.order = np.argsort(self.depth, kind="stable")
        self.view_dir = gs.normalize_rows(self.rel) if len(sel) else self.rel

    def boxes(self, width: int, height: int):
        u, v = self.mean2d[:, 0], self.mean2d[:, 1]
        r = self.radius
        x0 = np.maximum(np.ceil(u - r), 0).astype(np.int64)
        x1 = np.minimum(np.floor(u + r), width - 1).astype(np.int64)
        y0 = np.maximum(np.ceil(v - r), 0).astype(np.int64)
        y1 = np.minimum(np.floor(v + r), height - 1).astype(np.int64)
        if self.settings.cutoff_sigma is None:
            x0[:] = 0
            y0[:] = 0
            x1[:] = width - 1
            y1[:] = height - 1
        return x0, x1, y0, y1


def _splat_colors(cloud: GaussianCloud, proj: _Projection, mode: str, attribute):
    """Per-splat color rows for the selected subset; channel count varies by mode."""
    if mode == "color":
        coeffs = np.asarray(cloud.sh_coeffs, dtype=np.float64)[proj.sel]
        return gs.sh_eval(coeffs, proj.view_dir, cloud.sh_degree)
    if cloud.mask_logits is None:
        raise StateError("mask rendering requires mask_logits on the cloud")
    probs = gs.softmax(np.asarray(cloud.mask_logits, dtype=np.float64)[proj.sel], axis=1)
    if mode == "mask":
        L = probs.shape[1]
        if attribute is None or not (0 <= attribute < L):
            raise ConfigurationError(f"mask attribute must be in [0, {L}), got {attribute}")
        return probs[:, [attribute]]
    if mode == "mask_stack":
        return probs
    raise ConfigurationError(f"unknown render mode {mode!r}")


def _background(mode: str, background, channels: int):
    if mode != "color":
        return np.zeros(channels)
    if background is None:
        return np.zeros(3)
    bg = np.asarray(background, dtype=np.float64).reshape(-1)
    if bg.shape != (3,):
        raise ConfigurationError("background must be an rgb triple")
    return bg


def _composite_forward(proj: _Projection, alphas, colors, bg, width, height,
                       settings: RasterSettings):
    C = colors.shape[1]
    image = np.zeros((height, width, C))
    T = np.ones((height, width))
    count = np.zeros((height, width), dtype=np.int32)
    contrib = np.zeros(len(proj.sel))
    x0, x1, y0, y1 = proj.boxes(width, height)
    clamp, stop = settings.alpha_clamp, settings.stop_transmittance
    if _kernels.HAVE_NUMBA:
        _kernels.composite_forward(
            proj.order, x0, x1, y0, y1, proj.mean2d, proj.inv,
            np.ascontiguousarray(alphas), np.ascontiguousarray(colors),
            image, T, count, contrib, clamp, stop,
        )
        image += T[:, :, None] * bg
        return image, T, count, contrib
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    for i in proj.order:
        if x0[i] > x1[i] or y0[i] > y1[i]:
            continue
        sy, sx = slice(y0[i], y1[i] + 1), slice(x0[i], x1[i] + 1)
        dx = xs[sx] - proj.mean2d[i, 0]
        dy = ys[sy] - proj.mean2d[i, 1]
        ia, ib, ic = proj.inv[i]
        qf = ia * dx[None, :] ** 2 + 2.0 * ib * dy[:, None] * dx[None, :] + ic * dy[:, None] ** 2
        alpha = np.minimum(alphas[i] * np.exp(-0.5 * qf), clamp)
        Tb = T[sy, sx]
        active = Tb >= stop
        w = alpha * Tb * active
        image[sy, sx] += w[:, :, None] * colors[i]
        T[sy, sx] = np.where(active, Tb * (1.0 - alpha), Tb)
        count[sy, sx] += active
        contrib[i] = w.sum()
    image += T[:, :, None] * bg
    return image, T, count, contrib


def render(cloud: GaussianCloud, camera: Camera, mode: str = "color",
           background=None, attribute: Optional[int] = None,
           settings: RasterSettings = DEFAULT_SETTINGS) -> RenderOutput:
    """Render the cloud from a camera.

    mode "color" composites SH-shaded rgb over `background`; mode "mask"
    composites one attribute's softmax mass as intensity over black; mode
    "mask_stack" does every attribute at once (image shape (H, W, L)).
    """
    proj = _Projection(cloud, camera, settings)
    colors = _splat_colors(cloud, proj, mode, attribute)
    bg = _background(mode, background, colors.shape[1])
    alphas = gs.sigmoid(np.asarray(cloud.opacity_logits, dtype=np.float64))[proj.sel]
    image, T, count, contrib = _composite_forward(
        proj, alphas, colors, bg, camera.width, camera.height, settings
    )
    if mode == "mask":
        image = image[:, :, 0]
    per_splat = np.zeros(cloud.count)
    per_splat[proj.sel] = contrib
    return RenderOutput(image=image, final_transmittance=T,
                        per_pixel_contrib_count=count, per_splat_contrib=per_splat)


def render_backward(cloud: GaussianCloud, camera: Camera, grad_wrt_image,
                    mode: str = "color", background=None,
                    attribute: Optional[int] = None,
                    settings: RasterSettings = DEFAULT_SETTINGS) -> CloudGradients:
    """Analytic adjoint of render() for the scalar loss sum(grad ⊙ image).

    Recomputes the forward sweep, then walks splats back-to-front
    reconstructing per-splat transmittance by division. Gradients arrive
    on the raw stored parameters (quaternions need not be unit).
    """
    proj = _Projection(cloud, camera, settings)
    colors = _splat_colors(cloud, proj, mode, attribute)
    bg = _background(mode, background, colors.shape[1])
    opac = gs.sigmoid(np.asarray(cloud.opacity_logits, dtype=np.float64))[proj.sel]
    W, H = camera.width, camera.height
    gradI = np.asarray(grad_wrt_image, dtype=np.float64)
    if mode == "mask":
        gradI = gradI[:, :, None]
    if gradI.shape != (H, W, colors.shape[1]):
        raise ConfigurationError(f"grad image shape {gradI.shape} does not match render")

    m = len(proj.sel)
    g_mean2d = np.zeros((m, 2))
    g_cov2d = np.zeros((m, 2, 2))
    g_opac = np.zeros(m)
    g_colors = np.zeros_like(colors)

    if _kernels.HAVE_NUMBA:
        x0, x1, y0, y1 = proj.boxes(W, H)
        g_cov3 = np.zeros((m, 3))
        _kernels.composite_backward(
            proj.order, x0, x1, y0, y1, proj.mean2d, proj.inv,
            np.ascontiguousarray(opac), np.ascontiguousarray(colors),
            np.ascontiguousarray(gradI), bg, settings.alpha_clamp,
            settings.stop_transmittance, H, W,
            g_mean2d, g_cov3, g_opac, g_colors,
        )
        if m:
            A = np.empty((m, 2, 2))
            A[:, 0, 0], A[:, 0, 1] = proj.inv[:, 0], proj.inv[:, 1]
            A[:, 1, 0], A[:, 1, 1] = proj.inv[:, 1], proj.inv[:, 2]
            GA = np.empty((m, 2, 2))
            GA[:, 0, 0], GA[:, 0, 1] = g_cov3[:, 0], g_cov3[:, 1]
            GA[:, 1, 0], GA[:, 1, 1] = g_cov3[:, 1], g_cov3[:, 2]
            g_cov2d = -np.einsum("nij,njk,nkl->nil", A, GA, A)
        return _chain_to_parameters(
            cloud, proj, colors, opac, mode, attribute,
            g_mean2d, g_cov2d, g_opac, g_colors,
        )

    _, T_final, n_active, _ = _composite_forward(proj, opac, colors, bg, W, H, settings)
    x0, x1, y0, y1 = proj.boxes(W, H)
    coverage = np.zeros((H, W), dtype=np.int32)
    for i in proj.order:
        if x0[i] > x1[i] or y0[i] > y1[i]:
            continue
        coverage[y0[i]:y1[i] + 1, x0[i]:x1[i] + 1] += 1

    xs = np.arange(W, dtype=np.float64)
    ys = np.arange(H, dtype=np.float64)
    clamp = settings.alpha_clamp
    T_cur = T_final.copy()
    suffix = np.zeros((H, W, colors.shape[1]))
    bg_term = bg[None, None, :] * T_final[:, :, None]  # background rides behind everything
    for i in proj.order[::-1]:
        if x0[i] > x1[i] or y0[i] > y1[i]:
            continue
        sy, sx = slice(y0[i], y1[i] + 1), slice(x0[i], x1[i] + 1)
        dx = xs[sx] - proj.mean2d[i, 0]
        dy = ys[sy] - proj.mean2d[i, 1]
        ia, ib, ic = proj.inv[i]
        qf = ia * dx[None, :] ** 2 + 2.0 * ib * dy[:, None] * dx[None, :] + ic * dy[:, None] ** 2
        gauss = np.exp(-0.5 * qf)
        raw = opac[i] * gauss
        alpha = np.minimum(raw, clamp)
        idx = coverage[sy, sx]
        active = idx <= n_active[sy, sx]
        coverage[sy, sx] = idx - 1
        one_minus = 1.0 - alpha
        Tb = np.where(active, T_cur[sy, sx] / one_minus, T_cur[sy, sx])
        T_cur[sy, sx] = Tb
        w = alpha * Tb * active
        gC = gradI[sy, sx]
        g_colors[i] = np.einsum("yx,yxc->c", w, gC)
        d_alpha = np.einsum(
            "yxc,yxc->yx", gC,
            Tb[:, :, None] * colors[i] - (suffix[sy, sx] + bg_term[sy, sx]) / one_minus[:, :, None],
        ) * active
        suffix[sy, sx] += w[:, :, None] * colors[i]
        unclamped = raw < clamp
        d_raw = d_alpha * unclamped
        g_opac[i] = np.sum(d_raw * gauss)
        d_q = -0.5 * raw * d_raw  # d(alpha)/dq = -0.5 * raw for unclamped
        axd = ia * dx[None, :] + ib * dy[:, None]
        ayd = ib * dx[None, :] + ic * dy[:, None]
        g_mean2d[i, 0] = -2.0 * np.sum(d_q * axd)
        g_mean2d[i, 1] = -2.0 * np.sum(d_q * ayd)
        ga = np.sum(d_q * dx[None, :] ** 2)
        gb = np.sum(d_q * dx[None, :] * dy[:, None])
        gc = np.sum(d_q * dy[:, None] ** 2)
        A = np.array([[ia, ib], [ib, ic]])
        g_cov2d[i] -= A @ np.array([[ga, gb], [gb, gc]]) @ A

    return _chain_to_parameters(
        cloud, proj, colors, opac, mode, attribute,
        g_mean2d, g_cov2d, g_opac, g_colors,
    )


def _chain_to_parameters(cloud, proj: _Projection, colors, opac, mode, attribute,
                         g_mean2d, g_cov2d, g_opac, g_colors) -> CloudGradients:
    camera, sel = proj.camera, proj.sel
    n = cloud.count
    K = cloud.sh_coeffs.shape[1]
    out = CloudGradients(
        positions=np.zeros((n, 3)),
        rotations=np.zeros((n, 4)),
        log_scales=np.zeros((n, 3)),
        opacity_logits=np.zeros(n),
        sh_coeffs=np.zeros((n, K, 3)),
        mask_logits=None,
        mean2d=np.zeros((n, 2)),
        visible=np.zeros(n, dtype=bool),
    )
    out.visible[sel] = True
    if len(sel) == 0:
        if mode != "color":
            out.mask_logits = np.zeros_like(np.asarray(cloud.mask_logits, dtype=np.float64))
        return out
    out.mean2d[sel] = g_mean2d

    # opacity logit through the sigmoid
    out.opacity_logits[sel] = g_opac * opac * (1.0 - opac)

    g_pos = np.zeros((len(sel), 3))

    # colors: SH (color mode) or softmax over mask logits (mask modes)
    if mode == "color":
        coeffs = np.asarray(cloud.sh_coeffs, dtype=np.float64)[sel]
        g_sh, g_dir = gs.sh_eval_backward(coeffs, proj.view_dir, cloud.sh_degree, g_colors)
        out.sh_coeffs[sel] = g_sh
        g_pos += gs.normalize_rows_backward(proj.rel, g_dir)
    else:
        logits = np.asarray(cloud.mask_logits, dtype=np.float64)
        probs = gs.softmax(logits[sel], axis=1)
        if mode == "mask":
            g_probs = np.zeros_like(probs)
            g_probs[:, attribute] = g_colors[:, 0]
        else:
            g_probs = g_colors
        out.mask_logits = np.zeros_like(logits)
        out.mask_logits[sel] = gs.softmax_backward(probs, g_probs, axis=1)

    # cov2d -> (camera-space covariance, jacobian) -> (sigma, camera point)
    G = g_cov2d
    gM = np.einsum("nji,njk,nkl->nil", proj.J, G, proj.J)
    gJ = 2.0 * np.einsum("nij,njk,nkl->nil", G, proj.J, proj.M3)
    g_sigma = np.einsum("ji,njk,kl->nil", proj.Rv, gM, proj.Rv)

    g_qhat, g_logs = gs.covariance_from_rs_backward(proj.q_hat, proj.logs, g_sigma)
    out.rotations[sel] = gs.normalize_rows_backward(proj.raw_q, g_qhat)
    out.log_scales[sel] = g_logs

    fx, fy = camera.fx, camera.fy
    d = proj.depth
    px, py = proj.p[:, 0], proj.p[:, 1]
    g_p = np.einsum("nji,nj->ni", proj.J, g_mean2d)  # mean2d path: J^T grad
    g_p[:, 0] += gJ[:, 0, 2] * fx / d**2
    g_p[:, 1] += -gJ[:, 1, 2] * fy / d**2
    g_p[:, 2] += (
        gJ[:, 0, 0] * fx / d**2
        - gJ[:, 1, 1] * fy / d**2
        + gJ[:, 0, 2] * 2.0 * fx * px / d**3
        - gJ[:, 1, 2] * 2.0 * fy * py / d**3
    )
    g_pos += g_p @ proj.Rv
    out.positions[sel] = g_pos
    return out
