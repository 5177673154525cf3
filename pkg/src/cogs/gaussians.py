"""Gaussian scene state and the covariance / spherical-harmonics math built on it.

Everything here is a plain value plus pure functions: clouds are shared
read-only by renders and mutated only by a single optimizer thread.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigurationError

# -- small numeric helpers ---------------------------------------------------


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_backward(s, grad_s, axis=-1):
    """Pull a gradient through softmax given its output ``s``."""
    dot = np.sum(grad_s * s, axis=axis, keepdims=True)
    return s * (grad_s - dot)


def normalize_rows(v, eps=0.0):
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if eps:
        n = np.maximum(n, eps)
    return v / n


def normalize_rows_backward(v, grad_u):
    """Gradient of u = v/|v| with respect to v."""
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    u = v / n
    return (grad_u - u * np.sum(grad_u * u, axis=-1, keepdims=True)) / n


# -- quaternions (scalar-first) ----------------------------------------------


def quat_to_rotmat(q):
    """Rotation matrices from (..., 4) scalar-first quaternions.

    The textbook unit-quaternion formula is applied to the components as
    given; callers wanting a pure rotation must pass unit quaternions.
    """
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def quat_to_rotmat_backward(q, grad_R):
    """Gradient of quat_to_rotmat: contract dL/dR with dR/dq."""
    q = np.asarray(q, dtype=np.float64)
    g = np.asarray(grad_R, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    zero = np.zeros_like(w)

    def m(rows):
        return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)

    dRdw = 2 * m([[zero, -z, y], [z, zero, -x], [-y, x, zero]])
    dRdx = 2 * m([[zero, y, z], [y, -2 * x, -w], [z, w, -2 * x]])
    dRdy = 2 * m([[-2 * y, x, w], [x, zero, z], [-w, z, -2 * y]])
    dRdz = 2 * m([[-2 * z, -w, x], [w, -2 * z, y], [x, y, zero]])
    out = np.stack(
        [np.sum(g * d, axis=(-2, -1)) for d in (dRdw, dRdx, dRdy, dRdz)], axis=-1
    )
    return out


def quat_multiply(a, b):
    """Hamilton product of scalar-first quaternions, broadcasting."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, av = a[..., :1], a[..., 1:]
    bw, bv = b[..., :1], b[..., 1:]
    w = aw * bw - np.sum(av * bv, axis=-1, keepdims=True)
    v = aw * bv + bw * av + np.cross(av, bv)
    return np.concatenate([w, v], axis=-1)


def quat_conjugate(q):
    q = np.asarray(q, dtype=np.float64)
    out = q.copy()
    out[..., 1:] = -out[..., 1:]
    return out


def quat_multiply_backward(a, b, grad_r):
    """Gradients of quat_multiply(a, b) with respect to both factors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    g = np.asarray(grad_r, dtype=np.float64)
    aw, av = a[..., :1], a[..., 1:]
    bw, bv = b[..., :1], b[..., 1:]
    gw, gv = g[..., :1], g[..., 1:]
    ga = np.concatenate(
        [
            gw * bw + np.sum(gv * bv, axis=-1, keepdims=True),
            -gw * bv + bw * gv + np.cross(bv, gv),
        ],
        axis=-1,
    )
    gb = np.concatenate(
        [
            gw * aw + np.sum(gv * av, axis=-1, keepdims=True),
            -gw * av + aw * gv + np.cross(gv, av),
        ],
        axis=-1,
    )
    return ga, gb


# -- covariance parameterization ---------------------------------------------


def covariance_from_rs(rotation, log_scale):
    """Sigma = R diag(exp(2 s)) R^T for one or many Gaussians.

    Accepts (4,)/(3,) or (N,4)/(N,3); positive semi-definite by construction.
    """
    R = quat_to_rotmat(rotation)
    d = np.exp(2.0 * np.asarray(log_scale, dtype=np.float64))
    RD = R * d[..., None, :]
    return RD @ np.swapaxes(R, -1, -2)


def covariance_from_rs_backward(rotation, log_scale, grad_sigma):
    """Gradients of covariance_from_rs; grad_sigma must be symmetric."""
    R = quat_to_rotmat(rotation)
    s = np.asarray(log_scale, dtype=np.float64)
    d = np.exp(2.0 * s)
    G = np.asarray(grad_sigma, dtype=np.float64)
    Gs = G + np.swapaxes(G, -1, -2)  # == 2G for symmetric G
    grad_R = Gs @ (R * d[..., None, :])
    RtGR_diag = np.einsum("...ki,...kl,...li->...i", R, G, R)
    grad_log_scale = RtGR_diag * 2.0 * d
    grad_rotation = quat_to_rotmat_backward(rotation, grad_R)
    return grad_rotation, grad_log_scale


# -- spherical harmonics -----------------------------------------------------

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)


def sh_basis(view_dir, degree):
    """Real SH basis values for unit directions, shape (..., (degree+1)^2)."""
    d = np.asarray(view_dir, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    vals = [np.full(x.shape, SH_C0)]
    if degree >= 1:
        vals += [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        vals += [
            SH_C2[0] * x * y,
            SH_C2[1] * y * z,
            SH_C2[2] * (2 * zz - xx - yy),
            SH_C2[3] * x * z,
            SH_C2[4] * (xx - yy),
        ]
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        vals += [
            SH_C3[0] * y * (3 * xx - yy),
            SH_C3[1] * x * y * z,
            SH_C3[2] * y * (4 * zz - xx - yy),
            SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy),
            SH_C3[4] * x * (4 * zz - xx - yy),
            SH_C3[5] * z * (xx - yy),
            SH_C3[6] * x * (xx - yy),
        ]
    return np.stack(vals, axis=-1)


def sh_basis_dir_jacobian(view_dir, degree):
    """d(basis)/d(direction), shape (..., (degree+1)^2, 3)."""
    d = np.asarray(view_dir, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    zero = np.zeros_like(x)
    rows = [np.stack([zero, zero, zero], axis=-1)]
    if degree >= 1:
        rows += [
            np.stack([zero, np.full_like(x, -SH_C1), zero], axis=-1),
            np.stack([zero, zero, np.full_like(x, SH_C1)], axis=-1),
            np.stack([np.full_like(x, -SH_C1), zero, zero], axis=-1),
        ]
    if degree >= 2:
        rows += [
            np.stack([SH_C2[0] * y, SH_C2[0] * x, zero], axis=-1),
            np.stack([zero, SH_C2[1] * z, SH_C2[1] * y], axis=-1),
            np.stack([-2 * SH_C2[2] * x, -2 * SH_C2[2] * y, 4 * SH_C2[2] * z], axis=-1),
            np.stack([SH_C2[3] * z, zero, SH_C2[3] * x], axis=-1),
            np.stack([2 * SH_C2[4] * x, -2 * SH_C2[4] * y, zero], axis=-1),
        ]
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        rows += [
            np.stack([SH_C3[0] * 6 * x * y, SH_C3[0] * (3 * xx - 3 * yy), zero], axis=-1),
            np.stack([SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y], axis=-1),
            np.stack(
                [-2 * SH_C3[2] * x * y, SH_C3[2] * (4 * zz - xx - 3 * yy), SH_C3[2] * 8 * y * z],
                axis=-1,
            ),
            np.stack(
                [-6 * SH_C3[3] * x * z, -6 * SH_C3[3] * y * z, SH_C3[3] * (6 * zz - 3 * xx - 3 * yy)],
                axis=-1,
            ),
            np.stack(
                [SH_C3[4] * (4 * zz - 3 * xx - yy), -2 * SH_C3[4] * x * y, SH_C3[4] * 8 * x * z],
                axis=-1,
            ),
            np.stack([2 * SH_C3[5] * x * z, -2 * SH_C3[5] * y * z, SH_C3[5] * (xx - yy)], axis=-1),
            np.stack([SH_C3[6] * (3 * xx - yy), -2 * SH_C3[6] * x * y, zero], axis=-1),
        ]
    return np.stack(rows, axis=-2)


def sh_degree_from_count(count: int) -> int:
    deg = int(round(np.sqrt(count))) - 1
    if (deg + 1) ** 2 != count or deg < 0:
        raise ConfigurationError(f"{count} SH coefficients is not a (degree+1)^2 count")
    return deg


def sh_eval(sh_coeffs, view_dir, degree):
    """Evaluate SH color: basis-weighted sum plus 0.5 offset, clamped at 0.

    sh_coeffs: (..., K, 3) with K = (degree+1)^2; view_dir: (..., 3) unit.
    """
    coeffs = np.asarray(sh_coeffs, dtype=np.float64)
    if coeffs.shape[-2] != (degree + 1) ** 2:
        raise ConfigurationError(
            f"expected {(degree + 1) ** 2} SH coefficients for degree {degree}, "
            f"got {coeffs.shape[-2]}"
        )
    basis = sh_basis(view_dir, degree)
    rgb = np.einsum("...k,...kc->...c", basis, coeffs) + 0.5
    return np.maximum(rgb, 0.0)


def sh_eval_backward(sh_coeffs, view_dir, degree, grad_rgb):
    """Gradients of sh_eval wrt coefficients and (un-normalized basis) direction."""
    coeffs = np.asarray(sh_coeffs, dtype=np.float64)
    basis = sh_basis(view_dir, degree)
    rgb = np.einsum("...k,...kc->...c", basis, coeffs) + 0.5
    g = np.asarray(grad_rgb, dtype=np.float64) * (rgb > 0.0)
    grad_coeffs = basis[..., :, None] * g[..., None, :]
    jac = sh_basis_dir_jacobian(view_dir, degree)  # (..., K, 3)
    grad_dir = np.einsum("...kc,...kd->...d", coeffs * g[..., None, :], jac)
    return grad_coeffs, grad_dir


# -- scene state ---------------------------------------------------------------


@dataclass
class GaussianCloud:
    """Arrays of per-Gaussian learnable parameters; all share length count.

    positions (N,3) world units; rotations (N,4) scalar-first unit quaternions;
    log_scales (N,3); opacity_logits (N,); sh_coeffs (N,K,3); mask_logits (N,L)
    present only once mask learning has run.
    """

    positions: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh_coeffs: np.ndarray
    mask_logits: Optional[np.ndarray] = None

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @property
    def sh_degree(self) -> int:
        return sh_degree_from_count(self.sh_coeffs.shape[1])

    @property
    def attribute_count(self) -> Optional[int]:
        return None if self.mask_logits is None else self.mask_logits.shape[1]

    def validate(self, atol: float = 1e-6) -> None:
        n = self.count
        shapes = {
            "positions": (n, 3),
            "rotations": (n, 4),
            "log_scales": (n, 3),
            "opacity_logits": (n,),
        }
        for name, want in shapes.items():
            got = getattr(self, name).shape
            if got != want:
                raise ConfigurationError(f"{name} has shape {got}, expected {want}")
        if self.sh_coeffs.shape[0] != n or self.sh_coeffs.shape[2:] != (3,):
            raise ConfigurationError(f"sh_coeffs has shape {self.sh_coeffs.shape}")
        sh_degree_from_count(self.sh_coeffs.shape[1])
        norms = np.linalg.norm(np.asarray(self.rotations, dtype=np.float64), axis=1)
        if not np.allclose(norms, 1.0, atol=atol):
            raise ConfigurationError("rotations are not unit quaternions")
        if self.mask_logits is not None:
            if self.mask_logits.shape[0] != n or self.mask_logits.ndim != 2:
                raise ConfigurationError(f"mask_logits has shape {self.mask_logits.shape}")
            s = softmax(self.mask_logits, axis=1)
            if not np.allclose(s.sum(axis=1), 1.0, atol=atol):
                raise ConfigurationError("softmax(mask_logits) does not sum to 1")

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            positions=self.positions.copy(),
            rotations=self.rotations.copy(),
            log_scales=self.log_scales.copy(),
            opacity_logits=self.opacity_logits.copy(),
            sh_coeffs=self.sh_coeffs.copy(),
            mask_logits=None if self.mask_logits is None else self.mask_logits.copy(),
        )

    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    def mask_probs(self) -> np.ndarray:
        if self.mask_logits is None:
            raise ConfigurationError("cloud has no mask_logits")
        return softmax(self.mask_logits, axis=1)


@dataclass(frozen=True)
class SceneBox:
    """Axis-aligned world box used for random initialization."""

    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max_corner, dtype=np.float64).reshape(3)
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)
        if not np.all(lo < hi):
            raise ConfigurationError("scene box min_corner must be < max_corner")

    @property
    def extent(self) -> float:
        return float(np.linalg.norm(self.max_corner - self.min_corner))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u = rng.random((n, 3))
        return self.min_corner + u * (self.max_corner - self.min_corner)


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: intrinsics in pixels plus a camera-to-world pose.

    The camera looks along its local -z axis with +y up, matching the
    transforms-json files of the synthetic datasets this engine ingests.
    """

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    cam_to_world: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "cam_to_world", np.asarray(self.cam_to_world, dtype=np.float64).reshape(4, 4)
        )

    def validate(self, atol: float = 1e-6) -> None:
        R = self.cam_to_world[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=atol):
            raise ConfigurationError("cam_to_world rotation block is not orthonormal")
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigurationError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ConfigurationError("principal point must be inside the image")

    @property
    def center(self) -> np.ndarray:
        return self.cam_to_world[:3, 3]

    @property
    def rotation_w2c(self) -> np.ndarray:
        return self.cam_to_world[:3, :3].T

    def resized(self, width: int, height: int) -> "Camera":
        sx, sy = width / self.width, height / self.height
        return replace(
            self,
            width=width,
            height=height,
            fx=self.fx * sx,
            fy=self.fy * sy,
            cx=self.cx * sx,
            cy=self.cy * sy,
        )

    @staticmethod
    def look_at(position, target, up, width, height, fov_x) -> "Camera":
        """Build a camera at `position` looking at `target`; fov_x in radians."""
        position = np.asarray(position, dtype=np.float64)
        forward = normalize_rows(np.asarray(target, dtype=np.float64) - position)
        z_axis = -forward
        x_axis = normalize_rows(np.cross(np.asarray(up, dtype=np.float64), z_axis))
        y_axis = np.cross(z_axis, x_axis)
        pose = np.eye(4)
        pose[:3, 0], pose[:3, 1], pose[:3, 2], pose[:3, 3] = x_axis, y_axis, z_axis, position
        fx = 0.5 * width / np.tan(0.5 * fov_x)
        return Camera(
            width=width, height=height, fx=fx, fy=fx, cx=width / 2.0, cy=height / 2.0,
            cam_to_world=pose,
        )

    @staticmethod
    def orbit(azimuth, elevation, radius, target, width, height, fov_x) -> "Camera":
        """Camera on a y-up orbit: angles in radians, target a 3-vector."""
        target = np.asarray(target, dtype=np.float64)
        ce = np.cos(elevation)
        position = target + radius * np.array(
            [ce * np.sin(azimuth), np.sin(elevation), ce * np.cos(azimuth)]
        )
        return Camera.look_at(position, target, (0.0, 1.0, 0.0), width, height, fov_x)
