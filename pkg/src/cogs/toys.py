"""Synthetic ground-truth scenes rendered with the engine's own forward pass.

The generator builds small clouds of Gaussian clusters with known linear
motions, writes them out in the transforms-json layout (plus optional 2D
part masks), and keeps the ground truth around so tests can score fits
against known part memberships, trajectories and screen regions.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import raster, sceneio
from .gaussians import Camera, GaussianCloud, SceneBox, logit


@dataclass(frozen=True)
class ClusterSpec:
    """One rigid blob: gaussians near `center`, displaced by t * motion."""

    center: Tuple[float, float, float]
    n: int
    motion: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    spread: float = 0.16
    scale_range: Tuple[float, float] = (0.06, 0.11)
    base_color: Optional[Tuple[float, float, float]] = None

    @property
    def moves(self) -> bool:
        return any(abs(m) > 0 for m in self.motion)


@dataclass
class ToyScene:
    base_cloud: GaussianCloud
    clusters: List[ClusterSpec]
    slices: List[slice]
    box: SceneBox
    fov_x: float = 0.69
    cam_radius: float = 4.0
    cam_elevation: float = 0.12
    cam_azimuth_span: float = 0.35

    def displacement(self, t: float) -> np.ndarray:
        disp = np.zeros((self.base_cloud.count, 3))
        for spec, sl in zip(self.clusters, self.slices):
            disp[sl] = np.asarray(spec.motion) * t
        return disp

    def cloud_at(self, t: float) -> GaussianCloud:
        cloud = self.base_cloud.copy()
        cloud.positions = cloud.positions + self.displacement(t)
        return cloud

    def camera_at(self, t: float, size: int = 64) -> Camera:
        az = (t - 0.5) * self.cam_azimuth_span
        return Camera.orbit(az, self.cam_elevation, self.cam_radius,
                            (0.0, 0.0, 0.0), size, size, self.fov_x)

    def render_gt(self, t: float, size: int = 64, camera: Optional[Camera] = None):
        cam = camera if camera is not None else self.camera_at(t, size)
        return raster.render(self.cloud_at(t), cam).image

    def cluster_members(self, fitted_positions, cluster_idx: int, t: float = 0.0,
                        margin: float = 0.18) -> np.ndarray:
        """Boolean mask of fitted gaussians lying inside one cluster's box at t."""
        spec = self.clusters[cluster_idx]
        gt = self.cloud_at(t).positions[self.slices[cluster_idx]]
        lo = gt.min(axis=0) - margin
        hi = gt.max(axis=0) + margin
        pos = np.asarray(fitted_positions, dtype=np.float64)
        return np.all((pos >= lo) & (pos <= hi), axis=1)

    def part_mask(self, cluster_idx: int, t: float, camera: Camera,
                  threshold: float = 0.25) -> np.ndarray:
        """Binary image of one cluster's screen coverage at time t."""
        sl = self.slices[cluster_idx]
        sub = GaussianCloud(
            positions=self.cloud_at(t).positions[sl],
            rotations=self.base_cloud.rotations[sl],
            log_scales=self.base_cloud.log_scales[sl],
            opacity_logits=self.base_cloud.opacity_logits[sl],
            sh_coeffs=self.base_cloud.sh_coeffs[sl],
        )
        out = raster.render(sub, camera)
        return (1.0 - out.final_transmittance) > threshold

    def part_region(self, cluster_idx: int, camera: Camera,
                    times: Sequence[float], threshold: float = 0.05) -> np.ndarray:
        """Union of a part's coverage over a time sweep (for isolation checks)."""
        region = np.zeros((camera.height, camera.width), dtype=bool)
        for t in times:
            region |= self.part_mask(cluster_idx, t, camera, threshold)
        return region


def make_scene(clusters: Sequence[ClusterSpec], seed: int = 0,
               sh_degree: int = 1) -> ToyScene:
    rng = np.random.default_rng(seed)
    parts, slices, start = [], [], 0
    k = (sh_degree + 1) ** 2
    for spec in clusters:
        pos = np.asarray(spec.center) + rng.normal(0, spec.spread, (spec.n, 3))
        scales = rng.uniform(*spec.scale_range, size=spec.n)
        base = np.asarray(spec.base_color) if spec.base_color is not None \
            else rng.uniform(0.25, 0.95, 3)
        rgb = np.clip(base + rng.normal(0, 0.08, (spec.n, 3)), 0.05, 0.98)
        sh = np.zeros((spec.n, k, 3))
        sh[:, 0, :] = (rgb - 0.5) / 0.28209479177387814
        if k > 1:
            sh[:, 1:, :] = rng.normal(0, 0.04, (spec.n, k - 1, 3))
        q = rng.normal(size=(spec.n, 4))
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        parts.append(dict(
            positions=pos, rotations=q,
            log_scales=np.log(scales)[:, None].repeat(3, axis=1),
            opacity_logits=logit(rng.uniform(0.75, 0.93, spec.n)),
            sh_coeffs=sh,
        ))
        slices.append(slice(start, start + spec.n))
        start += spec.n
    cloud = GaussianCloud(**{
        key: np.concatenate([p[key] for p in parts]) for key in parts[0]
    })
    lo = cloud.positions.min(axis=0)
    hi = cloud.positions.max(axis=0)
    for spec in clusters:
        hi = np.maximum(hi, np.asarray(spec.center) + np.asarray(spec.motion) + 0.4)
        lo = np.minimum(lo, np.asarray(spec.center) + np.asarray(spec.motion) - 0.4)
    box = SceneBox(lo - 0.2, hi + 0.2)
    return ToyScene(base_cloud=cloud, clusters=list(clusters), slices=slices, box=box)


def two_cluster_scene(seed: int = 0) -> ToyScene:
    """One static and one translating blob; the dynamic-training testbed."""
    return make_scene([
        ClusterSpec(center=(-0.55, 0.0, 0.0), n=10, base_color=(0.85, 0.35, 0.25)),
        ClusterSpec(center=(0.55, -0.32, 0.0), n=10, motion=(0.0, 0.64, 0.0),
                    base_color=(0.25, 0.45, 0.9)),
    ], seed=seed)


def two_part_scene(seed: int = 0) -> ToyScene:
    """Two independently moving parts plus static filler; the control testbed.

    Parts are kept apart in screen space so their swept regions never touch:
    the mask-separation and control-isolation checks rely on that.
    """
    return make_scene([
        ClusterSpec(center=(0.12, 0.7, -0.35), n=8, base_color=(0.55, 0.55, 0.5),
                    spread=0.14),
        ClusterSpec(center=(-0.72, -0.35, 0.0), n=8, motion=(0.0, 0.62, 0.0),
                    base_color=(0.9, 0.3, 0.2), spread=0.11),
        ClusterSpec(center=(0.55, -0.38, 0.0), n=8, motion=(0.45, 0.0, 0.0),
                    base_color=(0.2, 0.5, 0.9), spread=0.11),
    ], seed=seed)


def static_scene(seed: int = 0, n: int = 20) -> ToyScene:
    rng = np.random.default_rng(seed + 99)
    specs = []
    remaining = n
    while remaining > 0:
        take = min(remaining, max(3, n // 4))
        specs.append(ClusterSpec(
            center=tuple(rng.uniform(-0.7, 0.7, 3)), n=take,
            spread=0.22, scale_range=(0.08, 0.16),
        ))
        remaining -= take
    return make_scene(specs, seed=seed)


def write_dataset(scene: ToyScene, root: str, times: Sequence[float],
                  split: str = "train", size: int = 64) -> sceneio.Dataset:
    """Render ground-truth frames to disk and reload through the ingestion path."""
    os.makedirs(root, exist_ok=True)
    frames_meta = []
    for i, t in enumerate(times):
        cam = scene.camera_at(t, size)
        img = scene.render_gt(t, size, cam)
        name = f"{split[0]}_{i:03d}"
        sceneio.encode_png(img, os.path.join(root, name + ".png"))
        frames_meta.append({
            "file_path": f"./{name}",
            "time": float(t),
            "transform_matrix": cam.cam_to_world.tolist(),
        })
    meta = {"camera_angle_x": scene.fov_x, "frames": frames_meta}
    with open(os.path.join(root, f"transforms_{split}.json"), "w") as fh:
        json.dump(meta, fh, indent=1)
    return sceneio.load_dataset(root, split)


def write_part_masks(scene: ToyScene, dataset: sceneio.Dataset, root: str,
                     assignments: "dict[str, tuple[int, int]]",
                     threshold: float = 0.08, grow_px: int = 2) -> None:
    """Write one ground-truth mask PNG per attribute.

    assignments maps attribute name -> (cluster index, dataset frame index).
    Layout: masks/<attribute>/<frame_id>.png. Masks are annotated generously
    (low coverage threshold plus dilation), like a human painting a blob:
    tight masks would penalize the soft tails of the part's own splats.
    """
    from scipy.ndimage import binary_dilation

    for name, (cluster_idx, frame_idx) in assignments.items():
        frame = dataset.frames[frame_idx]
        mask = scene.part_mask(cluster_idx, frame.time, frame.camera, threshold)
        if grow_px > 0:
            mask = binary_dilation(mask, iterations=grow_px)
        out_dir = os.path.join(root, "masks", name)
        os.makedirs(out_dir, exist_ok=True)
        sceneio.encode_png(mask.astype(np.float64), os.path.join(out_dir, frame.frame_id + ".png"))
