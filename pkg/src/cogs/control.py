"""Per-part scene control: learn per-Gaussian mask vectors from 2D
annotations, extract normalized control signals from Gaussian trajectories,
train control networks to reproduce the dynamic model under those signals,
and re-render under user-chosen signal values.

Mask space reserves index 0 for an implicit background attribute that
absorbs softmax mass of uncontrolled Gaussians; user attributes occupy
indices 1..L-1 in the order of their supervision directories.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import losses as reg
from . import nets, raster, sceneio, training
from .errors import ConfigurationError, DegenerateControlError, InputError, StateError
from .gaussians import GaussianCloud, normalize_rows
from .nets import AdamState, Mlp, adam_step, lr_exponential, mlp_backward, mlp_forward
from .raster import RasterSettings
from .sceneio import Dataset
from .training import DeformationModel, deform, photometric_loss

OFFSET_WIDTH = 13  # position 3 + color 3 + rotation 4 + scale 3


@dataclass
class ControlConfig:
    mask_iters: int = 2000
    mask_lr: float = 1.0
    mask_lr_hot_iters: int = 1000
    mask_lr_final: float = 1e-2
    control_iters: int = 5000
    control_lr_start: float = 1e-2
    control_lr_end: float = 1e-4
    finetune_iters: int = 5000
    finetune_lr: float = 1e-6
    finetune_regularizers: bool = False
    top_fraction: float = 0.1
    sigma_freqs: int = 4
    # coarse position encoding: gated gaussians that are occluded at every
    # training signal get no photometric gradient, and high-frequency
    # features would let their offsets drift as unconstrained extrapolation
    pos_freqs: int = 4
    hidden: int = 128
    layers: int = 4
    # mean-norm decay on position offsets; pins unobserved offsets at zero
    offset_decay: float = 1e-3


@dataclass
class MaskSupervision:
    """Per-attribute 2D mask frames: name -> [(dataset frame index, image)]."""

    attribute_names: List[str]
    entries: Dict[str, List[Tuple[int, np.ndarray]]]

    @property
    def user_count(self) -> int:
        return len(self.attribute_names)


def load_mask_supervision(root: str, dataset: Dataset) -> MaskSupervision:
    """Read masks/<attribute>/<frame_id>.png next to a dataset."""
    mask_root = os.path.join(root, "masks")
    if not os.path.isdir(mask_root):
        raise ConfigurationError(f"no mask directory at {mask_root}")
    names = sorted(
        d for d in os.listdir(mask_root) if os.path.isdir(os.path.join(mask_root, d))
    )
    if not names:
        raise ConfigurationError(f"{mask_root} holds no attribute directories")
    by_id = {f.frame_id: i for i, f in enumerate(dataset.frames)}
    entries: Dict[str, List[Tuple[int, np.ndarray]]] = {}
    for name in names:
        found = []
        for fname in sorted(os.listdir(os.path.join(mask_root, name))):
            if not fname.endswith(".png"):
                continue
            fid = fname[:-4]
            if fid not in by_id:
                raise ConfigurationError(f"mask {name}/{fname} references unknown frame")
            img = sceneio.decode_png(os.path.join(mask_root, name, fname), grayscale=True)
            if img.shape != (dataset.height, dataset.width):
                raise ConfigurationError(
                    f"mask {name}/{fname} is {img.shape}, dataset is "
                    f"{dataset.height}x{dataset.width}"
                )
            found.append((by_id[fid], img))
        entries[name] = found
    return MaskSupervision(attribute_names=names, entries=entries)


def learn_masks(cloud: GaussianCloud, model: DeformationModel, dataset: Dataset,
                supervision: MaskSupervision, iters: Optional[int] = None,
                config: ControlConfig = ControlConfig(), seed: int = 0,
                settings: RasterSettings = raster.DEFAULT_SETTINGS,
                loss_log: Optional[sceneio.LossLog] = None) -> GaussianCloud:
    """Optimize per-Gaussian mask logits against the 2D supervision.

    Only mask_logits change; every other array is left bitwise intact. Each
    supervised frame contributes loss terms for its labeled attributes plus
    the background channel (ground truth: complement of the labeled masks).
    """
    if supervision.user_count < 1:
        raise ConfigurationError("need at least one supervised attribute")
    for name in supervision.attribute_names:
        if not supervision.entries.get(name):
            raise ConfigurationError(f"attribute {name!r} has no supervision frames")
    L = supervision.user_count + 1
    n_iters = config.mask_iters if iters is None else iters
    cloud.mask_logits = np.zeros((cloud.count, L), dtype=np.float32)
    adam = AdamState.for_params([cloud.mask_logits])

    # flatten supervision into per-frame jobs: frame index -> {attr idx: gt}
    jobs: Dict[int, Dict[int, np.ndarray]] = {}
    for ai, name in enumerate(supervision.attribute_names):
        for frame_idx, img in supervision.entries[name]:
            jobs.setdefault(frame_idx, {})[ai + 1] = img
    job_list = sorted(jobs.items())

    for it in range(n_iters):
        frame_idx, labeled = job_list[it % len(job_list)]
        frame = dataset.frames[frame_idx]
        deformed = deform(cloud, model, frame.time)
        out = raster.render(deformed, frame.camera, mode="mask_stack", settings=settings)
        stack = out.image  # (H, W, L)
        attrs = [0] + sorted(labeled)
        gt_bg = np.clip(1.0 - sum(labeled.values()), 0.0, 1.0)
        gt = np.stack([gt_bg] + [labeled[a] for a in sorted(labeled)])
        rendered = np.stack([stack[:, :, a] for a in attrs])
        value, grad_sub = reg.loss_mask(rendered, gt)
        grad_stack = np.zeros_like(stack)
        for row, a in enumerate(attrs):
            grad_stack[:, :, a] = grad_sub[row]
        g = raster.render_backward(deformed, frame.camera, grad_stack,
                                   mode="mask_stack", settings=settings)
        if it < config.mask_lr_hot_iters or n_iters <= config.mask_lr_hot_iters:
            lr = config.mask_lr
        else:
            lr = lr_exponential(it - config.mask_lr_hot_iters,
                                n_iters - config.mask_lr_hot_iters,
                                config.mask_lr, config.mask_lr_final)
        adam_step([cloud.mask_logits], [g.mask_logits], adam, lr)
        if loss_log is not None:
            loss_log.write(it, mask=value, lr=lr)
    return cloud


def select_control_set(cloud: GaussianCloud, model: DeformationModel,
                       times: Sequence[float], attribute: int,
                       method: str = "auto", top_fraction: float = 0.1,
                       indices: Optional[Sequence[int]] = None) -> np.ndarray:
    """Pick the Gaussians whose trajectory drives an attribute's signal."""
    if cloud.mask_logits is None:
        raise StateError("control selection requires learned masks")
    L = cloud.mask_logits.shape[1]
    if not (0 < attribute < L):
        raise ConfigurationError(f"attribute must be in [1, {L}), got {attribute}")
    if method == "manual":
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size == 0 or idx.min() < 0 or idx.max() >= cloud.count:
            raise ConfigurationError("manual control set indices out of range")
        return idx
    if method != "auto":
        raise ConfigurationError(f"unknown selection method {method!r}")
    qualifying = np.flatnonzero(cloud.mask_probs()[:, attribute] > 0.5)
    if qualifying.size == 0:
        raise DegenerateControlError(f"no gaussian has majority mass on attribute {attribute}")
    traj = np.stack([
        np.asarray(deform(cloud, model, float(t)).positions, dtype=np.float64)[qualifying]
        for t in times
    ])  # (T, M, 3)
    path = np.linalg.norm(np.diff(traj, axis=0), axis=2).sum(axis=0)
    keep = max(1, int(np.ceil(top_fraction * qualifying.size)))
    order = np.argsort(-path, kind="stable")[:keep]
    return qualifying[order]


def extract_signal(centroid_trajectory):
    """Principal-direction projection of a centroid trajectory, normalized.

    Returns (direction, start_projection, end_projection, sigma_per_sample).
    The direction sign is fixed so the final sample projects at least as far
    as the first.
    """
    traj = np.asarray(centroid_trajectory, dtype=np.float64)
    if traj.ndim != 2 or traj.shape[1] != 3 or traj.shape[0] < 2:
        raise ConfigurationError("trajectory must be (T>=2, 3)")
    center = traj.mean(axis=0)
    X = traj - center
    cov = X.T @ X / traj.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    if evals[-1] < 1e-18:
        raise DegenerateControlError("trajectory has no variance")
    d = evecs[:, -1]
    proj = X @ d
    if proj[-1] < proj[0]:
        d = -d
        proj = -proj
    s_p = float(proj.min())
    e_p = float(proj.max())
    if e_p - s_p < 1e-9:
        raise DegenerateControlError("projected span is degenerate")
    sigma = (proj - s_p) / (e_p - s_p)
    return d, s_p, e_p, sigma


@dataclass
class ControlChannel:
    """Everything one controllable attribute needs at render time."""

    name: str
    attribute: int  # index in mask space (background is 0)
    gated: np.ndarray  # gaussians receiving this channel's offsets
    control_set: np.ndarray  # subset whose centroid defined the signal
    direction: np.ndarray
    start_proj: float
    end_proj: float
    times: np.ndarray
    sigma_curve: np.ndarray
    net: Optional[Mlp] = None

    def sigma_at(self, t: float) -> float:
        return float(np.interp(t, self.times, self.sigma_curve))


@dataclass
class ControlRig:
    channels: List[ControlChannel]
    sigma_freqs: int = 4
    pos_freqs: int = 10

    @property
    def attribute_count(self) -> int:  # includes the background slot
        return len(self.channels) + 1

    @property
    def attribute_names(self) -> List[str]:
        return [c.name for c in self.channels]

    @property
    def trained(self) -> bool:
        return all(c.net is not None for c in self.channels)

    def sigma_for_time(self, t: float) -> np.ndarray:
        return np.array([c.sigma_at(t) for c in self.channels])


def build_rig(cloud: GaussianCloud, model: DeformationModel, dataset: Dataset,
              attribute_names: Sequence[str], config: ControlConfig = ControlConfig(),
              manual_sets: Optional[Dict[str, Sequence[int]]] = None) -> ControlRig:
    """Select control sets and extract a signal for every user attribute."""
    times = np.unique(dataset.times)
    channels = []
    for ai, name in enumerate(attribute_names):
        attribute = ai + 1
        if manual_sets and name in manual_sets:
            control = select_control_set(cloud, model, times, attribute,
                                         method="manual", indices=manual_sets[name])
        else:
            control = select_control_set(cloud, model, times, attribute,
                                         method="auto", top_fraction=config.top_fraction)
        gated = np.flatnonzero(cloud.mask_probs()[:, attribute] > 0.5)
        traj = np.stack([
            np.asarray(deform(cloud, model, float(t)).positions, dtype=np.float64)[control].mean(axis=0)
            for t in times
        ])
        d, s_p, e_p, sigma = extract_signal(traj)
        channels.append(ControlChannel(
            name=name, attribute=attribute, gated=gated, control_set=control,
            direction=d, start_proj=s_p, end_proj=e_p,
            times=times.astype(np.float64), sigma_curve=sigma,
        ))
    return ControlRig(channels=channels, sigma_freqs=config.sigma_freqs,
                      pos_freqs=config.pos_freqs)


def init_control_nets(rig: ControlRig, config: ControlConfig, seed: int = 0) -> None:
    rng = np.random.default_rng(seed)
    rig.sigma_freqs = config.sigma_freqs
    rig.pos_freqs = config.pos_freqs
    in_w = nets.encoded_width(1, config.sigma_freqs) + nets.encoded_width(3, config.pos_freqs)
    for channel in rig.channels:
        widths = [in_w] + [config.hidden] * config.layers + [OFFSET_WIDTH]
        channel.net = nets.mlp_init(widths, rng, zero_final=True)


def _channel_input(channel: ControlChannel, positions, sigma: float,
                   freqs: Tuple[int, int]) -> np.ndarray:
    sigma_freqs, pos_freqs = freqs
    se = nets.positional_encode(np.array([[sigma]]), sigma_freqs)
    pe = nets.positional_encode(np.asarray(positions, dtype=np.float64), pos_freqs)
    return np.concatenate([np.repeat(se, pe.shape[0], axis=0), pe], axis=1)


def apply_controls(cloud: GaussianCloud, rig: ControlRig, sigma,
                   want_cache: bool = False):
    """Compose every channel's offsets onto its gated Gaussians.

    Offsets add across channels (gating is disjoint under the 0.5 softmax
    rule); untouched rows keep their exact stored values so a zeroed rig
    reproduces the raw cloud bit for bit.
    """
    sigma = np.asarray(sigma, dtype=np.float64).reshape(-1)
    if sigma.shape[0] != len(rig.channels):
        raise InputError(f"expected {len(rig.channels)} control values, got {sigma.shape[0]}")
    if np.any(sigma < 0.0) or np.any(sigma > 1.0):
        raise InputError("control values must lie in [0, 1]")
    if not rig.trained:
        raise StateError("control networks are not initialized")
    freqs = (rig.sigma_freqs, rig.pos_freqs)
    positions = np.asarray(cloud.positions, dtype=np.float64).copy()
    rotations = np.asarray(cloud.rotations, dtype=np.float64).copy()
    log_scales = np.asarray(cloud.log_scales, dtype=np.float64).copy()
    sh = np.asarray(cloud.sh_coeffs, dtype=np.float64).copy()
    caches = []
    for value, channel in zip(sigma, rig.channels):
        idx = channel.gated
        if idx.size == 0:
            caches.append(None)
            continue
        x = _channel_input(channel, cloud.positions[idx], float(value), freqs)
        out, cache = mlp_forward(channel.net, x)
        out = np.asarray(out, dtype=np.float64)
        positions[idx] += out[:, 0:3]
        sh[idx, 0, :] += out[:, 3:6]
        rotations[idx] += out[:, 6:10]
        log_scales[idx] += out[:, 10:13]
        caches.append(cache)
    controlled = GaussianCloud(
        positions=positions, rotations=rotations, log_scales=log_scales,
        opacity_logits=cloud.opacity_logits, sh_coeffs=sh,
        mask_logits=cloud.mask_logits,
    )
    if want_cache:
        return controlled, caches
    return controlled


def apply_controls_backward(rig: ControlRig, caches, g_positions, g_rotations,
                            g_log_scales, g_sh, offset_grads=None):
    """Split controlled-cloud gradients into per-channel net grads and the
    identity-path gradients on the base cloud arrays.

    offset_grads, when given, holds one (n_gated, 3) array per channel that
    is added to the position-offset rows of the net output gradient only
    (it does not reach the base cloud).
    """
    net_grads = []
    for ci, (channel, cache) in enumerate(zip(rig.channels, caches)):
        if cache is None:
            net_grads.append([np.zeros_like(p) for p in channel.net.parameters()])
            continue
        idx = channel.gated
        dout = np.concatenate(
            [
                np.asarray(g_positions, dtype=np.float64)[idx],
                np.asarray(g_sh, dtype=np.float64)[idx, 0, :],
                np.asarray(g_rotations, dtype=np.float64)[idx],
                np.asarray(g_log_scales, dtype=np.float64)[idx],
            ],
            axis=1,
        )
        if offset_grads is not None and offset_grads[ci] is not None:
            dout[:, 0:3] += offset_grads[ci]
        grads, _ = mlp_backward(channel.net, cache, dout)
        net_grads.append(grads)
    base = {
        "positions": np.asarray(g_positions, dtype=np.float64),
        "rotations": np.asarray(g_rotations, dtype=np.float64),
        "log_scales": np.asarray(g_log_scales, dtype=np.float64),
        "sh_coeffs": np.asarray(g_sh, dtype=np.float64),
    }
    return net_grads, base


def render_with_controls(cloud: GaussianCloud, rig: ControlRig, sigma, camera,
                         background=None,
                         settings: RasterSettings = raster.DEFAULT_SETTINGS):
    """Pure controlled render; sigma holds one value in [0,1] per attribute."""
    controlled = apply_controls(cloud, rig, sigma)
    return raster.render(controlled, camera, background=background, settings=settings)


def train_control(cloud: GaussianCloud, model: DeformationModel, rig: ControlRig,
                  dataset: Dataset, iters: Optional[int] = None,
                  config: ControlConfig = ControlConfig(), seed: int = 0,
                  settings: RasterSettings = raster.DEFAULT_SETTINGS,
                  loss_log: Optional[sceneio.LossLog] = None,
                  progress_every: int = 0) -> ControlRig:
    """Distill the dynamic model into the control networks.

    Targets are the dynamic model's renders at each training time; at time t
    every channel is driven with its extracted sigma(t). Cloud and
    deformation weights stay frozen (bitwise).
    """
    for channel in rig.channels:
        if channel.sigma_curve is None or channel.sigma_curve.size == 0:
            raise StateError(f"channel {channel.name} has no extracted signal")
    if not rig.trained:
        init_control_nets(rig, config, seed)
    n_iters = config.control_iters if iters is None else iters
    rng = np.random.default_rng(seed)
    targets = [
        raster.render(deform(cloud, model, f.time), f.camera, settings=settings).image
        for f in dataset.frames
    ]
    params: List[np.ndarray] = []
    for channel in rig.channels:
        params.extend(channel.net.parameters())
    adam = AdamState.for_params(params)
    order = rng.permutation(len(dataset.frames))
    for it in range(n_iters):
        if it % len(order) == 0 and it > 0:
            order = rng.permutation(len(dataset.frames))
        fi = order[it % len(order)]
        frame = dataset.frames[fi]
        sigma = rig.sigma_for_time(frame.time)
        controlled, caches = apply_controls(cloud, rig, sigma, want_cache=True)
        rendered = raster.render(controlled, frame.camera, settings=settings)
        value, grad_img = photometric_loss(rendered.image, targets[fi])
        g = raster.render_backward(controlled, frame.camera, grad_img, settings=settings)
        net_grads, _ = apply_controls_backward(
            rig, caches, g.positions, g.rotations, g.log_scales, g.sh_coeffs
        )
        flat = [arr for grads in net_grads for arr in grads]
        lr = lr_exponential(it, n_iters, config.control_lr_start, config.control_lr_end)
        adam_step(params, flat, adam, lr)
        if loss_log is not None:
            loss_log.write(it, photometric=value, lr=lr)
        if progress_every and it % progress_every == 0:
            print(f"control iter {it:5d}  photometric {value:.5f}")
    return rig


def finetune_all(cloud: GaussianCloud, model: DeformationModel, rig: ControlRig,
                 dataset: Dataset, iters: Optional[int] = None,
                 config: ControlConfig = ControlConfig(), seed: int = 0,
                 settings: RasterSettings = raster.DEFAULT_SETTINGS,
                 loss_log: Optional[sceneio.LossLog] = None):
    """Joint low-rate polish of cloud parameters and control networks against
    the training frames, rendered through the control path."""
    if not rig.trained:
        raise StateError("finetune requires trained control networks")
    n_iters = config.finetune_iters if iters is None else iters
    if n_iters == 0:
        return cloud, rig
    rng = np.random.default_rng(seed)
    cloud_params = [getattr(cloud, name) for name in training.CLOUD_PARAMS]
    net_params: List[np.ndarray] = []
    for channel in rig.channels:
        net_params.extend(channel.net.parameters())
    adam = AdamState.for_params(cloud_params + net_params)
    order = rng.permutation(len(dataset.frames))
    for it in range(n_iters):
        if it % len(order) == 0 and it > 0:
            order = rng.permutation(len(dataset.frames))
        fi = order[it % len(order)]
        frame = dataset.frames[fi]
        sigma = rig.sigma_for_time(frame.time)
        controlled, caches = apply_controls(cloud, rig, sigma, want_cache=True)
        rendered = raster.render(controlled, frame.camera, settings=settings)
        value, grad_img = photometric_loss(rendered.image, frame.image())
        g = raster.render_backward(controlled, frame.camera, grad_img, settings=settings)
        net_grads, base = apply_controls_backward(
            rig, caches, g.positions, g.rotations, g.log_scales, g.sh_coeffs
        )
        cloud_grads = [base["positions"], base["rotations"], base["log_scales"],
                       g.opacity_logits, base["sh_coeffs"]]
        flat = [arr for grads in net_grads for arr in grads]
        adam_step(cloud_params + net_params, cloud_grads + flat, adam, config.finetune_lr)
        rot = cloud.rotations
        rot /= np.linalg.norm(rot.astype(np.float64), axis=1, keepdims=True).astype(rot.dtype)
        if loss_log is not None:
            loss_log.write(it, photometric=value, lr=config.finetune_lr)
    return cloud, rig


# -- persistence ------------------------------------------------------------------


def pack_rig(rig: ControlRig, prefix: str = "rig.") -> Tuple[dict, dict]:
    """Arrays plus the JSON-able structure describing them."""
    arrays: dict = {}
    info = {"channels": [], "sigma_freqs": rig.sigma_freqs, "pos_freqs": rig.pos_freqs}
    for ci, channel in enumerate(rig.channels):
        base = f"{prefix}c{ci}"
        arrays[f"{base}.direction"] = channel.direction
        arrays[f"{base}.times"] = channel.times
        arrays[f"{base}.sigma_curve"] = channel.sigma_curve
        arrays[f"{base}.gated"] = channel.gated.astype(np.float32)
        arrays[f"{base}.control_set"] = channel.control_set.astype(np.float32)
        entry = {
            "name": channel.name,
            "attribute": channel.attribute,
            "start_proj": channel.start_proj,
            "end_proj": channel.end_proj,
            "net_widths": channel.net.layer_widths if channel.net else None,
        }
        if channel.net is not None:
            arrays.update(training.pack_mlp(channel.net, f"{base}.net"))
        info["channels"].append(entry)
    return arrays, info


def unpack_rig(arrays: dict, info: dict, prefix: str = "rig.") -> ControlRig:
    channels = []
    for ci, entry in enumerate(info["channels"]):
        base = f"{prefix}c{ci}"
        net = None
        if entry.get("net_widths"):
            net = training.unpack_mlp(arrays, f"{base}.net", entry["net_widths"])
        channels.append(ControlChannel(
            name=entry["name"],
            attribute=entry["attribute"],
            gated=arrays[f"{base}.gated"].astype(np.int64),
            control_set=arrays[f"{base}.control_set"].astype(np.int64),
            direction=arrays[f"{base}.direction"].astype(np.float64),
            start_proj=entry["start_proj"],
            end_proj=entry["end_proj"],
            times=arrays[f"{base}.times"].astype(np.float64),
            sigma_curve=arrays[f"{base}.sigma_curve"].astype(np.float64),
            net=net,
        ))
    return ControlRig(channels=channels, sigma_freqs=info.get("sigma_freqs", 4),
                      pos_freqs=info.get("pos_freqs", 10))


STAGES = ("dynamic", "masked", "controlled", "finetuned")


@dataclass
class SceneModel:
    """A loaded model checkpoint: cloud + deformation nets + optional rig."""

    cloud: GaussianCloud
    model: DeformationModel
    rig: Optional[ControlRig]
    config: dict

    @property
    def stage(self) -> str:
        return self.config.get("stage", "dynamic")

    @staticmethod
    def from_checkpoint(ckpt: sceneio.Checkpoint) -> "SceneModel":
        cloud = training.unpack_cloud(ckpt.arrays)
        model = training.unpack_model(ckpt.arrays, ckpt.config["deform"])
        rig = None
        if "rig" in ckpt.config:
            rig = unpack_rig(ckpt.arrays, ckpt.config["rig"])
        return SceneModel(cloud=cloud, model=model, rig=rig, config=dict(ckpt.config))

    def to_checkpoint(self, stage: Optional[str] = None) -> sceneio.Checkpoint:
        arrays = training.pack_cloud(self.cloud)
        arrays.update(training.pack_model(self.model))
        config = dict(self.config)
        for key in list(config):
            if key.startswith("adam_steps"):
                del config[key]
        if self.rig is not None:
            rig_arrays, rig_info = pack_rig(self.rig)
            arrays.update(rig_arrays)
            config["rig"] = rig_info
        if stage is not None:
            if stage not in STAGES:
                raise ConfigurationError(f"unknown stage {stage!r}")
            config["stage"] = stage
        return sceneio.Checkpoint(config=config, arrays=arrays)
