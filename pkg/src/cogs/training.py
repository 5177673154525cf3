"""Dynamic-scene optimization: warmup on the static cloud, then joint
training of Gaussian attributes and per-attribute deformation networks with
staged trajectory regularizers and simplified density control.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import losses as reg
from . import nets
from . import raster
from . import sceneio
from .errors import ConfigurationError
from .gaussians import GaussianCloud, SceneBox, logit, normalize_rows, normalize_rows_backward, sigmoid
from .nets import AdamState, Mlp, adam_step, lr_exponential, mlp_backward, mlp_forward
from .raster import RasterSettings
from .sceneio import Dataset

DEFORM_HEADS = ("position", "color", "rotation", "scale")
DEFORM_WIDTHS = {"position": 3, "color": 3, "rotation": 4, "scale": 3}


@dataclass
class TrainConfig:
    """Schedule constants, learning rates and loss weights.

    Iteration counts follow the full-scale schedule; `scale_factor` shrinks
    warmup/reg_start/total together for desk-scale runs.
    """

    n_init: int = 10000
    sh_degree: int = 1
    scale_factor: float = 1.0
    warmup_iters: int = 3000
    reg_start_iters: int = 15000
    total_iters: int = 50000
    # Gaussian attribute learning rates (position is scaled by scene extent
    # and decays exponentially; the others stay fixed)
    lr_position: float = 1.6e-4
    lr_position_final: float = 1.6e-6
    lr_sh: float = 2.5e-3
    lr_opacity: float = 0.05
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    deform_lr_start: float = 1e-3
    deform_lr_end: float = 1e-6
    # loss weights
    lambda_dssim: float = 0.2
    lambda_norm: float = 0.01
    lambda_diff: float = 0.1
    lambda_rigid: float = 0.1
    lambda_rot: float = 0.1
    # neighbor structure
    knn_k: int = 20
    lambda_w: float = 2000.0
    # density control
    densify_from: int = 500
    densify_interval: int = 300
    densify_grad_threshold: float = 2e-6
    densify_percent_dense: float = 0.01
    split_scale_divisor: float = 1.6
    prune_opacity: float = 0.005
    max_gaussians: int = 100000
    # deformation network
    deform_hidden: int = 128
    deform_layers: int = 4
    pos_freqs: int = 10
    time_freqs: int = 6
    # world box for random initialization (xmin, ymin, zmin, xmax, ymax, zmax)
    scene_box: Tuple[float, ...] = (-1.5, -1.5, -1.5, 1.5, 1.5, 1.5)

    @property
    def warmup(self) -> int:
        return int(round(self.warmup_iters * self.scale_factor))

    @property
    def reg_start(self) -> int:
        return int(round(self.reg_start_iters * self.scale_factor))

    @property
    def total(self) -> int:
        return int(round(self.total_iters * self.scale_factor))

    def box(self) -> SceneBox:
        b = self.scene_box
        return SceneBox(np.array(b[:3]), np.array(b[3:]))

    def validate(self) -> None:
        if not (self.warmup < self.reg_start < self.total):
            raise ConfigurationError("schedule must satisfy warmup < reg_start < total")
        for name in ("lr_position", "lr_sh", "lr_opacity", "lr_scale", "lr_rotation",
                     "deform_lr_start", "deform_lr_end"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")


def init_cloud(scene_box: SceneBox, n: int, seed, sh_degree: int = 1) -> GaussianCloud:
    """Random cloud in the box: isotropic scales sized to local point spacing,
    opacity 0.1, grey color, identity rotations. Deterministic per seed."""
    if n < 1:
        raise ConfigurationError("need at least one gaussian")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    positions = scene_box.sample(rng, n)
    if n >= 4:
        table = reg.build_neighbors(positions, 3, 0.0)
        nn_d = np.linalg.norm(positions[table.indices] - positions[:, None, :], axis=2)
        radius = nn_d.mean(axis=1)
    else:
        radius = np.full(n, 0.05 * scene_box.extent)
    k = (sh_degree + 1) ** 2
    rotations = np.zeros((n, 4), dtype=np.float32)
    rotations[:, 0] = 1.0
    return GaussianCloud(
        positions=positions.astype(np.float32),
        rotations=rotations,
        log_scales=np.log(radius)[:, None].repeat(3, axis=1).astype(np.float32),
        opacity_logits=np.full(n, logit(0.1), dtype=np.float32),
        sh_coeffs=np.zeros((n, k, 3), dtype=np.float32),
    )


@dataclass
class DeformationModel:
    """Four offset networks (position/color/rotation/scale) sharing one
    frequency-encoded (position, time) input."""

    nets: Dict[str, Mlp]
    pos_freqs: int
    time_freqs: int

    @staticmethod
    def create(rng, hidden: int = 128, layers: int = 4, pos_freqs: int = 10,
               time_freqs: int = 6) -> "DeformationModel":
        in_w = nets.encoded_width(3, pos_freqs) + nets.encoded_width(1, time_freqs)
        model_nets = {}
        for head in DEFORM_HEADS:
            widths = [in_w] + [hidden] * layers + [DEFORM_WIDTHS[head]]
            model_nets[head] = nets.mlp_init(widths, rng, zero_final=True)
        return DeformationModel(nets=model_nets, pos_freqs=pos_freqs, time_freqs=time_freqs)

    def encode(self, positions, t: float) -> np.ndarray:
        pe = nets.positional_encode(np.asarray(positions, dtype=np.float64), self.pos_freqs)
        te = nets.positional_encode(np.array([[t]]), self.time_freqs)
        return np.concatenate([pe, np.repeat(te, pe.shape[0], axis=0)], axis=1)

    def parameters(self) -> List[np.ndarray]:
        out: List[np.ndarray] = []
        for head in DEFORM_HEADS:
            out.extend(self.nets[head].parameters())
        return out

    def copy(self) -> "DeformationModel":
        return DeformationModel(
            nets={h: self.nets[h].copy() for h in DEFORM_HEADS},
            pos_freqs=self.pos_freqs,
            time_freqs=self.time_freqs,
        )

    def is_identity(self) -> bool:
        return all(self.nets[h].is_zero_output() for h in DEFORM_HEADS)


def deform(cloud: GaussianCloud, model: DeformationModel, t: float,
           want_cache: bool = False):
    """Apply the deformation networks at normalized time t.

    Returns a new cloud view (opacity and masks shared with the input); the
    network input is the detached base position, so gradients reach positions
    only through the additive offset path.
    """
    x = model.encode(cloud.positions, t)
    outs, caches = {}, {}
    for head in DEFORM_HEADS:
        outs[head], caches[head] = mlp_forward(model.nets[head], x)
    raw_q = np.asarray(cloud.rotations, dtype=np.float64) + outs["rotation"]
    sh = np.asarray(cloud.sh_coeffs, dtype=np.float64).copy()
    sh[:, 0, :] += outs["color"]
    deformed = GaussianCloud(
        positions=np.asarray(cloud.positions, dtype=np.float64) + outs["position"],
        rotations=normalize_rows(raw_q),
        log_scales=np.asarray(cloud.log_scales, dtype=np.float64) + outs["scale"],
        opacity_logits=cloud.opacity_logits,
        sh_coeffs=sh,
        mask_logits=cloud.mask_logits,
    )
    if not want_cache:
        return deformed
    cache = {"caches": caches, "raw_q": raw_q, "offsets": outs}
    return deformed, cache


def deform_backward(model: DeformationModel, cache,
                    g_positions, g_rotations, g_log_scales, g_sh):
    """Push gradients on the deformed arrays back to net params and base cloud.

    g_rotations is the gradient wrt the deformed (normalized) quaternions.
    Returns (net_param_grads, base_grads dict).
    """
    g_raw_q = normalize_rows_backward(cache["raw_q"], np.asarray(g_rotations, dtype=np.float64))
    head_grads = {
        "position": np.asarray(g_positions, dtype=np.float64),
        "color": np.asarray(g_sh, dtype=np.float64)[:, 0, :],
        "rotation": g_raw_q,
        "scale": np.asarray(g_log_scales, dtype=np.float64),
    }
    net_grads: List[np.ndarray] = []
    for head in DEFORM_HEADS:
        grads, _ = mlp_backward(model.nets[head], cache["caches"][head], head_grads[head])
        net_grads.extend(grads)
    base = {
        "positions": head_grads["position"],
        "rotations": g_raw_q,
        "log_scales": head_grads["scale"],
        "sh_coeffs": np.asarray(g_sh, dtype=np.float64),
    }
    return net_grads, base


def photometric_loss(rendered, target, lambda_dssim: float = 0.2):
    """(1-l)*L1 + l*(1-SSIM)/2 with gradient wrt the rendered image."""
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise ConfigurationError(
            f"image shapes differ: {rendered.shape} vs {target.shape}"
        )
    diff = rendered - target
    l1 = float(np.abs(diff).mean())
    grad = np.sign(diff) / diff.size
    if lambda_dssim <= 0.0:
        return l1, grad
    ssim_val, ssim_grad = sceneio.ssim_with_grad(rendered, target)
    value = (1.0 - lambda_dssim) * l1 + lambda_dssim * 0.5 * (1.0 - ssim_val)
    grad = (1.0 - lambda_dssim) * grad - lambda_dssim * 0.5 * ssim_grad
    return value, grad


def densify_and_prune(cloud: GaussianCloud, accumulated_position_grads,
                      config: TrainConfig, rng: np.random.Generator,
                      adam: Optional[AdamState] = None):
    """Clone/split high-gradient Gaussians and drop near-transparent ones.

    Splits produce two children sampled from the parent (scales shrunk by
    the configured divisor) and remove the parent: net +1 per split. The
    optional Adam state is re-indexed in place (zero rows for newcomers).
    """
    n = cloud.count
    avg = np.asarray(accumulated_position_grads, dtype=np.float64).reshape(n)
    opac = sigmoid(cloud.opacity_logits)
    prune = opac < config.prune_opacity
    room = max(0, config.max_gaussians - n)
    hot = (avg > config.densify_grad_threshold) & ~prune
    extent = config.box().extent
    max_scale = np.exp(np.asarray(cloud.log_scales, dtype=np.float64)).max(axis=1)
    split = hot & (max_scale > config.densify_percent_dense * extent)
    clone = hot & ~split
    # respect the population cap, preferring the strongest gradients
    growth = int(clone.sum() + split.sum())
    if growth > room:
        order = np.argsort(-avg)
        allowed = np.zeros(n, dtype=bool)
        budget = room
        for i in order:
            if budget <= 0:
                break
            if clone[i] or split[i]:
                allowed[i] = True
                budget -= 1
        clone &= allowed
        split &= allowed

    keep = ~prune & ~split
    parts = {name: [getattr(cloud, name)[keep]] for name in
             ("positions", "rotations", "log_scales", "opacity_logits", "sh_coeffs")}
    has_masks = cloud.mask_logits is not None
    if has_masks:
        parts["mask_logits"] = [cloud.mask_logits[keep]]

    def append_rows(idx, positions):
        parts["positions"].append(positions.astype(cloud.positions.dtype))
        for name in ("rotations", "opacity_logits", "sh_coeffs"):
            parts[name].append(getattr(cloud, name)[idx])
        parts["log_scales"].append(cloud.log_scales[idx])
        if has_masks:
            parts["mask_logits"].append(cloud.mask_logits[idx])

    clone_idx = np.flatnonzero(clone)
    if clone_idx.size:
        append_rows(clone_idx, np.asarray(cloud.positions, dtype=np.float64)[clone_idx])

    split_idx = np.flatnonzero(split)
    n_children = 0
    if split_idx.size:
        parents = np.repeat(split_idx, 2)
        R = np.asarray(
            np.asarray(cloud.rotations, dtype=np.float64)[parents], dtype=np.float64
        )
        from .gaussians import quat_to_rotmat

        rot = quat_to_rotmat(normalize_rows(R))
        scales = np.exp(np.asarray(cloud.log_scales, dtype=np.float64)[parents])
        noise = rng.normal(size=(parents.size, 3))
        offsets = np.einsum("nij,nj->ni", rot, scales * noise)
        child_pos = np.asarray(cloud.positions, dtype=np.float64)[parents] + offsets
        append_rows(parents, child_pos)
        shrink = np.log(config.split_scale_divisor)
        parts["log_scales"][-1] = (parts["log_scales"][-1] - shrink).astype(
            cloud.log_scales.dtype
        )
        n_children = parents.size

    new_cloud = GaussianCloud(**{k: np.concatenate(v) for k, v in parts.items()})
    if adam is not None:
        adam.select(keep)
        adam.append_zeros(int(clone_idx.size) + n_children)
    stats = {"pruned": int(prune.sum()), "cloned": int(clone_idx.size),
             "split": int(split_idx.size)}
    return new_cloud, stats


CLOUD_PARAMS = ("positions", "rotations", "log_scales", "opacity_logits", "sh_coeffs")


class DynamicTrainer:
    """Single-writer optimization loop over one dataset.

    Phases: [0, warmup) static photometric fit; [warmup, reg_start)
    deformation unfrozen plus the offset-norm loss; [reg_start, total) all
    trajectory regularizers, with density control disabled to keep the
    neighbor table stable.
    """

    def __init__(self, dataset: Dataset, config: TrainConfig, seed: int = 0,
                 cloud: Optional[GaussianCloud] = None,
                 model: Optional[DeformationModel] = None,
                 settings: RasterSettings = raster.DEFAULT_SETTINGS):
        if len(dataset) == 0:
            raise ConfigurationError("dataset has no frames")
        config.validate()
        self.dataset = dataset
        self.config = config
        self.seed = seed
        self.settings = settings
        self.rng = np.random.default_rng(seed)
        self.cloud = cloud if cloud is not None else init_cloud(
            config.box(), config.n_init, self.rng, config.sh_degree
        )
        self.model = model if model is not None else DeformationModel.create(
            self.rng, config.deform_hidden, config.deform_layers,
            config.pos_freqs, config.time_freqs,
        )
        self.iteration = 0
        self.adam_cloud = AdamState.for_params(self._cloud_params())
        self.adam_deform = AdamState.for_params(self.model.parameters())
        self.perm = self.rng.permutation(len(dataset))
        self.grad2d_sum = np.zeros(self.cloud.count, dtype=np.float32)
        self.grad2d_count = np.zeros(self.cloud.count, dtype=np.float32)
        self.neighbor_table: Optional[reg.NeighborTable] = None
        self.times = np.unique(dataset.times)
        self.log: List[dict] = []

    # - helpers -

    def _cloud_params(self) -> List[np.ndarray]:
        return [getattr(self.cloud, name) for name in CLOUD_PARAMS]

    def _cloud_lrs(self) -> List[float]:
        c = self.config
        extent = c.box().extent
        pos_lr = extent * lr_exponential(
            self.iteration, c.total, c.lr_position, c.lr_position_final
        )
        return [pos_lr, c.lr_rotation, c.lr_scale, c.lr_opacity, c.lr_sh]

    def _prev_time(self, t: float) -> Optional[float]:
        i = np.searchsorted(self.times, t)
        return float(self.times[i - 1]) if i >= 1 else None

    def _ensure_neighbors(self) -> reg.NeighborTable:
        if self.neighbor_table is None:
            t0 = float(self.times[0])
            base = deform(self.cloud, self.model, t0)
            self.neighbor_table = reg.build_neighbors(
                base.positions, self.config.knn_k, self.config.lambda_w
            )
        return self.neighbor_table

    # - one optimization step -

    def step(self) -> dict:
        c = self.config
        it = self.iteration
        if it % len(self.dataset) == 0 and it > 0:
            self.perm = self.rng.permutation(len(self.dataset))
        frame = self.dataset.frames[self.perm[it % len(self.dataset)]]
        target = frame.image()
        dynamic = it >= c.warmup

        terms = {"iter": it, "photometric": 0.0, "norm": 0.0, "diff": 0.0,
                 "rigid": 0.0, "rot": 0.0, "mask": 0.0}

        if not dynamic:
            rendered = raster.render(self.cloud, frame.camera, settings=self.settings)
            loss, grad_img = photometric_loss(rendered.image, target, c.lambda_dssim)
            terms["photometric"] = loss
            g = raster.render_backward(
                self.cloud, frame.camera, grad_img, settings=self.settings
            )
            cloud_grads = {name: getattr(g, name) for name in CLOUD_PARAMS}
            net_grads = None
        else:
            deformed, cache = deform(self.cloud, self.model, frame.time, want_cache=True)
            rendered = raster.render(deformed, frame.camera, settings=self.settings)
            loss, grad_img = photometric_loss(rendered.image, target, c.lambda_dssim)
            terms["photometric"] = loss
            g = raster.render_backward(
                deformed, frame.camera, grad_img, settings=self.settings
            )
            d_pos = g.positions
            d_rot = g.rotations
            d_scales = g.log_scales
            d_sh = g.sh_coeffs

            offsets = cache["offsets"]["position"]
            norm_val, norm_grad = reg.loss_norm(offsets)
            terms["norm"] = c.lambda_norm * norm_val
            d_pos = d_pos + c.lambda_norm * norm_grad  # offset path == position path

            pair_cache = None
            t_prev = self._prev_time(frame.time) if it >= c.reg_start else None
            if t_prev is not None:
                table = self._ensure_neighbors()
                prev, pair_cache = deform(self.cloud, self.model, t_prev, want_cache=True)
                diff_val, gdt, gdp = reg.loss_diff(
                    deformed.positions, prev.positions, table
                )
                rig_val, grt, grp, grot_t, grot_p = reg.loss_rigid(
                    deformed.positions, prev.positions,
                    deformed.rotations, prev.rotations, table,
                )
                rot_val, gqt, gqp = reg.loss_rot(
                    deformed.rotations, prev.rotations, table
                )
                terms["diff"] = c.lambda_diff * diff_val
                terms["rigid"] = c.lambda_rigid * rig_val
                terms["rot"] = c.lambda_rot * rot_val
                d_pos = d_pos + c.lambda_diff * gdt + c.lambda_rigid * grt
                d_rot = d_rot + c.lambda_rigid * grot_t + c.lambda_rot * gqt
                prev_pos_grad = c.lambda_diff * gdp + c.lambda_rigid * grp
                prev_rot_grad = c.lambda_rigid * grot_p + c.lambda_rot * gqp

            net_grads, base = deform_backward(self.model, cache, d_pos, d_rot, d_scales, d_sh)
            cloud_grads = {
                "positions": base["positions"],
                "rotations": base["rotations"],
                "log_scales": base["log_scales"],
                "opacity_logits": g.opacity_logits,
                "sh_coeffs": base["sh_coeffs"],
            }
            if pair_cache is not None:
                prev_net, prev_base = deform_backward(
                    self.model, pair_cache, prev_pos_grad, prev_rot_grad,
                    np.zeros_like(d_scales), np.zeros_like(d_sh),
                )
                net_grads = [a + b for a, b in zip(net_grads, prev_net)]
                cloud_grads["positions"] = cloud_grads["positions"] + prev_base["positions"]
                cloud_grads["rotations"] = cloud_grads["rotations"] + prev_base["rotations"]

        # density-control statistics
        self.grad2d_sum += np.linalg.norm(g.mean2d, axis=1).astype(np.float32)
        self.grad2d_count += g.visible.astype(np.float32)

        lrs = self._cloud_lrs()
        adam_step(self._cloud_params(), [cloud_grads[n] for n in CLOUD_PARAMS],
                  self.adam_cloud, lrs)
        rot = self.cloud.rotations
        rot /= np.linalg.norm(rot.astype(np.float64), axis=1, keepdims=True).astype(rot.dtype)
        deform_lr = lr_exponential(it, c.total, c.deform_lr_start, c.deform_lr_end)
        if net_grads is not None:
            adam_step(self.model.parameters(), net_grads, self.adam_deform, deform_lr)

        self.iteration += 1
        if self._densify_due():
            self._densify()

        terms["total"] = sum(terms[k] for k in
                             ("photometric", "norm", "diff", "rigid", "rot", "mask"))
        terms["lr"] = deform_lr if dynamic else lrs[0]
        self.log.append(terms)
        return terms

    def _densify_due(self) -> bool:
        c = self.config
        it = self.iteration
        return (
            c.densify_interval > 0
            and c.densify_from <= it < c.reg_start
            and it % c.densify_interval == 0
            and self.cloud.count < c.max_gaussians
        )

    def _densify(self) -> None:
        avg = self.grad2d_sum / np.maximum(self.grad2d_count, 1.0)
        self.cloud, stats = densify_and_prune(
            self.cloud, avg, self.config, self.rng, self.adam_cloud
        )
        n = self.cloud.count
        self.grad2d_sum = np.zeros(n, dtype=np.float32)
        self.grad2d_count = np.zeros(n, dtype=np.float32)
        self.neighbor_table = None

    def run(self, iters: Optional[int] = None, loss_log: Optional[sceneio.LossLog] = None,
            progress_every: int = 0) -> None:
        end = self.config.total if iters is None else self.iteration + iters
        while self.iteration < end:
            terms = self.step()
            if loss_log is not None:
                loss_log.write(
                    terms["iter"], photometric=terms["photometric"], norm=terms["norm"],
                    diff=terms["diff"], rigid=terms["rigid"], rot=terms["rot"],
                    mask=terms["mask"], lr=terms["lr"],
                )
            if progress_every and terms["iter"] % progress_every == 0:
                print(
                    f"iter {terms['iter']:6d}  n={self.cloud.count:5d}  "
                    f"photometric {terms['photometric']:.5f}  total {terms['total']:.5f}"
                )

    # - persistence -

    def checkpoint(self) -> sceneio.Checkpoint:
        arrays = pack_cloud(self.cloud)
        arrays.update(pack_model(self.model))
        arrays.update(pack_adam(self.adam_cloud, "adam.cloud"))
        arrays.update(pack_adam(self.adam_deform, "adam.deform"))
        arrays["train.perm"] = self.perm.astype(np.float32)
        arrays["train.grad2d_sum"] = self.grad2d_sum
        arrays["train.grad2d_count"] = self.grad2d_count
        cfg = asdict(self.config)
        cfg["scene_box"] = list(self.config.scene_box)
        config = {
            "stage": "dynamic",
            "train_config": cfg,
            "seed": self.seed,
            "adam_steps": {"cloud": self.adam_cloud.step, "deform": self.adam_deform.step},
            "deform": {"pos_freqs": self.model.pos_freqs,
                       "time_freqs": self.model.time_freqs,
                       "widths": {h: self.model.nets[h].layer_widths for h in DEFORM_HEADS}},
            "sh_degree": self.config.sh_degree,
        }
        return sceneio.Checkpoint(
            config=config, arrays=arrays, iteration=self.iteration,
            rng_state=self.rng.bit_generator.state,
        )

    @staticmethod
    def from_checkpoint(ckpt: sceneio.Checkpoint, dataset: Dataset) -> "DynamicTrainer":
        cfg_dict = dict(ckpt.config["train_config"])
        cfg_dict["scene_box"] = tuple(cfg_dict["scene_box"])
        config = TrainConfig(**cfg_dict)
        cloud = unpack_cloud(ckpt.arrays)
        model = unpack_model(ckpt.arrays, ckpt.config["deform"])
        trainer = DynamicTrainer(dataset, config, seed=ckpt.config.get("seed", 0),
                                 cloud=cloud, model=model)
        trainer.iteration = ckpt.iteration
        trainer.adam_cloud = unpack_adam(ckpt.arrays, "adam.cloud",
                                         trainer._cloud_params())
        trainer.adam_cloud.step = ckpt.config["adam_steps"]["cloud"]
        trainer.adam_deform = unpack_adam(ckpt.arrays, "adam.deform",
                                          trainer.model.parameters())
        trainer.adam_deform.step = ckpt.config["adam_steps"]["deform"]
        trainer.perm = ckpt.arrays["train.perm"].astype(np.int64)
        trainer.grad2d_sum = ckpt.arrays["train.grad2d_sum"].copy()
        trainer.grad2d_count = ckpt.arrays["train.grad2d_count"].copy()
        if ckpt.rng_state is not None:
            trainer.rng.bit_generator.state = ckpt.rng_state
        return trainer


def train_dynamic(dataset: Dataset, config: TrainConfig, seed: int = 0,
                  loss_log: Optional[sceneio.LossLog] = None,
                  progress_every: int = 0):
    """Run the full schedule; returns (cloud, model, per-iteration log)."""
    trainer = DynamicTrainer(dataset, config, seed)
    trainer.run(loss_log=loss_log, progress_every=progress_every)
    return trainer.cloud, trainer.model, trainer.log


# -- checkpoint array packing ----------------------------------------------------


def pack_cloud(cloud: GaussianCloud, prefix: str = "cloud.") -> dict:
    out = {prefix + name: getattr(cloud, name) for name in CLOUD_PARAMS}
    if cloud.mask_logits is not None:
        out[prefix + "mask_logits"] = cloud.mask_logits
    return out


def unpack_cloud(arrays: dict, prefix: str = "cloud.") -> GaussianCloud:
    return GaussianCloud(
        positions=arrays[prefix + "positions"].copy(),
        rotations=arrays[prefix + "rotations"].copy(),
        log_scales=arrays[prefix + "log_scales"].copy(),
        opacity_logits=arrays[prefix + "opacity_logits"].copy(),
        sh_coeffs=arrays[prefix + "sh_coeffs"].copy(),
        mask_logits=arrays[prefix + "mask_logits"].copy()
        if prefix + "mask_logits" in arrays else None,
    )


def pack_mlp(net: Mlp, prefix: str) -> dict:
    out = {}
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        out[f"{prefix}.w{i}"] = w
        out[f"{prefix}.b{i}"] = b
    return out


def unpack_mlp(arrays: dict, prefix: str, widths: List[int]) -> Mlp:
    weights, biases = [], []
    for i in range(len(widths) - 1):
        weights.append(arrays[f"{prefix}.w{i}"].copy())
        biases.append(arrays[f"{prefix}.b{i}"].copy())
    return Mlp(list(widths), weights, biases)


def pack_model(model: DeformationModel, prefix: str = "deform.") -> dict:
    out = {}
    for head in DEFORM_HEADS:
        out.update(pack_mlp(model.nets[head], prefix + head))
    return out


def unpack_model(arrays: dict, info: dict, prefix: str = "deform.") -> DeformationModel:
    model_nets = {
        head: unpack_mlp(arrays, prefix + head, info["widths"][head])
        for head in DEFORM_HEADS
    }
    return DeformationModel(nets=model_nets, pos_freqs=info["pos_freqs"],
                            time_freqs=info["time_freqs"])


def pack_adam(state: AdamState, prefix: str) -> dict:
    out = {}
    for i, (m, v) in enumerate(zip(state.m, state.v)):
        out[f"{prefix}.m{i}"] = m
        out[f"{prefix}.v{i}"] = v
    return out


def unpack_adam(arrays: dict, prefix: str, params) -> AdamState:
    state = AdamState.for_params(params)
    state.m = [arrays[f"{prefix}.m{i}"].copy() for i in range(len(state.m))]
    state.v = [arrays[f"{prefix}.v{i}"].copy() for i in range(len(state.v))]
    return state
