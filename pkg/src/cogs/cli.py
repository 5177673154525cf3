"""Command-line entry points for every pipeline stage.

Exit codes: 0 success, 1 usage error, 2 runtime error. Every numeric
training-config field is exposed as a flag on `train` (derived from the
dataclass), and --seed is accepted everywhere.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
import typing
from typing import List, Optional

import numpy as np

from . import control, raster, sceneio, toys, training
from .control import ControlConfig, SceneModel
from .errors import CogsError
from .gaussians import Camera
from .training import DynamicTrainer, TrainConfig, deform


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; the CLI contract wants 1
    def error(self, message):
        raise _UsageError(message)


_TRAIN_HINTS = typing.get_type_hints(TrainConfig)
_CONTROL_HINTS = typing.get_type_hints(ControlConfig)


def _add_train_config_flags(parser: argparse.ArgumentParser) -> None:
    for f in dataclasses.fields(TrainConfig):
        if f.name == "scene_box":
            parser.add_argument("--scene-box", type=str, default=None,
                                help="xmin,ymin,zmin,xmax,ymax,zmax")
            continue
        kind = _TRAIN_HINTS[f.name]
        flag = "--" + f.name.replace("_", "-")
        parser.add_argument(flag, type=kind if kind in (int, float) else float,
                            default=None)


def _train_config_from_args(args) -> TrainConfig:
    kwargs = {}
    for f in dataclasses.fields(TrainConfig):
        if f.name == "scene_box":
            if args.scene_box is not None:
                vals = [float(v) for v in args.scene_box.split(",")]
                if len(vals) != 6:
                    raise _UsageError("--scene-box needs 6 comma-separated numbers")
                kwargs["scene_box"] = tuple(vals)
            continue
        val = getattr(args, f.name)
        if val is not None:
            kind = _TRAIN_HINTS[f.name]
            kwargs[f.name] = kind(val) if kind in (int, float) else val
    if "total_iters" not in kwargs and getattr(args, "iters", None) is not None:
        kwargs["total_iters"] = int(args.iters)
    return TrainConfig(**kwargs)


def _add_control_config_flags(parser: argparse.ArgumentParser) -> None:
    for f in dataclasses.fields(ControlConfig):
        kind = _CONTROL_HINTS[f.name]
        flag = "--" + f.name.replace("_", "-")
        if kind is bool:
            parser.add_argument(flag, action="store_true", default=None)
        else:
            parser.add_argument(flag, type=kind if kind in (int, float) else float,
                                default=None)


def _control_config_from_args(args) -> ControlConfig:
    kwargs = {}
    for f in dataclasses.fields(ControlConfig):
        val = getattr(args, f.name, None)
        if val is not None:
            kind = _CONTROL_HINTS[f.name]
            kwargs[f.name] = kind(val) if kind in (int, float, bool) else val
    return ControlConfig(**kwargs)


def build_parser() -> _Parser:
    parser = _Parser(prog="cogs", description="controllable gaussian splatting engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a dynamic model to a dataset")
    p.add_argument("dataset")
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=int, default=None, help="alias for --total-iters")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--loss-log", default=None)
    p.add_argument("--progress-every", type=int, default=500)
    _add_train_config_flags(p)

    p = sub.add_parser("learn-mask", help="learn per-gaussian masks from 2D annotations")
    p.add_argument("model")
    p.add_argument("dataset")
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    _add_control_config_flags(p)

    p = sub.add_parser("extract-signal", help="select control sets and extract signals")
    p.add_argument("model")
    p.add_argument("dataset")
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_control_config_flags(p)

    p = sub.add_parser("train-control", help="distill the dynamic model into control nets")
    p.add_argument("model")
    p.add_argument("dataset")
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--progress-every", type=int, default=0)
    _add_control_config_flags(p)

    p = sub.add_parser("finetune", help="end-to-end fine-tune of cloud and control nets")
    p.add_argument("model")
    p.add_argument("dataset")
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    _add_control_config_flags(p)

    p = sub.add_parser("render", help="render a PNG at a time or control setting")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--time", type=float, default=None)
    p.add_argument("--controls", type=str, default=None, help="comma-separated values in [0,1]")
    p.add_argument("--dataset", default=None, help="borrow a camera from this dataset")
    p.add_argument("--split", default="train")
    p.add_argument("--camera-index", type=int, default=0)
    p.add_argument("--orbit", type=str, default=None, help="azimuth,elevation,radius")
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--fov-x", type=float, default=0.69)
    p.add_argument("--background", type=str, default="0,0,0")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("metrics", help="PSNR/SSIM table over a dataset split")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("serve", help="HTTP/WebSocket render service")
    p.add_argument("--model", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--ui-dir", default=None)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("make-toy", help="write a synthetic benchmark scene to disk")
    p.add_argument("out_dir")
    p.add_argument("--kind", choices=["static", "two-cluster", "two-part"],
                   default="two-part")
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)

    return parser


def _load_model(path: str) -> SceneModel:
    return SceneModel.from_checkpoint(sceneio.load_checkpoint(path))


def _cmd_train(args) -> int:
    config = _train_config_from_args(args)
    dataset = sceneio.load_dataset(args.dataset, args.split)
    trainer = DynamicTrainer(dataset, config, seed=args.seed)
    log = sceneio.LossLog(args.loss_log) if args.loss_log else None
    try:
        trainer.run(loss_log=log, progress_every=args.progress_every)
    finally:
        if log:
            log.close()
    sceneio.save_checkpoint(args.out, trainer.checkpoint())
    print(f"saved dynamic model ({trainer.cloud.count} gaussians) to {args.out}")
    return 0


def _cmd_learn_mask(args) -> int:
    model = _load_model(args.model)
    dataset = sceneio.load_dataset(args.dataset, args.split)
    supervision = control.load_mask_supervision(args.dataset, dataset)
    config = _control_config_from_args(args)
    control.learn_masks(model.cloud, model.model, dataset, supervision,
                        iters=args.iters, config=config, seed=args.seed)
    model.config["attribute_names"] = supervision.attribute_names
    sceneio.save_checkpoint(args.out, model.to_checkpoint(stage="masked"))
    print(f"saved masked model to {args.out} "
          f"(attributes: {', '.join(supervision.attribute_names)})")
    return 0


def _cmd_extract_signal(args) -> int:
    model = _load_model(args.model)
    dataset = sceneio.load_dataset(args.dataset, args.split)
    names = model.config.get("attribute_names")
    if not names:
        raise CogsError("model has no attribute names; run learn-mask first")
    config = _control_config_from_args(args)
    model.rig = control.build_rig(model.cloud, model.model, dataset, names, config)
    for ch in model.rig.channels:
        print(f"{ch.name}: |G|={ch.control_set.size} gated={ch.gated.size} "
              f"d=({ch.direction[0]:+.3f},{ch.direction[1]:+.3f},{ch.direction[2]:+.3f}) "
              f"span={ch.end_proj - ch.start_proj:.4f}")
    sceneio.save_checkpoint(args.out, model.to_checkpoint(stage="masked"))
    return 0


def _cmd_train_control(args) -> int:
    model = _load_model(args.model)
    dataset = sceneio.load_dataset(args.dataset, args.split)
    if model.rig is None:
        raise CogsError("model has no control rig; run extract-signal first")
    config = _control_config_from_args(args)
    control.train_control(model.cloud, model.model, model.rig, dataset,
                          iters=args.iters, config=config, seed=args.seed,
                          progress_every=args.progress_every)
    sceneio.save_checkpoint(args.out, model.to_checkpoint(stage="controlled"))
    print(f"saved controlled model to {args.out}")
    return 0


def _cmd_finetune(args) -> int:
    model = _load_model(args.model)
    dataset = sceneio.load_dataset(args.dataset, args.split)
    if model.rig is None or not model.rig.trained:
        raise CogsError("model has no trained control rig; run train-control first")
    config = _control_config_from_args(args)
    control.finetune_all(model.cloud, model.model, model.rig, dataset,
                         iters=args.iters, config=config, seed=args.seed)
    sceneio.save_checkpoint(args.out, model.to_checkpoint(stage="finetuned"))
    print(f"saved finetuned model to {args.out}")
    return 0


def _cmd_render(args) -> int:
    model = _load_model(args.model)
    if (args.time is None) == (args.controls is None):
        raise _UsageError("exactly one of --time or --controls is required")
    if args.dataset:
        dataset = sceneio.load_dataset(args.dataset, args.split)
        camera = dataset.frames[args.camera_index].camera
    else:
        orbit = [float(v) for v in args.orbit.split(",")] if args.orbit else [0.0, 0.2, 4.0]
        camera = Camera.orbit(orbit[0], orbit[1], orbit[2], (0, 0, 0),
                              args.width, args.height, args.fov_x)
    background = [float(v) for v in args.background.split(",")]
    if args.time is not None:
        cloud = deform(model.cloud, model.model, args.time)
    else:
        if model.rig is None or not model.rig.trained:
            raise CogsError("model has no trained control rig")
        sigma = [float(v) for v in args.controls.split(",")]
        cloud = control.apply_controls(model.cloud, model.rig, sigma)
    out = raster.render(cloud, camera, background=background)
    sceneio.encode_png(np.clip(out.image, 0.0, 1.0), args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_metrics(args) -> int:
    model = _load_model(args.model)
    dataset = sceneio.load_dataset(args.dataset, args.split)
    rows = []
    for frame in dataset.frames:
        cloud = deform(model.cloud, model.model, frame.time)
        rendered = raster.render(cloud, frame.camera).image
        rows.append((frame.frame_id, sceneio.psnr(rendered, frame.image()),
                     sceneio.ssim(rendered, frame.image())))
    print(f"{'frame':<12} {'PSNR(dB)':>9} {'SSIM':>7}")
    for fid, p, s in rows:
        print(f"{fid:<12} {p:9.2f} {s:7.4f}")
    mean_p = float(np.mean([r[1] for r in rows]))
    mean_s = float(np.mean([r[2] for r in rows]))
    print(f"{'mean':<12} {mean_p:9.2f} {mean_s:7.4f}")
    return 0


def _cmd_serve(args) -> int:
    from .service import serve

    serve(args.model, host=args.host, port=args.port, ui_dir=args.ui_dir)
    return 0


def _cmd_make_toy(args) -> int:
    makers = {"static": toys.static_scene, "two-cluster": toys.two_cluster_scene,
              "two-part": toys.two_part_scene}
    scene = makers[args.kind](seed=args.seed)
    times = np.linspace(0, 1, args.frames)
    toys.write_dataset(scene, args.out_dir, times, size=args.size)
    if args.kind == "two-part":
        ds = sceneio.load_dataset(args.out_dir, "train")
        mid_a, mid_b = len(ds.frames) // 3, 2 * len(ds.frames) // 3
        toys.write_part_masks(scene, ds, args.out_dir, {
            "lift": (1, mid_a), "slide": (2, mid_a),
        })
        toys.write_part_masks(scene, ds, args.out_dir, {
            "lift": (1, mid_b), "slide": (2, mid_b),
        })
    print(f"wrote {args.frames} frames to {args.out_dir}")
    return 0


COMMANDS = {
    "train": _cmd_train,
    "learn-mask": _cmd_learn_mask,
    "extract-signal": _cmd_extract_signal,
    "train-control": _cmd_train_control,
    "finetune": _cmd_finetune,
    "render": _cmd_render,
    "metrics": _cmd_metrics,
    "serve": _cmd_serve,
    "make-toy": _cmd_make_toy,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except CogsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
