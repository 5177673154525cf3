"""The whole pipeline end to end: dynamic fit, mask learning, signal
extraction, control-network distillation, fine-tune, checkpoint — then
frames rendered at control settings the capture never contained.

Run: python demos/05_control_studio.py [dyn_iters] [out_dir]
Afterwards:  cogs serve --model <out_dir>/controllable.cogs --ui-dir frontend/dist
"""
import os
import sys
import tempfile
import time

import numpy as np

from cogs import ControlConfig, TrainConfig, render, toys
from cogs.control import (
    SceneModel,
    build_rig,
    finetune_all,
    learn_masks,
    load_mask_supervision,
    render_with_controls,
    train_control,
)
from cogs.sceneio import encode_png, save_checkpoint
from cogs.training import DEFORM_HEADS, DynamicTrainer

dyn_iters = int(sys.argv[1]) if len(sys.argv) > 1 else 5000
out_dir = sys.argv[2] if len(sys.argv) > 2 else "demo_out"
os.makedirs(out_dir, exist_ok=True)

scene = toys.two_part_scene(seed=2)
root = tempfile.mkdtemp(prefix="cogs_studio_")
dataset = toys.write_dataset(scene, root, np.linspace(0, 1, 20), size=64)
for fidx in (3, 10, 16):
    toys.write_part_masks(scene, dataset, root, {"lift": (1, fidx), "slide": (2, fidx)})

config = TrainConfig(
    n_init=400, warmup_iters=dyn_iters // 16, reg_start_iters=dyn_iters * 5 // 16,
    total_iters=dyn_iters, densify_interval=300, max_gaussians=900,
    knn_k=8, lambda_w=20.0, lambda_diff=0.2, lambda_rigid=0.05,
    deform_hidden=64, deform_layers=2,
    scene_box=tuple(np.concatenate([scene.box.min_corner, scene.box.max_corner])),
)
ctl = ControlConfig(mask_iters=2500, control_iters=3000, finetune_iters=1000,
                    hidden=64, layers=2)

stages = []
t0 = time.time()
trainer = DynamicTrainer(dataset, config, seed=0)
trainer.run(progress_every=dyn_iters // 4)
cloud, model = trainer.cloud, trainer.model
stages.append(("dynamic fit", time.time() - t0))

t0 = time.time()
supervision = load_mask_supervision(root, dataset)
learn_masks(cloud, model, dataset, supervision, config=ctl, seed=0)
stages.append(("mask learning", time.time() - t0))

t0 = time.time()
rig = build_rig(cloud, model, dataset, supervision.attribute_names, ctl)
train_control(cloud, model, rig, dataset, config=ctl, seed=0)
stages.append(("control distillation", time.time() - t0))

t0 = time.time()
finetune_all(cloud, model, rig, dataset, config=ctl, seed=0)
stages.append(("fine-tune", time.time() - t0))

for name, seconds in stages:
    print(f"{name:22s} {seconds:6.0f}s")

scene_model = SceneModel(
    cloud=cloud, model=model, rig=rig,
    config={
        "deform": {"pos_freqs": model.pos_freqs, "time_freqs": model.time_freqs,
                   "widths": {h: model.nets[h].layer_widths for h in DEFORM_HEADS}},
        "attribute_names": supervision.attribute_names,
    },
)
ckpt_path = os.path.join(out_dir, "controllable.cogs")
save_checkpoint(ckpt_path, scene_model.to_checkpoint(stage="finetuned"))
print(f"checkpoint -> {ckpt_path}")

# novel configurations: drive each part independently
camera = dataset.frames[10].camera
for a, b in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]:
    img = render_with_controls(cloud, rig, [a, b], camera).image
    encode_png(np.clip(img, 0, 1), os.path.join(out_dir, f"control_{a:.0f}{b:.0f}.png"))
print(f"novel-configuration renders -> {out_dir}/control_??.png")
print()
print("serve it live:")
print(f"  cogs serve --model {ckpt_path} --port 8000 --ui-dir frontend/dist")
print("  then open http://127.0.0.1:8000/studio/")
