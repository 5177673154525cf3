"""Fit randomly initialized Gaussians to 8 views of a synthetic static scene
and watch PSNR climb.

Run: python demos/02_fit_static_scene.py [iters] [out_dir]
"""
import os
import sys
import tempfile
import time

import numpy as np

from cogs import TrainConfig, psnr, render, toys
from cogs.sceneio import encode_png
from cogs.training import DynamicTrainer

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
out_dir = sys.argv[2] if len(sys.argv) > 2 else "demo_out"
os.makedirs(out_dir, exist_ok=True)

scene = toys.static_scene(seed=5, n=20)
root = tempfile.mkdtemp(prefix="cogs_static_")
dataset = toys.write_dataset(scene, root, np.linspace(0, 1, 8), size=64)
print(f"ground truth: 20 gaussians, 8 views at 64x64 ({root})")

config = TrainConfig(
    n_init=50, warmup_iters=iters, reg_start_iters=iters + 1, total_iters=iters + 2,
    densify_from=500, densify_interval=300, max_gaussians=400,
    scene_box=tuple(np.concatenate([scene.box.min_corner, scene.box.max_corner])),
)
trainer = DynamicTrainer(dataset, config, seed=0)

start = time.time()
while trainer.iteration < iters:
    trainer.step()
    if trainer.iteration % 500 == 0:
        scores = [psnr(render(trainer.cloud, f.camera).image, f.image())
                  for f in dataset.frames]
        print(f"iter {trainer.iteration:5d}  n={trainer.cloud.count:3d}  "
              f"PSNR {np.mean(scores):6.2f} dB  ({time.time() - start:.0f}s)")

frame = dataset.frames[0]
fitted = render(trainer.cloud, frame.camera).image
strip = np.concatenate([frame.image(), fitted], axis=1)
encode_png(np.clip(strip, 0, 1), os.path.join(out_dir, "static_fit.png"))
print(f"wrote ground truth | fit comparison -> {out_dir}/static_fit.png")
