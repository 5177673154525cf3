"""Render a handful of Gaussians by hand and sanity-check the analytic
gradients against finite differences.

Run: python demos/01_rasterizer_basics.py [out_dir]
"""
import os
import sys

import numpy as np

from cogs import Camera, GaussianCloud, RasterSettings, render, render_backward
from cogs.sceneio import encode_png

out_dir = sys.argv[1] if len(sys.argv) > 1 else "demo_out"
os.makedirs(out_dir, exist_ok=True)

# three overlapping blobs at different depths, colors via degree-0 SH
SH0 = 0.28209479177387814
colors = np.array([[0.95, 0.25, 0.2], [0.2, 0.8, 0.3], [0.25, 0.35, 0.95]])
cloud = GaussianCloud(
    positions=np.array([[-0.35, 0.0, -2.0], [0.0, 0.25, -2.6], [0.4, -0.1, -3.2]]),
    rotations=np.tile([1.0, 0.0, 0.0, 0.0], (3, 1)),
    log_scales=np.log(np.array([[0.25, 0.12, 0.2], [0.2, 0.2, 0.2], [0.3, 0.15, 0.1]])),
    opacity_logits=np.array([1.2, 0.6, 2.0]),
    sh_coeffs=((colors - 0.5) / SH0)[:, None, :],
)
camera = Camera(width=256, height=256, fx=300.0, fy=300.0, cx=128.0, cy=128.0,
                cam_to_world=np.eye(4))

out = render(cloud, camera, background=(0.05, 0.05, 0.08))
encode_png(out.image, os.path.join(out_dir, "three_blobs.png"))
print(f"rendered three splats -> {out_dir}/three_blobs.png")
print(f"transmittance range: {out.final_transmittance.min():.4f} .. "
      f"{out.final_transmittance.max():.4f}")
print(f"max splats per pixel: {out.per_pixel_contrib_count.max()}")

# gradient of a scalar loss (sum of the green channel) wrt the first blob's
# x position, against central differences on the same loss
settings = RasterSettings(cutoff_sigma=None)
grad_img = np.zeros((256, 256, 3))
grad_img[:, :, 1] = 1.0
grads = render_backward(cloud, camera, grad_img, background=(0.05, 0.05, 0.08),
                        settings=settings)
analytic = grads.positions[0, 0]

step = 1e-5
for sign in (+1, -1):
    cloud.positions[0, 0] += sign * step
    val = float(np.sum(render(cloud, camera, background=(0.05, 0.05, 0.08),
                              settings=settings).image[:, :, 1]))
    cloud.positions[0, 0] -= sign * step
    if sign > 0:
        plus = val
    else:
        minus = val
numeric = (plus - minus) / (2 * step)
print(f"d(green)/dx of blob 0: analytic {analytic:+.6f}, finite diff {numeric:+.6f}, "
      f"relative error {abs(analytic - numeric) / abs(numeric):.2e}")
