"""
Stick-figure rendering
======================

Joints are fitted into a square canvas (bounding box centered, longer side
filling the canvas minus a margin) and drawn as anti-aliased capsules.
"""

from pathlib import Path

import numpy as np

from pose_embed import CanvasSpec, generate_synthetic
from pose_embed.render import fit_to_canvas, render_fitted, write_pgm

canvas = CanvasSpec(side=32, line_width=1.5)
pose = generate_synthetic(1, seed=4)[0]

fitted = fit_to_canvas(pose, canvas)
lo, hi = fitted.joints.min(axis=0), fitted.joints.max(axis=0)
print("fitted bounding box:", lo.round(2), hi.round(2))

# %%
# A coarse text preview of the grid, one character per pixel.
img = render_fitted(pose.joints, canvas)
shades = " .:-=+*#"
for row in img:
    print("".join(shades[min(int(v * len(shades)), len(shades) - 1)] for v in row))

# %%
# Translating the input changes nothing after fitting, up to float rounding.
same = render_fitted(pose.joints + np.array([64.0, -128.0]), canvas)
print("largest pixel change after translation:", np.abs(img - same).max())

out = Path("demo_outputs")
out.mkdir(exist_ok=True)
write_pgm(render_fitted(pose.joints, CanvasSpec()), out / "pose.pgm")
print("wrote", out / "pose.pgm")
