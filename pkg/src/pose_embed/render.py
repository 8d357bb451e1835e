"""Stick-figure rasterization of poses into grayscale grids.

Pixel ``(row, col)`` has its center at ``(x, y) = (col + 0.5, row + 0.5)``
in canvas coordinates. Bones are capsules of width ``line_width``; joints
are discs of radius ``line_width``. Edges are anti-aliased with a one-pixel
linear ramp on the distance field, so a pixel is nonzero only if its center
lies within ``radius + 0.5`` of a stroke, and is exactly 0 otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .pose import N_JOINTS, Pose

# MPII skeleton: legs, pelvis-thorax-neck-head, arms
MPII_BONES = (
    (0, 1), (1, 2), (2, 6), (6, 3), (3, 4), (4, 5),
    (6, 7), (7, 8), (8, 9),
    (10, 11), (11, 12), (12, 7), (7, 13), (13, 14), (14, 15),
)


@dataclass(frozen=True)
class CanvasSpec:
    side: int = 64
    line_width: float = 2.0
    bone_list: tuple = MPII_BONES
    margin: float = 0.1

    def __post_init__(self):
        if self.side < 16:
            raise ValueError("side must be >= 16")
        if self.line_width < 1:
            raise ValueError("line_width must be >= 1")
        if not 0 <= self.margin < 1:
            raise ValueError("margin must lie in [0, 1)")
        for a, b in self.bone_list:
            if not (0 <= a < N_JOINTS and 0 <= b < N_JOINTS):
                raise ValueError(f"bone ({a}, {b}) references a joint outside [0, 15]")


def fit_joints(joints: np.ndarray, canvas: CanvasSpec) -> np.ndarray:
    """Center and isotropically scale ``(..., 16, 2)`` joints into the canvas.

    The longer side of the bounding box spans ``side * (1 - margin)``.
    """
    joints = np.asarray(joints, dtype=np.float64)
    lo = joints.min(axis=-2, keepdims=True)
    hi = joints.max(axis=-2, keepdims=True)
    center = (lo + hi) / 2
    extent = (hi - lo).max(axis=-1, keepdims=True)
    span = canvas.side * (1 - canvas.margin)
    with np.errstate(divide="ignore"):
        scale = np.where(extent > 0, span / np.where(extent > 0, extent, 1.0), 0.0)
    return (joints - center) * scale + canvas.side / 2


def fit_to_canvas(pose: Pose, canvas: CanvasSpec) -> Pose:
    return Pose(pose.id, fit_joints(pose.joints, canvas), pose.root_index)


def _pixel_centers(side: int) -> tuple[np.ndarray, np.ndarray]:
    c = np.arange(side) + 0.5
    return c[None, :], c[:, None]  # x varies along columns, y along rows


@numba.njit(cache=True)
def _stamp(out, ax, ay, ex, ey, radius):
    """Max-composite one capsule (segment a -> a + e, given radius) into ``out``."""
    side = out.shape[0]
    reach = radius + 0.5
    x0 = max(int(np.floor(min(ax, ax + ex) - reach)), 0)
    x1 = min(int(np.ceil(max(ax, ax + ex) + reach)), side - 1)
    y0 = max(int(np.floor(min(ay, ay + ey) - reach)), 0)
    y1 = min(int(np.ceil(max(ay, ay + ey) + reach)), side - 1)
    len2 = ex * ex + ey * ey
    for row in range(y0, y1 + 1):
        vy = (row + 0.5) - ay
        for col in range(x0, x1 + 1):
            vx = (col + 0.5) - ax
            t = 0.0
            if len2 > 0:
                t = (vx * ex + vy * ey) / len2
                t = min(max(t, 0.0), 1.0)
            dx = vx - t * ex
            dy = vy - t * ey
            v = reach - np.sqrt(dx * dx + dy * dy)
            if v > 0.0:
                v = min(v, 1.0)
                if v > out[row, col]:
                    out[row, col] = v


@numba.njit(cache=True)
def _render_batch(joints, bones, side, width):
    n = joints.shape[0]
    out = np.zeros((n, side, side))
    for k in range(n):
        img = out[k]
        for b in range(bones.shape[0]):
            a = bones[b, 0]
            c = bones[b, 1]
            ax = joints[k, a, 0]
            ay = joints[k, a, 1]
            _stamp(img, ax, ay, joints[k, c, 0] - ax, joints[k, c, 1] - ay, width / 2)
        for j in range(joints.shape[1]):
            _stamp(img, joints[k, j, 0], joints[k, j, 1], 0.0, 0.0, width)
    return out


def render_joints(joints: np.ndarray, canvas: CanvasSpec) -> np.ndarray:
    """Render canvas-space joints ``(16, 2)`` or ``(n, 16, 2)`` to grids in [0, 1]."""
    joints = np.ascontiguousarray(joints, dtype=np.float64)
    single = joints.ndim == 2
    if single:
        joints = joints[None]
    bones = np.array(canvas.bone_list, dtype=np.int64).reshape(-1, 2)
    out = _render_batch(joints, bones, int(canvas.side), float(canvas.line_width))
    return out[0] if single else out


def render_joints_dense(joints: np.ndarray, canvas: CanvasSpec) -> np.ndarray:
    """Whole-grid numpy rasterizer; slow reference for :func:`render_joints`."""
    joints = np.asarray(joints, dtype=np.float64)
    single = joints.ndim == 2
    if single:
        joints = joints[None]
    side = canvas.side
    px, py = _pixel_centers(side)
    px = px[None]
    py = py[None]
    out = np.zeros((len(joints), side, side))
    w = canvas.line_width

    def stamp(a, e, radius):
        ex = e[:, 0, None, None]
        ey = e[:, 1, None, None]
        vx = px - a[:, 0, None, None]
        vy = py - a[:, 1, None, None]
        len2 = ex * ex + ey * ey
        safe = np.where(len2 > 0, len2, 1.0)
        t = np.clip((vx * ex + vy * ey) / safe, 0.0, 1.0)
        t = np.where(len2 > 0, t, 0.0)
        dx = vx - t * ex
        dy = vy - t * ey
        v = (radius + 0.5) - np.sqrt(dx * dx + dy * dy)
        np.maximum(out, np.clip(v, 0.0, 1.0), out=out)

    for a_idx, b_idx in canvas.bone_list:
        a = joints[:, a_idx]
        stamp(a, joints[:, b_idx] - a, w / 2)
    for j in range(N_JOINTS):
        stamp(joints[:, j], np.zeros_like(joints[:, j]), w)

    return out[0] if single else out


def render_skeleton(pose: Pose, canvas: CanvasSpec) -> np.ndarray:
    """Rasterize a pose already in canvas coordinates."""
    return render_joints(pose.joints, canvas)


def render_fitted(joints: np.ndarray, canvas: CanvasSpec) -> np.ndarray:
    """``render(fit(joints))`` for raw pixel-space joints."""
    return render_joints(fit_joints(joints, canvas), canvas)


def write_pgm(grid: np.ndarray, path) -> None:
    """Write a grid in [0, 1] as a binary (P5) 8-bit portable graymap."""
    grid = np.asarray(grid)
    h, w = grid.shape
    data = np.round(np.clip(grid, 0, 1) * 255).astype(np.uint8)
    with open(Path(path), "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a P5 graymap in the layout produced by :func:`write_pgm`."""
    raw = Path(path).read_bytes()
    magic, dims, maxval, data = raw.split(b"\n", 3)
    if magic != b"P5":
        raise ValueError("not a binary PGM file")
    w, h = map(int, dims.split())
    maxval = int(maxval)
    data = np.frombuffer(data[: w * h], dtype=np.uint8)
    return data.reshape(h, w) / maxval
