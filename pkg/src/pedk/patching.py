"""Sliding-window patch grids and bilinear patch extraction.

Image sizes are ``P x Q`` with ``P`` the height (rows) and ``Q`` the width
(columns).  Rectangles are ``(x, y, w, h)`` in pixel coordinates, ``x`` along
the width.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

MIN_WINDOW = 8


class Rect(NamedTuple):
    x: int
    y: int
    w: int
    h: int

    @property
    def side(self):
        return self.w


@dataclass(frozen=True)
class WindowSpec:
    """Window side as a fraction of the image and stride as a fraction of the window.

    ``mode="min_side"`` gives square windows of ``window_ratio * min(P, Q)``;
    ``mode="per_side"`` scales each axis separately (windows follow the image
    aspect ratio).  ``patch_size`` overrides ``window_ratio`` with an absolute
    side in pixels.
    """

    window_ratio: float = 0.5
    step_ratio: float = 0.125
    mode: str = "min_side"
    patch_size: int = None

    def __post_init__(self):
        if self.patch_size is None and not 0 < self.window_ratio <= 1:
            raise ValueError(f"window_ratio must be in (0, 1], got {self.window_ratio}")
        if not 0 < self.step_ratio <= 1:
            raise ValueError(f"step_ratio must be in (0, 1], got {self.step_ratio}")
        if self.mode not in ("min_side", "per_side"):
            raise ValueError(f"mode must be 'min_side' or 'per_side', got {self.mode!r}")


@dataclass(frozen=True)
class PatchGrid:
    rects: tuple
    height: int
    width: int

    def __len__(self):
        return len(self.rects)

    def __iter__(self):
        return iter(self.rects)

    def coverage(self):
        """Per-pixel count of windows covering each pixel."""
        cov = np.zeros((self.height, self.width), dtype=np.int64)
        for r in self.rects:
            cov[r.y:r.y + r.h, r.x:r.x + r.w] += 1
        return cov


def axis_positions(dim, side, stride):
    """0, stride, 2*stride, ... plus one window flush with the far edge if needed."""
    if side > dim:
        raise ValueError(f"window {side} larger than axis {dim}")
    pos = list(range(0, dim - side + 1, stride))
    if pos[-1] + side < dim:
        pos.append(dim - side)
    return pos


def axis_count(dim, side, stride):
    n = (dim - side) // stride + 1
    return n + (1 if (n - 1) * stride + side < dim else 0)


def window_sides(P, Q, spec):
    if spec.patch_size is not None:
        return spec.patch_size, spec.patch_size
    if spec.mode == "per_side":
        return int(round(spec.window_ratio * P)), int(round(spec.window_ratio * Q))
    side = int(round(spec.window_ratio * min(P, Q)))
    return side, side


def patch_grid(P, Q, spec=WindowSpec()):
    """Row-major (by y, then x) sliding-window rectangles over a ``P x Q`` image."""
    wh, ww = window_sides(P, Q, spec)
    if min(wh, ww) < MIN_WINDOW:
        raise ValueError(f"window {ww}x{wh} below the {MIN_WINDOW}px minimum for a {P}x{Q} image")
    if wh > P or ww > Q:
        side = min(P, Q)
        return PatchGrid((Rect((Q - side) // 2, (P - side) // 2, side, side),), P, Q)
    ys = axis_positions(P, wh, max(1, int(round(spec.step_ratio * wh))))
    xs = axis_positions(Q, ww, max(1, int(round(spec.step_ratio * ww))))
    return PatchGrid(tuple(Rect(x, y, ww, wh) for y in ys for x in xs), P, Q)


def _bilinear_axis(n_src, n_dst):
    # half-pixel-center convention: equal sizes map every sample onto itself
    pos = (np.arange(n_dst) + 0.5) * (n_src / n_dst) - 0.5
    pos = np.clip(pos, 0, n_src - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_src - 1)
    return lo, hi, (pos - lo).astype(np.float32)


def resize_bilinear(image, out_h, out_w=None):
    """Bilinear resize of a (C, H, W) array."""
    out_w = out_h if out_w is None else out_w
    image = np.asarray(image, dtype=np.float32)
    _, h, w = image.shape
    if (h, w) == (out_h, out_w):
        return image.copy()
    y0, y1, fy = _bilinear_axis(h, out_h)
    x0, x1, fx = _bilinear_axis(w, out_w)
    rows = image[:, y0, :] * (1 - fy)[None, :, None] + image[:, y1, :] * fy[None, :, None]
    out = rows[:, :, x0] * (1 - fx)[None, None, :] + rows[:, :, x1] * fx[None, None, :]
    return np.clip(out, 0.0, 1.0)


def extract_rescale(image, rect, target_side):
    """Crop ``rect`` from a (C, H, W) image and resize it to ``target_side`` square."""
    _, H, W = np.shape(image)
    if rect.x < 0 or rect.y < 0 or rect.x + rect.w > W or rect.y + rect.h > H:
        raise ValueError(f"{rect} is not inside a {H}x{W} image")
    crop = np.asarray(image)[:, rect.y:rect.y + rect.h, rect.x:rect.x + rect.w]
    return resize_bilinear(crop, target_side, target_side)


def extract_all(image, grid, target_side):
    """Stack of every patch in ``grid`` rescaled to ``target_side``: (N, C, t, t)."""
    return np.stack([extract_rescale(image, r, target_side) for r in grid.rects])
