"""Random geometric augmentation: rotation, offset from center, scale."""

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

MAX_ROTATION_DEG = 25.0
MAX_SHIFT_FRAC = 0.10
SCALE_RANGE = (0.85, 1.15)


@dataclass(frozen=True)
class AffineParams:
    rotation_deg: float = 0.0
    shift_x: float = 0.0  # fraction of image width
    shift_y: float = 0.0  # fraction of image height
    scale: float = 1.0

    @property
    def is_identity(self):
        return self.rotation_deg == 0 and self.shift_x == 0 and self.shift_y == 0 and self.scale == 1


def sample_params(rng):
    return AffineParams(
        rotation_deg=float(rng.uniform(-MAX_ROTATION_DEG, MAX_ROTATION_DEG)),
        shift_x=float(rng.uniform(-MAX_SHIFT_FRAC, MAX_SHIFT_FRAC)),
        shift_y=float(rng.uniform(-MAX_SHIFT_FRAC, MAX_SHIFT_FRAC)),
        scale=float(rng.uniform(*SCALE_RANGE)),
    )


def quantize(image):
    """Snap to the 8-bit grid so in-memory images equal their PNG round trip."""
    return (np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0).astype(np.float32)


def apply_affine(image, params):
    """Warp a (C, H, W) image about its center; uncovered pixels replicate the edge."""
    image = np.asarray(image, dtype=np.float32)
    if params.is_identity:
        return image.copy()
    _, h, w = image.shape
    theta = np.deg2rad(params.rotation_deg)
    c, s = np.cos(theta), np.sin(theta)
    # output->input map in (row, col) coordinates: inverse of scale-then-rotate
    inv = np.array([[c, s], [-s, c]]) / params.scale
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    shift = np.array([params.shift_y * h, params.shift_x * w])
    offset = center - inv @ (center + shift)
    out = np.empty_like(image)
    for ch in range(image.shape[0]):
        out[ch] = ndimage.affine_transform(image[ch], inv, offset=offset, order=1, mode="nearest")
    return quantize(out)


def augment(sample, k, seed):
    """``k`` independently warped copies of an original sample.

    Each copy keeps the label, part and ``source_id`` of the original and is
    tagged ``origin="augmented"``.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if sample.origin != "original":
        raise ValueError("only original samples can be augmented")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(k):
        params = sample_params(rng)
        out.append(
            replace(
                sample,
                image=apply_affine(sample.image, params),
                origin="augmented",
                aug_index=i + 1,
                path=None,
            )
        )
    return out
