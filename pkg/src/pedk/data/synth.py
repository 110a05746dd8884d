"""Procedural stand-in for the firearm corpora.

A scene is a textured background with random clutter.  Object scenes
additionally contain a four-part object (barrel, magazine, receiver, stock)
in a fixed relative layout, with its position, facing, scale and tilt drawn
from a finite arrangement space.  Each part has its own silhouette and
texture; clutter reuses the same textures on other silhouettes and the same
colour range, so neither colour nor texture alone identifies a part.

Part datasets are built from ``window_ratio``-sized crops: positives are
crops roughly centred on the part with the part fully inside, negatives are
clutter crops plus crops centred on other parts that do not fully contain
the target part.
"""

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from pedk.data.augment import augment, quantize
from pedk.data.dataset import SPLIT_RATIOS, PartitionedDataset, Sample, partition, stratified_take
from pedk.errors import ConfigError, DataError
from pedk.patching import Rect, extract_rescale
from pedk.seeding import derive_seed
from pedk.zoo import PARTS

TEXTURES = ("rings", "dots", "hatch", "ribs", "noise", "solid")
PART_TEXTURE = {"barrel": "rings", "magazine": "ribs", "receiver": "dots", "stock": "hatch"}
SCALES = (0.9, 1.0, 1.1)
TILTS = (-10.0, 0.0, 10.0)
TEXTURE_PERIOD = 0.3  # in units of the part size
SINGLE = "single"


class GeneratorCapacityError(DataError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    image_side: int = 64
    input_side: int = 32
    window_ratio: float = 0.5
    part_scale: float = 0.22
    clutter_density: float = 6.0
    positional_jitter: float = 0.06
    other_part_share: float = 0.25
    component_pool_per_class: int = 1250
    component_ratios: tuple = SPLIT_RATIOS
    single_positive_pool: int = 1250
    single_negative_pool: int = 1250
    single_positive_ratios: tuple = SPLIT_RATIOS
    single_negative_ratios: tuple = SPLIT_RATIOS
    augment_k: int = 3
    train_cap_per_class: int = 250
    val_cap_per_class: int = 100
    seed: int = 1

    def validate(self):
        if self.image_side < 16:
            raise ConfigError("image_side", f"must be >= 16, got {self.image_side}")
        if self.input_side < 8:
            raise ConfigError("input_side", f"must be >= 8, got {self.input_side}")
        if not 0 < self.window_ratio <= 1:
            raise ConfigError("window_ratio", f"must be in (0, 1], got {self.window_ratio}")
        if not 0.05 <= self.part_scale <= 0.3:
            raise ConfigError("part_scale", f"must be in [0.05, 0.3], got {self.part_scale}")
        if self.clutter_density < 0:
            raise ConfigError("clutter_density", "must be >= 0")
        if not 0 <= self.other_part_share <= 1:
            raise ConfigError("other_part_share", "must be in [0, 1]")
        for name in ("component_pool_per_class", "single_positive_pool", "single_negative_pool"):
            if getattr(self, name) < 3:
                raise ConfigError(name, f"must be >= 3, got {getattr(self, name)}")
        for name in ("component_ratios", "single_positive_ratios", "single_negative_ratios"):
            r = getattr(self, name)
            if len(r) != 3 or any(v < 0 for v in r) or sum(r) <= 0:
                raise ConfigError(name, f"must be three non-negative numbers, got {r}")
        if self.augment_k < 0:
            raise ConfigError("augment_k", "must be >= 0")
        for name in ("train_cap_per_class", "val_cap_per_class"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ConfigError(name, f"must be >= 1 or null, got {v}")
        return self

    @property
    def window_side(self):
        return int(round(self.window_ratio * self.image_side))

    def to_json(self):
        return json.dumps(asdict(self), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(key, "unknown config field")
        kw = {}
        for key, value in data.items():
            kw[key] = tuple(value) if isinstance(value, list) else value
        try:
            cfg = cls(**kw)
        except TypeError as exc:  # pragma: no cover - dataclass signature errors
            raise ConfigError("config", str(exc)) from exc
        for f in fields(cls):
            default = f.default
            value = getattr(cfg, f.name)
            if isinstance(default, (int, float)) and not isinstance(default, bool) and value is not None:
                if not isinstance(value, (int, float)) or isinstance(value, bool):
                    raise ConfigError(f.name, f"expected a number, got {value!r}")
        return cfg.validate()

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)


FULL_SCALE_SYNTH = SynthConfig(
    image_side=400,
    input_side=200,
    component_pool_per_class=2500,
    single_positive_pool=3500,
    single_negative_pool=8500,
    single_positive_ratios=(3000, 400, 100),
    single_negative_ratios=(8000, 400, 100),
    train_cap_per_class=8000,
    val_cap_per_class=None,
)


# -- drawing primitives ---------------------------------------------------------


def _grid(side):
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float32)
    return yy + 0.5, xx + 0.5


def _texture(kind, a, b, period, rng):
    if kind == "rings":
        return (np.floor(a / period) % 2).astype(np.float32)
    if kind == "ribs":
        return (np.floor(b / period) % 2).astype(np.float32)
    if kind == "hatch":
        return (np.floor((a + b) / period) % 2).astype(np.float32)
    if kind == "dots":
        ma = (a % period) - period / 2
        mb = (b % period) - period / 2
        return ((ma * ma + mb * mb) < (period * 0.3) ** 2).astype(np.float32)
    if kind == "noise":
        return rng.random(a.shape).astype(np.float32)
    return np.zeros(a.shape, dtype=np.float32)


def _paint(canvas, mask, kind, a, b, period, c1, c2, rng):
    if not mask.any():
        return
    t = _texture(kind, a[mask], b[mask], period, rng)[:, None]
    canvas[mask] = c1 * (1 - t) + c2 * t


def _part_colors(rng):
    base = rng.uniform(0.05, 0.35)
    tint = rng.uniform(-0.06, 0.06, size=3)
    c1 = np.clip(base + tint, 0, 1)
    c2 = np.clip(c1 + rng.uniform(0.3, 0.5), 0, 1)
    return c1.astype(np.float32), c2.astype(np.float32)


def _background(canvas, rng):
    side = canvas.shape[0]
    yy, xx = _grid(side)
    base = rng.uniform(0.2, 0.9, size=3)
    gy, gx = rng.uniform(-0.3, 0.3, size=2) / side
    grad = (yy - side / 2) * gy + (xx - side / 2) * gx
    canvas[:] = np.clip(base[None, None, :] + grad[..., None] + rng.normal(0, 0.03, (side, side, 3)), 0, 1)


def _clutter(canvas, rng, density, u):
    side = canvas.shape[0]
    yy, xx = _grid(side)
    n = rng.poisson(density)
    for _ in range(n):
        cy, cx = rng.uniform(0, side, size=2)
        ang = rng.uniform(0, np.pi)
        ca, sa = np.cos(ang), np.sin(ang)
        a = (xx - cx) * ca + (yy - cy) * sa
        b = -(xx - cx) * sa + (yy - cy) * ca
        ra = rng.uniform(0.3, 1.2) * u
        rb = ra * rng.uniform(0.5, 1.0)
        shape = rng.integers(3)
        if shape == 0:
            mask = (a / ra) ** 2 + (b / rb) ** 2 <= 1
        elif shape == 1:
            mask = (np.abs(a) <= ra) & (np.abs(b) <= rb)
        else:
            mask = (np.abs(a) <= ra) & (np.abs(b) <= rb * (0.5 + 0.5 * (a + ra) / (2 * ra)))
            mask &= (a / ra) ** 2 + (b / rb) ** 2 <= 1.3
        kind = TEXTURES[rng.integers(len(TEXTURES))]
        c1 = rng.uniform(0, 1, size=3).astype(np.float32)
        c2 = np.clip(c1 + rng.uniform(-0.5, 0.5, size=3), 0, 1).astype(np.float32)
        _paint(canvas, mask, kind, a, b, max(2.0, TEXTURE_PERIOD * u), c1, c2, rng)


# -- object layout ----------------------------------------------------------------


def _part_masks(side, u, cx, cy, flip, tilt_deg):
    """Boolean masks and local (along, across) coordinates for every part.

    Object frame: ``a`` runs from stock to barrel, ``b`` points down.
    ``(cx, cy)`` is the receiver centre.
    """
    yy, xx = _grid(side)
    t = np.deg2rad(tilt_deg)
    ct, st = np.cos(t), np.sin(t)
    dx, dy = xx - cx, yy - cy
    a = flip * (dx * ct + dy * st)
    b = -dx * st + dy * ct
    out = {}
    out["receiver"] = ((np.abs(a) <= 0.5 * u) & (np.abs(b) <= 0.3 * u), a, b)
    bb = b + 0.1 * u
    out["barrel"] = (((a >= 0.5 * u) & (a <= 2.0 * u) & (np.abs(bb) <= 0.12 * u)), a, bb)
    half = 0.25 * u + 0.15 * (-0.5 * u - a)
    bs = b - 0.05 * u
    out["stock"] = (((a >= -1.5 * u) & (a <= -0.5 * u) & (np.abs(bs) <= half)), a, bs)
    slant = a - 0.3 * (b - 0.3 * u)
    out["magazine"] = (((b >= 0.3 * u) & (b <= 1.0 * u) & (slant >= 0.0) & (slant <= 0.35 * u)), slant, b)
    return out


def _bbox(mask):
    ys, xs = np.nonzero(mask)
    return int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1


@lru_cache(maxsize=16)
def arrangement_space(side, part_scale):
    """All legal (dx, dy, flip, scale_index, tilt_index) placements, in a fixed order."""
    out = []
    for flip in (1, -1):
        for si, scale in enumerate(SCALES):
            for ti, tilt in enumerate(TILTS):
                u = part_scale * side * scale
                masks = _part_masks(side, u, side / 2, side / 2, flip, tilt)
                union = np.zeros((side, side), dtype=bool)
                for m, _, _ in masks.values():
                    union |= m
                x0, y0, x1, y1 = _bbox(union)
                for dy in range(-y0 + 1, side - y1):
                    for dx in range(-x0 + 1, side - x1):
                        out.append((dx, dy, flip, si, ti))
    return tuple(out)


def render_scene(config, seed, arrangement=None):
    """Render one scene; returns ``(image CHW, part bboxes or None)``."""
    rng = np.random.default_rng(seed)
    side = config.image_side
    canvas = np.zeros((side, side, 3), dtype=np.float32)
    u0 = config.part_scale * side
    _background(canvas, rng)
    if arrangement is None:
        _clutter(canvas, rng, config.clutter_density, u0)
        return quantize(canvas.transpose(2, 0, 1)), None
    dx, dy, flip, si, ti = arrangement
    _clutter(canvas, rng, config.clutter_density * 0.6, u0)
    u = u0 * SCALES[si]
    masks = _part_masks(side, u, side / 2 + dx, side / 2 + dy, flip, TILTS[ti])
    boxes = {}
    period = max(2.0, TEXTURE_PERIOD * u)
    for part in ("stock", "receiver", "barrel", "magazine"):
        mask, a, b = masks[part]
        c1, c2 = _part_colors(rng)
        _paint(canvas, mask, PART_TEXTURE[part], a, b, period, c1, c2, rng)
        boxes[part] = _bbox(mask)
    return quantize(canvas.transpose(2, 0, 1)), boxes


# -- crops -------------------------------------------------------------------------


def _inside(box, win):
    x0, y0, x1, y1 = box
    return x0 >= win.x and y0 >= win.y and x1 <= win.x + win.w and y1 <= win.y + win.h


def _centered_window(box, side, wside, jitter, rng):
    x0, y0, x1, y1 = box
    cx = (x0 + x1) / 2 + rng.uniform(-jitter, jitter)
    cy = (y0 + y1) / 2 + rng.uniform(-jitter, jitter)
    wx = int(np.clip(round(cx - wside / 2), 0, side - wside))
    wy = int(np.clip(round(cy - wside / 2), 0, side - wside))
    return Rect(wx, wy, wside, wside)


def _random_arrangement(config, rng):
    space = arrangement_space(config.image_side, config.part_scale)
    return space[rng.integers(len(space))]


def render_part_crop(config, target, kind, seed):
    """One part-dataset patch. ``kind`` is 'positive', 'clutter' or 'other'."""
    rng = np.random.default_rng(seed)
    side, wside = config.image_side, config.window_side
    jitter = config.positional_jitter * side
    if kind == "clutter":
        image, _ = render_scene(config, derive_seed(seed, "scene"))
        wx, wy = rng.integers(0, side - wside + 1, size=2)
        return quantize(extract_rescale(image, Rect(int(wx), int(wy), wside, wside), config.input_side))
    for attempt in range(50):
        arrangement = _random_arrangement(config, rng)
        image, boxes = render_scene(config, derive_seed(seed, "scene", attempt), arrangement)
        if kind == "positive":
            win = _centered_window(boxes[target], side, wside, jitter, rng)
            if _inside(boxes[target], win):
                return quantize(extract_rescale(image, win, config.input_side))
        else:
            others = [p for p in boxes if p != target]
            source = others[rng.integers(len(others))]
            win = _centered_window(boxes[source], side, wside, jitter, rng)
            if not _inside(boxes[target], win):
                return quantize(extract_rescale(image, win, config.input_side))
    raise GeneratorCapacityError(f"could not place a {kind} crop for {target} (window too large for layout?)")


# -- pools and dataset assembly ------------------------------------------------------


def _pending(source_id, label, part, recipe):
    s = Sample(image=None, label=label, source_id=source_id, part=part)
    return s, recipe


def synth_generate(config):
    """Sample recipes for every pool, keyed by pool name.

    Returns ``(pools, recipes)`` where ``pools[name]`` is a list of image-less
    :class:`Sample` objects and ``recipes[source_id]`` renders the image.
    Rendering is deferred so only samples that survive partitioning and caps
    are ever drawn.
    """
    config.validate()
    seed = config.seed
    pools, recipes = {}, {}
    n = config.component_pool_per_class
    n_other = int(math.ceil(config.other_part_share * n))
    for part in PARTS:
        name = part.value
        items = []
        for i in range(n):
            sid = f"{name}-pos-{i:05d}"
            items.append(Sample(None, 1, sid, part=name))
            recipes[sid] = (render_part_crop, (config, name, "positive", derive_seed(seed, name, "pos", i)))
        for i in range(n):
            kind = "other" if i < n_other else "clutter"
            sid = f"{name}-neg-{i:05d}"
            items.append(Sample(None, 0, sid, part=name))
            recipes[sid] = (render_part_crop, (config, name, kind, derive_seed(seed, name, "neg", i)))
        pools[name] = items

    space = arrangement_space(config.image_side, config.part_scale)
    if config.single_positive_pool > len(space):
        raise GeneratorCapacityError(
            f"{config.single_positive_pool} whole-object images requested but only {len(space)} "
            f"unique arrangements exist for image_side={config.image_side}, part_scale={config.part_scale}"
        )
    order = np.random.default_rng(derive_seed(seed, "arrangements")).permutation(len(space))
    items = []
    for i in range(config.single_positive_pool):
        sid = f"single-pos-{i:05d}"
        items.append(Sample(None, 1, sid))
        recipes[sid] = (_scene_only, (config, derive_seed(seed, "single", "pos", i), space[order[i]]))
    for i in range(config.single_negative_pool):
        sid = f"single-neg-{i:05d}"
        items.append(Sample(None, 0, sid))
        recipes[sid] = (_scene_only, (config, derive_seed(seed, "single", "neg", i), None))
    pools[SINGLE] = items
    return pools, recipes


def _scene_only(config, seed, arrangement):
    return render_scene(config, seed, arrangement)[0]


def _render(sample, recipes):
    fn, args = recipes[sample.source_id]
    return replace(sample, image=fn(*args))


def _train_split(originals, recipes, k, cap, seed, augment_labels):
    rng = np.random.default_rng(seed)
    out = []
    for label in (1, 0):
        group = [s for s in originals if s.label == label]
        if label not in augment_labels or k == 0:
            if cap is not None and len(group) > cap:
                group = stratified_take(group, {label: cap}, rng)
            out.extend(_render(s, recipes) for s in group)
            continue
        if cap is not None and len(group) > cap:
            group = stratified_take(group, {label: int(math.ceil(cap / (k + 1)))}, rng)
        rendered = [_render(s, recipes) for s in group]
        copies = []
        for s in rendered:
            copies.extend(augment(s, k, derive_seed(seed, "aug", s.source_id)))
        if cap is not None and len(rendered) + len(copies) > cap:
            keep = rng.choice(len(copies), size=cap - len(rendered), replace=False)
            copies = [copies[i] for i in sorted(keep)]
        out.extend(rendered + copies)
    return [replace(s, split="train") for s in out]


def assemble_dataset(name, pool, recipes, config, ratios, augment_labels):
    """Partition a pool, augment and cap the train split, cap validation, render images."""
    seed = derive_seed(config.seed, "assemble", name)
    parts = partition(pool, ratios, seed=seed, name=name)
    train = _train_split(parts.train, recipes, config.augment_k, config.train_cap_per_class,
                         derive_seed(seed, "train"), augment_labels)
    val = parts.validation
    if config.val_cap_per_class is not None:
        cap = config.val_cap_per_class
        per = {lab: min(cap, sum(1 for s in val if s.label == lab)) for lab in (0, 1)}
        val = stratified_take(val, per, np.random.default_rng(derive_seed(seed, "val")))
    val = [_render(s, recipes) for s in val]
    test = [_render(s, recipes) for s in parts.test]
    ds = PartitionedDataset(name, train=train, validation=val, test=test)
    ds.check_no_leakage()
    return ds


def generate_datasets(config, names=None):
    """All five datasets (four part datasets plus the whole-image one) for ``config``."""
    pools, recipes = synth_generate(config)
    names = list(pools) if names is None else list(names)
    out = {}
    for name in names:
        if name == SINGLE:
            ratios = {1: config.single_positive_ratios, 0: config.single_negative_ratios}
            # negatives of the whole-image dataset are never augmented
            out[name] = assemble_dataset(name, pools[name], recipes, config, ratios, augment_labels=(1,))
        else:
            out[name] = assemble_dataset(name, pools[name], recipes, config, config.component_ratios,
                                         augment_labels=(0, 1))
    return out
