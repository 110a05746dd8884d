"""Samples, stratified partitioning, low-data subsampling and manifest I/O."""

import hashlib
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from pedk.errors import DataError, ManifestDigestMismatch, ManifestMissingFile, SplitLeakage

SPLITS = ("train", "validation", "test")
SPLIT_RATIOS = (0.80, 0.16, 0.04)
LABEL_NAMES = {1: "positive", 0: "negative"}
LABEL_VALUES = {v: k for k, v in LABEL_NAMES.items()}
MANIFEST_NAME = "manifest.json"


@dataclass
class Sample:
    image: np.ndarray  # (C, H, W) float32 in [0, 1]
    label: int  # 1 positive, 0 negative
    source_id: str
    part: str = None
    origin: str = "original"
    split: str = None
    aug_index: int = 0
    path: str = None

    @property
    def key(self):
        return self.source_id if self.aug_index == 0 else f"{self.source_id}_a{self.aug_index}"


@dataclass
class PartitionedDataset:
    name: str
    train: list = field(default_factory=list)
    validation: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def split(self, name):
        return getattr(self, name)

    def counts(self):
        out = {}
        for s in SPLITS:
            items = self.split(s)
            pos = sum(1 for x in items if x.label == 1)
            out[s] = {"positive": pos, "negative": len(items) - pos}
        return out

    def arrays(self, split):
        items = self.split(split)
        if not items:
            raise DataError(f"dataset {self.name!r}: split {split!r} is empty")
        x = np.stack([s.image for s in items]).astype(np.float32)
        y = np.array([s.label for s in items], dtype=np.int64)
        return x, y

    def check_no_leakage(self):
        seen = {}
        for s in SPLITS:
            for sample in self.split(s):
                other = seen.setdefault(sample.source_id, s)
                if other != s:
                    raise SplitLeakage(
                        f"dataset {self.name!r}: source_id {sample.source_id!r} appears in both {other!r} and {s!r}"
                    )


def _split_sizes(n, ratios):
    total = float(sum(ratios))
    if total <= 0:
        raise ValueError(f"ratios must be positive, got {ratios}")
    fr = [r / total for r in ratios]
    # 1e-9 guards against 0.1142857...*3500 = 399.99999
    val = int(math.floor(fr[1] * n + 1e-9))
    test = int(math.floor(fr[2] * n + 1e-9))
    return n - val - test, val, test


def partition(samples, ratios=SPLIT_RATIOS, seed=0, name="dataset"):
    """Stratified train/validation/test split.

    ``ratios`` is a 3-tuple (normalized to sum 1) or a dict mapping label to a
    3-tuple when positives and negatives are split differently.  Validation and
    test sizes are floored; the remainder goes to train.
    """
    if not samples:
        raise DataError("cannot partition an empty sample list")
    rng = np.random.default_rng(seed)
    groups = defaultdict(list)
    for s in samples:
        groups[s.label].append(s)
    out = PartitionedDataset(name)
    for label in sorted(groups, reverse=True):
        items = groups[label]
        r = ratios[label] if isinstance(ratios, dict) else ratios
        order = rng.permutation(len(items))
        n_tr, n_va, n_te = _split_sizes(len(items), r)
        bounds = {"train": (0, n_tr), "validation": (n_tr, n_tr + n_va), "test": (n_tr + n_va, len(items))}
        for split, (a, b) in bounds.items():
            out.split(split).extend(replace(items[i], split=split) for i in order[a:b])
    return out


def stratified_take(items, per_label, rng):
    """Random subset with ``per_label[label]`` items of each label, original order kept."""
    idx_by_label = defaultdict(list)
    for i, s in enumerate(items):
        idx_by_label[s.label].append(i)
    keep = []
    for label, idx in idx_by_label.items():
        n = per_label.get(label, len(idx))
        if n > len(idx):
            raise DataError(f"requested {n} samples of label {label}, only {len(idx)} available")
        chosen = rng.choice(len(idx), size=n, replace=False) if n < len(idx) else np.arange(len(idx))
        keep.extend(idx[j] for j in chosen)
    return [items[i] for i in sorted(keep)]


def subsample_training(dataset, fraction, seed=0):
    """Keep ``fraction`` of each label in the train split; validation and test are untouched."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return dataset
    rng = np.random.default_rng(seed)
    labels = defaultdict(int)
    for s in dataset.train:
        labels[s.label] += 1
    per_label = {}
    for label, n in labels.items():
        k = int(round(fraction * n))
        if k < 1:
            raise DataError(f"fraction {fraction} leaves no {LABEL_NAMES[label]} training samples")
        per_label[label] = k
    return replace(dataset, train=stratified_take(dataset.train, per_label, rng))


# -- images -------------------------------------------------------------------


def image_to_png_bytes(image):
    arr = np.round(np.clip(image, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def png_bytes_to_image(blob):
    with Image.open(io.BytesIO(blob)) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def load_image(path):
    path = Path(path)
    if not path.exists():
        raise ManifestMissingFile(f"image not found: {path}")
    return png_bytes_to_image(path.read_bytes())


def save_image(image, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = image_to_png_bytes(image)
    path.write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


# -- manifest -----------------------------------------------------------------


def write_manifest(root, datasets, extra=None):
    """Write every sample as PNG under ``root/images`` and index them in ``manifest.json``."""
    root = Path(root)
    entries = {}
    for ds in datasets.values():
        ds.check_no_leakage()
        rows = []
        for split in SPLITS:
            for s in ds.split(split):
                rel = f"images/{ds.name}/{split}/{s.key}.png"
                digest = save_image(s.image, root / rel)
                rows.append({
                    "path": rel,
                    "label": LABEL_NAMES[s.label],
                    "part": s.part,
                    "split": split,
                    "origin": s.origin,
                    "source_id": s.source_id,
                    "aug_index": s.aug_index,
                    "sha256": digest,
                })
        entries[ds.name] = {"counts": ds.counts(), "samples": rows}
    doc = {"format": "pedk-manifest", "version": 1, "datasets": entries}
    if extra:
        doc["meta"] = extra
    path = root / MANIFEST_NAME
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


def read_manifest(root, names=None, verify=True):
    """Load datasets from ``root/manifest.json``.

    Raises :class:`ManifestMissingFile` for an absent image,
    :class:`ManifestDigestMismatch` when file bytes do not match the recorded
    SHA-256 and :class:`SplitLeakage` for a source_id shared between splits.
    """
    root = Path(root)
    mpath = root / MANIFEST_NAME if root.is_dir() or not root.suffix else root
    if not mpath.exists():
        raise ManifestMissingFile(f"manifest not found: {mpath}")
    base = mpath.parent
    doc = json.loads(mpath.read_text())
    out = {}
    for name, entry in doc["datasets"].items():
        if names is not None and name not in names:
            continue
        ds = PartitionedDataset(name)
        for row in entry["samples"]:
            path = base / row["path"]
            if not path.exists():
                raise ManifestMissingFile(f"manifest references missing file: {path}")
            blob = path.read_bytes()
            if verify and hashlib.sha256(blob).hexdigest() != row["sha256"]:
                raise ManifestDigestMismatch(f"digest mismatch for {path}")
            ds.split(row["split"]).append(Sample(
                image=png_bytes_to_image(blob),
                label=LABEL_VALUES[row["label"]],
                source_id=row["source_id"],
                part=row.get("part"),
                origin=row["origin"],
                split=row["split"],
                aug_index=row.get("aug_index", 0),
                path=row["path"],
            ))
        ds.check_no_leakage()
        out[name] = ds
    if names is not None:
        missing = set(names) - set(out)
        if missing:
            raise DataError(f"manifest {mpath} has no dataset(s) {sorted(missing)}")
    return out


def manifest_meta(root):
    root = Path(root)
    mpath = root / MANIFEST_NAME if root.is_dir() else root
    if not mpath.exists():
        raise ManifestMissingFile(f"manifest not found: {mpath}")
    return json.loads(mpath.read_text()).get("meta", {})
