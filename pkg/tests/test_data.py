"""Partitioning, augmentation, subsampling, manifests and the synthetic generator."""

import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pedk.data.augment import AffineParams, apply_affine, augment, quantize, sample_params
from pedk.data.dataset import (
    SPLIT_RATIOS,
    PartitionedDataset,
    Sample,
    image_to_png_bytes,
    partition,
    png_bytes_to_image,
    read_manifest,
    subsample_training,
    write_manifest,
)
from pedk.data.synth import (
    GeneratorCapacityError,
    SynthConfig,
    arrangement_space,
    generate_datasets,
    render_part_crop,
    render_scene,
    synth_generate,
)
from pedk.errors import ConfigError, DataError, ManifestDigestMismatch, ManifestMissingFile, SplitLeakage

TINY = SynthConfig(component_pool_per_class=30, single_positive_pool=30, single_negative_pool=30,
                   train_cap_per_class=12, val_cap_per_class=4, augment_k=2, seed=3)


def make_samples(n_pos, n_neg, side=4):
    out = []
    for i in range(n_pos + n_neg):
        label = 1 if i < n_pos else 0
        img = np.full((3, side, side), (i % 256) / 255.0, dtype=np.float32)
        out.append(Sample(img, label, f"s{i:05d}"))
    return out


def counts(items):
    pos = sum(s.label for s in items)
    return pos, len(items) - pos


class TestPartition:
    def test_balanced_full_pool(self):
        ds = partition(make_samples(2500, 2500, 1), SPLIT_RATIOS, seed=0)
        assert counts(ds.train) == (2000, 2000)
        assert counts(ds.validation) == (400, 400)
        assert counts(ds.test) == (100, 100)

    def test_count_ratios(self):
        ds = partition(make_samples(3500, 0, 1), (3000, 400, 100), seed=0)
        assert (len(ds.train), len(ds.validation), len(ds.test)) == (3000, 400, 100)

    def test_same_seed_same_split(self):
        a = partition(make_samples(5, 5), seed=7)
        b = partition(make_samples(5, 5), seed=7)
        for split in ("train", "validation", "test"):
            assert [s.source_id for s in a.split(split)] == [s.source_id for s in b.split(split)]

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            partition([])

    def test_per_label_ratios(self):
        ds = partition(make_samples(350, 850, 1), {1: (3000, 400, 100), 0: (8000, 400, 100)}, seed=1)
        assert counts(ds.validation) == (40, 40)
        assert counts(ds.test) == (10, 10)

    @given(st.integers(1, 60), st.integers(1, 60), st.integers(0, 1000))
    def test_no_sample_lost_or_shared(self, n_pos, n_neg, seed):
        ds = partition(make_samples(n_pos, n_neg, 1), seed=seed)
        ids = [s.source_id for split in ("train", "validation", "test") for s in ds.split(split)]
        assert sorted(ids) == sorted(s.source_id for s in make_samples(n_pos, n_neg, 1))
        ds.check_no_leakage()
        for split in ("validation", "test"):
            p, n = counts(ds.split(split))
            assert abs(p - n) <= max(1, abs(n_pos - n_neg))

    def test_leakage_detected(self):
        s = make_samples(2, 0)
        ds = PartitionedDataset("x", train=[s[0]], test=[replace(s[0], split="test")])
        with pytest.raises(SplitLeakage):
            ds.check_no_leakage()


class TestAugment:
    def test_identity_parameters_leave_pixels_unchanged(self, rng):
        img = rng.uniform(size=(3, 16, 16)).astype(np.float32)
        np.testing.assert_array_equal(apply_affine(img, AffineParams()), img)

    def test_three_copies_keep_identity(self):
        s = make_samples(1, 0, side=16)[0]
        s = replace(s, part="barrel", image=quantize(np.random.default_rng(0).uniform(size=(3, 16, 16))))
        copies = augment(s, 3, seed=5)
        assert len(copies) == 3
        assert all(c.source_id == s.source_id and c.label == 1 and c.part == "barrel" for c in copies)
        assert [c.aug_index for c in copies] == [1, 2, 3]
        assert all(c.origin == "augmented" for c in copies)
        assert all(not np.array_equal(c.image, s.image) for c in copies)

    def test_seeded(self):
        s = replace(make_samples(1, 0, side=12)[0], image=np.random.default_rng(1).uniform(size=(3, 12, 12)))
        a = augment(s, 3, seed=9)
        b = augment(s, 3, seed=9)
        assert all(np.array_equal(x.image, y.image) for x, y in zip(a, b))

    def test_train_size_quadruples(self):
        train = make_samples(10, 10, side=8)
        grown = train + [c for s in train for c in augment(s, 3, seed=0)]
        assert len(grown) == 4 * len(train)

    def test_parameter_ranges(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            p = sample_params(rng)
            assert -25 <= p.rotation_deg <= 25
            assert abs(p.shift_x) <= 0.1 and abs(p.shift_y) <= 0.1
            assert 0.85 <= p.scale <= 1.15

    def test_shift_moves_content_and_replicates_edge(self):
        img = np.zeros((1, 10, 10), dtype=np.float32)
        img[:, :, 0] = 1.0
        out = apply_affine(img, AffineParams(shift_x=0.2))
        # content moves two columns right; the vacated left columns copy the edge
        assert out[0, 5, 2] == 1.0 and out[0, 5, 0] == 1.0 and out[0, 5, 4] == 0.0

    def test_only_originals(self):
        s = replace(make_samples(1, 0)[0], origin="augmented")
        with pytest.raises(ValueError):
            augment(s, 1, seed=0)


class TestSubsample:
    def test_quarter_is_stratified(self):
        ds = PartitionedDataset("d", train=make_samples(4000, 4000, 1), test=make_samples(10, 10, 1)[:5])
        sub = subsample_training(ds, 0.25, seed=0)
        assert counts(sub.train) == (1000, 1000)
        assert sub.test == ds.test and sub.validation == ds.validation

    def test_full_fraction_is_identity(self):
        ds = PartitionedDataset("d", train=make_samples(4, 4, 1))
        assert subsample_training(ds, 1.0) is ds

    def test_empty_class_rejected(self):
        ds = PartitionedDataset("d", train=make_samples(1, 8, 1))
        with pytest.raises(DataError):
            subsample_training(ds, 0.25)

    @pytest.mark.parametrize("frac", [0.0, 1.5])
    def test_fraction_range(self, frac):
        with pytest.raises(ValueError):
            subsample_training(PartitionedDataset("d", train=make_samples(4, 4, 1)), frac)


class TestManifest:
    def dataset(self):
        ds = partition(make_samples(30, 30, side=5), seed=0, name="demo")
        return {"demo": ds}

    def test_round_trip(self, tmp_path):
        original = self.dataset()
        write_manifest(tmp_path, original, extra={"note": 1})
        loaded = read_manifest(tmp_path)["demo"]
        for split in ("train", "validation", "test"):
            a, b = original["demo"].split(split), loaded.split(split)
            assert [(s.source_id, s.label) for s in a] == [(s.source_id, s.label) for s in b]
            for x, y in zip(a, b):
                np.testing.assert_array_equal(x.image, y.image)
        doc = json.loads((tmp_path / "manifest.json").read_text())
        row = doc["datasets"]["demo"]["samples"][0]
        assert set(row) >= {"path", "label", "part", "split", "origin", "source_id", "sha256"}

    def test_missing_file_named(self, tmp_path):
        write_manifest(tmp_path, self.dataset())
        victim = sorted((tmp_path / "images").rglob("*.png"))[0]
        victim.unlink()
        with pytest.raises(ManifestMissingFile, match=victim.name):
            read_manifest(tmp_path)

    def test_digest_mismatch(self, tmp_path):
        write_manifest(tmp_path, self.dataset())
        victim = sorted((tmp_path / "images").rglob("*.png"))[0]
        victim.write_bytes(image_to_png_bytes(np.ones((3, 5, 5))))
        with pytest.raises(ManifestDigestMismatch):
            read_manifest(tmp_path)

    def test_source_shared_between_splits(self, tmp_path):
        write_manifest(tmp_path, self.dataset())
        path = tmp_path / "manifest.json"
        doc = json.loads(path.read_text())
        rows = doc["datasets"]["demo"]["samples"]
        test_row = next(r for r in rows if r["split"] == "test")
        train_row = next(r for r in rows if r["split"] == "train")
        test_row["source_id"] = train_row["source_id"]
        path.write_text(json.dumps(doc))
        with pytest.raises(SplitLeakage):
            read_manifest(tmp_path)

    def test_errors_are_distinct(self):
        assert len({ManifestMissingFile, ManifestDigestMismatch, SplitLeakage}) == 3
        assert not issubclass(ManifestDigestMismatch, SplitLeakage)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ManifestMissingFile, match="manifest.json"):
            read_manifest(tmp_path)

    def test_png_round_trip_of_quantized_image(self, rng):
        img = quantize(rng.uniform(size=(3, 7, 9)))
        np.testing.assert_array_equal(png_bytes_to_image(image_to_png_bytes(img)), img)


class TestSynth:
    def test_counts_and_balance(self):
        ds = generate_datasets(TINY)
        assert set(ds) == {"barrel", "magazine", "receiver", "stock", "single"}
        for d in ds.values():
            for split in ("train", "validation", "test"):
                p, n = counts(d.split(split))
                assert p == n > 0
            d.check_no_leakage()

    def test_augmented_samples_stay_with_their_original_split(self):
        ds = generate_datasets(TINY, names=["barrel"])["barrel"]
        originals = {s.source_id for s in ds.train if s.origin == "original"}
        augmented = [s for s in ds.train if s.origin == "augmented"]
        assert augmented and all(s.source_id in originals for s in augmented)
        assert all(s.origin == "original" for s in ds.validation + ds.test)

    def test_whole_image_negatives_never_augmented(self):
        ds = generate_datasets(TINY, names=["single"])["single"]
        assert all(s.origin == "original" for s in ds.train if s.label == 0)
        assert any(s.origin == "augmented" for s in ds.train if s.label == 1)

    def test_other_part_share_in_negative_pool(self):
        pools, recipes = synth_generate(TINY)
        negs = [s for s in pools["magazine"] if s.label == 0]
        other = [s for s in negs if recipes[s.source_id][1][2] == "other"]
        assert len(other) / len(negs) >= 0.25

    def test_deterministic_pixels(self):
        a = generate_datasets(TINY, names=["stock"])["stock"]
        b = generate_datasets(TINY, names=["stock"])["stock"]
        for x, y in zip(a.train + a.test, b.train + b.test):
            assert x.image.tobytes() == y.image.tobytes()

    def test_seed_changes_pixels(self):
        a = render_scene(TINY, 1)[0]
        b = render_scene(TINY, 2)[0]
        assert not np.array_equal(a, b)

    def test_images_on_8bit_grid_and_sizes(self):
        ds = generate_datasets(TINY, names=["receiver", "single"])
        assert ds["receiver"].train[0].image.shape == (3, TINY.input_side, TINY.input_side)
        assert ds["single"].test[0].image.shape == (3, TINY.image_side, TINY.image_side)
        img = ds["receiver"].test[0].image
        np.testing.assert_array_equal(quantize(img), img)

    def test_whole_object_contains_all_four_parts(self):
        space = arrangement_space(TINY.image_side, TINY.part_scale)
        _, boxes = render_scene(TINY, 0, space[0])
        assert set(boxes) == {"barrel", "magazine", "receiver", "stock"}
        for x0, y0, x1, y1 in boxes.values():
            assert 0 <= x0 < x1 <= TINY.image_side and 0 <= y0 < y1 <= TINY.image_side

    def test_crop_kinds_render(self):
        for kind in ("positive", "clutter", "other"):
            img = render_part_crop(TINY, "barrel", kind, seed=4)
            assert img.shape == (3, 32, 32) and 0 <= img.min() and img.max() <= 1

    def test_capacity_error(self):
        big = replace(TINY, single_positive_pool=len(arrangement_space(64, TINY.part_scale)) + 1)
        with pytest.raises(GeneratorCapacityError):
            synth_generate(big)

    def test_bad_config_field_named(self):
        with pytest.raises(ConfigError) as exc:
            SynthConfig.from_dict({"image_sid": 64})
        assert exc.value.field == "image_sid"
        with pytest.raises(ConfigError) as exc:
            SynthConfig.from_dict({"clutter_density": "lots"})
        assert exc.value.field == "clutter_density"

    def test_config_json_round_trip(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(TINY.to_json())
        assert SynthConfig.from_file(path) == TINY
