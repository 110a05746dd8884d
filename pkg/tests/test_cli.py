"""Command-line entry point: exit codes, messages and end-to-end artefacts."""

import json

import numpy as np
import pytest
from PIL import Image

from pedk import cli
from pedk.errors import InvariantViolation


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def blank_png(path, side=64):
    Image.fromarray(np.zeros((side, side, 3), dtype=np.uint8)).save(path)
    return path


class TestUsage:
    def test_unknown_command(self, capsys):
        code, _, err = run(capsys, "frobnicate")
        assert code == cli.EXIT_USAGE and "invalid choice" in err

    def test_missing_required_argument(self, capsys):
        code, _, err = run(capsys, "eval")
        assert code == cli.EXIT_USAGE and "--dataset" in err

    def test_bad_config_field_named(self, capsys, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"train": {"epochz": 2}}))
        code, _, err = run(capsys, "synth", "--config", cfg, "--out", tmp_path / "o")
        assert code == cli.EXIT_USAGE and "train.epochz" in err

    def test_window_too_small(self, capsys, tmp_path):
        code, _, err = run(capsys, "synth", "--window-ratio", "0.01", "--out", tmp_path / "o")
        assert code == cli.EXIT_USAGE and "window" in err

    def test_help(self, capsys):
        code, out, _ = run(capsys, "--help")
        assert code == 0 and "repro-all" in out


class TestDataErrors:
    def test_train_without_data_names_manifest(self, capsys, tmp_path):
        code, _, err = run(capsys, "train", "--out", tmp_path)
        assert code == cli.EXIT_DATA and "manifest" in err and str(tmp_path) in err

    def test_eval_missing_checkpoint_names_path(self, capsys, tiny_run, tmp_path):
        missing = tmp_path / "nope.pedk"
        code, _, err = run(capsys, "eval", "--out", tiny_run, "--dataset", "barrel", "--checkpoint", missing)
        assert code == cli.EXIT_DATA and str(missing) in err

    def test_corrupt_checkpoint(self, capsys, tiny_run, tmp_path):
        bad = tmp_path / "bad.pedk"
        bad.write_bytes(b"PEDK\x01")
        code, _, err = run(capsys, "eval", "--out", tiny_run, "--dataset", "barrel", "--checkpoint", bad)
        assert code == cli.EXIT_DATA and "truncated" in err

    def test_missing_thresholds_points_to_command(self, capsys, tiny_run, tmp_path):
        blank = blank_png(tmp_path / "b.png")
        code, _, err = run(capsys, "detect", blank, "--out", tiny_run, "--models", tmp_path)
        assert code == cli.EXIT_DATA and "thresholds" in err

    def test_invariant_exit_code(self, capsys, tiny_run, monkeypatch, tmp_path):
        def broken(*a, **k):
            raise InvariantViolation("sweep monotonicity failed")

        monkeypatch.setattr(cli.sims, "simulation3", broken)
        code, _, err = run(capsys, "sweep", "--out", tiny_run, "--reports", tmp_path)
        assert code == cli.EXIT_INVARIANT and "monotonicity" in err


class TestEndToEnd:
    def test_layout(self, tiny_run):
        models = tiny_run / "models"
        assert len(list(models.glob("*/*.pedk"))) == 25
        assert {p.stem for p in models.glob("*.pedk")} == {"barrel", "magazine", "receiver", "stock", "single"}
        best = json.loads((models / "best.json").read_text())
        assert set(best["archs"]) == {"barrel", "magazine", "receiver", "stock", "single"}
        reports = tiny_run / "reports"
        for name in ("sweep.csv", "sweep_weighted.csv", "thresholds.csv", "lowdata.csv", "report.json",
                     "best_models.csv", "run_config.repro-all.json"):
            assert (reports / name).exists(), name

    def test_table_shapes(self, tiny_run):
        from pedk.experiments.reports import read_csv

        header, rows = read_csv(tiny_run / "reports" / "sweep.csv")
        assert len(rows) == 4 and len(header) == 13
        header, rows = read_csv(tiny_run / "reports" / "lowdata.csv")
        assert len(rows) == 5 and header[1:] == ["25%", "50%", "75%", "100%"]
        header, rows = read_csv(tiny_run / "reports" / "thresholds.csv")
        assert len(rows) == 4 and header == ["network", "theta_p", "theta_n", "theta_i"]

    def test_thresholds_midpoint_in_sidecars(self, tiny_run):
        for part in ("barrel", "magazine", "receiver", "stock"):
            t = json.loads((tiny_run / "models" / f"{part}.thresholds.json").read_text())
            assert abs(t["theta_i"] - (t["theta_p"] + t["theta_n"]) / 2) <= 1e-9

    def test_eval_json(self, capsys, tiny_run):
        code, out, _ = run(capsys, "eval", "--out", tiny_run, "--dataset", "stock", "--split", "validation", "--json")
        doc = json.loads(out)
        assert code == 0 and doc["n_pos"] == doc["n_neg"] == 6

    def test_detect_blank_image_is_negative(self, capsys, tiny_run, tmp_path):
        blank = blank_png(tmp_path / "blank.png")
        code, out, _ = run(capsys, "detect", blank, "--out", tiny_run, "--theta", "zero", "--json",
                           "--heatmaps", tmp_path / "hm")
        doc = json.loads(out)
        assert code == 0 and set(doc["networks"]) == {"barrel", "magazine", "receiver", "stock"}
        for part, info in doc["networks"].items():
            h = np.array(json.loads((tmp_path / "hm" / f"{part}.json").read_text()))
            assert h.shape == (64, 64) and (tmp_path / "hm" / f"{part}.png").exists()
            assert info["positive"] == (h.max() > 0)

    def test_detect_single_prints_probability(self, capsys, tiny_run, tmp_path):
        blank = blank_png(tmp_path / "blank.png")
        code, out, _ = run(capsys, "detect", blank, "--out", tiny_run, "--single")
        assert code == 0 and "p(weapon)" in out

    def test_weighted_rule(self, capsys, tiny_run, tmp_path):
        blank = blank_png(tmp_path / "blank.png")
        code, out, _ = run(capsys, "detect", blank, "--out", tiny_run, "--rule", "weighted", "--json")
        assert code == 0 and json.loads(out)["rule"] == "weighted"
