"""Command-line entry point: ``pedk <command> [options]``.

A run directory (``--out``) holds ``data/`` (manifest and PNGs), ``models/``
(checkpoints, threshold sidecars) and ``reports/`` (CSV and JSON tables).
Exit codes: 0 ok, 1 usage, 2 data error, 3 invariant violation.
"""

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

import numpy as np
from PIL import Image

from pedk.data.dataset import load_image, manifest_meta, read_manifest, write_manifest
from pedk.data.synth import SynthConfig, generate_datasets
from pedk.ensemble import K_RULES, THETA_CHOICES, VoteConfig, aggregate, decide, image_statistic
from pedk.errors import ConfigError, DataError, InvariantViolation
from pedk.experiments import simulations as sims
from pedk.experiments.profiles import load_run_config, profile
from pedk.experiments.reports import json_text, pct, write_csv, write_json
from pedk.experiments.training import EvalReport, evaluate, fit_inputs
from pedk.nn import checkpoint
from pedk.patching import patch_grid
from pedk.zoo import PARTS

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3

log = logging.getLogger("pedk")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# -- configuration -----------------------------------------------------------------------


def resolve_config(args):
    if getattr(args, "config", None):
        cfg = load_run_config(args.config)
        cfg.seed = args.seed if args.seed is not None else cfg.seed
    else:
        cfg = profile(args.profile, seed=1 if args.seed is None else args.seed)
    if getattr(args, "synth_config", None):
        path = Path(args.synth_config)
        if not path.exists():
            raise FileNotFoundError(f"synth config not found: {path}")
        cfg.synth = SynthConfig.from_file(path)
    cfg.synth = replace(cfg.synth, seed=cfg.seed)
    for flag, key in (("window_ratio", "window_ratio"), ("step_ratio", "step_ratio"), ("patch_size", "patch_size")):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg, key, value)
    if getattr(args, "stat_mode", None):
        cfg.stat_mode = args.stat_mode
    if getattr(args, "epochs", None):
        cfg.train = replace(cfg.train, epochs=args.epochs)
    cfg.workers = args.workers if args.workers else sims.default_workers()
    try:
        patch_grid(cfg.synth.image_side, cfg.synth.image_side, cfg.window)
    except ValueError as exc:
        raise ConfigError("window", str(exc)) from exc
    return cfg


def adopt_data_config(cfg, data_dir):
    """Use the synth settings recorded with the data so input sizes agree."""
    meta = manifest_meta(data_dir)
    if "synth" in meta:
        cfg.synth = SynthConfig.from_dict(meta["synth"])
    return cfg


def write_run_config(directory, command, cfg, extra=None):
    doc = {"command": command, **cfg.to_dict(), **(extra or {})}
    return write_json(Path(directory) / f"run_config.{command}.json", doc)


class Layout:
    def __init__(self, args):
        self.out = Path(args.out)
        self.data = Path(getattr(args, "data", None) or self.out / "data")
        self.models = Path(getattr(args, "models", None) or self.out / "models")
        self.reports = Path(getattr(args, "reports", None) or self.out / "reports")


def emit(args, text_lines, doc):
    if args.json:
        sys.stdout.write(json_text(doc))
    else:
        for line in text_lines:
            print(line)


def table_lines(title, header, rows):
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    fmt = "  ".join(f"{{:>{w}}}" for w in widths)
    return [title, fmt.format(*header)] + [fmt.format(*map(str, r)) for r in rows]


# -- commands --------------------------------------------------------------------------


def cmd_synth(args):
    cfg = resolve_config(args)
    lay = Layout(args)
    t0 = time.perf_counter()
    datasets = generate_datasets(cfg.synth)
    write_manifest(lay.data, datasets, extra={"synth": json.loads(cfg.synth.to_json())})
    write_run_config(lay.data, "synth", cfg)
    counts = {name: ds.counts() for name, ds in datasets.items()}
    lines = [f"wrote {lay.data} in {time.perf_counter() - t0:.1f}s"]
    for name, c in counts.items():
        lines.append(f"{name:9s} " + "  ".join(f"{s}: {v['positive']}+/{v['negative']}-" for s, v in c.items()))
    emit(args, lines, {"data": str(lay.data), "counts": counts})
    return EXIT_OK


def _targets(args):
    targets = args.targets.split(",") if args.targets else list(sims.TARGETS)
    bad = [t for t in targets if t not in sims.TARGETS]
    if bad:
        raise ConfigError("targets", f"unknown target(s) {bad}; choose from {list(sims.TARGETS)}")
    return targets


def _load(lay, cfg, names):
    adopt_data_config(cfg, lay.data)
    return read_manifest(lay.data, names=names)


def cmd_train(args):
    cfg = resolve_config(args)
    lay = Layout(args)
    targets = _targets(args)
    archs = args.arch.split(",") if args.arch else None
    datasets = _load(lay, cfg, targets)
    lay.models.mkdir(parents=True, exist_ok=True)
    grid = sims.simulation1(datasets, cfg, lay.models, targets=targets, archs=archs)
    sims.write_simulation1(grid, lay.reports)
    write_json(lay.reports / "grid.json", grid.to_dict())
    write_run_config(lay.reports, "train", cfg, {"targets": targets, "archs": archs})
    lines = []
    for target, results in grid.rows.items():
        lines += table_lines(f"[{target}]", *sims.grid_table(results))
    lines += table_lines("[best models]", *sims.summary_table(grid))
    emit(args, lines, grid.to_dict())
    return EXIT_OK


def cmd_eval(args):
    cfg = resolve_config(args)
    lay = Layout(args)
    ckpt = Path(args.checkpoint) if args.checkpoint else sims.best_checkpoint_path(lay.models, args.dataset)
    net = checkpoint.load(ckpt)
    ds = _load(lay, cfg, [args.dataset])[args.dataset]
    report = evaluate(net, *ds.arrays(args.split))
    doc = {"checkpoint": str(ckpt), "dataset": args.dataset, "split": args.split, **report.to_dict()}
    write_json(lay.reports / f"eval_{args.dataset}_{args.split}.json", doc)
    write_run_config(lay.reports, "eval", cfg)
    emit(args, [f"{args.dataset}/{args.split}: TP {pct(report.tp_rate)}%  TN {pct(report.tn_rate)}%  "
                f"acc {pct(report.accuracy)}%"], doc)
    return EXIT_OK


def _part_networks(lay):
    return sims.load_networks(lay.models, [p.value for p in PARTS])


def cmd_thresholds(args):
    cfg = resolve_config(args)
    lay = Layout(args)
    nets = _part_networks(lay)
    single = _load(lay, cfg, [sims.SINGLE])[sims.SINGLE]
    ts = sims.simulation2(nets, single.arrays("validation"), cfg, lay.models)
    header, rows = sims.thresholds_table(ts)
    write_csv(lay.reports / "thresholds.csv", header, rows)
    write_run_config(lay.reports, "thresholds", cfg)
    emit(args, table_lines("[thresholds]", header, rows), {p: t.to_dict() for p, t in ts.items()})
    return EXIT_OK


def _best_summary(lay):
    path = lay.models / "best.json"
    if not path.exists():
        raise FileNotFoundError(f"training summary not found: {path} (run the 'train' command first)")
    return json.loads(path.read_text())


def _weights(summary):
    best = summary["runs"]["best"]
    missing = [p.value for p in PARTS if p.value not in best]
    if missing:
        raise DataError(f"training summary lacks part networks {missing}")
    return sims.vote_weights({p.value: Fraction(best[p.value]["run"]["best_val_acc"]) for p in PARTS})


def cmd_sweep(args):
    cfg = resolve_config(args)
    lay = Layout(args)
    thresholds = sims.load_thresholds(lay.models)
    nets = _part_networks(lay)
    weights = _weights(_best_summary(lay))
    single_path = sims.best_checkpoint_path(lay.models, sims.SINGLE)
    single_net = checkpoint.load(single_path) if single_path.exists() else None
    test = _load(lay, cfg, [sims.SINGLE])[sims.SINGLE].arrays("test")
    result = sims.simulation3(nets, thresholds, test, cfg, weights, single_net)
    header, rows = sims.sweep_table(result)
    write_csv(lay.reports / "sweep.csv", header, rows)
    wheader, wrows = sims.weighted_table(result)
    write_csv(lay.reports / "sweep_weighted.csv", wheader, wrows)
    write_json(lay.reports / "sweep.json", result.to_dict())
    write_run_config(lay.reports, "sweep", cfg)
    emit(args, table_lines("[rule x threshold: tp/tn/tot %]", header, rows)
         + table_lines("[weighted vote and single baseline]", wheader, wrows), result.to_dict())
    return EXIT_OK


def cmd_lowdata(args):
    cfg = resolve_config(args)
    lay = Layout(args)
    summary = _best_summary(lay)
    targets = [t for t in sims.TARGETS if t in summary["archs"]]
    datasets = _load(lay, cfg, targets)
    full = {t: EvalReport(**{k: summary["runs"]["best"][t]["test"][k] for k in ("tp", "tn", "n_pos", "n_neg")})
            for t in targets}
    result = sims.simulation4(datasets, summary["archs"], cfg, full_reports=full, targets=targets)
    header, rows = sims.lowdata_table(result)
    write_csv(lay.reports / "lowdata.csv", header, rows)
    write_csv(lay.reports / "lowdata_plot.csv", *sims.lowdata_plot(result))
    write_json(lay.reports / "lowdata.json", result.to_dict())
    write_run_config(lay.reports, "lowdata", cfg)
    doc = result.to_dict()
    if all(t in result.accuracy for t in sims.TARGETS) and 0.25 in result.fractions and 1.0 in result.fractions:
        doc["single_drop_exceeds_part_mean"] = bool(sims.single_drop_exceeds_components(result))
    emit(args, table_lines("[test accuracy % by training fraction]", header, rows), doc)
    return EXIT_OK


def heatmap_png(h, path):
    """Grayscale PNG of a heatmap scaled so its maximum is white."""
    h = np.asarray(h, dtype=np.float64)
    peak = h.max()
    img = np.zeros(h.shape, dtype=np.uint8) if peak <= 0 else np.round(255 * h / peak).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img, mode="L").save(path, format="PNG")
    return path


def cmd_detect(args):
    cfg = resolve_config(args)
    lay = Layout(args)
    image = load_image(args.image)
    if args.single:
        path = sims.best_checkpoint_path(lay.models, sims.SINGLE)
        net = checkpoint.load(path)
        prob = float(net.predict_proba(fit_inputs(image[None], net.meta["input_side"]))[0, 1])
        doc = {"image": str(args.image), "model": "single", "probability": round(prob, 6), "positive": prob >= 0.5}
        emit(args, [f"single network: p(weapon) = {prob:.4f} -> {'POSITIVE' if prob >= 0.5 else 'negative'}"], doc)
        return EXIT_OK
    thresholds = sims.load_thresholds(lay.models)
    nets = _part_networks(lay)
    grid = sims.image_grid([image], cfg)
    if args.rule == "weighted":
        vote = VoteConfig("weighted", _weights(_best_summary(lay)), cfg.vote_threshold)
    else:
        vote = VoteConfig(args.rule)
    per = {}
    decisions = []
    for part, net in nets.items():
        h = sims.heatmaps(net, [image], grid, net.meta["input_side"])[0]
        stat = image_statistic(h, cfg.stat_mode)
        ts = thresholds[part]
        d = bool(decide([stat], ts, args.theta)[0])
        decisions.append(d)
        per[part] = {"statistic": stat, "threshold": ts.get(args.theta), "positive": d,
                     "uncertain": ts.uncertain(stat)}
        if args.heatmaps:
            heatmap_png(h, Path(args.heatmaps) / f"{part}.png")
            write_json(Path(args.heatmaps) / f"{part}.json", h.astype(int).tolist())
            per[part]["heatmap"] = h.tolist()
    verdict = bool(aggregate(decisions, vote))
    uncertain = any(p["uncertain"] for p in per.values())
    doc = {"image": str(args.image), "rule": args.rule, "theta": args.theta, "positive": verdict,
           "uncertain": uncertain, "networks": per}
    lines = [f"{part:9s} stat {p['statistic']:8.3f}  theta {p['threshold']:8.3f}  "
             f"{'pos' if p['positive'] else 'neg'}{'  (uncertain)' if p['uncertain'] else ''}"
             for part, p in per.items()]
    lines.append(f"verdict ({args.rule}, {args.theta}): {'POSITIVE' if verdict else 'negative'}"
                 f"{'  [uncertain]' if uncertain else ''}")
    if not args.heatmaps:
        for p in doc["networks"].values():
            p.pop("heatmap", None)
    emit(args, lines, doc)
    return EXIT_OK


def cmd_repro_all(args):
    t0 = time.perf_counter()
    steps = (cmd_synth, cmd_train, cmd_thresholds, cmd_sweep, cmd_lowdata)
    quiet = argparse.Namespace(**{**vars(args), "json": False, "targets": None, "arch": None})
    for step in steps:
        log.info("repro-all: %s", step.__name__[4:])
        step(quiet)
    lay = Layout(args)
    cfg = resolve_config(args)
    report = {
        "config": cfg.to_dict(),
        "grid": json.loads((lay.reports / "grid.json").read_text()),
        "thresholds": {p.value: json.loads(sims.thresholds_path(lay.models, p.value).read_text()) for p in PARTS},
        "sweep": json.loads((lay.reports / "sweep.json").read_text()),
        "lowdata": json.loads((lay.reports / "lowdata.json").read_text()),
    }
    write_json(lay.reports / "report.json", report)
    write_run_config(lay.reports, "repro-all", cfg)
    emit(args, [f"repro-all finished in {time.perf_counter() - t0:.0f}s; reports in {lay.reports}"],
         {"reports": str(lay.reports), "seconds": round(time.perf_counter() - t0, 1)})
    return EXIT_OK


# -- parser -------------------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--profile", choices=("desk", "paper"), default="desk", help="scale defaults")
    common.add_argument("--config", help="RunConfig JSON overriding the profile")
    common.add_argument("--seed", type=int, default=None, help="master seed (default 1)")
    common.add_argument("--workers", type=int, default=None, help="concurrent training runs (default: cores)")
    common.add_argument("--json", action="store_true", help="machine-readable output on stdout")
    common.add_argument("--out", default="pedk-run", help="run directory")
    common.add_argument("--data", help="dataset directory (default OUT/data)")
    common.add_argument("--models", help="checkpoint directory (default OUT/models)")
    common.add_argument("--reports", help="report directory (default OUT/reports)")
    common.add_argument("--window-ratio", type=float, dest="window_ratio")
    common.add_argument("--step-ratio", type=float, dest="step_ratio")
    common.add_argument("--patch-size", type=int, dest="patch_size")
    common.add_argument("--stat-mode", choices=("max", "mean"), dest="stat_mode")
    common.add_argument("--epochs", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="pedk", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate the five synthetic datasets")
    p.add_argument("--synth-config", dest="synth_config", help="SynthConfig JSON")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="architecture grid with early stopping")
    p.add_argument("--targets", help="comma list of barrel,magazine,receiver,stock,single")
    p.add_argument("--arch", help="comma list of MxN architectures (default: the five-point grid)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="TP/TN of a checkpoint on a dataset split")
    p.add_argument("--dataset", required=True, choices=sims.TARGETS)
    p.add_argument("--checkpoint", help="default: the best checkpoint of the dataset's target")
    p.add_argument("--split", default="test", choices=("train", "validation", "test"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("thresholds", parents=[common], help="estimate theta_p, theta_n, theta_i per part network")
    p.set_defaults(func=cmd_thresholds)

    p = sub.add_parser("sweep", parents=[common], help="rule x threshold accuracy grid")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("lowdata", parents=[common], help="retrain best models on 25/50/75%% of the data")
    p.set_defaults(func=cmd_lowdata)

    p = sub.add_parser("detect", parents=[common], help="classify one PNG image")
    p.add_argument("image")
    p.add_argument("--rule", default="2_of_4", choices=K_RULES + ("weighted",))
    p.add_argument("--theta", default="theta_i", choices=THETA_CHOICES)
    p.add_argument("--single", action="store_true", help="use the whole-image network instead")
    p.add_argument("--heatmaps", help="directory for per-part heatmap PNGs")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("repro-all", parents=[common], help="synth, train, thresholds, sweep and lowdata")
    p.add_argument("--synth-config", dest="synth_config", help="SynthConfig JSON")
    p.set_defaults(func=cmd_repro_all)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"pedk: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"pedk: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantViolation as exc:
        print(f"pedk: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (DataError, FileNotFoundError, checkpoint.CheckpointError) as exc:
        print(f"pedk: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
