"""The four reproduction studies: architecture grid, thresholds, vote sweep, low data.

Every random choice is seeded from the run's master seed through
:func:`pedk.seeding.derive_seed`, keyed by what the draw is for, so results do
not depend on worker count or execution order.
"""

import json
import logging
import os
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from pedk.data.dataset import subsample_training
from pedk.ensemble import (
    K_RULES,
    THETA_CHOICES,
    ThresholdSet,
    VoteConfig,
    accuracy_weights,
    aggregate,
    decide,
    heatmap_from_decisions,
    image_statistic,
    thresholds_from_statistics,
)
from pedk.errors import DataError, InvariantViolation
from pedk.experiments.reports import pct, write_csv, write_json
from pedk.experiments.training import (
    EvalReport,
    evaluate,
    report_from_predictions,
    train_with_early_stopping,
)
from pedk.nn import checkpoint
from pedk.patching import extract_all, patch_grid
from pedk.seeding import derive_seed
from pedk.zoo import PARTS, ArchSpec, architecture_grid, build_network

log = logging.getLogger(__name__)

SINGLE = "single"
TARGETS = tuple(p.value for p in PARTS) + (SINGLE,)
DISPLAY = {"barrel": "Barrels", "magazine": "Magazines", "receiver": "Receivers", "stock": "Stocks", SINGLE: "Full"}


def role_of(target):
    return "single" if target == SINGLE else "component"


def default_workers():
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


# -- one training run ---------------------------------------------------------------


@dataclass
class TrainTask:
    target: str
    arch: str
    input_side: int
    train: tuple
    validation: tuple
    test: tuple
    train_config: object
    init_seed: int
    train_seed: int
    checkpoint_path: str = None


@dataclass
class RunResult:
    target: str
    arch: str
    run: object
    report: EvalReport
    checkpoint_path: str = None


def run_task(task):
    arch = ArchSpec.parse(task.arch, role_of(task.target))
    net = build_network(arch, task.input_side, seed=task.init_seed)
    run = train_with_early_stopping(net, task.train, task.validation, task.train_config,
                                    seed=task.train_seed, target=task.target, arch=task.arch)
    report = evaluate(net, *task.test)
    if task.checkpoint_path:
        checkpoint.save(net, task.checkpoint_path)
        run.checkpoint = str(task.checkpoint_path)
    log.info("trained %s %s: best epoch %d, val %.3f, test %.3f", task.target, task.arch,
             run.best_epoch, float(run.best_val_acc), float(report.accuracy))
    return RunResult(task.target, task.arch, run, report, task.checkpoint_path)


def run_tasks(tasks, workers=1):
    """Run independent training tasks, results in task order."""
    if workers <= 1 or len(tasks) <= 1:
        return [run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(run_task, tasks))


def run_seeds(master, target, arch):
    return derive_seed(master, "init", target, arch), derive_seed(master, "train", target, arch)


# -- simulation 1: architecture grid ------------------------------------------------


@dataclass
class GridResult:
    rows: dict  # target -> [RunResult] in grid order
    best: dict  # target -> RunResult

    def best_archs(self):
        return {t: r.arch for t, r in self.best.items()}

    def to_dict(self):
        return {
            "rows": {t: [_result_dict(r) for r in rs] for t, rs in self.rows.items()},
            "best": {t: _result_dict(r) for t, r in self.best.items()},
        }


def _result_dict(r):
    return {"target": r.target, "arch": r.arch, "run": r.run.to_dict(), "test": r.report.to_dict()}


def select_best(results):
    """Highest validation accuracy; ties go to the earlier grid row."""
    best = results[0]
    for r in results[1:]:
        if r.run.best_val_acc > best.run.best_val_acc:
            best = r
    return best


def checkpoint_path(models_dir, target, arch):
    return Path(models_dir) / target / f"{arch}.pedk"


def best_checkpoint_path(models_dir, target):
    return Path(models_dir) / f"{target}.pedk"


def simulation1(datasets, config, models_dir, targets=TARGETS, archs=None):
    """Train every (target, architecture) pair and keep the best per target."""
    archs = [a.label for a in architecture_grid()] if archs is None else list(archs)
    tasks = []
    for target in targets:
        if target not in datasets:
            raise DataError(f"dataset {target!r} missing")
        ds = datasets[target]
        data = ds.arrays("train"), ds.arrays("validation"), ds.arrays("test")
        for arch in archs:
            init_seed, train_seed = run_seeds(config.seed, target, arch)
            tasks.append(TrainTask(target, arch, config.input_side, *data, config.train, init_seed, train_seed,
                                   str(checkpoint_path(models_dir, target, arch))))
    results = run_tasks(tasks, config.workers)
    for r in results:
        # relative, so summaries do not depend on where the run directory lives
        r.run.checkpoint = f"{r.target}/{r.arch}.pedk"
    rows = {t: [r for r in results if r.target == t] for t in targets}
    best = {}
    for target, rs in rows.items():
        best[target] = select_best(rs)
        shutil.copyfile(best[target].checkpoint_path, best_checkpoint_path(models_dir, target))
    grid = GridResult(rows, best)
    write_best_summary(models_dir, grid)
    return grid


def write_best_summary(models_dir, grid):
    """Record best architectures in ``best.json``, keeping entries of targets not retrained."""
    path = Path(models_dir) / "best.json"
    doc = json.loads(path.read_text()) if path.exists() else {"archs": {}, "runs": {"rows": {}, "best": {}}}
    fresh = grid.to_dict()
    doc["archs"].update(grid.best_archs())
    doc["runs"]["rows"].update(fresh["rows"])
    doc["runs"]["best"].update(fresh["best"])
    order = {t: i for i, t in enumerate(TARGETS)}
    doc["archs"] = dict(sorted(doc["archs"].items(), key=lambda kv: order[kv[0]]))
    return write_json(path, doc)


def grid_table(results):
    header = ["arch", "epoch", "acc_val", "tp", "tn"]
    rows = [[r.arch, r.run.best_epoch, pct(r.run.best_val_acc), pct(r.report.tp_rate), pct(r.report.tn_rate)]
            for r in results]
    return header, rows


def summary_table(grid):
    header = ["network", "arch", "epoch", "acc_val", "tp", "tn", "acc_test"]
    rows = []
    for target, r in grid.best.items():
        rows.append([DISPLAY[target], r.arch, r.run.best_epoch, pct(r.run.best_val_acc),
                     pct(r.report.tp_rate), pct(r.report.tn_rate), pct(r.report.accuracy)])
    return header, rows


def write_simulation1(grid, reports_dir):
    paths = []
    for target, results in grid.rows.items():
        paths.append(write_csv(Path(reports_dir) / f"grid_{target}.csv", *grid_table(results)))
    paths.append(write_csv(Path(reports_dir) / "best_models.csv", *summary_table(grid)))
    return paths


# -- heatmap statistics ---------------------------------------------------------------


def heatmaps(network, images, grid, input_side, batch_size=512):
    """Heatmap of every image, classifying all patches of several images per batch."""
    out = []
    per_image = len(grid.rects)
    chunk = max(1, batch_size // per_image)
    for i in range(0, len(images), chunk):
        block = images[i:i + chunk]
        patches = np.concatenate([extract_all(im, grid, input_side) for im in block])
        positive = network.predict(patches, batch_size=batch_size) == 1
        for j in range(len(block)):
            out.append(heatmap_from_decisions(grid, positive[j * per_image:(j + 1) * per_image]))
    return out


def image_grid(images, config):
    shapes = {tuple(np.shape(im)[1:]) for im in images}
    if len(shapes) != 1:
        raise DataError(f"images of mixed sizes {sorted(shapes)}")
    P, Q = shapes.pop()
    return patch_grid(P, Q, config.window)


def statistics(network, images, config):
    grid = image_grid(images, config)
    return np.array([image_statistic(h, config.stat_mode)
                     for h in heatmaps(network, images, grid, config.input_side)])


# -- simulation 2: thresholds ---------------------------------------------------------


def thresholds_path(models_dir, part):
    return Path(models_dir) / f"{part}.thresholds.json"


def simulation2(part_networks, validation, config, models_dir=None):
    """Thresholds of each part network from whole-image validation images.

    Only the whole-object label of each image is used.
    """
    x, y = validation
    pos, neg = x[y == 1], x[y == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise DataError("threshold estimation needs positive and negative validation images")
    out = {}
    for part in (p.value for p in PARTS):
        net = part_networks[part]
        ts = thresholds_from_statistics(statistics(net, pos, config), statistics(net, neg, config),
                                        config.stat_mode)
        if len(pos) == len(neg) and abs(ts.theta_i - (ts.theta_p + ts.theta_n) / 2) > 1e-9:
            raise InvariantViolation(f"{part}: theta_i is not the midpoint on a balanced set")
        out[part] = ts
        if models_dir is not None:
            ts.save(thresholds_path(models_dir, part))
    return out


def load_thresholds(models_dir):
    return {p.value: ThresholdSet.load(thresholds_path(models_dir, p.value)) for p in PARTS}


def thresholds_table(thresholds):
    header = ["network", "theta_p", "theta_n", "theta_i"]
    rows = [[DISPLAY[p], f"{t.theta_p:.3f}", f"{t.theta_n:.3f}", f"{t.theta_i:.3f}"] for p, t in thresholds.items()]
    return header, rows


# -- simulation 3: rule x threshold sweep ---------------------------------------------


@dataclass
class SweepResult:
    grid: dict  # rule -> column -> EvalReport
    weighted: dict  # column -> EvalReport
    weights: tuple
    single: EvalReport = None
    checked_column_pairs: list = field(default_factory=list)

    def to_dict(self):
        return {
            "grid": {r: {c: rep.to_dict() for c, rep in cols.items()} for r, cols in self.grid.items()},
            "weighted": {c: rep.to_dict() for c, rep in self.weighted.items()},
            "weights": list(self.weights),
            "single": self.single.to_dict() if self.single else None,
            "checked_column_pairs": [list(p) for p in self.checked_column_pairs],
        }


def effective_threshold(thresholds, choice):
    """Threshold a column really applies: decisions need ``s > 0`` and ``s >= theta``."""
    return 0.0 if choice == "zero" else thresholds.get(choice)


def ordered_column_pairs(thresholds):
    """Column pairs (a, b) whose thresholds satisfy a <= b for every network."""
    pairs = []
    for i, a in enumerate(THETA_CHOICES):
        for b in THETA_CHOICES[i + 1:]:
            if all(effective_threshold(t, a) <= effective_threshold(t, b) for t in thresholds.values()):
                pairs.append((a, b))
    return pairs


def check_sweep(result):
    """Raise :class:`InvariantViolation` unless TP falls and TN rises with stricter settings."""
    problems = []
    for col in THETA_CHOICES:
        for lo, hi in zip(K_RULES, K_RULES[1:]):
            a, b = result.grid[lo][col], result.grid[hi][col]
            if b.tp > a.tp or b.tn < a.tn:
                problems.append(f"column {col}: {lo} -> {hi}")
    for rule in list(K_RULES):
        for a, b in result.checked_column_pairs:
            ra, rb = result.grid[rule][a], result.grid[rule][b]
            if rb.tp > ra.tp or rb.tn < ra.tn:
                problems.append(f"row {rule}: {a} -> {b}")
    if problems:
        raise InvariantViolation("sweep monotonicity violated: " + "; ".join(problems))


def sweep_from_statistics(stats, labels, thresholds, weights, vote_threshold=0.5):
    """Evaluate every rule and column given per-part statistics (each an array over images)."""
    parts = [p.value for p in PARTS]
    grid = {rule: {} for rule in K_RULES}
    weighted = {}
    wcfg = VoteConfig("weighted", weights, vote_threshold)
    for col in THETA_CHOICES:
        d = np.stack([decide(stats[p], thresholds[p], col) for p in parts], axis=1)
        for rule in K_RULES:
            grid[rule][col] = report_from_predictions(aggregate(d, VoteConfig(rule)), labels)
        weighted[col] = report_from_predictions(aggregate(d, wcfg), labels)
    result = SweepResult(grid, weighted, wcfg.weights, checked_column_pairs=ordered_column_pairs(thresholds))
    check_sweep(result)
    return result


def simulation3(part_networks, thresholds, test, config, weights, single_network=None):
    """Rule x threshold accuracy grid on whole-image test data, plus the weighted vote and baseline."""
    x, y = test
    stats = {p: statistics(part_networks[p], x, config) for p in part_networks}
    result = sweep_from_statistics(stats, y, thresholds, weights, config.vote_threshold)
    if single_network is not None:
        result.single = evaluate(single_network, x, y)
    return result


def sweep_table(result):
    header = ["rule"] + [f"{c}_{m}" for c in THETA_CHOICES for m in ("tp", "tn", "tot")]
    rows = []
    for rule in K_RULES:
        row = [rule]
        for col in THETA_CHOICES:
            rep = result.grid[rule][col]
            row += [pct(rep.tp_rate), pct(rep.tn_rate), pct(rep.accuracy)]
        rows.append(row)
    return header, rows


def weighted_table(result):
    header = ["rule"] + [f"{c}_{m}" for c in THETA_CHOICES for m in ("tp", "tn", "tot")]
    row = ["weighted"]
    for col in THETA_CHOICES:
        rep = result.weighted[col]
        row += [pct(rep.tp_rate), pct(rep.tn_rate), pct(rep.accuracy)]
    rows = [row]
    if result.single is not None:
        s = result.single
        rows.append(["single_baseline"] + [pct(s.tp_rate), pct(s.tn_rate), pct(s.accuracy)] * len(THETA_CHOICES))
    return header, rows


# -- simulation 4: low data -------------------------------------------------------------


@dataclass
class LowDataResult:
    fractions: tuple
    accuracy: dict  # target -> fraction -> Fraction
    runs: dict = field(default_factory=dict)  # target -> fraction -> RunResult

    def drop(self, target, low=0.25, high=1.0):
        return self.accuracy[target][high] - self.accuracy[target][low]

    def to_dict(self):
        return {
            "fractions": list(self.fractions),
            "accuracy": {t: {str(f): str(a) for f, a in accs.items()} for t, accs in self.accuracy.items()},
        }


def simulation4(datasets, best_archs, config, full_reports=None, targets=TARGETS):
    """Retrain each target's best architecture on stratified subsets of its training split.

    Subset runs reuse the initialisation and shuffling seeds of the full run, so
    the 100% column is the full run itself; pass ``full_reports`` (target ->
    EvalReport) to reuse it instead of retraining.
    """
    fractions = tuple(sorted(config.fractions))
    tasks, keys = [], []
    accuracy = {t: {} for t in targets}
    for target in targets:
        arch = best_archs[target]
        init_seed, train_seed = run_seeds(config.seed, target, arch)
        ds = datasets[target]
        for frac in fractions:
            if frac == 1.0 and full_reports and target in full_reports:
                accuracy[target][frac] = full_reports[target].accuracy
                continue
            sub = subsample_training(ds, frac, seed=derive_seed(config.seed, "subsample", target, frac))
            tasks.append(TrainTask(target, arch, config.input_side, sub.arrays("train"), ds.arrays("validation"),
                                   ds.arrays("test"), config.train, init_seed, train_seed))
            keys.append((target, frac))
    runs = {t: {} for t in targets}
    for (target, frac), res in zip(keys, run_tasks(tasks, config.workers)):
        accuracy[target][frac] = res.report.accuracy
        runs[target][frac] = res
    accuracy = {t: dict(sorted(a.items())) for t, a in accuracy.items()}
    return LowDataResult(fractions, accuracy, runs)


def lowdata_table(result):
    header = ["network"] + [f"{round(f * 100)}%" for f in result.fractions]
    rows = [[DISPLAY[t]] + [pct(accs[f]) for f in result.fractions] for t, accs in result.accuracy.items()]
    return header, rows


def lowdata_plot(result):
    header = ["fraction", "model", "accuracy"]
    rows = [[f"{f:.2f}", t, pct(accs[f])] for t, accs in result.accuracy.items() for f in result.fractions]
    return header, rows


def single_drop_exceeds_components(result, low=0.25, high=1.0):
    """Whether the whole-image network loses more accuracy than the part networks do on average."""
    parts = [p.value for p in PARTS]
    mean_parts = sum((result.drop(p, low, high) for p in parts), Fraction(0)) / len(parts)
    return result.drop(SINGLE, low, high) > mean_parts


def vote_weights(grid_or_accs):
    """Accuracy-proportional vote weights from validation accuracies of the best part networks."""
    if isinstance(grid_or_accs, GridResult):
        accs = [float(grid_or_accs.best[p.value].run.best_val_acc) for p in PARTS]
    else:
        accs = [float(grid_or_accs[p.value]) for p in PARTS]
    return accuracy_weights(accs)


def load_networks(models_dir, targets):
    return {t: checkpoint.load(best_checkpoint_path(models_dir, t)) for t in targets}
