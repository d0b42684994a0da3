"""Cross-validation over held-out participants (E1) or held-out tasks (E2).

Each fold trains every model on its training split and scores held-out pre-
and post-observation trust with mean Bernoulli NLL and MAE. Fold scores are
also reported relative to the best model on that fold (difference from best),
which removes the large fold-to-fold variation in difficulty.
"""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import POST, PRE, Dataset, ParticipantRecord, TrialBatch, build_batch
from .models import ModelSpec
from .training import TrainConfig, bernoulli_nll, predict, train

log = logging.getLogger(__name__)

METRICS = ("nll", "mae")


@dataclass(frozen=True)
class FoldSpec:
    fold_id: int
    experiment: str  # "E1" or "E2"
    train_ids: tuple
    test_ids: tuple
    degenerate: bool = False
    note: str = ""


def make_folds_e1(dataset: Dataset, seed=0, n_folds=10) -> list[FoldSpec]:
    """Shuffle participants and partition them as evenly as possible into test sets."""
    ids = dataset.participant_ids
    if len(ids) < n_folds:
        raise ValueError(f"E1 needs at least {n_folds} participants, got {len(ids)}")
    order = np.random.default_rng([seed, 3]).permutation(len(ids))
    folds = []
    for i, chunk in enumerate(np.array_split(order, n_folds)):
        test = tuple(ids[j] for j in sorted(chunk))
        train_ids = tuple(p for p in ids if p not in test)
        folds.append(FoldSpec(i, "E1", train_ids, test))
    return folds


def make_folds_e2(dataset: Dataset) -> list[FoldSpec]:
    """One fold per task; every trust score on that task is held out."""
    tasks = list(dataset.task_ids)
    for t in dataset.catalog:
        if t.id not in tasks:
            tasks.append(t.id)
    tested = {e.task for r in dataset.records for e in r.tested}
    folds = []
    for i, task in enumerate(tasks):
        others = tuple(t for t in tasks if t != task)
        note = ""
        if not others:
            note = "no training targets remain"
        elif task not in tested:
            note = "task never tested; empty test set"
        folds.append(FoldSpec(i, "E2", others, (task,), bool(note), note))
    return folds


def nll(predictions, targets) -> float:
    predictions, targets = np.asarray(predictions, dtype=np.float64), np.asarray(targets, dtype=np.float64)
    if predictions.size == 0:
        raise ValueError("nll of an empty set")
    return float(np.mean(bernoulli_nll(predictions, targets)))


def mae(predictions, targets) -> float:
    predictions, targets = np.asarray(predictions, dtype=np.float64), np.asarray(targets, dtype=np.float64)
    if predictions.size == 0:
        raise ValueError("mae of an empty set")
    return float(np.mean(np.abs(predictions - targets)))


def dfb(scores: dict) -> dict:
    """Per fold, subtract the best (lowest) score among models."""
    models = None
    out = {}
    for fold, per_model in scores.items():
        if models is None:
            models = set(per_model)
        elif set(per_model) != models:
            raise ValueError(f"fold {fold!r} scores models {sorted(per_model)}, expected {sorted(models)}")
        best = min(per_model.values())
        out[fold] = {m: v - best for m, v in per_model.items()}
    return out


def trust_distance(record: ParticipantRecord, task_a: str, task_b: str, time: int) -> int:
    """Absolute difference between two tasks' raw scores at the same time."""
    return abs(record.score(task_a, time) - record.score(task_b, time))


def trust_change(record: ParticipantRecord, task: str, t1: int, t2: int) -> int:
    return abs(record.score(task, t1) - record.score(task, t2))


def fold_masks(batch: TrialBatch, dataset: Dataset, fold: FoldSpec):
    """Return (training participant indices, training target mask, test target mask)."""
    ids = dataset.participant_ids
    evaluated = (batch.tgt_kind == PRE) | (batch.tgt_kind == POST)
    if fold.experiment == "E1":
        test_rows = np.array([p in fold.test_ids for p in ids])
        train_rows = np.flatnonzero(~test_rows)
        train_mask = np.ones(batch.tgt_y.shape)
        test_mask = evaluated & test_rows[:, None]
    elif fold.experiment == "E2":
        held = np.array([t in fold.test_ids for t in batch.task_ids])
        on_held = held[batch.tgt_task] if held.size else np.zeros(batch.tgt_task.shape, dtype=bool)
        train_rows = np.arange(len(ids))
        train_mask = (~on_held).astype(np.float64)
        test_mask = evaluated & on_held
    else:
        raise ValueError(f"unknown experiment {fold.experiment!r}")
    return train_rows, train_mask, test_mask


@dataclass
class MetricsReport:
    experiment: str
    models: list
    rows: list = field(default_factory=list)  # dicts: fold_id, model, n_test, nll, mae, nll_dfb, mae_dfb
    skipped: list = field(default_factory=list)  # (fold_id, reason)

    def fold_scores(self, metric):
        scores: dict = {}
        for r in self.rows:
            scores.setdefault(r["fold_id"], {})[r["model"]] = r[metric]
        return scores

    def summary(self) -> dict:
        """Per model: mean and standard error over folds for each metric and its DfB."""
        out = {}
        for m in self.models:
            rows = [r for r in self.rows if r["model"] == m]
            entry = {}
            for key in ("nll", "mae", "nll_dfb", "mae_dfb"):
                vals = np.array([r[key] for r in rows])
                entry[key] = float(vals.mean()) if len(vals) else float("nan")
                entry[key + "_se"] = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
            out[m] = entry
        return out

    def write(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_summary(self.summary(), out_dir / "metrics.csv")
        write_detail(self.rows, out_dir / "folds.csv")
        return out_dir / "metrics.csv", out_dir / "folds.csv"


SUMMARY_COLUMNS = ("nll", "nll_se", "mae", "mae_se", "nll_dfb", "nll_dfb_se", "mae_dfb", "mae_dfb_se")
DETAIL_COLUMNS = ("fold_id", "experiment", "model", "n_test", "nll", "mae", "nll_dfb", "mae_dfb")


def write_summary(summary: dict, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("model",) + SUMMARY_COLUMNS)
        for model, entry in summary.items():
            w.writerow([model] + [repr(entry[c]) for c in SUMMARY_COLUMNS])


def write_detail(rows, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DETAIL_COLUMNS)
        for r in rows:
            w.writerow([r[c] if isinstance(r[c], (int, str)) else repr(r[c]) for c in DETAIL_COLUMNS])


def read_detail(path) -> MetricsReport:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no fold rows")
    models = list(dict.fromkeys(r["model"] for r in rows))
    parsed = [
        {"fold_id": int(r["fold_id"]), "experiment": r["experiment"], "model": r["model"],
         "n_test": int(r["n_test"]), "nll": float(r["nll"]), "mae": float(r["mae"]),
         "nll_dfb": float(r["nll_dfb"]), "mae_dfb": float(r["mae_dfb"])}
        for r in rows
    ]
    report = MetricsReport(parsed[0]["experiment"], models, parsed)
    _fill_dfb(report)
    return report


def _fill_dfb(report: MetricsReport):
    for metric in METRICS:
        rel = dfb(report.fold_scores(metric))
        for r in report.rows:
            r[metric + "_dfb"] = rel[r["fold_id"]][r["model"]]


def evaluate_fold(spec: ModelSpec, batch: TrialBatch, dataset: Dataset, fold: FoldSpec, cfg: TrainConfig):
    train_rows, train_mask, test_mask = fold_masks(batch, dataset, fold)
    result = train(spec, batch, cfg, participants=train_rows, target_mask=train_mask)
    preds = predict(spec, result.params, batch)
    p, y = preds[test_mask], batch.tgt_y[test_mask]
    return {"nll": nll(p, y), "mae": mae(p, y), "n_test": int(test_mask.sum())}


def _fold_config(cfg: TrainConfig, fold: FoldSpec) -> TrainConfig:
    return replace(cfg, seed=cfg.seed * 1000 + fold.fold_id)


def _run_fold(models, dataset, fold, cfg):
    batch = build_batch(dataset)
    fold_cfg = _fold_config(cfg, fold)
    out = []
    for spec in models:
        try:
            scores = evaluate_fold(spec, batch, dataset, fold, fold_cfg)
        except Exception as exc:
            raise RuntimeError(f"fold {fold.fold_id} ({fold.experiment}), model {spec.name}: {exc}") from exc
        out.append({"fold_id": fold.fold_id, "experiment": fold.experiment, "model": spec.name, **scores})
    return out


def run_experiment(models, dataset: Dataset, folds, cfg: TrainConfig = TrainConfig(), jobs=1) -> MetricsReport:
    """Train and score every model on every non-degenerate fold."""
    specs = [m if isinstance(m, ModelSpec) else ModelSpec(m) for m in models]
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate model names {names}")
    experiment = folds[0].experiment if folds else "E1"
    report = MetricsReport(experiment, names)
    usable = []
    for fold in folds:
        if fold.degenerate:
            warnings.warn(f"skipping degenerate fold {fold.fold_id}: {fold.note}")
            report.skipped.append((fold.fold_id, fold.note))
        else:
            usable.append(fold)
    if jobs > 1 and len(usable) > 1:
        import multiprocessing
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs, mp_context=multiprocessing.get_context("spawn")) as pool:
            results = list(pool.map(_run_fold, [specs] * len(usable), [dataset] * len(usable), usable,
                                    [cfg] * len(usable)))
    else:
        results = [_run_fold(specs, dataset, fold, cfg) for fold in usable]
    for rows in results:
        report.rows.extend(rows)
    _fill_dfb(report)
    return report
