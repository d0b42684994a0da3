"""Study-format trust data, Likert normalization and a synthetic participant generator.

Dataset file layout (UTF-8 CSV, one participant per row)::

    # trusttransfer-dataset v1
    participant_id,domain,obs1_task,obs1_outcome,obs1_score,...,test1_task,test1_pre,test1_post,...,grouping

``obs{j}_outcome`` is ``+1`` or ``-1``; scores are integers on the 1-7 Likert
scale. ``obs{j}_score`` is the trust reported for the observed task right after
observation ``j``. ``grouping`` is optional: ``task=category/difficulty``
entries joined by ``;`` giving the participant's own cell assignment.

The synthetic generator plants a 2-d task space (see ``SyntheticConfig``):

* group ``g`` is centred at ``(g * group_separation, 0)``; easy tasks sit at
  ``+difficulty_offset`` on the second axis and difficult ones at
  ``-difficulty_offset``, each jittered by ``N(0, position_jitter^2)``;
* features are ``A @ position + N(0, feature_noise^2)`` for one fixed random
  ``d x 2`` lift ``A`` with ``N(0, 1/2)`` entries;
* participant ``p`` starts with logit competence
  ``a_p + difficulty_effect * position[1]``, ``a_p ~ N(disposition_mean, disposition_sd^2)``;
* observing task ``o`` with outcome ``c`` shifts task ``i`` by
  ``c * (local_shift * w_io * (1 + asymmetry * tanh(c * (y_i - y_o) / difficulty_offset)) + global_shift)``
  with ``w_io = exp(-|u_i - u_o|^2 / (2 transfer_lengthscale^2))``, so a success
  moves easier tasks more and a failure moves harder tasks more;
* a reported score is ``clip(round(1 + 6 sigmoid(competence + eps)), 1, 7)``
  with ``eps ~ N(0, noise^2)``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .features import TaskDescriptor
from .gp import Observation

FORMAT_HEADER = "# trusttransfer-dataset v1"
LIKERT_MIN, LIKERT_MAX = 1, 7
TARGET_CLIP = (0.01, 0.99)

# target kinds in a TrialBatch
PRE, OBSERVED, POST = 0, 1, 2


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class ObservedEntry:
    task: str
    outcome: int
    score: int


@dataclass(frozen=True)
class TestedEntry:
    task: str
    pre: int
    post: int


@dataclass(frozen=True)
class ParticipantRecord:
    participant_id: str
    domain: str
    observed: tuple
    tested: tuple
    grouping: dict = field(default_factory=dict)  # task -> (category, difficulty)

    def score(self, task: str, time: int) -> int:
        """Raw Likert score for ``task`` after ``time`` observations."""
        n_obs = len(self.observed)
        for entry in self.tested:
            if entry.task == task:
                if time == 0:
                    return entry.pre
                if time == n_obs:
                    return entry.post
        for j, entry in enumerate(self.observed):
            if entry.task == task and time == j + 1:
                return entry.score
        raise DatasetError(f"participant {self.participant_id}: no score for task {task!r} at time {time}")


@dataclass
class Dataset:
    records: list
    features: dict = field(default_factory=dict)  # task id -> np.ndarray
    catalog: list = field(default_factory=list)  # of TaskDescriptor

    def __len__(self):
        return len(self.records)

    @property
    def task_ids(self) -> list[str]:
        """Every task referenced by a record, in first-appearance order."""
        seen = {}
        for rec in self.records:
            for e in rec.observed:
                seen.setdefault(e.task)
            for e in rec.tested:
                seen.setdefault(e.task)
        return list(seen)

    @property
    def participant_ids(self) -> list[str]:
        return [r.participant_id for r in self.records]


def normalize_likert(score) -> float:
    if int(score) != score or not LIKERT_MIN <= score <= LIKERT_MAX:
        raise DatasetError(f"Likert score must be an integer in [1, 7], got {score!r}")
    return float(np.clip((score - 1) / 6.0, *TARGET_CLIP))


def _check_score(value, where):
    if isinstance(value, bool) or int(value) != value or not LIKERT_MIN <= value <= LIKERT_MAX:
        raise DatasetError(f"{where}: score {value!r} outside the 1-7 Likert scale")


def validate_record(rec: ParticipantRecord, where="record"):
    if not rec.observed:
        raise DatasetError(f"{where}: no observed tasks")
    if not rec.tested:
        raise DatasetError(f"{where}: no tested tasks")
    outcomes = {e.outcome for e in rec.observed}
    if not outcomes <= {1, -1}:
        raise DatasetError(f"{where}: outcomes must be +1 or -1, got {sorted(outcomes)}")
    if len(outcomes) != 1:
        raise DatasetError(f"{where}: observed outcomes must be all successes or all failures")
    for e in rec.observed:
        _check_score(e.score, where)
    for e in rec.tested:
        _check_score(e.pre, where)
        _check_score(e.post, where)
    tested = [e.task for e in rec.tested]
    if len(set(tested)) != len(tested):
        raise DatasetError(f"{where}: tested tasks repeat")
    if set(tested) & {e.task for e in rec.observed}:
        raise DatasetError(f"{where}: a tested task was also observed")
    if rec.grouping:
        cells = {rec.grouping.get(e.task) for e in rec.observed}
        if None in cells:
            raise DatasetError(f"{where}: grouping does not cover the observed tasks")
        if len(cells) != 1:
            raise DatasetError(f"{where}: observed tasks fall in different cells")
        tested_cells = [rec.grouping.get(t) for t in tested]
        if None in tested_cells:
            raise DatasetError(f"{where}: grouping does not cover the tested tasks")
        if len(set(tested_cells)) != len(tested_cells):
            raise DatasetError(f"{where}: tested tasks must come from distinct cells")


def validate_dataset(ds: Dataset):
    shapes = {(len(r.observed), len(r.tested)) for r in ds.records}
    if len(shapes) > 1:
        raise DatasetError(f"records disagree on observed/tested counts: {sorted(shapes)}")
    ids = ds.participant_ids
    if len(set(ids)) != len(ids):
        raise DatasetError("duplicate participant ids")
    for i, rec in enumerate(ds.records):
        validate_record(rec, f"record {i}")
    if ds.features:
        missing = [t for t in ds.task_ids if t not in ds.features]
        if missing:
            raise DatasetError(f"no features for tasks {missing}")
        dims = {np.shape(v) for v in ds.features.values()}
        if len(dims) != 1:
            raise DatasetError(f"features have mixed shapes {sorted(dims)}")


def _outcome_text(c):
    return "+1" if c > 0 else "-1"


def _columns(n_obs, n_test):
    cols = ["participant_id", "domain"]
    for j in range(1, n_obs + 1):
        cols += [f"obs{j}_task", f"obs{j}_outcome", f"obs{j}_score"]
    for j in range(1, n_test + 1):
        cols += [f"test{j}_task", f"test{j}_pre", f"test{j}_post"]
    return cols + ["grouping"]


def dumps_dataset(ds: Dataset) -> str:
    buf = io.StringIO()
    buf.write(FORMAT_HEADER + "\n")
    n_obs = len(ds.records[0].observed) if ds.records else 2
    n_test = len(ds.records[0].tested) if ds.records else 3
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_columns(n_obs, n_test))
    for rec in ds.records:
        row = [rec.participant_id, rec.domain]
        for e in rec.observed:
            row += [e.task, _outcome_text(e.outcome), str(e.score)]
        for e in rec.tested:
            row += [e.task, str(e.pre), str(e.post)]
        row.append(";".join(f"{t}={c}/{d}" for t, (c, d) in sorted(rec.grouping.items())))
        writer.writerow(row)
    return buf.getvalue()


def save_dataset(ds: Dataset, path):
    Path(path).write_text(dumps_dataset(ds), encoding="utf-8")


def _parse_int(text, where):
    try:
        return int(text.strip())
    except ValueError:
        raise DatasetError(f"{where}: expected an integer, got {text!r}") from None


def loads_dataset(text: str, features=None, catalog=None) -> Dataset:
    lines = text.splitlines()
    if not lines or lines[0].strip() != FORMAT_HEADER:
        raise DatasetError(f"missing or unsupported format header (expected {FORMAT_HEADER!r})")
    reader = csv.reader(lines[1:])
    try:
        header = next(reader)
    except StopIteration:
        raise DatasetError("missing column header") from None
    n_obs = sum(1 for c in header if c.startswith("obs") and c.endswith("_task"))
    n_test = sum(1 for c in header if c.startswith("test") and c.endswith("_task"))
    if header != _columns(n_obs, n_test):
        raise DatasetError(f"unexpected columns {header}")
    records = []
    for i, row in enumerate(reader):
        where = f"record {i}"
        if len(row) != len(header):
            raise DatasetError(f"{where}: expected {len(header)} fields, got {len(row)}")
        pos = 2
        observed = []
        for _ in range(n_obs):
            task, outcome, score = row[pos : pos + 3]
            observed.append(ObservedEntry(task, _parse_int(outcome, where), _parse_int(score, where)))
            pos += 3
        tested = []
        for _ in range(n_test):
            task, pre, post = row[pos : pos + 3]
            tested.append(TestedEntry(task, _parse_int(pre, where), _parse_int(post, where)))
            pos += 3
        grouping = {}
        if row[pos].strip():
            for item in row[pos].split(";"):
                try:
                    task, cell = item.split("=")
                    cat, diff = cell.split("/")
                except ValueError:
                    raise DatasetError(f"{where}: malformed grouping entry {item!r}") from None
                grouping[task] = (cat, diff)
        records.append(ParticipantRecord(row[0], row[1], tuple(observed), tuple(tested), grouping))
    ds = Dataset(records, dict(features or {}), list(catalog or []))
    validate_dataset(ds)
    return ds


def load_dataset(path, features=None, catalog=None) -> Dataset:
    return loads_dataset(Path(path).read_text(encoding="utf-8"), features, catalog)


def to_observations(record: ParticipantRecord, features) -> list[Observation]:
    obs = []
    for t, e in enumerate(record.observed):
        if e.task not in features:
            raise DatasetError(f"participant {record.participant_id}: no features for task {e.task!r}")
        obs.append(Observation(np.asarray(features[e.task], dtype=np.float64), float(e.outcome), t))
    return obs


class TrialBatch(NamedTuple):
    """Dense arrays for all participants; every record has the same layout.

    Target slots per participant are ``[pre x n_test, observed x n_obs, post x n_test]``.
    """

    obs_x: np.ndarray  # (P, S, d)
    obs_c: np.ndarray  # (P, S)
    tgt_x: np.ndarray  # (P, Q, d)
    tgt_step: np.ndarray  # (P, Q) observations consumed before the target
    tgt_y: np.ndarray  # (P, Q) normalized trust
    tgt_task: np.ndarray  # (P, Q) index into task_ids
    tgt_kind: np.ndarray  # (P, Q) PRE / OBSERVED / POST
    task_ids: tuple

    @property
    def n_participants(self):
        return self.obs_x.shape[0]

    def subset(self, idx):
        idx = np.asarray(idx)
        return self._replace(**{k: getattr(self, k)[idx] for k in self._fields if k != "task_ids"})


def build_batch(ds: Dataset) -> TrialBatch:
    if not ds.records:
        raise DatasetError("empty dataset")
    if not ds.features:
        raise DatasetError("dataset has no task features")
    task_ids = tuple(ds.task_ids)
    index = {t: i for i, t in enumerate(task_ids)}
    feats = {t: np.asarray(ds.features[t], dtype=np.float64) for t in task_ids}
    obs_x, obs_c, tx, ts, ty, tt, tk = [], [], [], [], [], [], []
    for rec in ds.records:
        n_obs = len(rec.observed)
        obs_x.append([feats[e.task] for e in rec.observed])
        obs_c.append([float(e.outcome) for e in rec.observed])
        slots = [(e.task, 0, e.pre, PRE) for e in rec.tested]
        slots += [(e.task, j + 1, e.score, OBSERVED) for j, e in enumerate(rec.observed)]
        slots += [(e.task, n_obs, e.post, POST) for e in rec.tested]
        tx.append([feats[s[0]] for s in slots])
        ts.append([s[1] for s in slots])
        ty.append([normalize_likert(s[2]) for s in slots])
        tt.append([index[s[0]] for s in slots])
        tk.append([s[3] for s in slots])
    return TrialBatch(
        np.array(obs_x), np.array(obs_c), np.array(tx), np.array(ts, dtype=np.int64),
        np.array(ty), np.array(tt, dtype=np.int64), np.array(tk, dtype=np.int64), task_ids,
    )


@dataclass(frozen=True)
class SyntheticConfig:
    n_participants: int = 32
    n_tasks: int = 12
    n_groups: int = 2
    seed: int = 0
    noise: float = 0.3
    dim: int = 50
    group_separation: float = 5.0
    difficulty_offset: float = 0.75
    position_jitter: float = 0.25
    feature_noise: float = 0.05
    disposition_mean: float = 0.4
    disposition_sd: float = 0.6
    difficulty_effect: float = 0.8
    local_shift: float = 1.5
    global_shift: float = 0.3
    transfer_lengthscale: float = 1.5
    asymmetry: float = 0.5
    success_rate: float = 0.5

    def validate(self):
        if self.n_groups != 2:
            raise DatasetError("synthetic data needs exactly 2 task groups (categories A and B)")
        per_cell, rem = divmod(self.n_tasks, 2 * self.n_groups)
        if rem or per_cell < 3:
            raise DatasetError(
                f"n_tasks={self.n_tasks} must split into {2 * self.n_groups} cells of at least 3 tasks"
            )
        if self.n_participants < 1 or self.dim < 2:
            raise DatasetError("need at least one participant and a feature dimension of at least 2")
        if self.noise < 0 or not 0 <= self.success_rate <= 1 or self.group_separation < 4:
            raise DatasetError("noise must be >= 0, success_rate in [0, 1] and group_separation >= 4")


@dataclass
class SyntheticWorld:
    """The planted generator state: task positions, features and dispositions."""

    cfg: SyntheticConfig
    catalog: list
    positions: np.ndarray  # (n_tasks, 2)
    features: dict
    dispositions: np.ndarray  # (n_participants,)

    @property
    def groups(self):
        return np.array(["AB".index(t.category) for t in self.catalog])

    @property
    def easy(self):
        return np.array([t.difficulty == "easy" for t in self.catalog])

    def base_competence(self, participant: int) -> np.ndarray:
        return self.dispositions[participant] + self.cfg.difficulty_effect * self.positions[:, 1]

    def shift(self, observed: int, outcome: float, scale: float | None = None) -> np.ndarray:
        cfg = self.cfg
        local = cfg.local_shift if scale is None else scale
        diff = self.positions - self.positions[observed]
        w = np.exp(-np.sum(diff**2, axis=1) / (2 * cfg.transfer_lengthscale**2))
        asym = 1 + cfg.asymmetry * np.tanh(outcome * diff[:, 1] / cfg.difficulty_offset)
        return outcome * (local * w * asym + cfg.global_shift)

    def competence(self, participant: int, history) -> np.ndarray:
        """Logit competence over all tasks after ``history`` of (task index, outcome)."""
        kappa = self.base_competence(participant)
        for task, outcome in history:
            kappa = kappa + self.shift(task, outcome)
        return kappa


def likert_from_logit(logit):
    return np.clip(np.rint(1 + 6 / (1 + np.exp(-np.asarray(logit)))), LIKERT_MIN, LIKERT_MAX).astype(int)


def synthetic_world(cfg: SyntheticConfig) -> SyntheticWorld:
    cfg.validate()
    rng = np.random.default_rng([cfg.seed, 0])
    per_cell = cfg.n_tasks // (2 * cfg.n_groups)
    catalog, positions = [], []
    for g, cat in enumerate("AB"[: cfg.n_groups]):
        for i in range(2 * per_cell):
            easy = i < per_cell
            catalog.append(TaskDescriptor(f"{cat}{i + 1}", "household", cat, "easy" if easy else "difficult",
                                          f"synthetic task {cat}{i + 1}"))
            y = cfg.difficulty_offset if easy else -cfg.difficulty_offset
            positions.append([g * cfg.group_separation, y])
    positions = np.array(positions) + rng.normal(0, cfg.position_jitter, size=(cfg.n_tasks, 2))
    lift = rng.normal(0, np.sqrt(0.5), size=(cfg.dim, 2)) / np.sqrt(cfg.dim / 2)
    centred = positions - positions.mean(axis=0)
    feats = centred @ lift.T + rng.normal(0, cfg.feature_noise, size=(cfg.n_tasks, cfg.dim))
    features = {t.id: feats[i] for i, t in enumerate(catalog)}
    dispositions = rng.normal(cfg.disposition_mean, cfg.disposition_sd, size=cfg.n_participants)
    return SyntheticWorld(cfg, catalog, positions, features, dispositions)


def generate_synthetic(cfg: SyntheticConfig = SyntheticConfig(), world: SyntheticWorld | None = None) -> Dataset:
    world = world if world is not None else synthetic_world(cfg)
    cfg = world.cfg
    rng = np.random.default_rng([cfg.seed, 1])
    groups, easy = world.groups, world.easy
    ids = [t.id for t in world.catalog]
    grouping = {t.id: (t.category, t.difficulty) for t in world.catalog}
    records = []
    for p in range(cfg.n_participants):
        g = int(rng.integers(cfg.n_groups))
        e = bool(rng.integers(2))
        cell = np.flatnonzero((groups == g) & (easy == e))
        observed = rng.permutation(cell)[:2]
        outcome = 1 if rng.random() < cfg.success_rate else -1
        same_cell = rng.choice(np.setdiff1d(cell, observed))
        same_group = rng.choice(np.flatnonzero((groups == g) & (easy != e)))
        other_groups = np.flatnonzero((groups != g) & (easy == e))
        other_group = rng.choice(other_groups)
        tested = [int(same_cell), int(same_group), int(other_group)]
        eps = rng.normal(0, cfg.noise, size=2 * len(tested) + len(observed))
        pre = likert_from_logit(world.competence(p, [])[tested] + eps[:3])
        obs_entries, history = [], []
        for j, o in enumerate(observed):
            history.append((int(o), outcome))
            score = likert_from_logit(world.competence(p, history)[o] + eps[3 + j])
            obs_entries.append(ObservedEntry(ids[o], outcome, int(score)))
        post = likert_from_logit(world.competence(p, history)[tested] + eps[5:8])
        tested_entries = tuple(TestedEntry(ids[t], int(a), int(b)) for t, a, b in zip(tested, pre, post))
        records.append(ParticipantRecord(f"p{p + 1:02d}", "household", tuple(obs_entries), tested_entries, dict(grouping)))
    ds = Dataset(records, dict(world.features), list(world.catalog))
    validate_dataset(ds)
    return ds
