"""Task featurization from word embeddings.

Tasks are described in plain English; a task's feature vector is the mean of
the word vectors of its in-vocabulary tokens. Embedding files use the GloVe
text layout (one token followed by its vector per line).
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

DOMAINS = ("household", "driving")
CATEGORIES = {"household": ("A", "B"), "driving": ("C", "D")}
DIFFICULTIES = ("easy", "difficult")

# leading/trailing characters removed from each token; internal hyphens survive
_STRIP_CHARS = ".,;:!?\"'()"

GLOVE_ENV = "TRUSTTRANSFER_GLOVE"


class FeatureError(ValueError):
    """Raised for malformed embedding files, catalogs or unembeddable tasks."""


@dataclass(frozen=True)
class TaskDescriptor:
    id: str
    domain: str
    category: str
    difficulty: str
    description: str

    def __post_init__(self):
        if not self.id:
            raise FeatureError("task id must be non-empty")
        if not self.description.strip():
            raise FeatureError(f"task {self.id!r} has an empty description")
        if self.domain not in DOMAINS:
            raise FeatureError(f"task {self.id!r}: unknown domain {self.domain!r}")
        if self.category not in CATEGORIES[self.domain]:
            raise FeatureError(
                f"task {self.id!r}: category {self.category!r} not valid for domain {self.domain!r}"
            )
        if self.difficulty not in DIFFICULTIES:
            raise FeatureError(f"task {self.id!r}: unknown difficulty {self.difficulty!r}")


class EmbeddingTable:
    """Read-only mapping from lowercase token to a fixed-width vector."""

    def __init__(self, vectors: dict[str, np.ndarray]):
        dims = {v.shape[0] for v in vectors.values()}
        if len(dims) > 1:
            raise FeatureError(f"embedding vectors have mixed dimensions {sorted(dims)}")
        self._vectors = {k.lower(): np.asarray(v, dtype=np.float64) for k, v in vectors.items()}
        self.dim = dims.pop() if dims else 0

    def __len__(self):
        return len(self._vectors)

    def __contains__(self, token):
        return token in self._vectors

    def __getitem__(self, token) -> np.ndarray:
        return self._vectors[token]

    def get(self, token, default=None):
        return self._vectors.get(token, default)


def load_embeddings(path, dim: int | None = None) -> EmbeddingTable:
    """Parse a GloVe-format text file.

    Every line must carry the same number of values; pass ``dim`` to enforce a
    particular width (50 for the published 6B vectors). Later duplicates win.
    """
    path = Path(path)
    vectors: dict[str, np.ndarray] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            expected = dim if dim is not None else (len(values) if not vectors else _width(vectors))
            if len(values) != expected or not values:
                raise FeatureError(
                    f"{path}:{lineno}: expected {expected} values after token, got {len(values)}"
                )
            try:
                vec = np.array([float(v) for v in values])
            except ValueError as exc:
                raise FeatureError(f"{path}:{lineno}: non-numeric value ({exc})") from None
            if not np.all(np.isfinite(vec)):
                raise FeatureError(f"{path}:{lineno}: non-finite value")
            vectors[token.lower()] = vec
    if not vectors:
        raise FeatureError(f"{path}: no embeddings found")
    return EmbeddingTable(vectors)


def _width(vectors):
    return next(iter(vectors.values())).shape[0]


def default_embedding_path() -> Path | None:
    value = os.environ.get(GLOVE_ENV)
    return Path(value) if value else None


def tokenize(description: str) -> list[str]:
    tokens = (tok.strip(_STRIP_CHARS) for tok in description.lower().split())
    return [tok for tok in tokens if tok]


def embed_description(description: str, table: EmbeddingTable) -> np.ndarray:
    vecs = [table[tok] for tok in tokenize(description) if tok in table]
    if not vecs:
        raise FeatureError(f"no in-vocabulary tokens in description {description!r}")
    return np.mean(vecs, axis=0)


def embed_task(descriptor: TaskDescriptor, table: EmbeddingTable) -> np.ndarray:
    try:
        return embed_description(descriptor.description, table)
    except FeatureError as exc:
        raise FeatureError(f"task {descriptor.id!r}: {exc}") from None


def load_task_catalog(path) -> list[TaskDescriptor]:
    """Read a catalog CSV with columns id, domain, category, difficulty, description."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        text = fh.read()
    if not text.strip():
        return []
    reader = csv.DictReader(text.splitlines())
    required = {"id", "domain", "category", "difficulty", "description"}
    missing = required - set(reader.fieldnames or ())
    if missing:
        raise FeatureError(f"{path}: catalog missing columns {sorted(missing)}")
    tasks, seen = [], set()
    for row in reader:
        task = TaskDescriptor(
            id=row["id"].strip(),
            domain=row["domain"].strip().lower(),
            category=row["category"].strip().upper(),
            difficulty=row["difficulty"].strip().lower(),
            description=row["description"].strip(),
        )
        if task.id in seen:
            raise FeatureError(f"{path}: duplicate task id {task.id!r}")
        seen.add(task.id)
        tasks.append(task)
    return tasks


def paper_catalog_path() -> Path:
    """The bundled 24-task household/driving catalog."""
    return Path(str(resources.files("trusttransfer") / "data" / "tasks.csv"))


def write_catalog(tasks, path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "domain", "category", "difficulty", "description"])
        for t in tasks:
            writer.writerow([t.id, t.domain, t.category, t.difficulty, t.description])


def save_features(features: dict[str, np.ndarray], path):
    """Write task features as CSV: ``task_id,x0,...,x{d-1}`` at full precision."""
    dim = len(next(iter(features.values()))) if features else 0
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["task_id"] + [f"x{i}" for i in range(dim)])
        for task_id, vec in features.items():
            writer.writerow([task_id] + [repr(float(v)) for v in vec])


def load_features(path) -> dict[str, np.ndarray]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FeatureError(f"{path}: empty feature file")
    header, body = rows[0], rows[1:]
    if not header or header[0] != "task_id":
        raise FeatureError(f"{path}: first column must be task_id")
    out = {}
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise FeatureError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
        try:
            out[row[0]] = np.array([float(v) for v in row[1:]])
        except ValueError:
            raise FeatureError(f"{path}:{lineno}: non-numeric feature value") from None
    return out
