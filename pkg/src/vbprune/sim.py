"""Simulated sparse nonlinear regression and classification problems.

Predictors share one latent factor: ``x_i = (e + z_i) / sqrt(2)`` with ``e`` and
``z_i`` truncated standard normals on ``[-10, 10]``, which gives pairwise
correlation of about 0.5. Variable indices in reports and truth sets are
1-based, matching the column names ``x1..xp``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn

TRUNCATION = 10.0
TRUTH = {1: frozenset(range(1, 6)), 2: frozenset(range(1, 6)), 3: frozenset(range(1, 5))}
MIN_P = {1: 5, 2: 5, 3: 4}
DEFAULT_P = {1: 1000, 2: 2000, 3: 2000}
DEFAULT_ARCH = {1: (5, 3), 2: (6, 4, 3), 3: (6, 4, 3)}


def truncated_normal(rng: np.random.Generator, shape, bound: float = TRUNCATION) -> np.ndarray:
    """Standard normal draws conditioned on ``|x| <= bound``, by rejection."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while np.any(bad):
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out


def gen_predictors(n: int, p: int, seed) -> np.ndarray:
    if n < 1 or p < 1:
        raise ValueError("n and p must be positive")
    rng = np.random.default_rng(seed)
    e = truncated_normal(rng, (n, 1))
    z = truncated_normal(rng, (n, p))
    return (e + z) / np.sqrt(2.0)


def response_mean(example_id: int, X: np.ndarray) -> np.ndarray:
    """Noiseless signal (Examples 1-2) or the score thresholded at 3 (Example 3)."""
    if example_id not in TRUTH:
        raise ValueError(f"unknown example {example_id}; choose 1, 2 or 3")
    if X.shape[1] < MIN_P[example_id]:
        raise ValueError(f"example {example_id} needs at least {MIN_P[example_id]} predictors")
    x = [None] + [X[:, j] for j in range(MIN_P[example_id])]
    if example_id == 1:
        return np.tanh(2 * np.tanh(2 * x[1] - x[2])) + 2 * np.tanh(np.tanh(x[3] - 2 * x[4]) - np.tanh(2 * x[5]))
    if example_id == 2:
        return 5 * x[2] / (1 + x[1] ** 2) + 5 * np.sin(x[3] * x[4]) + 2 * x[5]
    return np.exp(x[1]) + x[2] ** 2 + 5 * np.sin(x[3] * x[4])


def gen_response(example_id: int, X: np.ndarray, seed) -> tuple[np.ndarray, frozenset]:
    f = response_mean(example_id, X)
    if example_id == 3:
        return (f > 3).astype(np.float64), TRUTH[3]
    rng = np.random.default_rng(seed)
    return f + rng.standard_normal(f.shape), TRUTH[example_id]


@dataclass
class SimDataset:
    X: np.ndarray
    y: np.ndarray
    truth: frozenset
    example_id: int
    seed: int

    @property
    def kind(self) -> str:
        return "logistic" if self.example_id == 3 else "regression"

    def batch(self) -> nn.Batch:
        return nn.Batch(self.X, self.y)


def make_example(example_id: int, n_train: int = 10000, n_test: int = 1000, p: int | None = None,
                 seed: int = 0) -> tuple[SimDataset, SimDataset]:
    """Independent train and test sets drawn from child streams of ``seed``."""
    p = DEFAULT_P[example_id] if p is None else p
    ss = np.random.SeedSequence(seed)
    x_tr, y_tr, x_te, y_te = ss.spawn(4)
    Xtr = gen_predictors(n_train, p, x_tr)
    Xte = gen_predictors(n_test, p, x_te)
    ytr, truth = gen_response(example_id, Xtr, y_tr)
    yte, _ = gen_response(example_id, Xte, y_te)
    return SimDataset(Xtr, ytr, truth, example_id, seed), SimDataset(Xte, yte, truth, example_id, seed)


def default_network(example_id: int, p: int | None = None) -> nn.NetworkSpec:
    p = DEFAULT_P[example_id] if p is None else p
    hidden = DEFAULT_ARCH[example_id]
    kind = "logistic" if example_id == 3 else "regression"
    return nn.NetworkSpec((p, *hidden, 1), ("relu",) * len(hidden), kind)


# -- csv ---------------------------------------------------------------------


def write_csv(path, X: np.ndarray, y: np.ndarray) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j + 1}" for j in range(X.shape[1])] + ["y"])
        for row, target in zip(X, y):
            # repr round-trips float64 exactly
            w.writerow([repr(float(v)) for v in row] + [repr(float(target))])


def read_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[-1] != "y" or any(h != f"x{j + 1}" for j, h in enumerate(header[:-1])):
            raise ValueError(f"{path}: expected header x1..xp,y")
        data = np.array([[float(v) for v in row] for row in reader], dtype=np.float64)
    if data.size == 0:
        return np.zeros((0, len(header) - 1)), np.zeros(0)
    return data[:, :-1], data[:, -1]


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def write_dataset(path, train: SimDataset, test: SimDataset) -> None:
    """Train rows then test rows in one CSV, plus a JSON sidecar describing the split."""
    X = np.vstack([train.X, test.X])
    y = np.concatenate([train.y, test.y])
    write_csv(path, X, y)
    meta = {"example": train.example_id, "seed": train.seed, "n_train": len(train.y), "n_test": len(test.y),
            "p": train.X.shape[1], "truth": sorted(train.truth)}
    sidecar_path(path).write_text(json.dumps(meta, indent=2) + "\n")


def read_dataset_meta(path) -> dict:
    side = sidecar_path(path)
    return json.loads(side.read_text()) if side.exists() else {}


def read_dataset(path) -> tuple[SimDataset, SimDataset | None]:
    X, y = read_csv(path)
    meta = read_dataset_meta(path)
    if not meta:
        return SimDataset(X, y, frozenset(), 0, 0), None
    n = meta["n_train"]
    truth = frozenset(meta.get("truth", []))
    ex = int(meta.get("example", 0))
    seed = int(meta.get("seed", 0))
    return SimDataset(X[:n], y[:n], truth, ex, seed), SimDataset(X[n:], y[n:], truth, ex, seed)


# -- selection and prediction metrics ----------------------------------------


@dataclass
class SelectionReport:
    selected: frozenset
    fdr: float
    fndr: float
    s_hat: int

    def as_dict(self) -> dict:
        return {"selected": sorted(self.selected), "FDR": self.fdr, "FNDR": self.fndr, "S_hat": self.s_hat}


def selection_metrics(selected, truth, p: int) -> SelectionReport:
    """FDR over the selected set and FNDR over its complement; both 0 on an empty denominator."""
    selected, truth = frozenset(selected), frozenset(truth)
    n_sel = len(selected)
    n_rest = p - n_sel
    fdr = len(selected - truth) / n_sel if n_sel else 0.0
    fndr = len(truth - selected) / n_rest if n_rest else 0.0
    return SelectionReport(selected, fdr, fndr, n_sel)


def selected_variables(first_layer_alive: np.ndarray) -> frozenset:
    """1-based indices of inputs whose input-unit group survived."""
    return frozenset(int(j) + 1 for j in np.flatnonzero(first_layer_alive))


def predictive_metrics(predictions, targets, kind: str) -> float:
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise ValueError("predictions and targets differ in length")
    if kind == "regression":
        return float(np.mean((predictions - targets) ** 2))
    if kind in ("logistic", "classification"):
        return float(np.mean(predictions == targets))
    raise ValueError(f"unknown metric kind {kind!r}")


@dataclass
class SnapshotEnsemble:
    members: list[np.ndarray] = field(default_factory=list)
    tags: list[tuple[int, int]] = field(default_factory=list)

    def add(self, w: np.ndarray, cycle: int, epoch: int) -> None:
        self.members.append(np.array(w, dtype=np.float64))
        self.tags.append((cycle, epoch))

    def __len__(self):
        return len(self.members)


def ensemble_predict(ensemble: SnapshotEnsemble, spec: nn.NetworkSpec, X) -> np.ndarray:
    """Mean of member outputs; for the logistic head the mean probability thresholded at 0.5."""
    if len(ensemble) == 0:
        raise ValueError("ensemble is empty")
    mean = ensemble_mean(ensemble, spec, X)
    if spec.output_kind == "logistic":
        return (mean > 0.5).astype(np.float64)
    return mean


def ensemble_mean(ensemble: SnapshotEnsemble, spec: nn.NetworkSpec, X) -> np.ndarray:
    outs = [nn.forward(spec, w, X) for w in ensemble.members]
    return np.mean(outs, axis=0)
