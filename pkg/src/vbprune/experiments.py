"""Repeated simulation runs for a configuration, one dataset and chain per seed."""

from __future__ import annotations

import dataclasses
import logging
import time
from pathlib import Path

import numpy as np

from . import sim, training
from .config import RunConfig, load_config

log = logging.getLogger(__name__)

CONFIG_DIR = Path(__file__).resolve().parents[2] / "configs"


def run_seed(cfg: RunConfig, seed: int) -> dict:
    """Train on a fresh dataset drawn with ``seed`` and report selection and test metrics."""
    data = dataclasses.replace(cfg.data, seed=seed)
    train_set, test_set = data.load()
    tcfg = cfg.train_config(len(train_set.y), seed)
    start = time.perf_counter()
    result = training.train(tcfg, train_set, test_set)
    elapsed = time.perf_counter() - start
    p = train_set.X.shape[1]
    report = sim.selection_metrics(result.selected(), train_set.truth, p).as_dict()
    kind = test_set.kind
    report.update({"seed": seed, "metric": "accuracy" if kind == "logistic" else "mse",
                   "value": sim.predictive_metrics(result.predict(test_set.X), test_set.y, kind),
                   "seconds": elapsed, "ensemble_size": len(result.ensemble)})
    log.info("seed %d: %s", seed, report)
    return report


def run_many(config, seeds) -> dict:
    cfg = config if isinstance(config, RunConfig) else load_config(config)
    runs = [run_seed(cfg, s) for s in seeds]
    summary = {key: float(np.mean([r[key] for r in runs])) for key in ("FDR", "FNDR", "S_hat", "value", "seconds")}
    return {"example": cfg.data.example, "metric": runs[0]["metric"], "mean": summary, "runs": runs}
