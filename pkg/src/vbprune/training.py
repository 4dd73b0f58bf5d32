"""Training loops: EM-MCMC (SGHMC with spike-and-slab masking) and dense CV-Adam / NGVI.

Randomness comes from three streams spawned from the run seed: network
initialization, minibatch order, and sampler noise. ``run_streams`` exposes
them so a bare loop can replay a run exactly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import nn
from .optim import (CvAdamState, NgviState, ScheduleSpec, SghmcState, cv_adam_step, ngvi_step, sghmc_step)
from .sim import SimDataset, SnapshotEnsemble, ensemble_predict, predictive_metrics, selected_variables
from .spike_slab import (MaskState, SpikeSlabConfig, em_update_softmask, precision_vector, prune_concentration,
                         prune_l2, sparsity_metrics)

log = logging.getLogger(__name__)

OPTIMIZERS = ("ngvi", "cv-adam", "sghmc", "em-mcmc")


@dataclass
class TrainConfig:
    spec: nn.NetworkSpec
    optimizer: str = "em-mcmc"
    epochs: int = 100
    batch_size: int = 100
    seed: int = 0
    l0: float = 0.01
    cycles: int = 1
    schedule_kind: str = "cyclical-cosine"
    eta_scale: float = 0.1
    k_mode: str = "sqrtN"
    k_custom: float | None = None
    beta1: float = 0.9
    beta2: float = 1.0
    delta: float = 1.0
    tau0: float = 0.5
    freeze_tau: bool = False
    init_scale: float | None = None
    spike_slab: SpikeSlabConfig | None = None
    prune_layers: str = "first"
    snapshots_per_cycle: int = 3
    ngvi_gamma: float = 0.1
    ngvi_lambda: float = 1.0
    ngvi_alpha: float = 0.5
    ngvi_inv_sigma2: float = 1e4

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.k_mode not in ("sqrtN", "coldN", "custom"):
            raise ValueError("k_mode must be sqrtN, coldN or custom")
        if self.k_mode == "custom" and self.k_custom is None:
            raise ValueError("k_mode=custom needs a k value")
        if self.prune_layers not in ("first", "all"):
            raise ValueError("prune_layers must be first or all")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be positive")

    def k_value(self, n_train: int) -> float:
        if self.k_mode == "sqrtN":
            return 1.0 / math.sqrt(n_train)
        if self.k_mode == "coldN":
            return 1.0 / n_train
        return float(self.k_custom)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    test_metric: float
    lr: float
    sparsity_ratio: float
    soft_sparsity_ratio: float
    snapshots: int

    FIELDS = ("epoch", "train_loss", "test_metric", "lr", "sparsity_ratio", "soft_sparsity_ratio", "snapshots")


@dataclass
class TrainResult:
    config: TrainConfig
    w: np.ndarray
    v: np.ndarray | None
    rho: np.ndarray
    masks: MaskState | None
    ensemble: SnapshotEnsemble
    metrics: list[EpochRecord] = field(default_factory=list)
    pruned_trace: list[np.ndarray] = field(default_factory=list)
    weight_trace: list[np.ndarray] = field(default_factory=list)
    iterations: int = 0

    @property
    def effective_w(self) -> np.ndarray:
        if self.masks is None:
            return self.w
        return self.masks.effective(self.w)

    def selected(self) -> frozenset:
        """Variables whose first-layer input-unit group is alive."""
        sl = self.config.spec.layout[0]
        if self.masks is None:
            return selected_variables(np.ones(sl.fan_in, dtype=bool))
        alive = self.masks.alive[sl.w_offset : sl.w_offset + sl.fan_in * sl.fan_out].reshape(sl.fan_in, sl.fan_out)
        # an input is kept if any of its outgoing weights survives the masks
        return selected_variables(alive.any(axis=1))

    def predict(self, X) -> np.ndarray:
        return predict(self.config.spec, self.effective_w, self.ensemble, X)


def predict(spec: nn.NetworkSpec, w: np.ndarray, ensemble: SnapshotEnsemble, X) -> np.ndarray:
    """Snapshot-ensemble prediction, or the single network ``w`` when no snapshot was taken."""
    if len(ensemble):
        return ensemble_predict(ensemble, spec, X)
    out = nn.forward(spec, w, X)
    return (out > 0.5).astype(np.float64) if spec.output_kind == "logistic" else out


def run_streams(seed: int) -> tuple[int, np.random.Generator, np.random.Generator]:
    init_ss, batch_ss, noise_ss = np.random.SeedSequence(seed).spawn(3)
    return int(init_ss.generate_state(1)[0]), np.random.default_rng(batch_ss), np.random.default_rng(noise_ss)


def minibatches(n: int, batch_size: int, rng: np.random.Generator):
    """Shuffled index blocks covering one epoch; the last block may be short."""
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def make_schedule(cfg: TrainConfig, total_iters: int, n_train: int) -> ScheduleSpec:
    return ScheduleSpec(cfg.schedule_kind, cfg.l0, total_iters, cfg.cycles, cfg.k_value(n_train), cfg.eta_scale)


def build_masks(cfg: TrainConfig, n_params: int) -> MaskState:
    spec = cfg.spec
    layers = [0] if cfg.prune_layers == "first" else list(range(spec.n_layers))
    em_part = nn.group_partition(spec, "input-unit", layers)
    if cfg.spike_slab.prune_rule == "l2":
        prune_parts = [em_part]
    else:
        prune_parts = [em_part, nn.group_partition(spec, "output-unit", layers)]
    return MaskState(n_params, em_part, prune_parts, cfg.spike_slab.mode)


def recompute_masks(masks: MaskState, w: np.ndarray, ss: SpikeSlabConfig) -> None:
    part = masks.em_partition
    soft = em_update_softmask(w, part, ss.lambda1)
    if ss.prune_rule == "l2":
        hard = [prune_l2(w, part, ss.lambda1)]
    else:
        hard = list(prune_concentration(w, masks.prune_partitions[0], masks.prune_partitions[1], ss.lambda2))
    masks.update_hard(hard)
    if masks.mode == "dfp":
        # frozen groups stay out of the scan: they read zero and remain spike
        soft &= masks.hard[0]
    masks.soft = soft


def _evaluate(spec, w, test: SimDataset | None) -> float:
    if test is None:
        return float("nan")
    out = nn.forward(spec, w, test.X)
    if spec.output_kind == "logistic":
        return predictive_metrics((out > 0.5).astype(np.float64), test.y, "logistic")
    return predictive_metrics(out, test.y, "regression")


Observer = Callable[[int, np.ndarray, np.ndarray, np.ndarray | None], None]


def train_em_mcmc(cfg: TrainConfig, train: SimDataset, test: SimDataset | None = None,
                  observer: Observer | None = None, trace_weights: bool = False) -> TrainResult:
    """SGHMC with group spike-and-slab EM after warm-up; plain SGHMC when ``cfg.spike_slab`` is None.

    ``observer(t, forward_params, dense_params, alive)`` is called with the
    parameters each training-time forward pass uses.
    """
    spec = cfg.spec
    N = len(train.y)
    if cfg.batch_size > N:
        raise ValueError("batch size exceeds the training set")
    if train.X.shape[1] != spec.layer_sizes[0]:
        raise ValueError("dataset width does not match the network input size")
    iters_per_epoch = math.ceil(N / cfg.batch_size)
    T = cfg.epochs * iters_per_epoch
    ss = cfg.spike_slab
    if ss is not None and ss.warmup_iters >= T:
        log.warning("warm-up covers the whole run; masks never update")

    init_seed, batch_rng, noise_rng = run_streams(cfg.seed)
    _, params = nn.build_network(spec, init_seed, cfg.init_scale)
    sched = make_schedule(cfg, T, N)
    masks = build_masks(cfg, spec.n_params) if ss is not None else None
    delta = precision_vector(masks.soft, masks.em_partition, ss.delta0, ss.delta1, spec.n_params) if ss else cfg.delta
    state = SghmcState.init(params.values, tau0=cfg.tau0, lr=sched.lr, eta=sched.eta, k=sched.k,
                            beta1=cfg.beta1, beta2=cfg.beta2, delta=delta, n_train=N, freeze_tau=cfg.freeze_tau)
    alive = None
    X, y = train.X, train.y
    # under DFP, pruned input rows are frozen at zero, so the first layer only sees live columns
    rows, Xa = None, X
    sl0 = spec.layout[0]

    def grad_fn_for(idx):
        batch = nn.Batch(Xa[idx], y[idx])

        def grad_fn(w):
            fw = w if alive is None or masks.mode == "dfp" else w * alive
            if observer is not None:
                observer(state.t, fw, w, alive)
            return nn.loss_and_grad(spec, fw, batch, rows=rows)

        return grad_fn

    result = TrainResult(cfg, state.w, state.v, state.mirror.rho, masks, SnapshotEnsemble())
    c = sched.cycle_length
    snap_window = cfg.snapshots_per_cycle * iters_per_epoch
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for idx in minibatches(N, cfg.batch_size, batch_rng):
            losses.append(sghmc_step(state, grad_fn_for(idx), noise_rng))
            t = state.t
            if ss is not None and t > ss.warmup_iters and (t - ss.warmup_iters) % ss.em_interval == 0:
                recompute_masks(masks, state.w, ss)
                alive = masks.alive
                if masks.mode == "dfp":
                    state.w[~alive] = 0.0
                    state.v[~alive] = 0.0
                    state.frozen = ~alive
                    live = np.flatnonzero(alive[sl0.w_offset : sl0.w_offset + sl0.fan_in * sl0.fan_out]
                                          .reshape(sl0.fan_in, sl0.fan_out).any(axis=1))
                    if len(live) < Xa.shape[1]:
                        rows, Xa = live, X[:, live]
                state.delta = precision_vector(masks.soft, masks.em_partition, ss.delta0, ss.delta1, spec.n_params)
        t = state.t
        fw = state.w if masks is None else masks.effective(state.w)
        warm = ss.warmup_iters if ss is not None else 0
        pos = (t - 1) % c
        if t > warm and pos >= c - snap_window:
            result.ensemble.add(fw, (t - 1) // c + 1, epoch)
        sp, soft = sparsity_metrics(masks) if masks is not None else (0.0, 0.0)
        result.metrics.append(EpochRecord(epoch, float(np.mean(losses)), _evaluate(spec, fw, test), sched.lr(t),
                                          sp, soft, len(result.ensemble)))
        if masks is not None:
            result.pruned_trace.append(np.flatnonzero(~masks.alive))
        if trace_weights:
            result.weight_trace.append(state.w.copy())
        log.debug("epoch %d loss %.4f test %.4f sparsity %.4f", epoch, result.metrics[-1].train_loss,
                  result.metrics[-1].test_metric, sp)

    result.w, result.v, result.rho, result.iterations = state.w, state.v, state.mirror.rho, state.t
    return result


def train_variational(cfg: TrainConfig, train: SimDataset, test: SimDataset | None = None) -> TrainResult:
    """Dense training of the posterior mean with CV-Adam or NGVI."""
    spec = cfg.spec
    N = len(train.y)
    if cfg.batch_size > N:
        raise ValueError("batch size exceeds the training set")
    iters_per_epoch = math.ceil(N / cfg.batch_size)
    T = cfg.epochs * iters_per_epoch
    init_seed, batch_rng, noise_rng = run_streams(cfg.seed)
    _, params = nn.build_network(spec, init_seed, cfg.init_scale)
    sched = make_schedule(cfg, T, N)
    if cfg.optimizer == "cv-adam":
        k = sched.k_value

        def alpha(t):
            return k * sched.lr(t) ** 0.75

        state = CvAdamState.init(params.values, tau0=cfg.tau0, lr=sched.lr, eta=sched.eta, alpha=alpha,
                                 beta1=cfg.beta1, beta2=cfg.beta2, delta=cfg.delta, n_train=N,
                                 freeze_tau=cfg.freeze_tau)
        step = cv_adam_step
        rho = lambda: state.mirror.rho  # noqa: E731
    elif cfg.optimizer == "ngvi":
        state = NgviState.init(params.values, inv_sigma2=cfg.ngvi_inv_sigma2, lr=sched.lr, gamma=cfg.ngvi_gamma,
                               lam=cfg.ngvi_lambda, alpha_exponent=cfg.ngvi_alpha, delta=cfg.delta, n_train=N)
        step = ngvi_step
        rho = lambda: np.zeros(0)  # noqa: E731
    else:
        raise ValueError(f"train_variational does not run {cfg.optimizer!r}")

    X, y = train.X, train.y
    result = TrainResult(cfg, state.mu, None, rho(), None, SnapshotEnsemble())
    c = sched.cycle_length
    snap_window = cfg.snapshots_per_cycle * iters_per_epoch
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for idx in minibatches(N, cfg.batch_size, batch_rng):
            batch = nn.Batch(X[idx], y[idx])
            losses.append(step(state, lambda w: nn.loss_and_grad(spec, w, batch), noise_rng))
        t = state.t
        if (t - 1) % c >= c - snap_window:
            result.ensemble.add(state.mu, (t - 1) // c + 1, epoch)
        result.metrics.append(EpochRecord(epoch, float(np.mean(losses)), _evaluate(spec, state.mu, test),
                                          sched.lr(t), 0.0, 0.0, len(result.ensemble)))
    result.w, result.rho, result.iterations = state.mu, rho(), state.t
    return result


def train(cfg: TrainConfig, train_set: SimDataset, test_set: SimDataset | None = None, **kw) -> TrainResult:
    if cfg.optimizer in ("sghmc", "em-mcmc"):
        if cfg.optimizer == "sghmc":
            cfg = TrainConfig(**{**cfg.__dict__, "spike_slab": None})
        return train_em_mcmc(cfg, train_set, test_set, **kw)
    return train_variational(cfg, train_set, test_set)
