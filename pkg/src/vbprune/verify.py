"""Sampler checks on a conjugate Gaussian model.

The model has one parameter: ``y_i = w + N(0, 1)`` for ``i = 1..N`` with
prior ``w ~ N(0, 1/delta)``, so the posterior is
``N(sum(y) / (N + delta), 1 / (N + delta))``. Both harnesses run the library
samplers unchanged on the full-batch loss and compare moments of the
retained chain.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .optim import (RHO_MAX, CvAdamState, MirrorState, SghmcState, cv_adam_step, equivalence_params,
                    sghmc_step)


@dataclass(frozen=True)
class ConjugateModel:
    y: np.ndarray
    delta: float

    @classmethod
    def simulate(cls, n: int, delta: float, seed, w_true: float = 0.5) -> "ConjugateModel":
        rng = np.random.default_rng(seed)
        return cls(w_true + rng.standard_normal(n), float(delta))

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def posterior_mean(self) -> float:
        return float(self.y.sum() / (self.n + self.delta))

    @property
    def posterior_var(self) -> float:
        return 1.0 / (self.n + self.delta)

    def grad_fn(self, w: np.ndarray) -> tuple[float, np.ndarray]:
        """Mean Gaussian NLL over the N observations and its gradient (no prior term)."""
        r = w[0] - self.y
        return float(0.5 * np.mean(r * r)), np.array([np.mean(r)])


def matched_beta1(l: float) -> float:
    """Momentum whose friction balances the injected noise: ``(1 - b) / sqrt(l) = 1 + b**2``."""
    dt = math.sqrt(l)
    # positive root of dt*b^2 + b + (dt - 1) = 0
    return (-1.0 + math.sqrt(1.0 - 4.0 * dt * (dt - 1.0))) / (2.0 * dt)


def _frozen_mirror(n: int = 1) -> MirrorState:
    return MirrorState(np.full(n, RHO_MAX))


@dataclass
class SamplerConfig:
    """Settings for ``verify_sghmc_gaussian``; ``beta1=None`` picks ``matched_beta1(l)``."""

    l: float = 0.01
    beta1: float | None = None
    beta2: float = 1.0
    k_mode: str = "sqrtN"
    k_custom: float | None = None
    burn_in: int = 5000
    w0: float = 0.0

    def k(self, n: int) -> float:
        if self.k_mode == "sqrtN":
            return 1.0 / math.sqrt(n)
        if self.k_mode == "coldN":
            return 1.0 / n
        if self.k_mode == "custom" and self.k_custom is not None:
            return float(self.k_custom)
        raise ValueError(f"bad k_mode {self.k_mode!r}")


@dataclass
class MomentReport:
    n: int
    delta: float
    k: float
    beta1: float
    steps: int
    analytic_mean: float
    analytic_var: float
    empirical_mean: float
    empirical_var: float

    @property
    def mean_error(self) -> float:
        return abs(self.empirical_mean - self.analytic_mean)

    @property
    def var_ratio(self) -> float:
        return self.empirical_var / self.analytic_var

    def as_dict(self) -> dict:
        return {**asdict(self), "mean_error": self.mean_error, "var_ratio": self.var_ratio}


def run_sghmc_chain(model: ConjugateModel, l: float, beta1: float, k: float, steps: int, burn_in: int,
                    seed, beta2: float = 1.0, w0: float = 0.0) -> np.ndarray:
    """Retained SGHMC draws of w with tau frozen at its upper bound."""
    const = lambda t: l  # noqa: E731
    state = SghmcState.init([w0], lr=const, eta=lambda t: 0.0, k=lambda t: k, beta1=beta1, beta2=beta2,
                            delta=model.delta, n_train=model.n, freeze_tau=True)
    state.mirror = _frozen_mirror()
    rng = np.random.default_rng(seed)
    out = np.empty(steps)
    for _ in range(burn_in):
        sghmc_step(state, model.grad_fn, rng)
    for i in range(steps):
        sghmc_step(state, model.grad_fn, rng)
        out[i] = state.w[0]
    return out


def run_cv_adam_chain(model: ConjugateModel, l: float, beta1: float, alpha: float, steps: int, burn_in: int,
                      seed, beta2: float = 1.0, w0: float = 0.0) -> np.ndarray:
    """Retained CV-Adam weight draws ``mu + alpha * tau * eps`` with tau frozen."""
    state = CvAdamState.init([w0], lr=lambda t: l, eta=lambda t: 0.0, alpha=lambda t: alpha, beta1=beta1,
                             beta2=beta2, delta=model.delta, n_train=model.n, freeze_tau=True)
    state.mirror = _frozen_mirror()
    rng = np.random.default_rng(seed)
    out = np.empty(steps)
    for _ in range(burn_in):
        cv_adam_step(state, model.grad_fn, rng)
    for i in range(steps):
        cv_adam_step(state, model.grad_fn, rng)
        out[i] = state.w[0]
    return out


def verify_sghmc_gaussian(n: int = 100, delta: float = 1.0, seed: int = 0, steps: int = 200_000,
                          config: SamplerConfig | None = None) -> MomentReport:
    config = config or SamplerConfig()
    data_ss, chain_ss = np.random.SeedSequence(seed).spawn(2)
    model = ConjugateModel.simulate(n, delta, data_ss)
    beta1 = matched_beta1(config.l) if config.beta1 is None else config.beta1
    k = config.k(n)
    draws = run_sghmc_chain(model, config.l, beta1, k, steps, config.burn_in, chain_ss, config.beta2, config.w0)
    return MomentReport(n, delta, k, beta1, steps, model.posterior_mean, model.posterior_var,
                        float(draws.mean()), float(draws.var()))


@dataclass
class EquivalenceReport:
    l: float
    h: float
    k: float
    beta1_sghmc: float
    beta1_adam: float
    alpha: float
    steps: int
    analytic_mean: float
    analytic_var: float
    sghmc_mean: float
    sghmc_var: float
    adam_mean: float
    adam_var: float

    @property
    def mean_gap(self) -> float:
        return abs(self.sghmc_mean - self.adam_mean)

    @property
    def var_gap(self) -> float:
        return abs(self.sghmc_var - self.adam_var)

    @property
    def var_rel_gap(self) -> float:
        # SGHMC is the reference chain
        return self.var_gap / self.sghmc_var if self.sghmc_var > 0 else 0.0

    def as_dict(self) -> dict:
        return {**asdict(self), "mean_gap": self.mean_gap, "var_gap": self.var_gap, "var_rel_gap": self.var_rel_gap}


def verify_equivalence(l: float = 0.01, h: float | None = None, k: float | None = None, seed: int = 0,
                       steps: int = 200_000, n: int = 100, delta: float = 1.0, burn_in: int = 5000,
                       adam_beta1: float | None = None) -> EquivalenceReport:
    """Run both samplers with hyperparameters linked through ``equivalence_params``.

    ``h=None`` uses the noise-matched friction, ``k=None`` uses ``1/sqrt(n)``.
    ``adam_beta1`` overrides the mapped momentum on the CV-Adam side only
    (for control runs).
    """
    if h is None:
        h = (1.0 - matched_beta1(l)) / math.sqrt(l)
    k = 1.0 / math.sqrt(n) if k is None else k
    data_ss, s1, s2 = np.random.SeedSequence(seed).spawn(3)
    model = ConjugateModel.simulate(n, delta, data_ss)
    dt, alpha, beta1 = equivalence_params(l, h, k) if k > 0 else (math.sqrt(l), 0.0, 1.0 - h * math.sqrt(l))
    assert math.isclose(dt * dt, l)
    b_adam = beta1 if adam_beta1 is None else adam_beta1
    a = run_sghmc_chain(model, l, beta1, k, steps, burn_in, s1)
    b = run_cv_adam_chain(model, l, b_adam, alpha, steps, burn_in, s2)
    return EquivalenceReport(l, h, k, beta1, b_adam, alpha, steps, model.posterior_mean, model.posterior_var,
                             float(a.mean()), float(a.var()), float(b.mean()), float(b.var()))
