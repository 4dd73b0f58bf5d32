"""Variational-Bayes training steps on a flat weight vector.

Three samplers share the mirror-descent update of the local scales ``tau``:

* ``cv_adam_step``: constrained variational Adam on the posterior mean ``mu``
* ``sghmc_step``: the preconditioned SGHMC form, which tracks weights only
* ``ngvi_step``: natural-gradient mean-field VI with a precision momentum

Each step takes a ``grad_fn(w) -> (loss, grad)`` returning the mean
negative log-likelihood of a minibatch and its gradient *without* weight
decay; the step adds its own decay term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

RHO_MAX = 13.8

GradFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


class PrecisionUnderflowError(ArithmeticError):
    pass


def dual_map(tau):
    """Logit: dual coordinate of a scale in (0, 1) under the binary-entropy mirror map."""
    tau = np.asarray(tau, dtype=np.float64)
    if np.any((tau <= 0.0) | (tau >= 1.0)) or not np.all(np.isfinite(tau)):
        raise ValueError("tau must lie strictly inside (0, 1)")
    out = np.log(tau) - np.log1p(-tau)
    return float(out) if out.ndim == 0 else out


def primal_map(rho):
    """Logistic sigmoid, the inverse of ``dual_map``."""
    rho = np.asarray(rho, dtype=np.float64)
    with np.errstate(over="ignore"):
        out = 1.0 / (1.0 + np.exp(-rho))
    return float(out) if out.ndim == 0 else out


def rho_step(rho, tau, g, eps, eta, alpha, delta):
    """Mirror-descent update of the dual scales, clamped to ``[-RHO_MAX, RHO_MAX]``.

    ``delta`` is the prior precision (scalar or per weight), not divided by N.
    """
    if eta < 0 or alpha < 0:
        raise ValueError("eta and alpha must be non-negative")
    new = rho + (eta / tau - eta * alpha**2 * delta * tau) - eta * alpha * eps * g
    return np.clip(new, -RHO_MAX, RHO_MAX)


@dataclass
class MirrorState:
    rho: np.ndarray
    tau: np.ndarray = field(init=False)

    def __post_init__(self):
        self.rho = np.clip(np.asarray(self.rho, dtype=np.float64), -RHO_MAX, RHO_MAX)
        self.tau = primal_map(self.rho) * np.ones_like(self.rho)

    @classmethod
    def constant(cls, n: int, tau0: float = 0.5) -> "MirrorState":
        return cls(np.full(n, dual_map(tau0)))

    def update(self, rho: np.ndarray) -> None:
        self.rho = rho
        self.tau = primal_map(rho) * np.ones_like(rho)


# -- schedules -----------------------------------------------------------------


def cyclical_lr(t: int, T: int, M: int, l0: float) -> float:
    """Cosine cyclical learning rate: ``M`` high-to-low cycles over ``T`` iterations (t is 1-based)."""
    c = math.ceil(T / M)
    return l0 / 2.0 * (math.cos(math.pi * ((t - 1) % c) / c) + 1.0)


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str = "cyclical-cosine"
    l0: float = 0.01
    T: int = 1
    M: int = 1
    k_value: float = 1.0
    eta_scale: float = 0.1
    step_gamma: float = 0.1

    def __post_init__(self):
        if self.kind not in ("cyclical-cosine", "constant", "step"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.M < 1:
            raise ValueError("need at least one cycle")
        if self.l0 <= 0:
            raise ValueError("base learning rate must be positive")

    @property
    def cycle_length(self) -> int:
        return math.ceil(self.T / self.M)

    def lr(self, t: int) -> float:
        if self.kind == "constant":
            return self.l0
        if self.kind == "step":
            return self.l0 * self.step_gamma ** ((t - 1) // self.cycle_length)
        return cyclical_lr(t, self.T, self.M, self.l0)

    def eta(self, t: int) -> float:
        return self.eta_scale * self.lr(t)

    def k(self, t: int) -> float:
        # constant temperature scale; no annealing
        return self.k_value

    def cycle_end(self, t: int) -> bool:
        return t % self.cycle_length == 0 or t == self.T


def equivalence_params(l: float, h: float, k: float) -> tuple[float, float, float]:
    """SGHMC step, CV-Adam global scale and momentum for learning rate ``l``: ``(dt, alpha, beta1)``."""
    if l <= 0 or h <= 0 or k <= 0:
        raise ValueError("l, h and k must be positive")
    dt = math.sqrt(l)
    beta1 = 1.0 - h * dt
    if beta1 <= 0:
        raise ValueError(f"h * sqrt(l) = {h * dt} must be below 1")
    return dt, k * l**0.75, beta1


# -- samplers ------------------------------------------------------------------


@dataclass
class CvAdamState:
    mu: np.ndarray
    m: np.ndarray
    mirror: MirrorState
    lr: Callable[[int], float]
    eta: Callable[[int], float]
    alpha: Callable[[int], float]
    beta1: float = 0.9
    beta2: float = 1.0
    delta: float | np.ndarray = 1.0
    n_train: int = 1
    freeze_tau: bool = False
    eps_prev: np.ndarray | None = None
    w: np.ndarray | None = None
    t: int = 0

    @classmethod
    def init(cls, mu, tau0=0.5, **kw) -> "CvAdamState":
        mu = np.array(mu, dtype=np.float64)
        return cls(mu=mu, m=np.zeros_like(mu), mirror=MirrorState.constant(mu.size, tau0),
                   eps_prev=np.zeros_like(mu), w=mu.copy(), **kw)


def cv_adam_step(state: CvAdamState, grad_fn: GradFn, rng: np.random.Generator) -> float:
    """One constrained variational Adam iteration; updates ``state`` in place and returns the loss."""
    state.t += 1
    t = state.t
    l, eta, alpha = state.lr(t), state.eta(t), state.alpha(t)
    tau = state.mirror.tau
    eps = rng.standard_normal(state.mu.shape)
    w = state.mu + alpha * tau * eps
    loss, g = grad_fn(w)
    g = g + state.delta / state.n_train * state.mu
    state.m = state.beta1 * state.m + state.beta2 * g
    if not state.freeze_tau:
        state.mirror.update(rho_step(state.mirror.rho, tau, g, eps, eta, alpha, state.delta))
    state.mu = state.mu - l * state.mirror.tau * state.m
    state.eps_prev = eps
    state.w = w
    return loss


@dataclass
class SghmcState:
    w: np.ndarray
    v: np.ndarray
    mirror: MirrorState
    lr: Callable[[int], float]
    eta: Callable[[int], float]
    k: Callable[[int], float]
    beta1: float = 0.9
    beta2: float = 1.0
    delta: float | np.ndarray = 1.0
    n_train: int = 1
    freeze_tau: bool = False
    frozen: np.ndarray | None = None
    eps_prev: np.ndarray | None = None
    t: int = 0

    @classmethod
    def init(cls, w, tau0=0.5, **kw) -> "SghmcState":
        w = np.array(w, dtype=np.float64)
        return cls(w=w, v=np.zeros_like(w), mirror=MirrorState.constant(w.size, tau0),
                   eps_prev=np.zeros_like(w), **kw)

    def noise_scale(self, t: int) -> float:
        dt = math.sqrt(self.lr(t))
        return math.sqrt(2.0 + 2.0 * self.beta1**2) * self.k(t) * dt**1.5


def sghmc_step(state: SghmcState, grad_fn: GradFn, rng: np.random.Generator,
               noise: np.ndarray | None = None) -> float:
    """One preconditioned SGHMC iteration; updates ``state`` in place and returns the loss.

    The dual update consumes the previous iteration's draw. The velocity is
    accumulated with the gradient's sign so that ``w - tau * v`` descends.
    ``noise`` overrides the Gaussian draw (instrumentation only).
    """
    state.t += 1
    t = state.t
    l = state.lr(t)
    if l <= 0:
        raise ValueError("step size must be positive")
    dt = math.sqrt(l)
    eta, k = state.eta(t), state.k(t)
    alpha = k * dt**1.5
    loss, g = grad_fn(state.w)
    g = g + state.delta / state.n_train * state.w
    if not state.freeze_tau:
        state.mirror.update(rho_step(state.mirror.rho, state.mirror.tau, g, state.eps_prev, eta, alpha, state.delta))
    eps = rng.standard_normal(state.w.shape) if noise is None else np.broadcast_to(noise, state.w.shape).copy()
    tau = state.mirror.tau
    scale = math.sqrt(2.0 + 2.0 * state.beta1**2) * k * dt**1.5
    state.v = state.beta1 * state.v + state.beta2 * g * dt * dt + scale * eps
    if state.frozen is not None:
        state.v[state.frozen] = 0.0
    state.w = state.w - tau * state.v
    state.eps_prev = eps
    return loss


@dataclass
class NgviState:
    mu: np.ndarray
    inv_sigma2: np.ndarray
    lr: Callable[[int], float]
    gamma: float = 0.1
    lam: float = 1.0
    alpha_exponent: float = 0.5
    delta: float | np.ndarray = 1.0
    n_train: int = 1
    w: np.ndarray | None = None
    t: int = 0

    def __post_init__(self):
        if self.alpha_exponent not in (0.5, 1.0):
            raise ValueError("preconditioner exponent must be 1/2 or 1")
        if not 0 < self.gamma < 1:
            raise ValueError("momentum rate gamma must lie in (0, 1)")

    @classmethod
    def init(cls, mu, inv_sigma2=1.0, **kw) -> "NgviState":
        mu = np.array(mu, dtype=np.float64)
        return cls(mu=mu, inv_sigma2=np.full_like(mu, inv_sigma2), w=mu.copy(), **kw)


def ngvi_step(state: NgviState, grad_fn: GradFn, rng: np.random.Generator) -> float:
    state.t += 1
    sigma = 1.0 / np.sqrt(state.inv_sigma2)
    w = state.mu + sigma * rng.standard_normal(state.mu.shape)
    loss, g = grad_fn(w)
    d = state.delta / state.n_train
    prec = (1.0 - state.lam * state.gamma) * state.inv_sigma2 + state.gamma * (g * g + d)
    if not np.all(np.isfinite(prec)) or np.any(prec <= 0.0):
        raise PrecisionUnderflowError("posterior precision is no longer positive")
    state.inv_sigma2 = prec
    state.mu = state.mu - state.lr(state.t) * prec ** (-state.alpha_exponent) * (g + d * state.mu)
    state.w = w
    return loss
