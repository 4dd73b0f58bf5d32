"""Group spike-and-slab soft masking and hard pruning.

A soft mask picks, per group, the slab (small decay ``delta1 / N``) or the
spike (large decay ``delta0 / N``). A hard mask removes groups outright.
Under DFP a pruned weight is zeroed and frozen for good; under DPF the dense
weights are kept and only the forward pass sees the mask, so groups can regrow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nn import GroupPartition

MODES = ("dfp", "dpf")
RULES = ("concentration", "l2")


@dataclass(frozen=True)
class SpikeSlabConfig:
    delta0: float = 2500.0
    delta1: float = 25.0
    lambda1: float = 0.01
    lambda2: float = 0.0
    warmup_iters: int = 0
    em_interval: int = 1
    mode: str = "dfp"
    prune_rule: str = "l2"

    def __post_init__(self):
        if not self.delta1 > 0:
            raise ValueError("delta1 must be positive")
        if not self.delta0 > self.delta1:
            raise ValueError("delta0 must exceed delta1")
        if self.lambda1 < 0:
            raise ValueError("lambda1 must be non-negative")
        if self.lambda2 < 0:
            raise ValueError("lambda2 must be non-negative")
        if self.em_interval < 1:
            raise ValueError("em_interval must be at least 1")
        if self.warmup_iters < 0:
            raise ValueError("warmup_iters must be non-negative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.prune_rule not in RULES:
            raise ValueError(f"prune_rule must be one of {RULES}")


def lambda1_threshold(delta0: float, delta1: float, p_group: float, G: int) -> float:
    """Mean-square threshold below which the M-step picks the spike for a group of size ``G``.

    ``p_group`` is the prior probability of the spike.
    """
    if delta0 == delta1:
        raise ValueError("delta0 and delta1 must differ")
    if not (delta0 > delta1 > 0):
        raise ValueError("need delta0 > delta1 > 0")
    if not 0 < p_group < 1:
        raise ValueError("p_group must lie in (0, 1)")
    if G < 1:
        raise ValueError("group size must be at least 1")
    # odds raised before the log: when prior and precision terms cancel exactly in the reals,
    # this keeps the float result at exactly 0 in the common small-G cases
    ratio = (1.0 - p_group) / p_group
    try:
        prior = math.log(ratio ** (2.0 / G))
    except (OverflowError, ValueError):
        prior = (2.0 / G) * math.log(ratio)
    return (math.log(delta0 / delta1) - prior) / (delta0 - delta1)


def em_update_softmask(params: np.ndarray, partition: GroupPartition, lambda1: float) -> np.ndarray:
    """M-step with the single-sample expectation. Returns True for slab, False for spike."""
    return partition.mean_square(params) > lambda1


def precision_vector(soft: np.ndarray, partition: GroupPartition, delta0: float, delta1: float,
                     n_params: int) -> np.ndarray:
    """Per-weight prior precision; weights outside the partition (and biases) get the slab."""
    out = np.full(n_params, float(delta1))
    idx, slab = partition.broadcast(soft)
    spike_idx = idx[~slab]
    out[spike_idx] = delta0
    return out


def decay_vector(soft: np.ndarray, partition: GroupPartition, delta0: float, delta1: float, N: int,
                 n_params: int) -> np.ndarray:
    """Per-weight decay ``delta / N`` for the gradient."""
    return precision_vector(soft, partition, delta0, delta1, n_params) / N


def prune_concentration(params: np.ndarray, input_groups: GroupPartition, output_groups: GroupPartition,
                        lambda2: float) -> tuple[np.ndarray, np.ndarray]:
    """Prune groups whose absolute weights concentrate: ``max|w| - min|w| < lambda2``.

    Size-one groups fall back to ``|w| < lambda2``. Returns alive flags for
    the input groups and the output groups.
    """

    def scan(part):
        if len(part) == 0:
            return np.ones(0, dtype=bool)
        spread = np.where(part.sizes == 1, part.abs_max(params), part.abs_range(params))
        return ~(spread < lambda2)

    return scan(input_groups), scan(output_groups)


def prune_l2(params: np.ndarray, input_groups: GroupPartition, lambda1: float) -> np.ndarray:
    """Prune input units whose mean squared outgoing weight is at most ``lambda1``. Returns alive flags."""
    return input_groups.mean_square(params) > lambda1


def alive_weights(n_params: int, masks: list[tuple[GroupPartition, np.ndarray]]) -> np.ndarray:
    """A weight is alive unless some group containing it is pruned."""
    alive = np.ones(n_params, dtype=bool)
    for part, group_alive in masks:
        if len(part) == 0:
            continue
        idx, flags = part.broadcast(group_alive)
        alive[idx[~flags]] = False
    return alive


@dataclass
class MaskState:
    """Soft and hard masks over a fixed set of partitions.

    ``em_partition`` carries the soft mask. ``prune_partitions`` carry the
    hard masks; for the L2 rule it is the input-unit partition, for the
    concentration rule the input-unit and output-unit partitions.
    """

    n_params: int
    em_partition: GroupPartition
    prune_partitions: list[GroupPartition]
    mode: str = "dfp"
    soft: np.ndarray = field(default=None)
    hard: list[np.ndarray] = field(default=None)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.soft is None:
            self.soft = np.ones(len(self.em_partition), dtype=bool)
        if self.hard is None:
            self.hard = [np.ones(len(p), dtype=bool) for p in self.prune_partitions]

    @property
    def alive(self) -> np.ndarray:
        return alive_weights(self.n_params, list(zip(self.prune_partitions, self.hard)))

    def effective(self, w: np.ndarray) -> np.ndarray:
        """Parameters seen by the forward pass."""
        return w * self.alive

    def update_hard(self, new_hard: list[np.ndarray]) -> None:
        if self.mode == "dfp":
            # no regrowth
            new_hard = [old & new for old, new in zip(self.hard, new_hard)]
        self.hard = [np.asarray(h, dtype=bool) for h in new_hard]

    def pruned_groups(self) -> list[np.ndarray]:
        return [np.flatnonzero(~h) for h in self.hard]


def apply_mask_semantics(mode: str, w: np.ndarray, alive: np.ndarray, v: np.ndarray | None = None):
    """Dense parameters after a mask update, and the parameters the forward pass should use.

    DFP zeroes pruned coordinates of the dense vector (and of the velocity
    ``v`` in place) so they stay frozen at 0. DPF leaves the dense vector
    untouched and only the forward view is masked.
    """
    if mode == "dfp":
        w = np.where(alive, w, 0.0)
        if v is not None:
            v[~alive] = 0.0
        return w, w
    if mode == "dpf":
        return w, w * alive
    raise ValueError(f"mode must be one of {MODES}")


def sparsity_metrics(masks: MaskState, partition: GroupPartition | None = None) -> tuple[float, float]:
    """Fraction of covered weights pruned, and fraction assigned the spike decay."""
    part = masks.em_partition if partition is None else partition
    idx, slab = part.broadcast(masks.soft)
    if idx.size == 0:
        return 0.0, 0.0
    covered = np.unique(idx)
    alive = masks.alive
    sparsity = float(np.mean(~alive[covered]))
    spike = np.zeros(masks.n_params, dtype=bool)
    spike[idx[~slab]] = True
    soft = float(np.mean(spike[covered]))
    return sparsity, soft
