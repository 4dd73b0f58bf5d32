"""Dense feedforward networks over a flat parameter vector.

Weights of layer ``i`` are stored row-major as a ``(fan_in, fan_out)`` block,
so the outgoing weights of one input unit are contiguous. Biases follow their
weight block.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

ACTIVATIONS = ("relu", "tanh")
OUTPUT_KINDS = ("regression", "logistic")
GROUP_KINDS = ("input-unit", "output-unit", "kernel")


class NumericOverflowError(ArithmeticError):
    """Raised when a forward or backward pass produces non-finite values."""


class LayerSlice(NamedTuple):
    w_offset: int
    fan_in: int
    fan_out: int
    b_offset: int | None


@dataclass(frozen=True)
class NetworkSpec:
    layer_sizes: tuple[int, ...]
    activations: tuple[str, ...]
    output_kind: str = "regression"
    include_bias: tuple[bool, ...] | bool = True

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        acts = (self.activations,) if isinstance(self.activations, str) else tuple(self.activations)
        if len(acts) == 1 and len(sizes) > 3:
            # a single tag applies to every hidden layer
            acts = acts * (len(sizes) - 2)
        object.__setattr__(self, "activations", acts)
        if isinstance(self.include_bias, bool):
            object.__setattr__(self, "include_bias", (self.include_bias,) * (len(sizes) - 1))
        else:
            object.__setattr__(self, "include_bias", tuple(bool(b) for b in self.include_bias))

        if len(sizes) < 3:
            raise ValueError("network needs an input, at least one hidden layer and an output")
        if any(s < 1 for s in sizes):
            raise ValueError(f"all layer sizes must be >= 1, got {sizes}")
        if len(acts) != len(sizes) - 2:
            raise ValueError(
                f"expected {len(sizes) - 2} activation tags for {len(sizes) - 2} hidden layers, got {len(acts)}"
            )
        bad = [a for a in acts if a not in ACTIVATIONS]
        if bad:
            raise ValueError(f"unknown activation(s) {bad}; choose from {ACTIVATIONS}")
        if self.output_kind not in OUTPUT_KINDS:
            raise ValueError(f"unknown output_kind {self.output_kind!r}; choose from {OUTPUT_KINDS}")
        if self.output_kind == "logistic" and sizes[-1] != 1:
            raise ValueError("logistic head needs a single output unit")
        if len(self.include_bias) != len(sizes) - 1:
            raise ValueError("include_bias needs one flag per layer")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @cached_property
    def layout(self) -> tuple[LayerSlice, ...]:
        return param_layout(self)

    @cached_property
    def n_params(self) -> int:
        last = self.layout[-1]
        end = last.w_offset + last.fan_in * last.fan_out
        return end + (last.fan_out if last.b_offset is not None else 0)


def param_layout(spec: NetworkSpec) -> tuple[LayerSlice, ...]:
    out = []
    offset = 0
    for i in range(spec.n_layers):
        fan_in, fan_out = spec.layer_sizes[i], spec.layer_sizes[i + 1]
        w_off = offset
        offset += fan_in * fan_out
        b_off = None
        if spec.include_bias[i]:
            b_off = offset
            offset += fan_out
        out.append(LayerSlice(w_off, fan_in, fan_out, b_off))
    return tuple(out)


@dataclass
class ParamStore:
    values: np.ndarray
    layout: tuple[LayerSlice, ...]

    def weight(self, layer: int) -> np.ndarray:
        """View of the ``(fan_in, fan_out)`` weight block of ``layer``."""
        return _weight_view(self.values, self.layout[layer])

    def bias(self, layer: int) -> np.ndarray | None:
        sl = self.layout[layer]
        if sl.b_offset is None:
            return None
        return self.values[sl.b_offset : sl.b_offset + sl.fan_out]

    def copy(self) -> "ParamStore":
        return ParamStore(self.values.copy(), self.layout)


def _weight_view(values: np.ndarray, sl: LayerSlice) -> np.ndarray:
    return values[sl.w_offset : sl.w_offset + sl.fan_in * sl.fan_out].reshape(sl.fan_in, sl.fan_out)


def _as_values(params) -> np.ndarray:
    return params.values if isinstance(params, ParamStore) else np.asarray(params, dtype=np.float64)


def weight_indices(spec: NetworkSpec) -> np.ndarray:
    """Flat indices of all non-bias weights."""
    return np.concatenate([np.arange(s.w_offset, s.w_offset + s.fan_in * s.fan_out) for s in spec.layout])


def bias_mask(spec: NetworkSpec) -> np.ndarray:
    mask = np.zeros(spec.n_params, dtype=bool)
    for s in spec.layout:
        if s.b_offset is not None:
            mask[s.b_offset : s.b_offset + s.fan_out] = True
    return mask


@dataclass
class Batch:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.inputs.shape[0] < 1:
            raise ValueError("batch must contain at least one row")
        if self.targets.shape[0] != self.inputs.shape[0]:
            raise ValueError("inputs and targets disagree on the number of rows")

    def __len__(self):
        return self.inputs.shape[0]


def build_network(spec: NetworkSpec, seed: int, init_scale: float | None = None) -> tuple[NetworkSpec, ParamStore]:
    """Initialize parameters: He normal for relu layers, LeCun normal for tanh, zero biases.

    The output layer uses the activation of the last hidden layer for its
    fan-in rule. ``init_scale`` replaces the gain (2 or 1) when given.
    """
    rng = np.random.default_rng(seed)
    layout = param_layout(spec)
    values = np.zeros(spec.n_params)
    for i, sl in enumerate(layout):
        act = spec.activations[min(i, len(spec.activations) - 1)]
        gain = init_scale if init_scale is not None else (2.0 if act == "relu" else 1.0)
        w = rng.standard_normal((sl.fan_in, sl.fan_out)) * np.sqrt(gain / sl.fan_in)
        values[sl.w_offset : sl.w_offset + w.size] = w.ravel()
    return spec, ParamStore(values, layout)


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activate_grad(kind: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    return 1.0 - a * a


def _forward_pass(spec: NetworkSpec, values: np.ndarray, x: np.ndarray, rows: np.ndarray | None = None):
    width = spec.layer_sizes[0] if rows is None else len(rows)
    if x.ndim != 2 or x.shape[1] != width:
        raise ValueError(f"input width {x.shape[-1]} does not match network input size {width}")
    layout = spec.layout
    zs, acts = [], [x]
    a = x
    for i, sl in enumerate(layout):
        W = _weight_view(values, sl)
        if i == 0 and rows is not None:
            W = W[rows]
        z = a @ W
        if sl.b_offset is not None:
            z = z + values[sl.b_offset : sl.b_offset + sl.fan_out]
        zs.append(z)
        if i < len(layout) - 1:
            a = _activate(spec.activations[i], z)
            acts.append(a)
    out = zs[-1]
    if not np.all(np.isfinite(out)):
        raise NumericOverflowError("non-finite network output")
    return zs, acts


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def forward(spec: NetworkSpec, params, inputs) -> np.ndarray:
    """Network predictions: raw outputs for regression, probabilities for the logistic head.

    Single-output networks return a flat ``(n,)`` array.
    """
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    zs, _ = _forward_pass(spec, _as_values(params), x)
    out = zs[-1]
    if spec.output_kind == "logistic":
        out = _sigmoid(out)
    return out[:, 0] if out.shape[1] == 1 else out


def negative_log_likelihood(spec: NetworkSpec, params, batch: Batch) -> float:
    zs, _ = _forward_pass(spec, _as_values(params), batch.inputs)
    return _nll_from_logits(spec, zs[-1], batch.targets)


def _nll_from_logits(spec, out, targets):
    y = targets.reshape(out.shape[0], -1)
    if spec.output_kind == "regression":
        return float(0.5 * np.sum((out - y) ** 2) / out.shape[0])
    # binary cross entropy from logits
    return float(np.mean(np.logaddexp(0.0, out) - y * out))


def loss_and_grad(spec: NetworkSpec, params, batch: Batch, decay=None,
                  rows: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood over ``batch`` and its exact gradient.

    The returned gradient also carries the weight-decay term ``decay * params``;
    the returned loss does not.

    With ``rows``, ``batch.inputs`` holds only those input columns and the
    first layer is evaluated on the matching weight rows. The loss equals the
    full one whenever the other rows are zero; their gradient is reported as 0.
    """
    w = _as_values(params)
    zs, acts = _forward_pass(spec, w, batch.inputs, rows)
    out = zs[-1]
    n = out.shape[0]
    loss = _nll_from_logits(spec, out, batch.targets)
    y = batch.targets.reshape(n, -1)
    if spec.output_kind == "regression":
        delta = (out - y) / n
    else:
        delta = (_sigmoid(out) - y) / n

    grad = np.zeros_like(w)
    layout = spec.layout
    for i in range(len(layout) - 1, -1, -1):
        sl = layout[i]
        gw = acts[i].T @ delta
        if i == 0 and rows is not None:
            _weight_view(grad, sl)[rows] = gw
        else:
            grad[sl.w_offset : sl.w_offset + gw.size] = gw.ravel()
        if sl.b_offset is not None:
            grad[sl.b_offset : sl.b_offset + sl.fan_out] = delta.sum(axis=0)
        if i > 0:
            da = delta @ _weight_view(w, sl).T
            delta = da * _activate_grad(spec.activations[i - 1], zs[i - 1], acts[i])
    if not np.all(np.isfinite(grad)):
        raise NumericOverflowError("non-finite gradient")
    if decay is not None:
        grad += np.asarray(decay) * w
    return loss, grad


def regularized_objective(spec: NetworkSpec, params, batch: Batch, decay=None) -> float:
    """NLL plus ``0.5 * sum(decay * w**2)``, the function whose gradient ``loss_and_grad`` returns."""
    w = _as_values(params)
    val = negative_log_likelihood(spec, w, batch)
    if decay is not None:
        val += 0.5 * float(np.sum(np.asarray(decay) * w * w))
    return val


def central_difference(f, w: np.ndarray, h: float = 1e-5) -> np.ndarray:
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    w = np.array(w, dtype=np.float64)
    g = np.empty_like(w)
    for i in range(w.size):
        orig = w[i]
        w[i] = orig + h
        fp = f(w)
        w[i] = orig - h
        fm = f(w)
        w[i] = orig
        g[i] = (fp - fm) / (2.0 * h)
    return g


def finite_diff_grad(spec: NetworkSpec, params, batch: Batch, decay=None, h: float = 1e-5) -> np.ndarray:
    return central_difference(lambda v: regularized_objective(spec, v, batch, decay), _as_values(params), h)


@dataclass
class Group:
    gid: int
    members: np.ndarray
    kind: str
    layer: int

    @property
    def size(self) -> int:
        return int(self.members.size)


@dataclass
class GroupPartition:
    """Groups of weight indices, the unit of spike-and-slab selection and pruning.

    Groups of one kind are disjoint. A ``both`` partition holds the input-unit
    groups followed by the output-unit groups, so each weight sits in two groups.
    """

    groups: list[Group]
    scheme: str
    _order: np.ndarray = field(init=False, repr=False)
    _starts: np.ndarray = field(init=False, repr=False)
    _sizes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if any(g.size < 1 for g in self.groups):
            raise ValueError("every group needs at least one member")
        if self.groups:
            self._order = np.concatenate([g.members for g in self.groups])
            self._sizes = np.array([g.size for g in self.groups])
        else:
            self._order = np.zeros(0, dtype=np.int64)
            self._sizes = np.zeros(0, dtype=np.int64)
        self._starts = np.concatenate([[0], np.cumsum(self._sizes)[:-1]]).astype(np.int64)

    def __len__(self):
        return len(self.groups)

    @property
    def sizes(self) -> np.ndarray:
        return self._sizes

    def mean_square(self, w: np.ndarray) -> np.ndarray:
        """Per-group ``sum(w_k**2) / G``."""
        if not self.groups:
            return np.zeros(0)
        sq = w[self._order] ** 2
        return np.add.reduceat(sq, self._starts) / self._sizes

    def abs_range(self, w: np.ndarray) -> np.ndarray:
        """Per-group ``max|w| - min|w|``."""
        if not self.groups:
            return np.zeros(0)
        a = np.abs(w[self._order])
        return np.maximum.reduceat(a, self._starts) - np.minimum.reduceat(a, self._starts)

    def abs_max(self, w: np.ndarray) -> np.ndarray:
        if not self.groups:
            return np.zeros(0)
        return np.maximum.reduceat(np.abs(w[self._order]), self._starts)

    def broadcast(self, per_group: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Member indices and the per-group value repeated for each member."""
        return self._order, np.repeat(per_group, self._sizes)

    def subset(self, keep) -> "GroupPartition":
        return GroupPartition([g for g in self.groups if keep(g)], self.scheme)


def _layer_groups(sl: LayerSlice, layer: int, kind: str, start_gid: int) -> list[Group]:
    block = np.arange(sl.w_offset, sl.w_offset + sl.fan_in * sl.fan_out).reshape(sl.fan_in, sl.fan_out)
    if kind == "input-unit":
        rows = block
    else:
        rows = block.T
    return [Group(start_gid + i, rows[i].copy(), kind, layer) for i in range(rows.shape[0])]


def group_partition(spec: NetworkSpec, scheme: str = "input-unit", layers: Sequence[int] | None = None) -> GroupPartition:
    """Unit groups over the dense weights. Biases never belong to a group.

    ``layers`` restricts the partition to a subset of layers (all by default).
    """
    if scheme not in ("input-unit", "output-unit", "both"):
        raise ValueError(f"unknown grouping scheme {scheme!r}")
    layer_ids = range(spec.n_layers) if layers is None else list(layers)
    kinds = ["input-unit", "output-unit"] if scheme == "both" else [scheme]
    groups: list[Group] = []
    for kind in kinds:
        for li in layer_ids:
            groups.extend(_layer_groups(spec.layout[li], li, kind, len(groups)))
    return GroupPartition(groups, scheme)


def kernel_partition(index_blocks: Sequence[Sequence[int]]) -> GroupPartition:
    """Generic groups from explicit index blocks, e.g. the K*K taps of a kernel."""
    groups = [Group(i, np.asarray(b, dtype=np.int64), "kernel", -1) for i, b in enumerate(index_blocks)]
    return GroupPartition(groups, "kernel")
