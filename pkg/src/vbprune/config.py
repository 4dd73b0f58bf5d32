"""Run configuration: flat sectioned ``key = value`` text.

Schema (every key optional unless noted)::

    [net]    sizes = 1000,5,3,1   activation = relu|tanh   output = regression|logistic   bias = true
    [opt]    kind = em-mcmc|sghmc|cv-adam|ngvi   l0   cycles   schedule = cyclical-cosine|constant|step
             beta1   beta2   k_mode = sqrtN|coldN|custom   k   eta_scale   delta   tau0   freeze_tau
             init_scale   ngvi_gamma   ngvi_lambda   ngvi_alpha   ngvi_precision
    [ss]     delta0   delta1   lambda1   lambda2   warmup_frac   interval   mode = dfp|dpf
             rule = l2|concentration   layers = first|all
    [data]   example = 1|2|3   seed   p   n_train   n_test   path      (example or path is required)
    [train]  epochs   batch   seed   snapshots
    [verify] n   delta   steps   burn_in   l   h   beta1   k_mode   k   seed

An ``[ss]`` section is only honoured by ``opt.kind = em-mcmc``, which
requires it. ``ss.interval`` counts iterations and defaults to one epoch.
Unknown sections or keys are errors.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

from . import nn, sim
from .spike_slab import SpikeSlabConfig
from .training import OPTIMIZERS, TrainConfig


class ConfigError(ValueError):
    pass


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _choice(*options):
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text
    return parse


SCHEMA = {
    "net": {"sizes": _ints, "activation": _choice("relu", "tanh"), "output": _choice("regression", "logistic"),
            "bias": _bool},
    "opt": {"kind": _choice(*OPTIMIZERS), "l0": float, "cycles": int,
            "schedule": _choice("cyclical-cosine", "constant", "step"), "beta1": float, "beta2": float,
            "k_mode": _choice("sqrtN", "coldN", "custom"), "k": float, "eta_scale": float, "delta": float,
            "tau0": float, "freeze_tau": _bool, "init_scale": float, "ngvi_gamma": float, "ngvi_lambda": float,
            "ngvi_alpha": float, "ngvi_precision": float},
    "ss": {"delta0": float, "delta1": float, "lambda1": float, "lambda2": float, "warmup_frac": float,
           "interval": int, "mode": _choice("dfp", "dpf"), "rule": _choice("l2", "concentration"),
           "layers": _choice("first", "all")},
    "data": {"example": int, "seed": int, "p": int, "n_train": int, "n_test": int, "path": str},
    "train": {"epochs": int, "batch": int, "seed": int, "snapshots": int},
    "verify": {"n": int, "delta": float, "steps": int, "burn_in": int, "l": float, "h": float, "beta1": float,
               "k_mode": _choice("sqrtN", "coldN", "custom"), "k": float, "seed": int},
}


@dataclass
class DataSource:
    example: int | None = None
    seed: int = 0
    p: int | None = None
    n_train: int = 10000
    n_test: int = 1000
    path: Path | None = None

    def load(self) -> tuple[sim.SimDataset, sim.SimDataset | None]:
        if self.path is not None:
            return sim.read_dataset(self.path)
        return sim.make_example(self.example, self.n_train, self.n_test, self.p, self.seed)


@dataclass
class RunConfig:
    spec: nn.NetworkSpec
    data: DataSource
    opt: dict = field(default_factory=dict)
    ss: dict | None = None
    train: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return self.train.get("seed", 0)

    def train_config(self, n_train: int, seed: int | None = None) -> TrainConfig:
        """Resolve iteration-based settings once the training size is known."""
        epochs = self.train.get("epochs", 100)
        batch = self.train.get("batch", 100)
        if batch > n_train:
            raise ConfigError(f"train.batch={batch} exceeds the training size {n_train}")
        ipe = math.ceil(n_train / batch)
        ss = None
        if self.ss is not None:
            s = self.ss
            ss = SpikeSlabConfig(delta0=s.get("delta0", 2500.0), delta1=s.get("delta1", 25.0),
                                 lambda1=s.get("lambda1", 0.01), lambda2=s.get("lambda2", 0.0),
                                 warmup_iters=round(s.get("warmup_frac", 0.25) * epochs * ipe),
                                 em_interval=s.get("interval", ipe), mode=s.get("mode", "dfp"),
                                 prune_rule=s.get("rule", "l2"))
        o = self.opt
        return TrainConfig(
            spec=self.spec, optimizer=o.get("kind", "em-mcmc"), epochs=epochs, batch_size=batch,
            seed=self.seed if seed is None else seed, l0=o.get("l0", 0.01), cycles=o.get("cycles", 1),
            schedule_kind=o.get("schedule", "cyclical-cosine"), eta_scale=o.get("eta_scale", 0.1),
            k_mode=o.get("k_mode", "sqrtN"), k_custom=o.get("k"), beta1=o.get("beta1", 0.9),
            beta2=o.get("beta2", 1.0), delta=o.get("delta", 1.0), tau0=o.get("tau0", 0.5),
            freeze_tau=o.get("freeze_tau", False), init_scale=o.get("init_scale"), spike_slab=ss,
            prune_layers=self.ss.get("layers", "first") if self.ss else "first",
            snapshots_per_cycle=self.train.get("snapshots", 3), ngvi_gamma=o.get("ngvi_gamma", 0.1),
            ngvi_lambda=o.get("ngvi_lambda", 1.0), ngvi_alpha=o.get("ngvi_alpha", 0.5),
            ngvi_inv_sigma2=o.get("ngvi_precision", 1e4))


def _read_sections(text: str) -> dict[str, dict]:
    cp = configparser.ConfigParser(interpolation=None, default_section="\0none")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from exc
    out: dict[str, dict] = {}
    for name in cp.sections():
        if name not in SCHEMA:
            raise ConfigError(f"unknown section [{name}]")
        out[name] = {}
        for key, raw in cp.items(name):
            if key not in SCHEMA[name]:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
            try:
                out[name][key] = SCHEMA[name][key](raw.strip())
            except ValueError as exc:
                raise ConfigError(f"{name}.{key}: {exc}") from exc
    return out


def parse_config(text: str) -> RunConfig:
    sec = _read_sections(text)
    d = sec.get("data", {})
    if "example" not in d and "path" not in d:
        raise ConfigError("missing required key data.example (or data.path)")
    path = Path(d["path"]) if "path" in d else None
    if path is not None and not path.exists():
        raise ConfigError(f"data.path {path} does not exist")
    meta = sim.read_dataset_meta(path) if path is not None else {}
    example = d.get("example", meta.get("example"))
    if example is not None and example not in sim.TRUTH:
        raise ConfigError(f"data.example must be 1, 2 or 3, got {example}")
    data = DataSource(example, d.get("seed", 0), d.get("p"), d.get("n_train", 10000), d.get("n_test", 1000), path)
    if data.n_train < 1 or data.n_test < 0:
        raise ConfigError("data.n_train must be positive and data.n_test non-negative")

    if path is not None:
        p = meta.get("p")
        if p is None:
            with path.open() as fh:
                p = len(fh.readline().split(",")) - 1
    else:
        p = sim.DEFAULT_P[example] if data.p is None else data.p
    net = sec.get("net", {})
    if "sizes" in net:
        sizes = net["sizes"]
    elif example is not None:
        sizes = sim.default_network(example, p).layer_sizes
    else:
        raise ConfigError("net.sizes is required when the data has no example id")
    if sizes[0] != p:
        raise ConfigError(f"net.sizes starts with {sizes[0]} but the data has p={p}")
    output = net.get("output", "logistic" if example == 3 else "regression")
    try:
        spec = nn.NetworkSpec(tuple(sizes), (net.get("activation", "relu"),) * (len(sizes) - 2), output,
                              net.get("bias", True))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    opt = sec.get("opt", {})
    kind = opt.get("kind", "em-mcmc")
    ss = sec.get("ss")
    if kind == "em-mcmc" and ss is None:
        raise ConfigError("opt.kind=em-mcmc needs an [ss] section")
    if opt.get("k_mode") == "custom" and "k" not in opt:
        raise ConfigError("opt.k_mode=custom needs opt.k")
    if ss is not None and not 0.0 <= ss.get("warmup_frac", 0.25) <= 1.0:
        raise ConfigError("ss.warmup_frac must lie in [0, 1]")
    cfg = RunConfig(spec, data, opt, ss if kind == "em-mcmc" else None, sec.get("train", {}), sec.get("verify", {}))
    # build once now so that constraint violations surface before any training starts;
    # a CSV without a sidecar has unknown size until it is read
    n_train = data.n_train if path is None else meta.get("n_train")
    try:
        cfg.train_config(n_train if n_train is not None else cfg.train.get("batch", 100))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def parse_verify_config(text: str) -> dict:
    """The ``[verify]`` section of a configuration; other sections are validated but ignored."""
    return _read_sections(text).get("verify", {})
