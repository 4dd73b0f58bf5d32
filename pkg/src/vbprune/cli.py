"""Command-line entry point: ``vbprune {gen-data,train,evaluate,verify-sampler,verify-equivalence}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, sim, training, verify
from .config import ConfigError, load_config, parse_verify_config

log = logging.getLogger("vbprune")


def _dump_json(obj, path=None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def write_metrics_csv(path, records) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(training.EpochRecord.FIELDS)
        for r in records:
            w.writerow([repr(getattr(r, f)) for f in training.EpochRecord.FIELDS])


def evaluation_report(spec, w, ensemble, test: sim.SimDataset, alive: np.ndarray | None) -> dict:
    pred = training.predict(spec, w, ensemble, test.X)
    kind = "logistic" if spec.output_kind == "logistic" else "regression"
    report = {"metric": "accuracy" if kind == "logistic" else "mse",
              "value": sim.predictive_metrics(pred, test.y, kind), "n_test": len(test.y),
              "ensemble_size": len(ensemble)}
    sl = spec.layout[0]
    rows = np.ones(sl.fan_in, dtype=bool) if alive is None else \
        alive[sl.w_offset : sl.w_offset + sl.fan_in * sl.fan_out].reshape(sl.fan_in, sl.fan_out).any(axis=1)
    selected = sim.selected_variables(rows)
    if test.truth:
        report["selection"] = sim.selection_metrics(selected, test.truth, sl.fan_in).as_dict()
    else:
        report["selection"] = {"selected": sorted(selected), "S_hat": len(selected)}
    return report


def cmd_gen_data(args) -> int:
    train, test = sim.make_example(args.example, args.n_train, args.n_test, args.p, args.seed)
    sim.write_dataset(args.out, train, test)
    log.info("wrote %d + %d rows to %s", len(train.y), len(test.y), args.out)
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    train_set, test_set = cfg.data.load()
    seed = cfg.seed if args.seed is None else args.seed
    tcfg = cfg.train_config(len(train_set.y), seed)
    result = training.train(tcfg, train_set, test_set)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out / "metrics.csv", result.metrics)
    checkpoint.save_result(out / "checkpoint.bin", result, {"config": Path(args.config).name})
    report = {"seed": seed, "optimizer": tcfg.optimizer, "epochs": tcfg.epochs, "iterations": result.iterations}
    if test_set is not None and len(test_set.y):
        alive = result.masks.alive if result.masks is not None else None
        report.update(evaluation_report(tcfg.spec, result.effective_w, result.ensemble, test_set, alive))
    _dump_json(report, out / "report.json")
    log.info("training finished: %s", {k: report[k] for k in ("metric", "value") if k in report})
    return 0


def cmd_evaluate(args) -> int:
    spec, w, ensemble, ck = checkpoint.load_model(args.checkpoint)
    train_set, test_set = sim.read_dataset(args.data)
    data = test_set if test_set is not None else train_set
    if data.X.shape[1] != spec.layer_sizes[0]:
        raise ValueError(f"data has {data.X.shape[1]} columns, checkpoint expects {spec.layer_sizes[0]}")
    report = evaluation_report(spec, w, ensemble, data, ck.arrays.get("mask.alive"))
    report.update({"checkpoint": str(args.checkpoint), "iteration": ck.meta.get("iteration")})
    _dump_json(report, args.out)
    return 0


def _sampler_config(v: dict) -> verify.SamplerConfig:
    return verify.SamplerConfig(l=v.get("l", 0.01), beta1=v.get("beta1"), k_mode=v.get("k_mode", "sqrtN"),
                                k_custom=v.get("k"), burn_in=v.get("burn_in", 5000))


def cmd_verify_sampler(args) -> int:
    v = parse_verify_config(Path(args.config).read_text())
    rep = verify.verify_sghmc_gaussian(v.get("n", 100), v.get("delta", 1.0), v.get("seed", 0),
                                       v.get("steps", 200_000), _sampler_config(v))
    _dump_json(rep.as_dict(), args.out)
    return 0


def cmd_verify_equivalence(args) -> int:
    v = parse_verify_config(Path(args.config).read_text())
    k = v.get("k") if v.get("k_mode", "sqrtN") == "custom" else None
    if v.get("k_mode") == "coldN":
        k = 1.0 / v.get("n", 100)
    rep = verify.verify_equivalence(v.get("l", 0.01), v.get("h"), k, v.get("seed", 0), v.get("steps", 200_000),
                                    v.get("n", 100), v.get("delta", 1.0), v.get("burn_in", 5000))
    _dump_json(rep.as_dict(), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vbprune", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a simulated dataset (train rows then test rows)")
    g.add_argument("--example", type=int, choices=(1, 2, 3), required=True)
    g.add_argument("--n-train", type=int, default=10000)
    g.add_argument("--n-test", type=int, default=1000)
    g.add_argument("--p", type=int, default=None, help="number of predictors (default depends on the example)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train from a configuration file")
    t.add_argument("--config", required=True)
    t.add_argument("--out-dir", required=True)
    t.add_argument("--seed", type=int, default=None, help="override train.seed")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a checkpoint on a dataset CSV")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    for name, func, text in (("verify-sampler", cmd_verify_sampler, "SGHMC moments on the conjugate model"),
                             ("verify-equivalence", cmd_verify_equivalence, "CV-Adam against SGHMC")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", required=True)
        s.add_argument("--out", default=None, help="report path (default: stdout)")
        s.set_defaults(func=func)
    return parser


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, checkpoint.CheckpointError, ValueError, OSError) as exc:
        print(f"vbprune {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
