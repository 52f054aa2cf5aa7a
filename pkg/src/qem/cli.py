"""Command-line front end.

Subcommands::

    qem validate MODEL.qem
    qem run CONFIG
    qem sweep CONFIG
    qem oracle BUILTIN [--seed N] [--out DIR]

Configs are flat ``key = value`` files; list values are comma separated.
Outputs go to ``output_dir`` from the config, overridden by the
``QEM_OUTPUT_DIR`` environment variable.  Exit codes: 0 success,
1 validation or domain failure, 2 I/O or configuration failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import itertools
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import QEMError, SchemaError, UnsupportedModelError
from .graph import ModelIR
from .model_dsl import load_dataset, load_model, parse, pretty_print, write_dataset
from .models import BUILTINS
from .oracles import exact_posterior, make_instance
from .qem import EmaConfig, QemConfig, fmt, run_qem

EXIT_OK, EXIT_DOMAIN, EXIT_IO = 0, 1, 2
OUTPUT_ENV = "QEM_OUTPUT_DIR"
METHODS = ("qem", "global_iw", "mpiw_fixed")
METRICS = ("elbo", "predictive_ll", "moment_mse")


class ConfigError(Exception):
    """Malformed or inconsistent configuration (exit code 2)."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    model: str
    data: tuple = ()
    test_data: tuple = ()
    sizes: dict = field(default_factory=dict)
    data_seed: int = 0
    method: str = "qem"
    K: int = 30
    iterations: int = 250
    seed: int = 0
    ema_mode: str = "scheduled"
    ema_p: float = 0.5
    ema_new_weight: float = 0.3
    denominator: str = "self_normalized"
    variance_floor: float = 1e-8
    bernoulli_floor: float = 1e-3
    rank_cap: int = 4
    predictive_samples: int = 100
    metrics: tuple = METRICS
    oracle: bool = True
    output_dir: str = "qem_out"
    timing: bool = True

    @property
    def is_builtin(self) -> bool:
        return self.model in BUILTINS

    def qem_config(self) -> QemConfig:
        return QemConfig(K=self.K, iterations=self.iterations, seed=self.seed,
                         ema=EmaConfig(self.ema_mode, self.ema_new_weight, self.ema_p),
                         denominator=self.denominator, variance_floor=self.variance_floor,
                         bernoulli_floor=self.bernoulli_floor,
                         estimator="global_iw" if self.method == "global_iw" else "mpiw",
                         adapt=self.method != "mpiw_fixed", rank_cap=self.rank_cap,
                         predictive_samples=self.predictive_samples, timing=self.timing)

    def echo(self) -> dict:
        d = asdict(self)
        d["data"], d["test_data"], d["metrics"] = list(self.data), list(self.test_data), list(self.metrics)
        return d


_LIST_KEYS = {"data", "test_data", "metrics"}
_SWEEP_KEYS = {"method", "K", "seed"}
_INT_KEYS = {"data_seed", "K", "iterations", "seed", "rank_cap", "predictive_samples"}
_FLOAT_KEYS = {"ema_p", "ema_new_weight", "variance_floor", "bernoulli_floor"}
_BOOL_KEYS = {"oracle", "timing"}


def _split(value: str) -> list:
    return [v.strip() for v in value.split(",") if v.strip()]


def _parse_bool(key, value):
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def _convert(key, value):
    try:
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r}") from None
    if key in _BOOL_KEYS:
        return _parse_bool(key, value)
    return value.strip()


def read_config(path) -> dict:
    """Parse a flat ``key = value`` file into raw string values."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string("[config]\n" + text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    raw = dict(parser["config"])
    known = {f for f in RunConfig.__dataclass_fields__}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    if "model" not in raw:
        raise ConfigError(f"{path}: 'model' is required")
    base = path.parent
    for key in ("data", "test_data"):
        if key in raw:
            raw[key] = ",".join(str((base / p).resolve()) for p in _split(raw[key]))
    if raw["model"] not in BUILTINS:
        raw["model"] = str((base / raw["model"]).resolve())
    return raw


def build_run_config(raw: dict, sweep_values: dict | None = None) -> RunConfig:
    kwargs = {}
    for key, value in raw.items():
        if key in _SWEEP_KEYS and sweep_values is not None:
            continue
        if key in _LIST_KEYS:
            kwargs[key] = tuple(_split(value))
        elif key == "sizes":
            kwargs[key] = _parse_sizes(value)
        elif key in _SWEEP_KEYS:
            items = _split(value)
            if len(items) != 1:
                raise ConfigError(f"{key}: a single run takes one value, got {items}")
            kwargs[key] = _convert(key, items[0])
        else:
            kwargs[key] = _convert(key, value)
    if sweep_values:
        kwargs.update(sweep_values)
    if OUTPUT_ENV in os.environ:
        kwargs["output_dir"] = os.environ[OUTPUT_ENV]
    cfg = RunConfig(**kwargs)
    _check(cfg)
    return cfg


def _parse_sizes(value: str) -> dict:
    out = {}
    for item in _split(value):
        name, _, size = item.partition("=")
        try:
            out[name.strip()] = int(size)
        except ValueError:
            raise ConfigError(f"sizes: cannot parse {item!r}") from None
    return out


def _check(cfg: RunConfig):
    if cfg.method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}, got {cfg.method!r}")
    bad = [m for m in cfg.metrics if m not in METRICS]
    if bad:
        raise ConfigError(f"unknown metrics {bad}")
    if not cfg.is_builtin:
        if not Path(cfg.model).is_file():
            raise ConfigError(f"model file not found: {cfg.model}")
        if not cfg.data:
            raise ConfigError("a model file needs 'data'")
    for p in cfg.data + cfg.test_data:
        if not Path(p).is_file():
            raise ConfigError(f"data file not found: {p}")


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------

@dataclass
class Prepared:
    model: ModelIR
    test_model: ModelIR | None
    truth: dict | None


def prepare(cfg: RunConfig) -> Prepared:
    """Load or simulate the model and data named by ``cfg``."""
    if cfg.is_builtin:
        inst = make_instance(cfg.model, seed=cfg.data_seed, **cfg.sizes)
        model, test = inst.model, inst.test_model
    else:
        structure = load_model(cfg.model)
        model = load_dataset(list(cfg.data), structure)
        test = load_dataset(list(cfg.test_data), structure) if cfg.test_data else None
    truth = None
    if cfg.oracle and "moment_mse" in cfg.metrics:
        try:
            truth = exact_posterior(model).first_moments
        except UnsupportedModelError:
            truth = None
    if "predictive_ll" not in cfg.metrics:
        test = None
    return Prepared(model, test, truth)


def execute(cfg: RunConfig, out_dir: Path) -> dict:
    """Run one configuration, writing ``trace.csv`` and ``summary.json``."""
    prep = prepare(cfg)
    start = time.perf_counter()
    trace = run_qem(prep.model, cfg.qem_config(), test_model=prep.test_model, truth=prep.truth)
    total = time.perf_counter() - start
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "trace.csv").write_text(trace.to_csv(), encoding="utf-8")
    last = trace.rows[-1]
    summary = {
        "method": cfg.method,
        "final_moments": {name: trace.mean_params(name)[-1].tolist() for name in trace.latents
                          if name in last.moments},
        "final_first_moments": {name: np.asarray(last.moments[name])[..., 0].tolist() for name in last.moments},
        "best_log_evidence": float(np.max(trace.log_evidence)),
        "final_log_evidence": float(last.log_evidence),
        "predictive_ll": last.predictive_ll,
        "moment_mse": last.moment_mse,
        "total_time_s": total if cfg.timing else None,
        "config": cfg.echo(),
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return summary


def cmd_validate(args) -> int:
    try:
        text = Path(args.model).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read {args.model}: {exc.strerror}", file=sys.stderr)
        return EXIT_IO
    result = parse(text)
    if isinstance(result, list):
        for err in result:
            print(err.format(text))
        return EXIT_DOMAIN
    print(result.report.format())
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = build_run_config(read_config(args.config))
    summary = execute(cfg, Path(cfg.output_dir))
    print(f"wrote {Path(cfg.output_dir) / 'trace.csv'}; final log_evidence {fmt(summary['final_log_evidence'])}")
    return EXIT_OK


def _sweep_cell(cfg: RunConfig) -> tuple:
    cell = f"{cfg.method}_K{cfg.K}_seed{cfg.seed}"
    try:
        execute(cfg, Path(cfg.output_dir) / "cells" / cell)
        return cell, None
    except QEMError as exc:
        return cell, str(exc)


def sweep_configs(raw: dict) -> list:
    methods = _split(raw.get("method", "qem"))
    Ks = [_convert("K", k) for k in _split(raw.get("K", "30"))]
    seeds = [_convert("seed", s) for s in _split(raw.get("seed", "0"))]
    return [build_run_config(raw, {"method": m, "K": k, "seed": s})
            for m, k, s in itertools.product(methods, Ks, seeds)]


def cmd_sweep(args) -> int:
    raw = read_config(args.config)
    cfgs = sweep_configs(raw)
    out = Path(cfgs[0].output_dir)
    workers = max(1, min(args.workers, len(cfgs)))
    if workers == 1:
        results = [_sweep_cell(c) for c in cfgs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_cell, cfgs))
    failures = {cell: err for cell, err in results if err is not None}
    out.mkdir(parents=True, exist_ok=True)
    write_aggregate(out, cfgs, failures)
    (out / "failures.json").write_text(json.dumps(failures, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for cell, err in sorted(failures.items()):
        print(f"cell {cell} failed: {err}", file=sys.stderr)
    print(f"wrote {out / 'aggregate.csv'} ({len(cfgs) - len(failures)}/{len(cfgs)} cells succeeded)")
    return EXIT_OK if not failures else EXIT_DOMAIN


AGG_METRICS = ("log_evidence", "predictive_ll", "moment_mse")


def _read_trace(path: Path) -> dict:
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return {m: [float(r[m]) if r.get(m) not in (None, "") else np.nan for r in rows] for m in AGG_METRICS}


def aggregate(series: list) -> tuple:
    """Mean and standard error across runs (standard error 0 for one run)."""
    a = np.asarray(series, dtype=float)
    ok = a[~np.isnan(a)]
    if ok.size == 0:
        return np.nan, np.nan
    se = float(np.std(ok, ddof=1) / np.sqrt(ok.size)) if ok.size > 1 else 0.0
    return float(np.mean(ok)), se


def write_aggregate(out: Path, cfgs: list, failures: dict):
    groups = {}
    for cfg in sorted(cfgs, key=lambda c: (c.method, c.K, c.seed)):
        cell = f"{cfg.method}_K{cfg.K}_seed{cfg.seed}"
        if cell in failures:
            continue
        groups.setdefault((cfg.method, cfg.K), []).append(_read_trace(out / "cells" / cell / "trace.csv"))
    header = ["method", "K", "iter"] + [f"{m}_{s}" for m in AGG_METRICS for s in ("mean", "stderr")]
    with (out / "aggregate.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for (method, K), traces in sorted(groups.items()):
            n_iter = min(len(t["log_evidence"]) for t in traces)
            for i in range(n_iter):
                row = [method, K, i + 1]
                for m in AGG_METRICS:
                    mean, se = aggregate([t[m][i] for t in traces])
                    row += [fmt(None if np.isnan(mean) else mean), fmt(None if np.isnan(se) else se)]
                w.writerow(row)


def cmd_oracle(args) -> int:
    sizes = _parse_sizes(args.sizes) if args.sizes else {}
    inst = make_instance(args.builtin, seed=args.seed, **sizes)
    out = Path(os.environ.get(OUTPUT_ENV, args.out))
    out.mkdir(parents=True, exist_ok=True)
    (out / "model.qem").write_text(pretty_print(inst.model), encoding="utf-8")
    write_dataset(out / "train.csv", inst.model)
    write_dataset(out / "test.csv", inst.test_model)
    report = {"builtin": args.builtin, "seed": args.seed,
              "truth": {k: np.asarray(v).tolist() for k, v in inst.truth.items()}}
    try:
        ex = inst.exact()
        report["exact"] = {"log_evidence": ex.log_evidence,
                           "moments": {k: v.tolist() for k, v in ex.moments.items()}}
    except UnsupportedModelError as exc:
        report["exact"] = None
        report["exact_unavailable"] = str(exc)
    (out / "oracle.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if report["exact"] is not None:
        print(f"log_evidence {fmt(report['exact']['log_evidence'])}")
    else:
        print(f"no exact posterior: {report['exact_unavailable']}")
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qem", description="QEM inference with massively parallel importance weights")
    sub = p.add_subparsers(dest="command", required=True)
    v = sub.add_parser("validate", help="check a model file")
    v.add_argument("model")
    v.set_defaults(func=cmd_validate)
    r = sub.add_parser("run", help="run one configuration")
    r.add_argument("config")
    r.set_defaults(func=cmd_run)
    s = sub.add_parser("sweep", help="run the product of methods, K values and seeds")
    s.add_argument("config")
    s.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    s.set_defaults(func=cmd_sweep)
    o = sub.add_parser("oracle", help="simulate a builtin dataset and compute its exact posterior")
    o.add_argument("builtin", choices=sorted(BUILTINS))
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--sizes", default="", help="plate or size overrides, e.g. 'S=4,R=20'")
    o.add_argument("--out", default="oracle_out")
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except QEMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except TypeError as exc:
        # builtin constructors reject unknown size names
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
