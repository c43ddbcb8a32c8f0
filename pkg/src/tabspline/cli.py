"""Command-line interface: ``tabspline {encode,benchmark,ablation,illustrate,stats}``.

Settings resolve in increasing priority: built-in defaults, ``TABSPLINE_*``
environment variables, a ``--config`` key=value file, then explicit flags.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import multiprocessing as mp
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .backbone import TrainConfig
from .encoding import ABLATION_METHODS, ABLATION_REFERENCES, MAIN_METHODS, EncoderSpec, fit_encoder
from .errors import ConfigError, TabSplineError
from .experiments import ABLATION_SIZES, AblationUnit, ablation_configs, run_ablation_unit, run_illustration, summarize
from .metrics import build_rank_table, cd_export

log = logging.getLogger("tabspline")

ENV_PREFIX = "TABSPLINE_"
RESULT_FIELDS = ("dataset", "method", "m", "fold", "metric_name", "value")

DEFAULTS = {
    "seed": 0,
    "folds": 5,
    "jobs": 1,
    "max_epochs": 200,
    "lr": 1e-4,
    "knot_lr": 2e-4,
    "weight_decay": 1e-5,
    "batch_size": 512,
    "warm_up": 50,
    "dtype": "float32",
    "alpha": 0.05,
    "n": 8000,
    "seeds": 5,
    "m": 7,
}
_CASTS = {k: type(v) for k, v in DEFAULTS.items()}


def fmt(x) -> str:
    return f"{float(x):.17g}"


def read_config_file(path) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _cast(key, value):
    if key not in _CASTS:
        return value
    try:
        return _CASTS[key](value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc


def resolve_settings(args: argparse.Namespace) -> dict:
    settings = dict(DEFAULTS)
    for key in DEFAULTS:
        env = os.environ.get(ENV_PREFIX + key.upper())
        if env is not None:
            settings[key] = _cast(key, env)
    if getattr(args, "config", None):
        for key, value in read_config_file(args.config).items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            settings[key] = _cast(key, value)
    for key in DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None:
            settings[key] = flag
    return settings


def train_config(settings: dict) -> TrainConfig:
    return TrainConfig(
        lr=settings["lr"],
        knot_lr=settings["knot_lr"],
        weight_decay=settings["weight_decay"],
        batch_size=settings["batch_size"],
        max_epochs=settings["max_epochs"],
        warm_up=settings["warm_up"],
        dtype=settings["dtype"],
        seed=settings["seed"],
    )


def parse_sizes(text: str) -> list:
    """``7,15,30`` or ``5..50`` / ``5..50:5`` (inclusive, default step 5)."""
    text = text.replace(" ", "")
    try:
        if ".." in text:
            lo, rest = text.split("..", 1)
            hi, _, step = rest.partition(":")
            return list(range(int(lo), int(hi) + 1, int(step or 5)))
        return [int(s) for s in text.split(",") if s]
    except ValueError as exc:
        raise ConfigError(f"cannot parse sizes {text!r}") from exc


def parse_methods(text: Optional[str], default) -> list:
    if text is None or text.lower() == "all":
        return list(default)
    return [EncoderSpec(t.strip()).method for t in text.split(",") if t.strip()]


def _config_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()[:16]


def write_manifest(out_dir: Path, command: str, settings: dict, started: str, artifacts: list, run: Optional[dict] = None,
                   name: str = "manifest.json") -> Path:
    path = out_dir / name
    config = {**settings, **(run or {})}
    manifest = {
        "command": command,
        "config": config,
        "config_hash": _config_hash({"command": command, **config}),
        "seed": settings.get("seed"),
        "started": started,
        "finished": _now(),
        "artifacts": [str(a) for a in artifacts],
        "version": __version__,
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


class ResultStore:
    """Append-only results CSV with key-based resume; sorted on close."""

    def __init__(self, path: Path):
        self.path = path
        self.rows: dict = {}
        if path.exists():
            with open(path, newline="") as fh:
                for row in csv.DictReader(fh):
                    self.rows[self.key(row)] = row
        self._fh = open(path, "a", newline="")
        self._w = csv.DictWriter(self._fh, fieldnames=RESULT_FIELDS)
        if not self.rows and self._fh.tell() == 0:
            self._w.writeheader()

    @staticmethod
    def key(row) -> tuple:
        return (row["dataset"], row["method"], int(row["m"]), int(row["fold"]))

    def __contains__(self, key) -> bool:
        return key in self.rows

    def add(self, dataset, method, m, fold, metric_name, value) -> None:
        row = {
            "dataset": dataset,
            "method": method,
            "m": str(int(m)),
            "fold": str(int(fold)),
            "metric_name": metric_name,
            "value": fmt(value),
        }
        self.rows[self.key(row)] = row
        self._w.writerow(row)
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()
        with open(self.path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=RESULT_FIELDS)
            w.writeheader()
            for key in sorted(self.rows):
                w.writerow(self.rows[key])


def _map(fn, units, jobs: int):
    if jobs <= 1 or len(units) <= 1:
        for u in units:
            yield fn(u)
        return
    with mp.get_context("spawn").Pool(jobs) as pool:
        yield from pool.imap_unordered(fn, units)


# ---- encode -----------------------------------------------------------------


def _load(args):
    from .pipeline import ingest_csv

    cats = [c for c in args.categorical.split(",") if c] if args.categorical is not None else None
    return ingest_csv(args.input, args.target, cats, args.task)


def cmd_encode(args, settings) -> int:
    started = _now()
    spec = EncoderSpec(args.method, settings["m"])
    ds = _load(args)
    task = "regression" if ds.task == "regression" else "classification"
    from .pipeline import CategoryEncoder, raw_block

    cats = CategoryEncoder.fit(ds.categorical)
    enc = fit_encoder(spec, ds.numerical, ds.target, task, n_cat=ds.c)
    encoded = enc.transform(raw_block(ds, np.arange(ds.n), cats))
    if spec.kind in ("std", "minmax"):
        names = list(ds.numerical_names)
    else:
        widths = [spec.m] * ds.d if spec.kind == "spline" else [s.T for s in enc.states]
        names = [f"feature_{j}_basis_{l}" for j, w in enumerate(widths) for l in range(w)]
    names += list(ds.categorical_names)
    out = Path(args.output)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in encoded:
            w.writerow([fmt(v) for v in row])
    sidecar = Path(args.sidecar) if args.sidecar else out.with_suffix(out.suffix + ".knots.json")
    sidecar.write_text(json.dumps(enc.sidecar(ds.numerical_names), indent=2, default=float) + "\n")
    run = {"input": str(args.input), "target": args.target, "method": spec.method}
    write_manifest(out.parent, "encode", settings, started, [out, sidecar], run, name=out.name + ".manifest.json")
    print(f"wrote {encoded.shape[0]} x {encoded.shape[1]} to {out}")
    return 0


# ---- benchmark --------------------------------------------------------------

_DS_CACHE: dict = {}


def _bench_unit(job):
    from .pipeline import ingest_csv, make_folds, run_fold

    key = (job["input"], job["target"], job["categorical"], job["task"])
    if key not in _DS_CACHE:
        _DS_CACHE[key] = ingest_csv(job["input"], job["target"], job["categorical"], job["task"])
    ds = _DS_CACHE[key]
    plan = make_folds(ds, job["k"], job["seed"])
    spec = EncoderSpec(job["method"], job["m"] if job["m"] > 0 else 7)
    cfg = TrainConfig(**job["cfg"])
    res, _ = run_fold(ds, plan, job["fold"], spec, cfg)
    return job, res.metric_name, res.value


def cmd_benchmark(args, settings) -> int:
    started = _now()
    methods = parse_methods(args.methods, MAIN_METHODS)
    sizes = parse_sizes(args.sizes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = _load(args)
    name = Path(args.input).stem
    cats = [c for c in args.categorical.split(",") if c] if args.categorical is not None else None
    cfg = train_config(settings)
    store = ResultStore(out / "results.csv")
    jobs = []
    for method in methods:
        spec = EncoderSpec(method, sizes[0])
        for m in sizes if spec.uses_m else [0]:
            if m > 0:
                EncoderSpec(method, m)  # validate the budget before any training
            for fold in range(settings["folds"]):
                keys = [(name, method, mm, fold) for mm in (sizes if m == 0 else [m])]
                if all(k in store for k in keys):
                    continue
                jobs.append(
                    {
                        "input": args.input,
                        "target": args.target,
                        "categorical": cats,
                        "task": ds.task,
                        "method": method,
                        "m": m,
                        "fold": fold,
                        "k": settings["folds"],
                        "seed": settings["seed"],
                        "cfg": cfg.__dict__,
                    }
                )
    log.info("%d units to run", len(jobs))
    try:
        for job, metric, value in _map(_bench_unit, jobs, settings["jobs"]):
            # size-free methods are reported under every requested size
            for mm in sizes if job["m"] == 0 else [job["m"]]:
                store.add(name, job["method"], mm, job["fold"], metric, value)
    finally:
        store.close()
    write_manifest(
        out, "benchmark", settings, started, [out / "results.csv"],
        {"input": str(args.input), "target": args.target, "methods": methods, "sizes": sizes},
    )
    return 0


# ---- ablation ---------------------------------------------------------------


def _ablation_unit(job):
    u = run_ablation_unit(job["method"], job["m"], job["seed"], job["n"], TrainConfig(**job["cfg"]))
    return job, u


def cmd_ablation(args, settings) -> int:
    started = _now()
    sizes = parse_sizes(args.sizes) if args.sizes else list(ABLATION_SIZES)
    methods = parse_methods(args.methods, ABLATION_METHODS)
    refs = [] if args.no_references else list(ABLATION_REFERENCES)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = train_config(settings)
    store = ResultStore(out / "results.csv")
    units = ablation_configs(methods, sizes, refs)
    jobs = []
    for seed in range(settings["seed"], settings["seed"] + settings["seeds"]):
        for method, m in units:
            if (f"ablation-seed{seed}", method, m, 0) in store:
                continue
            jobs.append({"method": method, "m": m, "seed": seed, "n": settings["n"], "cfg": cfg.with_(seed=seed).__dict__})
    log.info("%d training runs to go (%d configurations)", len(jobs), len(units))
    try:
        for job, u in _map(_ablation_unit, jobs, settings["jobs"]):
            store.add(f"ablation-seed{job['seed']}", job["method"], job["m"], 0, "nrmse", u.nrmse)
    finally:
        store.close()
    done = [
        AblationUnit(r["method"], int(r["m"]), int(r["dataset"].rsplit("seed", 1)[1]), float(r["value"]), 0, 0)
        for r in store.rows.values()
        if r["dataset"].startswith("ablation-seed")
    ]
    table = summarize(done)
    summary = out / "summary.csv"
    with open(summary, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "m", "mean_nrmse", "std_nrmse", "n_seeds"])
        for (method, m), (mean, std, cnt) in sorted(table.items()):
            # references have no size grid; repeat them so every size has a row
            for mm in sizes if m == 0 else [m]:
                w.writerow([method, mm, fmt(mean), fmt(std), cnt])
    write_manifest(
        out, "ablation", settings, started, [out / "results.csv", summary],
        {"methods": methods, "references": refs, "sizes": sizes},
    )
    return 0


# ---- illustrate -------------------------------------------------------------


def cmd_illustrate(args, settings) -> int:
    started = _now()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics, curves = run_illustration(seed=settings["seed"], m=args.m)
    (out / "metrics.json").write_text(
        json.dumps({k: {mk: float(mv) for mk, mv in v.items()} for k, v in metrics.items()}, indent=2, sort_keys=True) + "\n"
    )
    with open(out / "regression_curves.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "truth", "ple", "bspline"])
        for row in zip(curves["grid"], curves["f_true"], curves["ple_regression"], curves["bspline_regression"]):
            w.writerow([fmt(v) for v in row])
    with open(out / "classification_curves.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "truth", "ple", "bspline"])
        for row in zip(curves["grid"], curves["p_true"], curves["ple_probability"], curves["bspline_probability"]):
            w.writerow([fmt(v) for v in row])
    artifacts = [out / "metrics.json", out / "regression_curves.csv", out / "classification_curves.csv"]
    write_manifest(out, "illustrate", settings, started, artifacts, {"m": args.m})
    return 0


# ---- stats ------------------------------------------------------------------


def rank_tables_from_results(path, alpha: float = 0.05) -> dict:
    """One rank table per output size; blocks are datasets, values are fold means.

    Rows with ``m = 0`` (methods without an output size) are shared by every size.
    """
    cells: dict = {}
    metric_of: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (int(row["m"]), row["dataset"], row["method"])
            cells.setdefault(key, []).append(float(row["value"]))
            metric_of[row["dataset"]] = row["metric_name"]
    if not cells:
        raise TabSplineError("results file is empty")
    sizes = sorted({k[0] for k in cells})
    if len(sizes) > 1 and sizes[0] == 0:
        # size-free rows (m = 0) join every sized comparison
        for (m0, b, meth), v in [kv for kv in cells.items() if kv[0][0] == 0]:
            for m in sizes[1:]:
                cells.setdefault((m, b, meth), v)
            del cells[(m0, b, meth)]
    tables = {}
    for m in sorted({k[0] for k in cells}):
        methods = sorted({k[2] for k in cells if k[0] == m})
        blocks = sorted({k[1] for k in cells if k[0] == m})
        missing = [(b, meth) for b in blocks for meth in methods if (m, b, meth) not in cells]
        if missing:
            listing = "; ".join(f"{b}/{meth}" for b, meth in missing)
            raise TabSplineError(f"m={m}: incomplete blocks ({listing})")
        values = np.array(
            [
                [np.mean(cells[(m, b, meth)]) * (-1.0 if metric_of[b] == "nrmse" else 1.0) for meth in methods]
                for b in blocks
            ]
        )
        if len(blocks) < 2:
            raise TabSplineError(f"m={m}: need at least two blocks, found {len(blocks)}")
        tables[m] = build_rank_table(values, methods, higher_is_better=True, alpha=alpha)
    return tables


def cmd_stats(args, settings) -> int:
    tables = rank_tables_from_results(args.results, settings["alpha"])
    payload = {f"m={m}": cd_export(t) for m, t in tables.items()}
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


# ---- entry point ------------------------------------------------------------


def _common(p):
    p.add_argument("--config", help="key=value settings file")
    p.add_argument("--seed", type=int)
    p.add_argument("--log-level", default="WARNING")


def _training(p):
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--knot-lr", dest="knot_lr", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--warm-up", dest="warm_up", type=int)
    p.add_argument("--dtype", choices=("float32", "float64"))
    p.add_argument("--jobs", type=int)


def _data(p):
    p.add_argument("--input", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--categorical", help="comma-separated categorical columns (default: non-numeric columns)")
    p.add_argument("--task", choices=("regression", "binary", "multiclass"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tabspline", description="Spline and PLE feature encodings for tabular MLPs.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="fit an encoder on a CSV and write the encoded matrix")
    _common(p)
    _data(p)
    p.add_argument("--method", required=True)
    p.add_argument("--m", type=int)
    p.add_argument("--output", required=True)
    p.add_argument("--sidecar", help="knots/bins JSON path (default: OUTPUT.knots.json)")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("benchmark", help="k-fold benchmark of methods x output sizes")
    _common(p)
    _data(p)
    _training(p)
    p.add_argument("--methods", help="comma-separated tags or 'all'")
    p.add_argument("--sizes", default="7,15,30")
    p.add_argument("--folds", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("ablation", help="output-size sweep on the synthetic regression task")
    _common(p)
    _training(p)
    p.add_argument("--sizes", help="e.g. 5..50:5 or 5,10,20")
    p.add_argument("--seeds", type=int, help="number of seeds, starting at --seed")
    p.add_argument("--methods", help="comma-separated tags or 'all'")
    p.add_argument("--no-references", action="store_true", help="skip Std, MinMax and PLE_adp")
    p.add_argument("--n", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("illustrate", help="PLE vs B-spline with linear models on 1-D toys")
    _common(p)
    p.add_argument("--m", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_illustrate)

    p = sub.add_parser("stats", help="average ranks, Friedman test and Nemenyi CD")
    _common(p)
    p.add_argument("--results", required=True)
    p.add_argument("--alpha", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING), format="%(levelname)s %(message)s")
    try:
        settings = resolve_settings(args)
        return args.func(args, settings)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return 1
    except (TabSplineError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
