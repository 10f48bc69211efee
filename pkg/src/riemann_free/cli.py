"""Config-driven experiment runner.

``riemann-free --config run.yaml`` expands optimizer x parameter x replication
grids, runs each cell (optionally on a process pool) and writes

* ``traces/<cell>.jsonl``: one JSON object per recorded iteration,
* ``summary.csv``: one row per cell (byte-identical across reruns),
* ``aggregate.csv``: mean and standard error per grid point,
* ``manifest.json``: config hash, RNG algorithm, per-cell seeds, versions,
* ``config.resolved.yaml``: the fully resolved configuration.

The config grammar is documented in ``README.md``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import importlib
import io
import json
import math
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .checks import DEFAULT_TOLERANCES, verify_suite
from .data import (RNG_ALGORITHM, SplitSpec, balanced_tree, generate_rayleigh, init_point, load_csv,
                   load_edge_list, make_rng, split, standardize, synthetic_gaussian)
from .metrics import (grassmann_distance, mean_average_precision, pca_reference, rayleigh_reference,
                      sensitivity_grid, sphere_sign_distance)
from .optim import OPTIMIZERS, RSGD, make_optimizer, run
from .problems import EmbeddingProblem, PCAProblem

__all__ = ["ConfigError", "RunConfig", "main", "parse_config", "run_experiment"]

EXPERIMENTS = ("rayleigh", "pca", "embed", "custom")
SUMMARY_COLUMNS = ("experiment", "optimizer", "param_name", "param_value", "replication",
                   "final_metric", "status")

PROBLEM_DEFAULTS = {
    "rayleigh": {"d": 50, "q": 55},
    "pca": {"data": "synthetic", "n": 1000, "d": 20, "r": 2, "batch_size": 64,
            "train_fraction": 0.8, "standardize": True, "has_header": False,
            "label_column": None, "delimiter": ","},
    "embed": {"graph": "tree", "depth": 4, "branching": 2, "dim": 5, "batch_size": 10,
              "neg_count": 50, "epochs": None, "init_box": 1e-3},
    "custom": {"factory": None, "kwargs": {}},
}
OPTIMIZER_KEYS = {"name", "eps", "lr", "T", "delta", "ell", "dowg_form", "averaging",
                  "rbar_scope", "beta1", "beta2", "eps_adam", "metric_iterate"}
TOP_KEYS = {"experiment", "problem", "optimizers", "T", "replications", "seed", "record_every",
            "workers", "burn_in", "out", "formats", "divergence_factor"}
BURN_IN_DEFAULTS = {"epochs": 0, "lr_divisor": 10.0, "sampler": "degree_3_4"}
FORMATS = ("jsonl", "csv")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerBlock:
    name: str
    param_name: str
    grid: tuple
    fixed: dict = field(default_factory=dict)
    metric_iterate: str = "auto"


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    problem: dict
    optimizers: tuple
    T: int = 1000
    replications: int = 1
    seed: int = 0
    record_every: int = 1
    workers: int = 0  # 0 = one per logical core
    burn_in: dict = field(default_factory=lambda: dict(BURN_IN_DEFAULTS))
    out: str = "runs/out"
    formats: tuple = FORMATS
    divergence_factor: float = 1e6

    def to_dict(self) -> dict:
        d = asdict(self)
        d["optimizers"] = [
            {"name": b.name, b.param_name: list(b.grid), **b.fixed, "metric_iterate": b.metric_iterate}
            for b in self.optimizers
        ]
        d["formats"] = list(self.formats)
        return d

    def hash(self) -> str:
        payload = {k: v for k, v in self.to_dict().items() if k not in ("out", "workers")}
        blob = json.dumps(payload, sort_keys=True, default=_json_default).encode()
        return hashlib.sha256(blob).hexdigest()


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serialisable: {o!r}")


def parse_grid(value, name: str) -> tuple:
    """A grid is a scalar, a list, ``{logspace: [lo, hi, n]}`` (base-10 exponents)
    or the flag form ``"logspace:lo:hi:n"`` / ``"a,b,c"``."""
    if isinstance(value, str):
        if value.startswith("logspace:"):
            parts = value.split(":")[1:]
            if len(parts) != 3:
                raise ConfigError(f"{name}: logspace needs lo:hi:n")
            value = {"logspace": [float(parts[0]), float(parts[1]), int(parts[2])]}
        else:
            try:
                value = [float(v) for v in value.split(",") if v.strip()]
            except ValueError:
                raise ConfigError(f"{name}: cannot parse grid {value!r}") from None
    if isinstance(value, dict):
        if set(value) != {"logspace"} or len(value["logspace"]) != 3:
            raise ConfigError(f"{name}: grid mapping must be {{logspace: [lo, hi, n]}}")
        lo, hi, n = value["logspace"]
        if int(n) < 1:
            raise ConfigError(f"{name}: grid must be nonempty")
        grid = tuple(float(v) for v in np.logspace(float(lo), float(hi), int(n)))
    elif isinstance(value, (list, tuple)):
        grid = tuple(float(v) for v in value)
    else:
        grid = (float(value),)
    if not grid:
        raise ConfigError(f"{name}: grid must be nonempty")
    bad = [v for v in grid if not (math.isfinite(v) and v > 0)]
    if bad:
        raise ConfigError(f"{name}: grid values must be finite and > 0, got {bad[0]!r}")
    return grid


def _optimizer_block(raw: dict, i: int) -> OptimizerBlock:
    if not isinstance(raw, dict) or "name" not in raw:
        raise ConfigError(f"optimizers[{i}]: each block needs a 'name'")
    unknown = set(raw) - OPTIMIZER_KEYS
    if unknown:
        raise ConfigError(f"optimizers[{i}]: unknown keys {sorted(unknown)}")
    name = raw["name"]
    if name not in OPTIMIZERS:
        raise ConfigError(f"optimizers[{i}]: unknown optimizer {name!r}; choose from {sorted(OPTIMIZERS)}")
    uses_lr = OPTIMIZERS[name].uses_lr
    pname = "lr" if uses_lr else "eps"
    default = {"logspace": [-8, 6, 20]} if uses_lr else {"logspace": [-8, 0, 10]}
    grid = parse_grid(raw.get(pname, default), f"optimizers[{i}].{pname}")
    fixed = {k: v for k, v in raw.items() if k not in ("name", "lr", "eps", "metric_iterate")}
    for k in ("delta", "ell", "beta1", "beta2", "eps_adam"):
        if k in fixed and fixed[k] is not None:
            fixed[k] = float(fixed[k])
    if "delta" in fixed and not 0 < fixed["delta"] < 1:
        raise ConfigError(f"optimizers[{i}].delta must lie in (0, 1)")
    if "T" in fixed and int(fixed["T"]) < 1:
        raise ConfigError(f"optimizers[{i}].T must be >= 1")
    if fixed.get("averaging", "weighted") not in ("weighted", "uniform", "none"):
        raise ConfigError(f"optimizers[{i}].averaging must be weighted, uniform or none")
    if fixed.get("rbar_scope", "global") not in ("global", "per_component"):
        raise ConfigError(f"optimizers[{i}].rbar_scope must be global or per_component")
    if fixed.get("dowg_form", "appendix") not in ("appendix", "maintext"):
        raise ConfigError(f"optimizers[{i}].dowg_form must be appendix or maintext")
    mi = raw.get("metric_iterate", "auto")
    if mi not in ("auto", "raw", "averaged"):
        raise ConfigError(f"optimizers[{i}].metric_iterate must be auto, raw or averaged")
    return OptimizerBlock(name, pname, grid, fixed, mi)


def _positive_int(value, name, minimum=1) -> int:
    try:
        v = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be an integer, got {value!r}") from None
    if isinstance(value, float) and value != v:
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if v < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {v}")
    return v


def build_config(tree: dict) -> RunConfig:
    """Validate a raw key-value tree (strict: unknown keys are errors)."""
    if not isinstance(tree, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(tree) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    exp = tree.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {exp!r}")
    prob_raw = tree.get("problem") or {}
    unknown = set(prob_raw) - set(PROBLEM_DEFAULTS[exp])
    if unknown:
        raise ConfigError(f"problem: unknown keys {sorted(unknown)} for experiment {exp!r}")
    problem = {**PROBLEM_DEFAULTS[exp], **prob_raw}
    if exp == "custom" and not problem["factory"]:
        raise ConfigError("problem.factory ('module:callable') is required for custom experiments")
    for k in ("d", "q", "n", "r", "batch_size", "dim", "depth", "branching", "neg_count"):
        if k in problem and problem[k] is not None:
            problem[k] = _positive_int(problem[k], f"problem.{k}")
    if exp == "pca" and problem["r"] >= problem["d"]:
        raise ConfigError("problem.r must be smaller than problem.d")
    if exp == "pca" and not 0 < float(problem["train_fraction"]) <= 1:
        raise ConfigError("problem.train_fraction must lie in (0, 1]")
    blocks = tree.get("optimizers")
    if not blocks:
        raise ConfigError("at least one optimizer block is required")
    if isinstance(blocks, (str, dict)):
        blocks = [blocks]
    blocks = [{"name": b} if isinstance(b, str) else b for b in blocks]
    optimizers = tuple(_optimizer_block(b, i) for i, b in enumerate(blocks))
    burn = {**BURN_IN_DEFAULTS, **(tree.get("burn_in") or {})}
    unknown = set(burn) - set(BURN_IN_DEFAULTS)
    if unknown:
        raise ConfigError(f"burn_in: unknown keys {sorted(unknown)}")
    burn["epochs"] = _positive_int(burn["epochs"], "burn_in.epochs", minimum=0)
    burn["lr_divisor"] = float(burn["lr_divisor"])
    if burn["lr_divisor"] <= 0:
        raise ConfigError("burn_in.lr_divisor must be > 0")
    if burn["sampler"] not in ("uniform", "degree_3_4"):
        raise ConfigError("burn_in.sampler must be uniform or degree_3_4")
    formats = tuple(tree.get("formats", FORMATS))
    if set(formats) - set(FORMATS):
        raise ConfigError(f"formats must be drawn from {FORMATS}")
    div = float(tree.get("divergence_factor", 1e6))
    if not div > 0:
        raise ConfigError("divergence_factor must be > 0")
    return RunConfig(
        experiment=exp, problem=problem, optimizers=optimizers,
        T=_positive_int(tree.get("T", 1000), "T"),
        replications=_positive_int(tree.get("replications", 1), "replications"),
        seed=_positive_int(tree.get("seed", 0), "seed", minimum=0),
        record_every=_positive_int(tree.get("record_every", 1), "record_every"),
        workers=_positive_int(tree.get("workers", 0), "workers", minimum=0),
        burn_in=burn, out=str(tree.get("out", "runs/out")), formats=formats,
        divergence_factor=div,
    )


def parse_config(path=None, flags: dict | None = None) -> RunConfig:
    """Read ``path`` (YAML) and overlay ``flags``; flags win."""
    tree: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            tree = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: malformed config: {exc}") from exc
        if not isinstance(tree, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    flags = {k: v for k, v in (flags or {}).items() if v is not None}
    names = flags.pop("optimizer", None)
    grid_flags = {k: flags.pop(k) for k in ("eps", "lr", "dowg_form") if k in flags}
    if "burn_in" in flags:
        tree["burn_in"] = {**(tree.get("burn_in") or {}), "epochs": flags.pop("burn_in")}
    if names is not None:
        tree["optimizers"] = [{"name": n.strip()} for n in names.split(",") if n.strip()]
    if grid_flags:
        blocks = tree.get("optimizers") or []
        blocks = [{"name": b} if isinstance(b, str) else dict(b) for b in
                  (blocks if isinstance(blocks, list) else [blocks])]
        for b in blocks:
            cls = OPTIMIZERS.get(b.get("name"))
            if cls is None:
                continue
            if "eps" in grid_flags and not cls.uses_lr:
                b["eps"] = grid_flags["eps"]
            if "lr" in grid_flags and cls.uses_lr:
                b["lr"] = grid_flags["lr"]
            if "dowg_form" in grid_flags and b["name"] in ("rdowg", "t-rdowg"):
                b["dowg_form"] = grid_flags["dowg_form"]
        tree["optimizers"] = blocks
    if "seed" not in flags and "seed" not in tree and os.environ.get("RIEMANN_FREE_SEED"):
        try:
            tree["seed"] = int(os.environ["RIEMANN_FREE_SEED"])
        except ValueError:
            raise ConfigError("RIEMANN_FREE_SEED must be an integer") from None
    tree.update(flags)
    return build_config(tree)


# ---------------------------------------------------------------------------
# problems and cells
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Cell:
    index: int
    block: int
    optimizer: str
    param_name: str
    param_value: float
    replication: int

    @property
    def cell_id(self) -> str:
        return f"{self.optimizer}_{self.param_name}={self.param_value:.6g}_rep{self.replication}"


def expand_cells(cfg: RunConfig) -> list:
    cells = []
    for b, block in enumerate(cfg.optimizers):
        for value in block.grid:
            for rep in range(cfg.replications):
                cells.append(Cell(len(cells), b, block.name, block.param_name, value, rep))
    return cells


def cell_seeds(cfg: RunConfig, cell: Cell) -> dict:
    """Seeds keyed by (experiment seed, replication[, cell]); independent of scheduling.

    Data and initial point depend on the replication only, so every optimizer
    in a replication starts from the same point."""
    return {
        "data": int(np.random.SeedSequence(cfg.seed, spawn_key=(0, cell.replication)).generate_state(1)[0]),
        "init": int(np.random.SeedSequence(cfg.seed, spawn_key=(1, cell.replication)).generate_state(1)[0]),
        "oracle": int(np.random.SeedSequence(
            cfg.seed, spawn_key=(2, cell.block, cell.replication)).generate_state(1)[0]),
    }


class _Setup:
    """Problem, reference and metric for one replication."""

    def __init__(self, problem, x0, metric, reference=None, lower_is_better=True, T=None):
        self.problem, self.x0, self.metric = problem, x0, metric
        self.reference, self.lower_is_better, self.T = reference, lower_is_better, T


def _load_factory(spec: str):
    mod, _, name = spec.partition(":")
    if not name:
        raise ConfigError("problem.factory must be 'module:callable'")
    try:
        return getattr(importlib.import_module(mod), name)
    except (ImportError, AttributeError) as exc:
        raise ConfigError(f"cannot import {spec}: {exc}") from exc


@lru_cache(maxsize=8)
def _pca_dataset(source: str, n: int, d: int, seed: int, has_header: bool, label_column, delimiter: str):
    if source == "synthetic":
        return synthetic_gaussian(n=n, d=d, seed=seed).X
    return load_csv(source, delimiter=delimiter, has_header=has_header, label_column=label_column).X


@lru_cache(maxsize=4)
def _graph(source: str, depth: int, branching: int):
    g = balanced_tree(depth, branching) if source == "tree" else load_edge_list(source)
    return g.transitive_closure()


def build_setup(cfg: RunConfig, seeds: dict) -> _Setup:
    p = cfg.problem
    if cfg.experiment == "rayleigh":
        prob = generate_rayleigh(p["d"], p["q"], seed=cfg.seed)
        ref = rayleigh_reference(prob)
        x0 = init_point(prob.manifold, seed=make_rng(seeds["init"]))
        return _Setup(prob, x0, lambda x: sphere_sign_distance(x, ref.x_star), ref)
    if cfg.experiment == "pca":
        X = _pca_dataset(str(p["data"]), p["n"], p["d"], cfg.seed, bool(p["has_header"]),
                         p["label_column"], p["delimiter"])
        if float(p["train_fraction"]) < 1:
            tr, _ = split(len(X), SplitSpec(float(p["train_fraction"]), seeds["data"]))
            Xtr = X[tr]
        else:
            Xtr = X
        Z = standardize(Xtr) if p["standardize"] else Xtr - Xtr.mean(axis=0)
        prob = PCAProblem(Z, p["r"], batch_size=p["batch_size"])
        ref = pca_reference(prob)
        x0 = init_point(prob.manifold, seed=make_rng(seeds["init"]))
        return _Setup(prob, x0, lambda x: grassmann_distance(x, ref.x_star), ref)
    if cfg.experiment == "embed":
        g = _graph(str(p["graph"]), p["depth"], p["branching"])
        prob = EmbeddingProblem(g, dim=p["dim"], batch_size=p["batch_size"], neg_count=p["neg_count"])
        x0 = init_point(prob.manifold, seed=make_rng(seeds["init"]), box=float(p["init_box"]))
        T = p["epochs"] * prob.batches_per_epoch if p["epochs"] else None
        return _Setup(prob, x0, lambda x: mean_average_precision(g, x), None, lower_is_better=False, T=T)
    factory = _load_factory(p["factory"])
    prob = factory(**(p["kwargs"] or {}))
    x0 = prob.initial_point(make_rng(seeds["init"])) if hasattr(prob, "initial_point") \
        else init_point(prob.manifold, seed=make_rng(seeds["init"]))
    metric = getattr(prob, "metric", None) or prob.loss
    return _Setup(prob, x0, metric)


def _metric_iterate(cfg: RunConfig, block: OptimizerBlock) -> str:
    if block.metric_iterate != "auto":
        return block.metric_iterate
    # averaged iterate for the learning-rate-free family on PCA, final iterate otherwise
    if cfg.experiment == "pca" and not OPTIMIZERS[block.name].uses_lr:
        return "averaged"
    return "raw"


def burn_in(problem: EmbeddingProblem, x0, lr: float, epochs: int, divisor: float,
            sampler: str, rng):
    """RSGD warm start at ``lr / divisor`` for ``epochs`` passes with the given negative sampler."""
    warm = problem.with_sampler(sampler)
    opt = RSGD(problem.manifold, lr=lr / divisor, averaging="none")
    state = opt.init(x0)
    for _ in range(epochs * warm.batches_per_epoch):
        state = opt.step(state, warm.grad(state.x, rng))
    return state.x


def run_cell(cfg: RunConfig, cell: Cell, out_dir: str | None) -> dict:
    """Run one grid cell; failures are caught and reported in the row."""
    seeds = cell_seeds(cfg, cell)
    block = cfg.optimizers[cell.block]
    row = {"experiment": cfg.experiment, "optimizer": cell.optimizer, "param_name": cell.param_name,
           "param_value": cell.param_value, "replication": cell.replication,
           "final_metric": float("nan"), "status": "ok", "cell_id": cell.cell_id, "seeds": seeds,
           "error": None, "trace_file": None}
    try:
        setup = build_setup(cfg, seeds)
        prob, x0 = setup.problem, setup.x0
        if hasattr(prob, "reset"):
            prob.reset()
        T = setup.T or cfg.T
        rng = make_rng(seeds["oracle"])
        params = dict(block.fixed)
        params.setdefault("T", T)  # tamed horizon defaults to the run length
        params[cell.param_name] = cell.param_value
        opt = make_optimizer(cell.optimizer, prob.manifold, **params)
        if (cfg.experiment == "embed" and cfg.burn_in["epochs"] > 0 and OPTIMIZERS[cell.optimizer].uses_lr):
            x0 = burn_in(prob, x0, cell.param_value, cfg.burn_in["epochs"], cfg.burn_in["lr_divisor"],
                         cfg.burn_in["sampler"], rng)
            prob.reset()
        distance = setup.metric if setup.reference is not None else None
        loss = getattr(prob, "loss", None)
        trace = run(opt, prob, x0, T, seed=rng, record_every=cfg.record_every, loss=loss,
                    distance=distance, divergence_factor=cfg.divergence_factor)
        row["status"] = trace.status
        row["error"] = trace.error
        if trace.status == "ok":
            which = _metric_iterate(cfg, block)
            x = trace.averaged if which == "averaged" else trace.final
            val = float(setup.metric(x))
            if not math.isfinite(val):
                row["status"] = "diverged"
            else:
                row["final_metric"] = val
        if out_dir is not None and "jsonl" in cfg.formats:
            path = Path(out_dir) / "traces" / f"{cfg.experiment}_{cell.cell_id}.jsonl"
            with path.open("w", encoding="utf-8") as fh:
                for rec in trace.records:
                    fh.write(json.dumps(_finite_dict(rec.to_dict()), sort_keys=True) + "\n")
            row["trace_file"] = str(path.relative_to(out_dir))
    except ConfigError:
        raise
    except Exception as exc:  # crash isolation: one failing cell never stops the sweep
        row["status"], row["error"] = "error", f"{type(exc).__name__}: {exc}"
    return row


def _finite_dict(d: dict) -> dict:
    return {k: (v if not isinstance(v, float) or math.isfinite(v) else repr(v)) for k, v in d.items()}


def _run_cell_star(args):
    return run_cell(*args)


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def summary_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in SUMMARY_COLUMNS])
    return buf.getvalue()


def aggregate_csv(rows) -> str:
    grid = sensitivity_grid([{k: r[k] for k in SUMMARY_COLUMNS} for r in rows])
    buf = io.StringIO()
    cols = ("optimizer", "param_name", "param_value", "n", "n_ok", "n_diverged", "mean", "stderr")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for s in grid["summary"]:
        w.writerow([_fmt(s[c]) for c in cols])
    return buf.getvalue()


def _versions() -> dict:
    import sklearn

    return {"riemann_free": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "pyyaml": yaml.__version__, "scikit-learn": sklearn.__version__,
            "platform": platform.platform()}


def run_experiment(cfg: RunConfig, workers: int | None = None) -> dict:
    """Execute every cell and write artifacts to ``cfg.out``; returns a result dict."""
    out = Path(cfg.out)
    try:
        (out / "traces").mkdir(parents=True, exist_ok=True)
        (out / "config.resolved.yaml").write_text(
            yaml.safe_dump(json.loads(json.dumps(cfg.to_dict(), default=_json_default)), sort_keys=True),
            encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write to output directory {out}: {exc}") from exc
    cells = expand_cells(cfg)
    n_workers = workers or cfg.workers or os.cpu_count() or 1
    jobs = [(cfg, c, str(out)) for c in cells]
    if n_workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            rows = list(pool.map(_run_cell_star, jobs, chunksize=1))
    else:
        rows = [_run_cell_star(j) for j in jobs]
    # ordered sink: rows are keyed by cell index, never by completion order
    rows = [r for _, r in sorted(zip((c.index for c in cells), rows))]
    if "csv" in cfg.formats:
        (out / "summary.csv").write_text(summary_csv(rows), encoding="utf-8")
        (out / "aggregate.csv").write_text(aggregate_csv(rows), encoding="utf-8")
    manifest = {
        "config_hash": cfg.hash(), "rng_algorithm": RNG_ALGORITHM, "seed": cfg.seed,
        "versions": _versions(),
        "cells": [{"cell_id": r["cell_id"], "optimizer": r["optimizer"], "param_name": r["param_name"],
                   "param_value": r["param_value"], "replication": r["replication"], "seeds": r["seeds"],
                   "status": r["status"], "error": r["error"], "trace_file": r["trace_file"]}
                  for r in rows],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default),
                                       encoding="utf-8")
    return {"rows": rows, "manifest": manifest, "out": str(out)}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="riemann-free", description=__doc__.split("\n")[0])
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--experiment", choices=EXPERIMENTS)
    p.add_argument("--optimizer", help="comma-separated optimizer keys (replaces the config's blocks)")
    p.add_argument("--eps", help="eps grid: 'a,b,c' or 'logspace:lo:hi:n'")
    p.add_argument("--lr", help="lr grid: 'a,b,c' or 'logspace:lo:hi:n'")
    p.add_argument("--T", type=int, help="iterations per run")
    p.add_argument("--reps", type=int, dest="replications", help="replications per grid point")
    p.add_argument("--seed", type=int, help="experiment seed (fallback: $RIEMANN_FREE_SEED)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--record-every", type=int, dest="record_every", help="trace thinning")
    p.add_argument("--workers", type=int, help="worker processes (default: logical cores)")
    p.add_argument("--dowg-form", dest="dowg_form", choices=("appendix", "maintext"))
    p.add_argument("--burn-in", type=int, dest="burn_in", metavar="EPOCHS",
                   help="RSGD burn-in epochs for lr-based optimizers (embed only; 0 disables)")
    p.add_argument("--verify", action="store_true", help="run the invariant suites and exit")
    p.add_argument("--tolerance", action="append", default=[], metavar="NAME=VALUE",
                   help=f"override a verify tolerance ({', '.join(DEFAULT_TOLERANCES)})")
    p.add_argument("--quick", action="store_true", help="smaller sample sizes for --verify")
    return p


def _parse_tolerances(items) -> dict:
    out = {}
    for item in items:
        name, sep, value = item.partition("=")
        if not sep or name not in DEFAULT_TOLERANCES:
            raise ConfigError(f"--tolerance expects NAME=VALUE with NAME in {sorted(DEFAULT_TOLERANCES)}")
        try:
            out[name] = float(value)
        except ValueError:
            raise ConfigError(f"--tolerance {name}: not a number: {value!r}") from None
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verify:
            seed = args.seed if args.seed is not None else int(os.environ.get("RIEMANN_FREE_SEED", 0))
            report = verify_suite(_parse_tolerances(args.tolerance), seed=seed, quick=args.quick)
            print(json.dumps(report, indent=2))
            for name in report["failed"]:
                print(f"FAILED: {name}", file=sys.stderr)
            return 0 if report["passed"] else 1
        flags = {k: getattr(args, k) for k in ("experiment", "optimizer", "eps", "lr", "T", "replications",
                                                "seed", "out", "record_every", "workers", "dowg_form",
                                                "burn_in")}
        if args.config is None and args.experiment is None:
            raise ConfigError("give --config or --experiment")
        cfg = parse_config(args.config, flags)
        result = run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3
    n_bad = sum(r["status"] != "ok" for r in result["rows"])
    print(f"{len(result['rows'])} cells written to {result['out']} ({n_bad} not ok)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
