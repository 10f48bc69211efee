"""Regret, distance-to-solution, mean average precision and sweep aggregation."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .geometry import zeta
from .problems import poincare_distance_matrix

__all__ = [
    "MAPResult",
    "ReferenceSolution",
    "grassmann_distance",
    "ideal_step_size",
    "mean_average_precision",
    "pca_reference",
    "rayleigh_reference",
    "regret",
    "sensitivity_grid",
    "sphere_sign_distance",
]


@dataclass(frozen=True)
class ReferenceSolution:
    x_star: np.ndarray
    f_star: float


def rayleigh_reference(problem) -> ReferenceSolution:
    """Dominant eigenvector via a dense symmetric eigendecomposition."""
    w, V = np.linalg.eigh(problem.A)
    x = V[:, -1]
    return ReferenceSolution(x, problem.loss(x))


def pca_reference(problem) -> ReferenceSolution:
    """Top-``r`` eigenspace of the sample second-moment matrix."""
    w, V = np.linalg.eigh(problem.cov)
    x = V[:, ::-1][:, : problem.r]
    return ReferenceSolution(x, problem.loss(x))


def sphere_sign_distance(x, v) -> float:
    """Geodesic distance from ``x`` to the closer of ``v`` and ``-v``."""
    c = abs(float(x @ v))
    s = float(np.linalg.norm(x - float(x @ v) * v))
    return math.atan2(s, c)


def grassmann_distance(x, y) -> float:
    """Subspace distance from principal angles; independent of the representatives."""
    from .manifolds import Grassmann

    return Grassmann(x.shape[0], x.shape[1]).dist(x, y)


def regret(trace, ref: ReferenceSolution) -> dict:
    """``f(x_t) - f_star`` for raw and averaged iterates at every recorded step."""
    if ref is None or ref.f_star is None:
        raise ValueError("regret needs a reference solution")
    recs = trace.records if hasattr(trace, "records") else trace
    raw = np.array([r.f_raw - ref.f_star for r in recs])
    avg = np.array([r.f_avg - ref.f_star for r in recs])
    return {"t": np.array([r.t for r in recs]), "raw": raw, "averaged": avg}


def ideal_step_size(trace=None, ref=None, kappa: float = 0.0, family: str = "rsgd", *,
                    max_distance=None, grad_sq_sum=None, T=None) -> float:
    """Hindsight step size from the maximum distance to the solution.

    ``rsgd``: ``dbar / sqrt(zeta(dbar) * sum |g|^2)``; ``nrsgd``:
    ``dbar / sqrt(T zeta(dbar))``. Pass a trace recorded with distances at every
    step, or the summary statistics directly.
    """
    if trace is not None:
        recs = trace.records
        if not recs or recs[0].dist_raw is None:
            raise ValueError("ideal_step_size needs a trace with distances to a reference")
        if max_distance is None:
            d0 = getattr(trace, "initial_distance", None)
            dists = [r.dist_raw for r in recs] + ([d0] if d0 is not None else [])
            max_distance = max(dists)
        grad_sq_sum = recs[-1].grad_sq_sum if grad_sq_sum is None else grad_sq_sum
        T = recs[-1].t if T is None else T
    if max_distance is None:
        raise ValueError("missing reference distance")
    z = zeta(min(kappa, 0.0), max_distance)
    if family == "rsgd":
        if not grad_sq_sum:
            raise ValueError("ideal step size is undefined for an all-zero gradient trace")
        return max_distance / math.sqrt(z * grad_sq_sum)
    if family == "nrsgd":
        if not T:
            raise ValueError("T must be positive")
        return max_distance / math.sqrt(T * z)
    raise ValueError(f"unknown family {family!r}")


@dataclass(frozen=True)
class MAPResult:
    edge_weighted: float
    anchor_mean: float
    n_anchors: int
    skipped: int

    def __float__(self):
        return self.edge_weighted


def _average_precision(order, relevant) -> float:
    hits = relevant[order]
    positions = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, len(positions) + 1) / positions))


def mean_average_precision(graph, theta, details: bool = False):
    """Reconstruction MAP of an embedding table for a (closed) relation graph.

    For each anchor ``u`` with relations, all other nodes are ranked by
    ascending distance (ties by node index) and the average precision of the
    related nodes is computed. The default value weights anchors by their
    relation count (the per-edge reading); ``details=True`` also returns the
    unweighted mean over anchors.
    """
    theta = np.asarray(theta, dtype=float)
    n = len(graph.nodes)
    if theta.shape[0] != n:
        raise ValueError("embedding table does not match the graph")
    succ = graph.successors()
    dist = poincare_distance_matrix(theta)
    aps, counts, skipped = [], [], 0
    for u in range(n):
        if not succ[u]:
            skipped += 1
            continue
        relevant = np.zeros(n, dtype=bool)
        relevant[succ[u]] = True
        others = np.array([j for j in range(n) if j != u])
        order = others[np.lexsort((others, dist[u, others]))]
        aps.append(_average_precision(order, relevant))
        counts.append(len(succ[u]))
    if not aps:
        raise ValueError("no anchors with relations")
    aps, counts = np.array(aps), np.array(counts, dtype=float)
    res = MAPResult(float(np.sum(aps * counts) / counts.sum()), float(aps.mean()), len(aps), skipped)
    return res if details else res.edge_weighted


def sensitivity_grid(results) -> dict:
    """Long-format rows and per-(optimizer, parameter) aggregates.

    ``results`` holds dicts with ``optimizer``, ``param_name``, ``param_value``,
    ``replication``, ``final_metric`` and ``status`` keys. Cells with a
    non-finite metric are marked ``diverged`` and left out of the means.
    """
    rows = []
    for r in results:
        row = dict(r)
        val = row.get("final_metric")
        if row.get("status", "ok") == "ok" and (val is None or not math.isfinite(val)):
            row["status"] = "diverged"
        rows.append(row)
    groups = defaultdict(list)
    for row in rows:
        groups[(row["optimizer"], row["param_name"], row["param_value"])].append(row)
    summary = []
    for (opt, pname, pval), cells in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2])):
        ok = [c["final_metric"] for c in cells if c["status"] == "ok"]
        mean = float(np.mean(ok)) if ok else float("nan")
        stderr = float(np.std(ok, ddof=1) / math.sqrt(len(ok))) if len(ok) > 1 else float("nan")
        summary.append({
            "optimizer": opt, "param_name": pname, "param_value": pval, "n": len(cells),
            "n_ok": len(ok), "n_diverged": len(cells) - len(ok), "mean": mean, "stderr": stderr,
        })
    return {"rows": rows, "summary": summary}
