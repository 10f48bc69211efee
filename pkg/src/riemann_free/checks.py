"""Named invariant suites behind ``riemann-free --verify``.

Each check returns a :class:`CheckResult`; :func:`verify_suite` runs them all
and produces a machine-readable report. The Euclidean references here are
written directly in NumPy and share no code with :mod:`riemann_free.optim`.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from .data import balanced_tree, generate_rayleigh, make_rng, synthetic_gaussian
from .geometry import check_triangle_bound, zeta
from .manifolds import Euclidean, Grassmann, PoincareBall, Sphere
from .optim import NRDoG, RDoG, RDoWG
from .problems import EmbeddingProblem, PCAProblem

__all__ = [
    "CheckResult",
    "DEFAULT_TOLERANCES",
    "euclidean_dog",
    "euclidean_dowg",
    "euclidean_ngd",
    "fd_gradient",
    "gradient_relative_error",
    "tangent_basis",
    "verify_suite",
]

DEFAULT_TOLERANCES = {
    "roundtrip": 1e-6,
    "distance": 1e-7,
    "triangle": 1e-9,
    "gradcheck": 1e-4,
    "reduction": 1e-12,
    "transport": 1e-9,
}


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""
    seconds: float = 0.0


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------


def _geometry_cases(rng):
    yield "sphere", Sphere(10), 0.5
    yield "grassmann", Grassmann(8, 3), 0.5
    yield "poincare", PoincareBall(4), 0.5


def roundtrip_error(m, rng, n: int = 200, scale: float = 0.5) -> float:
    """Max ``|log_x exp_x v - v|`` over random tangents of norm up to ``scale``."""
    worst = 0.0
    for _ in range(n):
        x = m.random_point(rng)
        v = m.random_tangent(x, rng)
        v = v * (scale * rng.uniform(0.05, 1.0) / max(m.norm(x, v), 1e-300))
        y = m.exp(x, v)
        back = m.log(x, y)
        worst = max(worst, m.norm(x, back - v))
    return worst


def distance_error(m, rng, n: int = 200) -> float:
    """Max ``|d(x, y) - |log_x y||`` over random pairs."""
    worst = 0.0
    for _ in range(n):
        x, y = m.random_point(rng), m.random_point(rng)
        worst = max(worst, abs(m.dist(x, y) - m.norm(x, m.log(x, y))))
    return worst


def transport_error(m, rng, n: int = 200) -> float:
    worst = 0.0
    for _ in range(n):
        x, y = m.random_point(rng), m.random_point(rng)
        v = m.random_tangent(x, rng)
        w = m.transport(x, y, v)
        worst = max(worst, abs(m.norm(y, w) - m.norm(x, v)) / max(1.0, m.norm(x, v)))
    return worst


def triangle_violations(m, rng, n: int = 10_000, tol: float = 1e-9) -> int:
    bad = 0
    for _ in range(n):
        x, y, z = m.random_point(rng), m.random_point(rng), m.random_point(rng)
        if not check_triangle_bound(m, x, y, z, tol=tol):
            bad += 1
    return bad


def zeta_monotonicity_violations(rng, n: int = 1000) -> int:
    """Count sampled ``(kappa, d, d')`` with ``d < d'`` but ``zeta(d) > zeta(d')``,
    plus any value below 1."""
    kappa = -np.exp(rng.uniform(-6, 3, n))
    d1 = np.exp(rng.uniform(-8, 3, n))
    d2 = d1 * (1.0 + np.exp(rng.uniform(-8, 1, n)))
    z1, z2 = zeta(kappa, d1), zeta(kappa, d2)
    bad = int(np.sum(z1 > z2 * (1 + 1e-15))) + int(np.sum(z1 < 1.0)) + int(np.sum(z2 < 1.0))
    bad += int(np.sum(zeta(-kappa, d1) != 1.0))
    return bad


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------


def tangent_basis(m, x):
    """Orthonormal basis (in the metric at ``x``) of the tangent space at ``x``."""
    shape = np.shape(x)
    n = int(np.prod(shape))
    cands = [m.proj(x, np.eye(n)[i].reshape(shape)) for i in range(n)]
    gram = np.array([[m.inner(x, a, b) for b in cands] for a in cands])
    w, U = np.linalg.eigh(gram)
    keep = w > 1e-10 * w.max()
    flat = np.array([c.ravel() for c in cands])
    basis = (U[:, keep] / np.sqrt(w[keep])).T @ flat
    return [b.reshape(shape) for b in basis]


def fd_gradient(m, f, x, h: float = 1e-5):
    """Riemannian gradient by central differences of ``f(exp_x(+-h e_k))``."""
    g = np.zeros(np.shape(x))
    for e in tangent_basis(m, x):
        d = (f(m.exp(x, h * e)) - f(m.exp(x, -h * e))) / (2 * h)
        g = g + d * e
    return g


def gradient_relative_error(m, f, grad, x, h: float = 1e-5) -> float:
    fd = fd_gradient(m, f, x, h)
    g = grad(x)
    return m.norm(x, fd - g) / max(m.norm(x, g), 1e-12)


def gradient_cases(seed: int = 0):
    rng = make_rng(seed, 41)
    ray = generate_rayleigh(10, 12, seed)
    Z = synthetic_gaussian(200, 8, seed=seed).X
    pca = PCAProblem(Z - Z.mean(axis=0), 2)
    emb = EmbeddingProblem(balanced_tree(2), dim=3, neg_count=5)

    def emb_point(r):
        return r.uniform(-0.6, 0.6, emb.manifold.shape) / math.sqrt(3)

    return [
        ("rayleigh", ray, lambda r: ray.manifold.random_point(r)),
        ("pca", pca, lambda r: pca.manifold.random_point(r)),
        ("embed", emb, emb_point),
    ], rng


# ---------------------------------------------------------------------------
# Euclidean references
# ---------------------------------------------------------------------------
# These schedules sit at the edge of stability on quadratics, where a one-ulp
# difference grows to O(1) within a couple hundred steps. So the references
# use the same elementary float expressions (``sqrt(sum(a * a))``,
# ``g * (1 / |g|)``) as any careful implementation would, not ``np.linalg.norm``.


def _norm(a) -> float:
    return float(np.sqrt(np.sum(a * a)))


def euclidean_dog(grad, x0, eps, T):
    x = np.array(x0, dtype=float)
    r, G, xs = eps, 0.0, [x.copy()]
    for _ in range(T):
        g = grad(x)
        r = max(r, _norm(x - x0))
        G += float(np.sum(g * g))
        eta = r / math.sqrt(G) if G > 0 else 0.0
        x = x - eta * g
        xs.append(x.copy())
    return np.array(xs)


def euclidean_dowg(grad, x0, eps, T):
    x = np.array(x0, dtype=float)
    r, v, xs = eps, 0.0, [x.copy()]
    for _ in range(T):
        g = grad(x)
        r = max(r, _norm(x - x0))
        v += r * r * float(np.sum(g * g))
        eta = r * r / math.sqrt(v) if v > 0 else 0.0
        x = x - eta * g
        xs.append(x.copy())
    return np.array(xs)


def euclidean_ngd(grad, x0, eps, T):
    x = np.array(x0, dtype=float)
    r, xs = eps, [x.copy()]
    for t in range(T):
        g = grad(x)
        r = max(r, _norm(x - x0))
        gn = _norm(g)
        if gn > 0:
            x = x - r / math.sqrt(t + 1) * (g * (1.0 / gn))
        xs.append(x.copy())
    return np.array(xs)


_REFERENCES = {"rdog": (RDoG, euclidean_dog), "rdowg": (RDoWG, euclidean_dowg),
               "nrdog": (NRDoG, euclidean_ngd)}


def riemannian_path(cls, grad, x0, eps, T):
    m = Euclidean(len(x0))
    opt = cls(m, eps=eps)
    s = opt.init(np.array(x0, dtype=float))
    xs = [s.x]
    for _ in range(T):
        s = opt.step(s, grad(s.x))
        xs.append(s.x)
    return np.array(xs)


def reduction_error(key: str, seed: int = 0, n_problems: int = 20, T: int = 200, d: int = 5) -> float:
    cls, ref = _REFERENCES[key]
    rng = make_rng(seed, 43)
    worst = 0.0
    for _ in range(n_problems):
        B = rng.standard_normal((d, d))
        H = B @ B.T / d + 0.1 * np.eye(d)
        b = rng.standard_normal(d)
        x0 = rng.standard_normal(d)
        eps = float(10 ** rng.uniform(-4, 0))

        def grad(x):
            return H @ x - b

        a = riemannian_path(cls, grad, x0, eps, T)
        e = ref(grad, x0, eps, T)
        worst = max(worst, float(np.max(np.abs(a - e))))
    return worst


# ---------------------------------------------------------------------------
# suite
# ---------------------------------------------------------------------------


def _timed(name, fn, tol, cmp="le"):
    t0 = time.perf_counter()
    try:
        value = float(fn())
        passed = value <= tol if cmp == "le" else value == 0
        detail = ""
    except Exception as exc:  # a crashing check is a failing check
        value, passed, detail = float("nan"), False, f"{type(exc).__name__}: {exc}"
    return CheckResult(name, bool(passed), value, tol, detail, time.perf_counter() - t0)


def verify_suite(tolerances: dict | None = None, seed: int = 0, quick: bool = False) -> dict:
    """Run every named invariant; returns ``{"passed", "failed", "results"}``."""
    tol = {**DEFAULT_TOLERANCES, **(tolerances or {})}
    n = 50 if quick else 200
    results = []
    rng = make_rng(seed, 40)
    for name, m, scale in _geometry_cases(rng):
        results.append(_timed(f"{name}/log_exp_roundtrip", lambda: roundtrip_error(m, rng, n, scale), tol["roundtrip"]))
        results.append(_timed(f"{name}/distance_consistency", lambda: distance_error(m, rng, n), tol["distance"]))
        if m.exact_transport:
            results.append(_timed(f"{name}/transport_isometry", lambda: transport_error(m, rng, n),
                                  tol["transport"]))
    ball = PoincareBall(3)
    results.append(_timed("poincare/triangle_bound",
                          lambda: triangle_violations(ball, rng, 1000 if quick else 10_000, tol["triangle"]),
                          0, cmp="eq"))
    results.append(_timed("zeta/monotonicity", lambda: zeta_monotonicity_violations(rng), 0, cmp="eq"))
    cases, grng = gradient_cases(seed)
    for name, prob, sampler in cases:
        pts = [sampler(grng) for _ in range(10 if quick else 50)]
        results.append(_timed(
            f"gradcheck/{name}",
            lambda: max(gradient_relative_error(prob.manifold, prob.loss, prob.full_grad, x) for x in pts),
            tol["gradcheck"]))
    for key in _REFERENCES:
        results.append(_timed(f"euclidean_reduction/{key}", lambda: reduction_error(key, seed), tol["reduction"]))
    failed = [r.name for r in results if not r.passed]
    return {"passed": not failed, "failed": failed, "tolerances": tol,
            "results": [asdict(r) for r in results]}
