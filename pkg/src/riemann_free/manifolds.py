"""Euclidean space, sphere, Grassmann, Poincare ball and product manifolds."""

from __future__ import annotations

import math
import warnings

import numpy as np

from .geometry import MEMBERSHIP_TOL, CutLocusError, CutLocusWarning, Manifold

__all__ = [
    "Euclidean",
    "Grassmann",
    "PoincareBall",
    "PowerManifold",
    "ProductManifold",
    "Sphere",
    "mobius_add",
]

BALL_MAX_NORM = 1.0 - 1e-12
_ARTANH_MAX = 1.0 - 1e-15


def _fnorm(a) -> float:
    return float(np.sqrt(np.sum(a * a)))


def _vnorm(a) -> float:
    # dot-product norm; Euclidean keeps sqrt(sum(a * a)) to match float expressions exactly
    return math.sqrt(float(np.vdot(a, a)))


class Euclidean(Manifold):
    """Flat ``R^d`` (or any array shape); exp is addition."""

    name = "euclidean"

    def __init__(self, *shape: int):
        super().__init__(0.0)
        if not shape:
            raise ValueError("Euclidean needs a shape")
        self._shape = tuple(int(s) for s in shape)

    @property
    def shape(self):
        return self._shape

    def contains(self, x, tol=MEMBERSHIP_TOL):
        x = np.asarray(x)
        return x.shape == self._shape and bool(np.all(np.isfinite(x)))

    def is_tangent(self, x, v, tol=MEMBERSHIP_TOL):
        return np.shape(v) == self._shape

    def inner(self, x, u, v):
        return float(np.sum(u * v))

    def exp(self, x, v):
        return x + v

    def log(self, x, y):
        return y - x

    def dist(self, x, y):
        return _fnorm(y - x)

    def transport(self, x, y, v):
        return np.array(v, copy=True)

    def proj(self, x, w):
        return np.asarray(w, dtype=float)

    def egrad_to_rgrad(self, x, g):
        return np.asarray(g, dtype=float)

    def projx(self, x):
        return np.asarray(x, dtype=float)

    def random_point(self, rng):
        return rng.standard_normal(self._shape)


class Sphere(Manifold):
    """Unit sphere ``S^{d-1}`` in ``R^d``.

    Transport defaults to projection onto the target tangent space; pass
    ``exact_transport=True`` for the closed-form geodesic transport.
    """

    name = "sphere"

    def __init__(self, d: int, exact_transport: bool = False):
        super().__init__(1.0)
        if d < 2:
            raise ValueError("sphere needs ambient dimension >= 2")
        self.d = int(d)
        self.exact_transport = bool(exact_transport)

    @property
    def shape(self):
        return (self.d,)

    def contains(self, x, tol=MEMBERSHIP_TOL):
        x = np.asarray(x)
        return x.shape == self.shape and abs(_vnorm(x) - 1.0) <= tol

    def is_tangent(self, x, v, tol=MEMBERSHIP_TOL):
        return abs(float(x @ v)) <= tol * max(1.0, _vnorm(v))

    def inner(self, x, u, v):
        return float(u @ v)

    def proj(self, x, w):
        return w - (x @ w) * x

    egrad_to_rgrad = proj

    def projx(self, x):
        return x / _vnorm(x)

    def exp(self, x, v):
        nv = _vnorm(v)
        if nv == 0.0:
            return np.array(x, dtype=float, copy=True)
        return self.projx(math.cos(nv) * x + math.sin(nv) * (v / nv))

    def log(self, x, y):
        c = float(x @ y)
        p = y - c * x
        s = _vnorm(p)
        theta = math.atan2(s, c)
        if s > 1e-15:
            return theta * (p / s)
        if c > 0:
            return np.zeros_like(x)
        # Antipodal pair: every great circle is a geodesic. Take the first
        # standard basis vector with a nonzero tangent component.
        warnings.warn("sphere log evaluated at an antipodal pair", CutLocusWarning, stacklevel=2)
        for i in range(self.d):
            e = np.zeros(self.d)
            e[i] = 1.0
            t = self.proj(x, e)
            nt = _vnorm(t)
            if nt > 1e-8:
                return math.pi * t / nt
        raise CutLocusError("no tangent direction found")  # pragma: no cover

    def dist(self, x, y):
        c = float(x @ y)
        s = _vnorm(y - c * x)
        return math.atan2(s, c)

    def transport(self, x, y, v):
        if not self.exact_transport:
            return self.proj(y, v)
        u = self.log(x, y)
        theta = _vnorm(u)
        if theta == 0.0:
            return np.array(v, copy=True)
        e = u / theta
        a = float(e @ v)
        return v + a * ((math.cos(theta) - 1.0) * e - math.sin(theta) * x)

    def random_point(self, rng):
        return self.projx(rng.standard_normal(self.d))


class Grassmann(Manifold):
    """Grassmann manifold of ``r``-planes in ``R^d``.

    Points are ``d x r`` matrices with orthonormal columns; two representatives
    are the same point when they span the same subspace. Transport is the
    projection onto the target horizontal space.
    """

    name = "grassmann"
    exact_transport = False

    def __init__(self, d: int, r: int):
        super().__init__(0.0)
        if not 1 <= r <= d:
            raise ValueError(f"need 1 <= r <= d, got d={d}, r={r}")
        self.d, self.r = int(d), int(r)

    @property
    def shape(self):
        return (self.d, self.r)

    def contains(self, x, tol=MEMBERSHIP_TOL):
        x = np.asarray(x)
        if x.shape != self.shape:
            return False
        return float(np.max(np.abs(x.T @ x - np.eye(self.r)))) <= tol

    def is_tangent(self, x, v, tol=MEMBERSHIP_TOL):
        return float(np.max(np.abs(x.T @ v))) <= tol * max(1.0, _fnorm(v))

    def inner(self, x, u, v):
        return float(np.sum(u * v))

    def proj(self, x, w):
        return w - x @ (x.T @ w)

    egrad_to_rgrad = proj

    def projx(self, x):
        q, rr = np.linalg.qr(x)
        # fix column signs so the representative is continuous in x
        signs = np.sign(np.diag(rr))
        signs[signs == 0] = 1.0
        return q * signs

    def exp(self, x, v):
        if not np.any(v):
            return np.array(x, dtype=float, copy=True)
        u, s, vt = np.linalg.svd(v, full_matrices=False)
        y = (x @ vt.T) * np.cos(s) @ vt + (u * np.sin(s)) @ vt
        return self.projx(y)

    def log(self, x, y):
        xty = x.T @ y
        cond = np.linalg.cond(xty)
        if not np.isfinite(cond) or cond > 1e12:
            raise CutLocusError("Grassmann log: x^T y is singular (cut locus)")
        m = np.linalg.solve(xty.T, (y - x @ xty).T).T
        u, s, vt = np.linalg.svd(m, full_matrices=False)
        return (u * np.arctan(s)) @ vt

    def principal_angles(self, x, y):
        xty = x.T @ y
        cos = np.linalg.svd(xty, compute_uv=False)  # descending
        sin = np.linalg.svd(y - x @ xty, compute_uv=False)[::-1]  # ascending
        if len(sin) < len(cos):  # pragma: no cover - d < 2r
            sin = np.concatenate([np.zeros(len(cos) - len(sin)), sin])
        return np.arctan2(sin[: len(cos)], np.clip(cos, 0.0, 1.0))

    def dist(self, x, y):
        return _fnorm(self.principal_angles(x, y))

    def transport(self, x, y, v):
        return self.proj(y, v)

    def random_point(self, rng):
        return self.projx(rng.standard_normal(self.shape))


def mobius_add(x, y):
    """Mobius addition on the unit Poincare ball (vectorised over leading axes)."""
    xy = np.sum(x * y, axis=-1, keepdims=True)
    x2 = np.sum(x * x, axis=-1, keepdims=True)
    y2 = np.sum(y * y, axis=-1, keepdims=True)
    num = (1.0 + 2.0 * xy + y2) * x + (1.0 - x2) * y
    den = 1.0 + 2.0 * xy + x2 * y2
    return num / den


def _gyration(u, v, w):
    # gyr[u, v] w for the unit ball
    uw = np.sum(u * w, axis=-1, keepdims=True)
    vw = np.sum(v * w, axis=-1, keepdims=True)
    uv = np.sum(u * v, axis=-1, keepdims=True)
    u2 = np.sum(u * u, axis=-1, keepdims=True)
    v2 = np.sum(v * v, axis=-1, keepdims=True)
    a = -uw * v2 + vw + 2.0 * uv * vw
    b = -vw * u2 - uw
    d = 1.0 + 2.0 * uv + u2 * v2
    return w + 2.0 * (a * u + b * v) / d


class PoincareBall(Manifold):
    """Poincare ball of dimension ``d``, curvature -1.

    All maps are vectorised over leading axes, which :class:`PowerManifold`
    uses to treat an embedding table as a single point.
    """

    name = "poincare"

    def __init__(self, d: int):
        super().__init__(-1.0)
        self.d = int(d)

    @property
    def shape(self):
        return (self.d,)

    @staticmethod
    def _sq(x):
        return np.sum(x * x, axis=-1, keepdims=True)

    def conformal_factor(self, x):
        return 2.0 / (1.0 - self._sq(x))

    def contains(self, x, tol=MEMBERSHIP_TOL):
        x = np.asarray(x)
        return x.shape[-1] == self.d and bool(np.all(self._sq(x) < 1.0))

    def is_tangent(self, x, v, tol=MEMBERSHIP_TOL):
        return np.shape(v) == np.shape(x)

    def _inner_rows(self, x, u, v):
        lam = self.conformal_factor(x)[..., 0]
        return lam * lam * np.sum(u * v, axis=-1)

    def inner(self, x, u, v):
        return float(np.sum(self._inner_rows(x, u, v)))

    def projx(self, x):
        n = np.sqrt(self._sq(x))
        return np.where(n > BALL_MAX_NORM, x / np.maximum(n, 1e-300) * BALL_MAX_NORM, x)

    def proj(self, x, w):
        return np.asarray(w, dtype=float)

    def egrad_to_rgrad(self, x, g):
        return ((1.0 - self._sq(x)) ** 2 / 4.0) * g

    def exp(self, x, v):
        nv = np.sqrt(self._sq(v))
        lam = self.conformal_factor(x)
        safe = np.where(nv > 0, nv, 1.0)
        step = np.tanh(lam * nv / 2.0) * v / safe
        return self.projx(mobius_add(x, step))

    def log(self, x, y):
        w = mobius_add(-x, y)
        nw = np.sqrt(self._sq(w))
        lam = self.conformal_factor(x)
        safe = np.where(nw > 0, nw, 1.0)
        return (2.0 / lam) * np.arctanh(np.minimum(nw, _ARTANH_MAX)) * w / safe

    def _dist_rows(self, x, y):
        diff = self._sq(x - y)[..., 0]
        den = (1.0 - self._sq(x)[..., 0]) * (1.0 - self._sq(y)[..., 0])
        z = 2.0 * diff / den
        # arcosh(1 + z) without cancellation for small z
        return np.log1p(z + np.sqrt(z * (z + 2.0)))

    def dist(self, x, y):
        return float(np.sqrt(np.sum(self._dist_rows(x, y) ** 2)))

    def transport(self, x, y, v):
        lx, ly = self.conformal_factor(x), self.conformal_factor(y)
        return _gyration(y, -x, v) * lx / ly

    def random_point(self, rng, radius: float = 0.9):
        u = rng.standard_normal(self.d)
        u /= _fnorm(u)
        return u * radius * rng.uniform() ** (1.0 / self.d)


class ProductManifold(Manifold):
    """Cartesian product; points are tuples of component arrays."""

    name = "product"

    def __init__(self, components):
        components = list(components)
        if not components:
            raise ValueError("product of zero manifolds")
        super().__init__(min(m.kappa for m in components))
        self.components = components
        self.exact_transport = all(m.exact_transport for m in components)

    @property
    def shape(self):
        return tuple(m.shape for m in self.components)

    @property
    def n_components(self):
        return len(self.components)

    @property
    def zeta_kappa(self):
        return min(self.kappa, 0.0)

    def _zip(self, *arrs):
        return zip(self.components, *arrs)

    def contains(self, x, tol=MEMBERSHIP_TOL):
        return len(x) == len(self.components) and all(m.contains(a, tol) for m, a in self._zip(x))

    def is_tangent(self, x, v, tol=MEMBERSHIP_TOL):
        return all(m.is_tangent(a, b, tol) for m, a, b in self._zip(x, v))

    def inner(self, x, u, v):
        return float(sum(m.inner(a, b, c) for m, a, b, c in self._zip(x, u, v)))

    def exp(self, x, v):
        return tuple(m.exp(a, b) for m, a, b in self._zip(x, v))

    def log(self, x, y):
        return tuple(m.log(a, b) for m, a, b in self._zip(x, y))

    def component_dist(self, x, y):
        return np.array([m.dist(a, b) for m, a, b in self._zip(x, y)])

    def dist(self, x, y):
        return float(np.sqrt(np.sum(self.component_dist(x, y) ** 2)))

    def transport(self, x, y, v):
        return tuple(m.transport(a, b, c) for m, a, b, c in self._zip(x, y, v))

    def proj(self, x, w):
        return tuple(m.proj(a, b) for m, a, b in self._zip(x, w))

    def egrad_to_rgrad(self, x, g):
        return tuple(m.egrad_to_rgrad(a, b) for m, a, b in self._zip(x, g))

    def projx(self, x):
        return tuple(m.projx(a) for m, a in self._zip(x))

    def random_point(self, rng):
        return tuple(m.random_point(rng) for m in self.components)

    def random_tangent(self, x, rng):
        return tuple(m.random_tangent(a, rng) for m, a in self._zip(x))

    def zero_tangent(self, x):
        return tuple(np.zeros_like(a) for a in x)

    def component_sqnorm(self, x, v):
        return np.array([m.inner(a, b, b) for m, a, b in self._zip(x, v)])

    def scale_components(self, v, c):
        c = np.broadcast_to(np.asarray(c, dtype=float), (len(self.components),))
        return tuple(b * float(ci) for b, ci in zip(v, c))


class PowerManifold(Manifold):
    """``n`` copies of one vectorised manifold, stacked as an ``(n, *base.shape)`` array.

    Behaves like :class:`ProductManifold` over identical components but keeps
    the table contiguous. ``base`` must broadcast over a leading axis
    (:class:`PoincareBall` and :class:`Euclidean` of rank one do).
    """

    name = "power"

    def __init__(self, base: Manifold, n: int):
        if not isinstance(base, (PoincareBall, Euclidean)):
            raise TypeError("PowerManifold supports PoincareBall and Euclidean bases")
        super().__init__(base.kappa)
        self.base = base
        self.n = int(n)
        self.exact_transport = base.exact_transport

    @property
    def shape(self):
        return (self.n, *self.base.shape)

    @property
    def n_components(self):
        return self.n

    def contains(self, x, tol=MEMBERSHIP_TOL):
        x = np.asarray(x)
        return x.shape == self.shape and self.base.contains(x, tol)

    def is_tangent(self, x, v, tol=MEMBERSHIP_TOL):
        return np.shape(v) == self.shape

    def _rows_inner(self, x, u, v):
        if isinstance(self.base, PoincareBall):
            return self.base._inner_rows(x, u, v)
        return np.sum(u * v, axis=-1)

    def inner(self, x, u, v):
        return float(np.sum(self._rows_inner(x, u, v)))

    def component_sqnorm(self, x, v):
        return self._rows_inner(x, v, v)

    def component_dist(self, x, y):
        if isinstance(self.base, PoincareBall):
            return self.base._dist_rows(x, y)
        return np.sqrt(np.sum((y - x) ** 2, axis=-1))

    def dist(self, x, y):
        return float(np.sqrt(np.sum(self.component_dist(x, y) ** 2)))

    def scale_components(self, v, c):
        c = np.asarray(c, dtype=float)
        if c.ndim == 0 or c.size == 1:
            return v * float(c.reshape(-1)[0])
        return v * c[:, None]

    def exp(self, x, v):
        return self.base.exp(x, v)

    def log(self, x, y):
        return self.base.log(x, y)

    def transport(self, x, y, v):
        return self.base.transport(x, y, v)

    def proj(self, x, w):
        return self.base.proj(x, w)

    def egrad_to_rgrad(self, x, g):
        return self.base.egrad_to_rgrad(x, g)

    def projx(self, x):
        return self.base.projx(x)

    def random_point(self, rng):
        return np.stack([self.base.random_point(rng) for _ in range(self.n)])
