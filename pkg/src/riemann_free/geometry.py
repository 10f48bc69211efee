"""Curvature function, the manifold contract and generic geodesic helpers."""

from __future__ import annotations

import abc
import math
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CurvatureBound",
    "CutLocusError",
    "CutLocusWarning",
    "Manifold",
    "check_triangle_bound",
    "geodesic_distance",
    "inner",
    "norm",
    "zeta",
]

_SERIES_CUTOFF = 1e-4
MEMBERSHIP_TOL = 1e-9


class CutLocusWarning(RuntimeWarning):
    """Emitted when a log map is evaluated on the cut locus and a branch is chosen."""


class CutLocusError(ValueError):
    """Raised when a log map has no well-defined value for the given pair."""


@dataclass(frozen=True)
class CurvatureBound:
    """Lower bound ``kappa`` on the sectional curvature."""

    kappa: float

    def __post_init__(self):
        if not math.isfinite(self.kappa):
            raise ValueError(f"curvature bound must be finite, got {self.kappa}")


def zeta(kappa, d):
    """Geometric curvature function.

    ``sqrt(|kappa|) d / tanh(sqrt(|kappa|) d)`` for ``kappa < 0`` and 1 otherwise.
    Vectorised over ``kappa`` and ``d``; returns a float for scalar input.

    >>> zeta(0.0, 5.0)
    1.0
    >>> round(zeta(-1.0, 1.0), 6)
    1.313035
    """
    if isinstance(d, (float, int)) and isinstance(kappa, (float, int)):
        return _zeta_scalar(float(kappa), float(d))
    d_arr = np.asarray(d, dtype=float)
    k_arr = np.asarray(kappa, dtype=float)
    if np.any(d_arr < 0) or np.any(~np.isfinite(d_arr)):
        raise ValueError("zeta is defined for finite d >= 0")
    if np.any(~np.isfinite(k_arr)):
        raise ValueError("kappa must be finite")
    z = np.sqrt(np.maximum(-k_arr, 0.0)) * d_arr
    small = z < _SERIES_CUTOFF
    safe = np.where(small, 1.0, z)
    out = np.where(small, 1.0 + z * z / 3.0, safe / np.tanh(safe))
    return float(out) if out.ndim == 0 else out


def _zeta_scalar(kappa: float, d: float) -> float:
    if not (d >= 0 and math.isfinite(d)):
        raise ValueError("zeta is defined for finite d >= 0")
    if not math.isfinite(kappa):
        raise ValueError("kappa must be finite")
    if kappa >= 0:
        return 1.0
    z = math.sqrt(-kappa) * d
    return 1.0 + z * z / 3.0 if z < _SERIES_CUTOFF else z / math.tanh(z)


class Manifold(abc.ABC):
    """Riemannian manifold in ambient coordinates.

    Points and tangent vectors are plain numpy arrays. Subclasses supply the
    metric, exponential and logarithmic maps, transport and projections.
    Product-like manifolds additionally report ``n_components`` so that
    optimizers can keep per-component statistics.
    """

    name = "manifold"
    #: whether ``parallel_transport`` is exact (norm preserving)
    exact_transport = True

    def __init__(self, kappa: float):
        self.curvature = CurvatureBound(float(kappa))

    @property
    def kappa(self) -> float:
        return self.curvature.kappa

    @property
    def zeta_kappa(self) -> float:
        """Curvature value fed to ``zeta``; positive bounds use the flat branch."""
        return min(self.kappa, 0.0)

    # ---- the contract -------------------------------------------------
    @property
    @abc.abstractmethod
    def shape(self) -> tuple:
        """Ambient shape of a point."""

    @abc.abstractmethod
    def contains(self, x, tol: float = MEMBERSHIP_TOL) -> bool: ...

    @abc.abstractmethod
    def is_tangent(self, x, v, tol: float = MEMBERSHIP_TOL) -> bool: ...

    @abc.abstractmethod
    def inner(self, x, u, v) -> float: ...

    @abc.abstractmethod
    def exp(self, x, v): ...

    @abc.abstractmethod
    def log(self, x, y): ...

    @abc.abstractmethod
    def dist(self, x, y) -> float: ...

    @abc.abstractmethod
    def transport(self, x, y, v): ...

    @abc.abstractmethod
    def proj(self, x, w): ...

    @abc.abstractmethod
    def egrad_to_rgrad(self, x, g): ...

    @abc.abstractmethod
    def projx(self, x):
        """Map an ambient array onto the manifold (drift control)."""

    @abc.abstractmethod
    def random_point(self, rng): ...

    # ---- shared helpers -----------------------------------------------
    def norm(self, x, v) -> float:
        return math.sqrt(max(self.inner(x, v, v), 0.0))

    def random_tangent(self, x, rng):
        return self.proj(x, rng.standard_normal(self.shape))

    def zero_tangent(self, x):
        return np.zeros_like(x)

    # Component structure: a plain manifold is its own single component.
    n_components = 1

    def component_dist(self, x, y):
        return np.array([self.dist(x, y)])

    def component_sqnorm(self, x, v):
        return np.array([self.inner(x, v, v)])

    def scale_components(self, v, c):
        """Multiply tangent ``v`` by per-component factors ``c`` (length ``n_components``)."""
        c = np.asarray(c, dtype=float)
        return v * float(c.reshape(-1)[0]) if c.ndim else v * float(c)

    def __repr__(self):
        return f"{type(self).__name__}(shape={self.shape})"


def inner(m: Manifold, x, u, v) -> float:
    return m.inner(x, u, v)


def norm(m: Manifold, x, v) -> float:
    return m.norm(x, v)


def geodesic_distance(m: Manifold, x, y) -> float:
    if not (m.contains(x, 1e-6) and m.contains(y, 1e-6)):
        raise ValueError("geodesic_distance: point is not on the manifold")
    return m.dist(x, y)


def check_triangle_bound(m: Manifold, x, y, z, tol: float = 1e-9) -> bool:
    """Check ``a^2 <= zeta(c) b^2 + c^2 - 2 b c cos(A)`` for the triangle (x, y, z).

    ``a = d(y, z)``, ``b = d(x, y)``, ``c = d(x, z)`` and ``A`` is the angle at
    ``x`` between ``log_x(y)`` and ``log_x(z)``.
    """
    a = m.dist(y, z)
    b = m.dist(x, y)
    c = m.dist(x, z)
    if b * c == 0.0:
        rhs = b * b + c * c
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", CutLocusWarning)
            u = m.log(x, y)
            w = m.log(x, z)
        nu, nw = m.norm(x, u), m.norm(x, w)
        cos_a = 0.0 if nu * nw == 0 else np.clip(m.inner(x, u, w) / (nu * nw), -1.0, 1.0)
        rhs = zeta(m.zeta_kappa, c) * b * b + c * c - 2.0 * b * c * cos_a
    scale = max(1.0, a * a, rhs)
    return bool(a * a <= rhs + tol * scale)
