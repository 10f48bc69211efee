"""Learning-rate-free Riemannian step-size schedules, baselines and the run loop.

Every optimizer follows the same per-iteration order: query the oracle at
``x_t``, refresh the distance estimate ``r_bar``, accumulate gradient
statistics, compute the step size, take the exponential-map step, then fold
``x_t`` into the averaged iterate.

On product manifolds the statistics are scalars by default (``rbar_scope =
"global"``); with ``"per_component"`` each component keeps its own
``r_bar``, ``G`` and ``v`` and gets its own step size.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Any, Callable

import numpy as np

from .geometry import Manifold, zeta

__all__ = [
    "AveragedIterate",
    "OPTIMIZERS",
    "OptimizerState",
    "RAdam",
    "RDoG",
    "RDoWG",
    "RSGD",
    "NRDoG",
    "NRSGD",
    "CORDoG",
    "CORDoWG",
    "TamedConfig",
    "TamedRDoG",
    "TamedRDoWG",
    "Trace",
    "TraceRecord",
    "averaging_weight",
    "co_step_size",
    "log_plus",
    "make_optimizer",
    "nrdog_step",
    "nrdog_step_size",
    "rdog_step_size",
    "rdowg_step_size",
    "run",
    "step_radam",
    "step_rsgd",
    "trdog_step_size",
    "trdowg_step_size",
    "update_average",
]

DOWG_FORMS = ("appendix", "maintext")
AVERAGING_SCHEMES = ("rdog_weights", "rdowg_weights", "uniform", "none")


def log_plus(z):
    """``1 + log(z)``."""
    return 1.0 + np.log(z)


@dataclass(frozen=True)
class TamedConfig:
    """Horizon ``T`` and confidence ``delta`` for the tamed schedules."""

    T: int
    delta: float = 0.5

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("tamed horizon T must be >= 1")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")

    @property
    def theta(self) -> float:
        return math.log(60.0 * math.log(6.0 * self.T) / self.delta)


@dataclass(frozen=True)
class AveragedIterate:
    x_tilde: Any
    weight_sum: Any
    scheme: str


@dataclass(frozen=True)
class OptimizerState:
    x: Any
    x0: Any
    eps: float
    t: int = 0
    r_bar: Any = 0.0
    r_bar_first: Any = 0.0
    grad_sq_sum: Any = 0.0
    weighted_grad_sq_sum: Any = 0.0
    prev_weighted_grad_sq_sum: Any = 0.0
    prev_grad_sq_sum: Any = 0.0
    grad_norm: Any = 0.0
    grad_norm_max: Any = 0.0
    grad_norm_first: Any = 0.0
    eta: Any = 0.0
    averaged: AveragedIterate | None = None
    extra: dict = field(default_factory=dict)


def _ratio(num, den):
    """``num / den`` with 0 wherever ``den == 0``."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    out = np.divide(num, den, out=np.zeros(np.broadcast(num, den).shape), where=den > 0)
    return float(out) if out.ndim == 0 else out


def _zeta(m: Manifold, r):
    return zeta(m.zeta_kappa, r)


# ---------------------------------------------------------------------------
# step-size schedules (pure functions of already-updated statistics)
# ---------------------------------------------------------------------------


def rdog_step_size(state: OptimizerState, m: Manifold):
    """``r_bar / sqrt(zeta(r_bar) G)``; zero while no gradient has been seen."""
    return _ratio(state.r_bar, np.sqrt(_zeta(m, state.r_bar) * state.grad_sq_sum))


def rdowg_step_size(state: OptimizerState, m: Manifold, form: str = "appendix"):
    """Weighted-gradient step size.

    ``form="appendix"`` uses ``r_bar^2 / (zeta sqrt(v))`` with
    ``v = sum r_bar^2 / zeta |g|^2``; ``form="maintext"`` uses
    ``r_bar / sqrt(zeta v)`` with ``v = sum r_bar^2 |g|^2``. The state's
    ``weighted_grad_sq_sum`` must have been accumulated with the same form.
    """
    z = _zeta(m, state.r_bar)
    v = state.weighted_grad_sq_sum
    if form == "appendix":
        return _ratio(np.square(state.r_bar), z * np.sqrt(v))
    if form == "maintext":
        return _ratio(state.r_bar, np.sqrt(z * v))
    raise ValueError(f"unknown dowg form {form!r}")


def nrdog_step_size(state: OptimizerState, m: Manifold):
    """``r_bar / sqrt((t + 1) zeta(r_bar))`` (geodesic length of the step)."""
    return np.asarray(state.r_bar) / np.sqrt((state.t + 1) * _zeta(m, state.r_bar))


def _tamed_log_factor(z):
    z = np.asarray(z, dtype=float)
    safe = np.where(z > 0, z, 1.0)
    return np.where(z > 0, log_plus(safe), 0.0)


def trdog_step_size(state: OptimizerState, m: Manifold, tamed: TamedConfig):
    """Tamed RDoG: ``r_bar / sqrt(zeta G')`` with

    ``G' = 8^4 theta^2 log_+^2((1+t) l_t^2 / l_0^2) (G_{t-1} + 16 l_t^2)``.
    """
    lt, l0 = state.grad_norm_max, state.grad_norm_first
    lf = _tamed_log_factor(_ratio((1 + state.t) * np.square(lt), np.square(l0)))
    g_prime = 8.0**4 * tamed.theta**2 * lf**2 * (state.prev_grad_sq_sum + 16.0 * np.square(lt))
    return _ratio(state.r_bar, np.sqrt(_zeta(m, state.r_bar) * g_prime))


def trdowg_v_prime(state: OptimizerState, m: Manifold, tamed: TamedConfig):
    r, r0 = state.r_bar, state.r_bar_first
    lt, l0 = state.grad_norm_max, state.grad_norm_first
    w_t = np.square(r) * np.square(lt) / _zeta(m, r)
    w_0 = np.square(r0) * np.square(l0) / _zeta(m, r0)
    lf = _tamed_log_factor(_ratio((1 + state.t) * w_t, w_0))
    return 8.0**4 * tamed.theta**2 * lf**2 * (state.prev_weighted_grad_sq_sum + 16.0 * w_t)


def trdowg_step_size(state: OptimizerState, m: Manifold, tamed: TamedConfig, form: str = "maintext"):
    """Tamed RDoWG; ``form="maintext"`` is ``r_bar / sqrt(zeta v')``, ``"appendix"`` is
    ``r_bar^2 / (zeta sqrt(v'))``. ``v`` is always accumulated with ``zeta`` inside."""
    vp = trdowg_v_prime(state, m, tamed)
    z = _zeta(m, state.r_bar)
    if form == "maintext":
        return _ratio(state.r_bar, np.sqrt(z * vp))
    if form == "appendix":
        return _ratio(np.square(state.r_bar), z * np.sqrt(vp))
    raise ValueError(f"unknown dowg form {form!r}")


def co_step_size(state: OptimizerState, m: Manifold, family: str = "dog"):
    """Curvature-omitted schedules, i.e. the parent schedule with ``zeta == 1``."""
    if family == "dog":
        return _ratio(state.r_bar, np.sqrt(state.grad_sq_sum))
    if family == "dowg":
        return _ratio(np.square(state.r_bar), np.sqrt(state.weighted_grad_sq_sum))
    raise ValueError(f"unknown family {family!r}")


# ---------------------------------------------------------------------------
# averaging
# ---------------------------------------------------------------------------


def averaging_weight(scheme: str, r_bar, kappa: float):
    if scheme == "rdog_weights":
        return np.asarray(r_bar) / np.sqrt(zeta(min(kappa, 0.0), r_bar))
    if scheme == "rdowg_weights":
        return np.square(r_bar) / zeta(min(kappa, 0.0), r_bar)
    if scheme in ("uniform", "none"):
        return np.ones_like(np.asarray(r_bar, dtype=float))
    raise ValueError(f"unknown averaging scheme {scheme!r}")


def update_average(avg: AveragedIterate, m: Manifold, x_t, r_bar, kappa: float) -> AveragedIterate:
    """Online geodesic weighted mean: move ``x_tilde`` toward ``x_t`` by ``w_t / sum w``."""
    if avg.scheme == "none":
        return avg
    w = averaging_weight(avg.scheme, r_bar, kappa)
    total = avg.weight_sum + w
    if np.all(np.asarray(avg.weight_sum) == 0):
        return AveragedIterate(x_t, total, avg.scheme)
    frac = _ratio(w, total)
    step = m.scale_components(m.log(avg.x_tilde, x_t), frac)
    return AveragedIterate(m.exp(avg.x_tilde, step), total, avg.scheme)


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------


def step_rsgd(state: OptimizerState, m: Manifold, g, eta) -> OptimizerState:
    """Plain ``x <- exp_x(-eta g)`` with statistics and averaging refreshed."""
    if np.any(np.asarray(eta) <= 0):
        raise ValueError("RSGD needs a positive learning rate")
    return RSGD(m, lr=eta).step(state, g)


class RiemannianOptimizer:
    """Base class; subclasses set ``key`` and implement :meth:`step_size`."""

    key = "base"
    uses_lr = False
    weight_scheme = "rdog_weights"
    curvature_in_weights = True
    normalized = False

    def __init__(self, manifold: Manifold, eps: float = 1e-6, averaging: str = "weighted",
                 rbar_scope: str = "global"):
        if eps <= 0:
            raise ValueError("eps must be positive")
        if averaging not in ("weighted", "uniform", "none"):
            raise ValueError(f"unknown averaging {averaging!r}")
        if rbar_scope not in ("global", "per_component"):
            raise ValueError(f"unknown rbar_scope {rbar_scope!r}")
        self.manifold = manifold
        self.eps = float(eps)
        self.averaging = averaging
        self.rbar_scope = rbar_scope

    # parameters that describe the optimizer, for manifests and get_params
    def params(self) -> dict:
        return {"eps": self.eps, "averaging": self.averaging, "rbar_scope": self.rbar_scope}

    @property
    def scheme(self) -> str:
        if self.averaging == "none":
            return "none"
        if self.averaging == "uniform" or self.uses_lr:
            return "uniform"
        return self.weight_scheme

    @property
    def _per_component(self) -> bool:
        return self.rbar_scope == "per_component" and self.manifold.n_components > 1

    def _zeros(self):
        return np.zeros(self.manifold.n_components) if self._per_component else 0.0

    def init(self, x0) -> OptimizerState:
        z = self._zeros()
        eps = z + self.eps
        return OptimizerState(
            x=x0, x0=x0, eps=self.eps, r_bar=eps, r_bar_first=eps, grad_sq_sum=z,
            weighted_grad_sq_sum=z, prev_weighted_grad_sq_sum=z, prev_grad_sq_sum=z,
            grad_norm=z, grad_norm_max=z, grad_norm_first=z, eta=z,
            averaged=AveragedIterate(x0, z, self.scheme),
        )

    def _sqnorm(self, x, g):
        m = self.manifold
        if self._per_component:
            return m.component_sqnorm(x, g)
        return m.inner(x, g, g)

    def _distance_from_start(self, x, x0):
        m = self.manifold
        if self._per_component:
            return m.component_dist(x0, x)
        return m.dist(x0, x)

    def _kappa_for_weights(self):
        return self.manifold.kappa if self.curvature_in_weights else 0.0

    def weight_increment(self, state, sq):
        """Term added to ``v``; ``r_bar^2 / zeta * |g|^2`` by default."""
        return np.square(state.r_bar) / _zeta(self.manifold, state.r_bar) * sq

    def observe(self, state: OptimizerState, g) -> OptimizerState:
        sq = self._sqnorm(state.x, g)
        gn = np.sqrt(sq)
        r_bar = np.maximum(state.r_bar, self._distance_from_start(state.x, state.x0))
        # r_bar_0 and l_0 are taken at the first nonzero gradient
        r_first = np.where(np.asarray(state.grad_norm_first) > 0, state.r_bar_first, r_bar)
        first = np.where(np.asarray(state.grad_norm_first) > 0, state.grad_norm_first, gn)
        s = replace(state, r_bar=r_bar, grad_norm=gn)
        weighted = self.weight_increment(s, sq)
        return replace(
            s,
            prev_grad_sq_sum=state.grad_sq_sum,
            grad_sq_sum=state.grad_sq_sum + sq,
            prev_weighted_grad_sq_sum=state.weighted_grad_sq_sum,
            weighted_grad_sq_sum=state.weighted_grad_sq_sum + weighted,
            grad_norm_max=np.maximum(state.grad_norm_max, gn),
            grad_norm_first=_as_stat(first),
            r_bar_first=_as_stat(r_first),
        )

    def step_size(self, state: OptimizerState):
        raise NotImplementedError

    def _direction(self, state, g):
        if not self.normalized:
            return g
        return self.manifold.scale_components(g, _ratio(1.0, state.grad_norm))

    def step(self, state: OptimizerState, g) -> OptimizerState:
        m = self.manifold
        s = self.observe(state, g)
        eta = self.step_size(s)
        if np.any(np.asarray(eta) != 0):
            x_next = m.exp(s.x, m.scale_components(self._direction(s, g), -np.asarray(eta)))
        else:
            x_next = s.x
        avg = update_average(s.averaged, m, s.x, s.r_bar, self._kappa_for_weights())
        return replace(s, x=x_next, t=s.t + 1, eta=eta, averaged=avg)


def _as_stat(a):
    a = np.asarray(a, dtype=float)
    return float(a) if a.ndim == 0 else a


class RSGD(RiemannianOptimizer):
    key = "rsgd"
    uses_lr = True

    def __init__(self, manifold, lr: float = 1e-2, **kw):
        super().__init__(manifold, **kw)
        if np.any(np.asarray(lr) <= 0):
            raise ValueError("learning rate must be positive")
        self.lr = lr

    def params(self):
        return {"lr": self.lr, **super().params()}

    def step_size(self, state):
        return self.lr


class NRSGD(RSGD):
    key = "nrsgd"
    normalized = True


class RDoG(RiemannianOptimizer):
    key = "rdog"

    def step_size(self, state):
        return rdog_step_size(state, self.manifold)


class CORDoG(RDoG):
    key = "co-rdog"
    curvature_in_weights = False

    def step_size(self, state):
        return co_step_size(state, self.manifold, "dog")


class NRDoG(RiemannianOptimizer):
    key = "nrdog"
    normalized = True

    def step_size(self, state):
        eta = nrdog_step_size(state, self.manifold)
        return _as_stat(np.where(np.asarray(state.grad_norm) > 0, eta, 0.0))


def nrdog_step(state: OptimizerState, m: Manifold, g, eps: float | None = None) -> OptimizerState:
    return NRDoG(m, eps=eps or state.eps).step(state, g)


class _DoWGBase(RiemannianOptimizer):
    weight_scheme = "rdowg_weights"
    default_form = "appendix"

    def __init__(self, manifold, dowg_form: str | None = None, **kw):
        super().__init__(manifold, **kw)
        form = dowg_form or self.default_form
        if form not in DOWG_FORMS:
            raise ValueError(f"dowg_form must be one of {DOWG_FORMS}")
        self.dowg_form = form

    def params(self):
        return {"dowg_form": self.dowg_form, **super().params()}


class RDoWG(_DoWGBase):
    key = "rdowg"

    def weight_increment(self, state, sq):
        if self.dowg_form == "maintext":
            return np.square(state.r_bar) * sq
        return super().weight_increment(state, sq)

    def step_size(self, state):
        return rdowg_step_size(state, self.manifold, self.dowg_form)


class CORDoWG(RiemannianOptimizer):
    key = "co-rdowg"
    weight_scheme = "rdowg_weights"
    curvature_in_weights = False

    def weight_increment(self, state, sq):
        return np.square(state.r_bar) * sq

    def step_size(self, state):
        return co_step_size(state, self.manifold, "dowg")


class _TamedMixin:
    def _init_tamed(self, T, delta, ell):
        self.tamed = TamedConfig(int(T), float(delta))
        self.ell = ell

    def observe(self, state, g):
        s = super().observe(state, g)
        if self.ell is not None:
            s = replace(s, grad_norm_max=_as_stat(np.maximum(s.grad_norm_max, self.ell)),
                        grad_norm_first=_as_stat(np.maximum(s.grad_norm_first, self.ell)))
        return s

    def params(self):
        return {"T": self.tamed.T, "delta": self.tamed.delta, "ell": self.ell, **super().params()}


class TamedRDoG(_TamedMixin, RDoG):
    key = "t-rdog"

    def __init__(self, manifold, T: int = 1000, delta: float = 0.5, ell: float | None = None, **kw):
        super().__init__(manifold, **kw)
        self._init_tamed(T, delta, ell)

    def step_size(self, state):
        return trdog_step_size(state, self.manifold, self.tamed)

    def untamed_step_size(self, state):
        return rdog_step_size(state, self.manifold)


class TamedRDoWG(_TamedMixin, _DoWGBase):
    key = "t-rdowg"
    default_form = "maintext"

    def __init__(self, manifold, T: int = 1000, delta: float = 0.5, ell: float | None = None, **kw):
        super().__init__(manifold, **kw)
        self._init_tamed(T, delta, ell)

    def step_size(self, state):
        return trdowg_step_size(state, self.manifold, self.tamed, self.dowg_form)

    def untamed_step_size(self, state):
        # same statistics, same numerator form, v_t in place of v'_t
        z = _zeta(self.manifold, state.r_bar)
        v = state.weighted_grad_sq_sum
        if self.dowg_form == "maintext":
            return _ratio(state.r_bar, np.sqrt(z * v))
        return _ratio(np.square(state.r_bar), z * np.sqrt(v))


class RAdam(RiemannianOptimizer):
    """Riemannian Adam baseline.

    First moment is a tangent vector transported along each step; the second
    moment is an elementwise running mean of squared ambient gradient entries
    scaled by the metric. Bias-corrected as in Euclidean Adam.
    """

    key = "radam"
    uses_lr = True

    def __init__(self, manifold, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps_adam: float = 1e-8, **kw):
        super().__init__(manifold, **kw)
        if lr <= 0 or not 0 <= beta1 < 1 or not 0 <= beta2 < 1 or eps_adam < 0:
            raise ValueError("invalid RAdam hyperparameters")
        self.lr, self.beta1, self.beta2, self.eps_adam = lr, beta1, beta2, eps_adam

    def params(self):
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                "eps_adam": self.eps_adam, **super().params()}

    def _metric_sq(self, x, g):
        from .manifolds import PoincareBall, PowerManifold

        base = self.manifold.base if isinstance(self.manifold, PowerManifold) else self.manifold
        if isinstance(base, PoincareBall):
            return base.conformal_factor(x) ** 2 * g * g
        return g * g

    def step(self, state, g):
        m = self.manifold
        if isinstance(state.x, tuple):
            raise TypeError("RAdam supports array-valued points only")
        s = self.observe(state, g)
        t = s.t + 1
        mom = s.extra.get("m", m.zero_tangent(s.x))
        sec = s.extra.get("v", np.zeros_like(np.asarray(s.x, dtype=float)))
        mom = self.beta1 * mom + (1.0 - self.beta1) * g
        sec = self.beta2 * sec + (1.0 - self.beta2) * self._metric_sq(s.x, g)
        m_hat = mom / (1.0 - self.beta1**t)
        v_hat = sec / (1.0 - self.beta2**t)
        direction = m.proj(s.x, m_hat / (np.sqrt(v_hat) + self.eps_adam))
        x_next = m.exp(s.x, -self.lr * direction)
        mom = m.transport(s.x, x_next, mom)
        avg = update_average(s.averaged, m, s.x, s.r_bar, self._kappa_for_weights())
        return replace(s, x=x_next, t=t, eta=self.lr, averaged=avg, extra={"m": mom, "v": sec})


def step_radam(state, m, g, lr, beta1=0.9, beta2=0.999, eps_adam=1e-8):
    return RAdam(m, lr=lr, beta1=beta1, beta2=beta2, eps_adam=eps_adam, eps=state.eps).step(state, g)


OPTIMIZERS = {
    cls.key: cls
    for cls in (RSGD, NRSGD, RDoG, NRDoG, RDoWG, TamedRDoG, TamedRDoWG, CORDoG, CORDoWG, RAdam)
}


def make_optimizer(name: str, manifold: Manifold, **params) -> RiemannianOptimizer:
    """Build an optimizer from its string key, dropping ``None`` parameters."""
    try:
        cls = OPTIMIZERS[name]
    except KeyError:
        raise ValueError(f"unknown optimizer {name!r}; choose from {sorted(OPTIMIZERS)}") from None
    params = {k: v for k, v in params.items() if v is not None}
    if not cls.uses_lr:
        params.pop("lr", None)
    if cls.uses_lr:
        params.pop("eps", None)
    if not issubclass(cls, _DoWGBase):
        params.pop("dowg_form", None)
    if not issubclass(cls, _TamedMixin):
        for k in ("T", "delta", "ell"):
            params.pop(k, None)
    return cls(manifold, **params)


# ---------------------------------------------------------------------------
# run loop and traces
# ---------------------------------------------------------------------------


@dataclass
class TraceRecord:
    t: int
    eta: float
    r_bar: float
    grad_norm: float
    grad_sq_sum: float
    weighted_grad_sq_sum: float
    f_raw: float | None = None
    f_avg: float | None = None
    dist_raw: float | None = None
    dist_avg: float | None = None
    untamed_eta: float | None = None
    wall: float = 0.0

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


@dataclass
class Trace:
    records: list
    final: Any
    averaged: Any
    best: Any
    best_t: int
    status: str = "ok"
    error: str | None = None
    state: OptimizerState | None = None
    weights: list = field(default_factory=list)

    @property
    def tau(self) -> int | None:
        """Index maximising ``sum_{s<t} w_s / w_t`` over the recorded weight history."""
        if not self.weights:
            return None
        w = np.asarray(self.weights, dtype=float)
        prefix = np.concatenate([[0.0], np.cumsum(w)[:-1]])
        return int(np.argmax(_ratio(prefix, w)))


def _scalar(a) -> float:
    a = np.asarray(a, dtype=float)
    return float(a) if a.ndim == 0 else float(np.max(a))


class DivergenceError(RuntimeError):
    pass


def run(optimizer: RiemannianOptimizer, oracle, x0, T: int, seed=0, *, record_every: int = 1,
        loss: Callable | None = None, distance: Callable | None = None,
        divergence_factor: float = 1e6, callback: Callable | None = None) -> Trace:
    """Run ``T`` iterations from ``x0``; returns a :class:`Trace`.

    ``oracle.grad(x, rng)`` supplies the Riemannian stochastic gradient and
    ``loss``/``distance`` (defaulting to ``oracle.loss``) are evaluated at the
    raw and averaged iterates every ``record_every`` steps and at the end.
    A run is flagged ``diverged`` when the loss or iterate become non-finite or
    ``r_bar`` exceeds ``divergence_factor * max(eps, 1)``.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    loss = loss if loss is not None else getattr(oracle, "loss", None)
    m = optimizer.manifold
    state = optimizer.init(x0)
    records: list = []
    weights: list = []
    best, best_t, best_f = x0, 0, math.inf
    limit = divergence_factor * max(optimizer.eps, 1.0)
    start = time.perf_counter()
    status, error = "ok", None

    def record(s, t):
        nonlocal best, best_t, best_f
        rec = TraceRecord(
            t=t, eta=_scalar(s.eta), r_bar=_scalar(s.r_bar), grad_norm=_scalar(s.grad_norm),
            grad_sq_sum=_scalar(s.grad_sq_sum), weighted_grad_sq_sum=_scalar(s.weighted_grad_sq_sum),
            wall=time.perf_counter() - start,
        )
        if hasattr(optimizer, "untamed_step_size") and t > 0:
            rec.untamed_eta = _scalar(optimizer.untamed_step_size(s))
        if loss is not None:
            rec.f_raw = float(loss(s.x))
            rec.f_avg = float(loss(s.averaged.x_tilde))
            if rec.f_raw < best_f:
                best, best_t, best_f = s.x, t, rec.f_raw
        if distance is not None:
            rec.dist_raw = float(distance(s.x))
            rec.dist_avg = float(distance(s.averaged.x_tilde))
        records.append(rec)
        return rec

    for t in range(T):
        try:
            g = oracle.grad(state.x, rng)
        except Exception as exc:
            raise RuntimeError(f"oracle failed at iteration {t}: {exc}") from exc
        state = optimizer.step(state, g)
        if optimizer.scheme != "none":
            weights.append(_scalar(averaging_weight(
                state.averaged.scheme, state.r_bar, optimizer._kappa_for_weights())))
        if callback is not None:
            callback(t, state)
        finite = np.all(np.isfinite(np.asarray(state.x if not isinstance(state.x, tuple)
                                                else np.concatenate([a.ravel() for a in state.x]))))
        if not finite or _scalar(state.r_bar) > limit:
            status, error = "diverged", f"iterate left the safe region at iteration {t}"
            break
        if (t + 1) % record_every == 0 or t + 1 == T:
            rec = record(state, t + 1)
            if rec.f_raw is not None and not math.isfinite(rec.f_raw):
                status, error = "diverged", f"non-finite loss at iteration {t}"
                break
    return Trace(records=records, final=state.x, averaged=state.averaged.x_tilde, best=best,
                 best_t=best_t, status=status, error=error, state=state, weights=weights)
