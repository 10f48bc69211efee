"""Objectives and stochastic Riemannian gradient oracles.

Each problem exposes ``manifold``, an exact ``loss(x)`` and ``grad(x, rng)``.
``full_grad(x)`` is the deterministic Riemannian gradient; ``grad`` draws a
minibatch when the problem was built with a batch size.
"""

from __future__ import annotations

import numpy as np

from .manifolds import Grassmann, PoincareBall, PowerManifold, Sphere

__all__ = [
    "EmbeddingProblem",
    "PCAProblem",
    "RayleighProblem",
    "poincare_distance_matrix",
    "sample_negatives",
]


class RayleighProblem:
    """Minimise ``-x^T A x / 2`` over the unit sphere."""

    def __init__(self, A):
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("A must be a square matrix")
        if not np.allclose(A, A.T, atol=1e-12):
            raise ValueError("A must be symmetric")
        self.A = A
        self.manifold = Sphere(A.shape[0])
        self.full_batch = True

    def _check(self, x):
        if np.shape(x) != (self.A.shape[0],):
            raise ValueError(f"expected a point of shape {(self.A.shape[0],)}, got {np.shape(x)}")

    def loss(self, x) -> float:
        self._check(x)
        return -0.5 * float(x @ self.A @ x)

    def full_grad(self, x):
        self._check(x)
        return self.manifold.proj(x, -(self.A @ x))

    def grad(self, x, rng=None):
        return self.full_grad(x)


class PCAProblem:
    """Minimise the mean squared reconstruction error ``|z - x x^T z|^2`` over ``G(d, r)``.

    ``batch_size=None`` gives the deterministic full-batch oracle.
    """

    def __init__(self, Z, r: int, batch_size: int | None = None):
        Z = np.asarray(Z, dtype=float)
        if Z.ndim != 2 or Z.shape[0] < 2:
            raise ValueError("Z must be an (n, d) matrix with n >= 2")
        if batch_size is not None and batch_size < 1:
            raise ValueError("empty batch")
        self.Z = Z
        self.r = int(r)
        self.batch_size = batch_size
        self.manifold = Grassmann(Z.shape[1], self.r)
        self.cov = Z.T @ Z / Z.shape[0]
        self._trace = float(np.trace(self.cov))
        self.full_batch = batch_size is None

    def loss(self, x) -> float:
        return self._trace - float(np.sum(x * (self.cov @ x)))

    def residual_loss(self, x) -> float:
        """Same value as :meth:`loss`, computed directly from the residuals."""
        res = self.Z - (self.Z @ x) @ x.T
        return float(np.mean(np.sum(res * res, axis=1)))

    def full_grad(self, x):
        return self.manifold.proj(x, -2.0 * (self.cov @ x))

    def grad(self, x, rng=None):
        if self.batch_size is None or self.batch_size >= self.Z.shape[0]:
            return self.full_grad(x)
        idx = rng.choice(self.Z.shape[0], size=self.batch_size, replace=False)
        zb = self.Z[idx]
        egrad = -(2.0 / len(idx)) * (zb.T @ (zb @ x))
        return self.manifold.proj(x, egrad)


def poincare_distance_matrix(theta, rows=None):
    """Poincare distances between ``theta[rows]`` and every row of ``theta``."""
    u = theta if rows is None else theta[rows]
    u2 = np.sum(u * u, axis=1)
    v2 = np.sum(theta * theta, axis=1)
    # explicit differences; the expanded |u|^2 + |v|^2 - 2uv cancels badly near the diagonal
    diff = u[:, None, :] - theta[None, :, :]
    sq = np.sum(diff * diff, axis=-1)
    z = 2.0 * sq / ((1.0 - u2)[:, None] * (1.0 - v2)[None, :])
    return np.log1p(z + np.sqrt(z * (z + 2.0)))


def _distance_grads(u, v):
    """Euclidean gradients of the Poincare distance d(u, v) w.r.t. ``u`` and ``v``.

    ``u`` broadcasts against ``v`` along the last axis.
    """
    u2 = np.sum(u * u, axis=-1, keepdims=True)
    v2 = np.sum(v * v, axis=-1, keepdims=True)
    uv = np.sum(u * v, axis=-1, keepdims=True)
    alpha, beta = 1.0 - u2, 1.0 - v2
    gamma = 1.0 + 2.0 * (u2 + v2 - 2.0 * uv) / (alpha * beta)
    root = np.sqrt(np.maximum(gamma * gamma - 1.0, 1e-30))
    du = 4.0 / (beta * root) * (((v2 - 2.0 * uv + 1.0) / alpha**2) * u - v / alpha)
    dv = 4.0 / (alpha * root) * (((u2 - 2.0 * uv + 1.0) / beta**2) * v - u / beta)
    return du, dv


class EmbeddingProblem:
    """Poincare embedding of a transitively closed relation graph.

    The loss for a pair ``(u, v)`` is the softmax cross-entropy of ``v`` among
    ``Neg(u, v)``: every node ``v'`` with ``(u, v')`` not a relation, plus ``v``.
    The anchor itself is excluded from its own negatives. ``loss`` and
    ``full_grad`` use the exact negative sets summed over all relations;
    ``grad`` draws ``batch_size`` relations from a seeded per-epoch shuffle and
    ``neg_count`` i.i.d. negatives per relation.
    """

    def __init__(self, graph, dim: int = 5, batch_size: int = 10, neg_count: int = 50,
                 sampler: str = "uniform"):
        if not graph.closed:
            graph = graph.transitive_closure()
        if sampler not in ("uniform", "degree_3_4"):
            raise ValueError(f"unknown negative sampler {sampler!r}")
        if neg_count < 1:
            raise ValueError("neg_count must be >= 1")
        self.graph = graph
        self.n_nodes = len(graph.nodes)
        self.dim = int(dim)
        self.batch_size = int(batch_size)
        self.neg_count = int(neg_count)
        self.sampler = sampler
        self.relations = np.array(sorted(graph.edges), dtype=int).reshape(-1, 2)
        if len(self.relations) == 0:
            raise ValueError("graph has no relations")
        self.manifold = PowerManifold(PoincareBall(self.dim), self.n_nodes)
        adj = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
        adj[self.relations[:, 0], self.relations[:, 1]] = True
        self.adjacency = adj
        self.negative_mask = ~adj & ~np.eye(self.n_nodes, dtype=bool)
        self.degrees = np.bincount(self.relations.ravel(), minlength=self.n_nodes).astype(float)
        self.full_batch = False
        self._order = None
        self._pos = 0

    def with_sampler(self, sampler: str) -> "EmbeddingProblem":
        clone = EmbeddingProblem.__new__(EmbeddingProblem)
        clone.__dict__.update(self.__dict__)
        clone.sampler = sampler
        clone._order, clone._pos = None, 0
        return clone

    @property
    def batches_per_epoch(self) -> int:
        return int(np.ceil(len(self.relations) / self.batch_size))

    # -- exact objective --------------------------------------------------
    def _pair_terms(self, theta, anchors, targets, mult):
        dist = poincare_distance_matrix(theta, anchors)
        d_pos = dist[np.arange(len(anchors)), targets]
        logits = -dist
        shift = np.max(np.where(mult > 0, logits, -np.inf), axis=1, keepdims=True)
        expw = mult * np.exp(logits - shift)
        denom = expw.sum(axis=1)
        losses = d_pos + np.log(denom) + shift[:, 0]
        return losses, expw / denom[:, None]

    def _full_multiplicity(self, anchors, targets):
        mult = self.negative_mask[anchors].astype(float)
        mult[np.arange(len(anchors)), targets] += 1.0
        return mult

    def loss(self, theta) -> float:
        a, b = self.relations[:, 0], self.relations[:, 1]
        losses, _ = self._pair_terms(theta, a, b, self._full_multiplicity(a, b))
        return float(losses.sum())

    def _egrad(self, theta, anchors, targets, mult):
        _, soft = self._pair_terms(theta, anchors, targets, mult)
        coef = -soft
        coef[np.arange(len(anchors)), targets] += 1.0  # d loss / d dist(u, j)
        rows, cols = np.nonzero(coef)
        c = coef[rows, cols][:, None]
        du, dv = _distance_grads(theta[anchors[rows]], theta[cols])
        g = np.zeros_like(theta)
        np.add.at(g, anchors[rows], c * du)
        np.add.at(g, cols, c * dv)
        return g

    def full_grad(self, theta):
        a, b = self.relations[:, 0], self.relations[:, 1]
        g = self._egrad(theta, a, b, self._full_multiplicity(a, b))
        return self.manifold.egrad_to_rgrad(theta, g)

    # -- stochastic oracle ------------------------------------------------
    def reset(self):
        self._order, self._pos = None, 0

    def next_batch(self, rng):
        idx = []
        while len(idx) < self.batch_size:
            if self._order is None or self._pos >= len(self._order):
                self._order = rng.permutation(len(self.relations))
                self._pos = 0
                if idx:  # epoch boundary ends the batch
                    break
            take = self._order[self._pos:self._pos + self.batch_size - len(idx)]
            self._pos += len(take)
            idx.extend(take.tolist())
        return self.relations[np.asarray(idx, dtype=int)]

    def batch_multiplicity(self, pairs, rng):
        mult = np.zeros((len(pairs), self.n_nodes))
        for i, (u, v) in enumerate(pairs):
            negs = sample_negatives(self, u, v, self.neg_count, rng, self.sampler)
            np.add.at(mult[i], negs, 1.0)
        return mult

    def batch_loss(self, theta, pairs, mult) -> float:
        losses, _ = self._pair_terms(theta, pairs[:, 0], pairs[:, 1], mult)
        return float(losses.sum())

    def grad(self, theta, rng):
        pairs = self.next_batch(rng)
        mult = self.batch_multiplicity(pairs, rng)
        g = self._egrad(theta, pairs[:, 0], pairs[:, 1], mult)
        return self.manifold.egrad_to_rgrad(theta, g)


def sample_negatives(problem: EmbeddingProblem, u: int, v: int, count: int, rng,
                     scheme: str = "uniform"):
    """Draw ``count`` i.i.d. negatives for anchor ``u`` and append ``v``.

    ``scheme="degree_3_4"`` weights candidates by ``degree ** 0.75``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    candidates = np.flatnonzero(problem.negative_mask[u])
    if len(candidates) == 0:
        raise ValueError(f"node {problem.graph.nodes[u]!r} has no valid negatives")
    if scheme == "uniform":
        p = None
    elif scheme == "degree_3_4":
        w = problem.degrees[candidates] ** 0.75
        if w.sum() == 0:
            raise ValueError(f"node {problem.graph.nodes[u]!r}: all negatives have degree 0")
        p = w / w.sum()
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    draws = rng.choice(candidates, size=count, replace=True, p=p)
    return np.append(draws, v)
