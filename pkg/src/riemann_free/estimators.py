"""scikit-learn style estimators over the Riemannian optimizers.

>>> import numpy as np
>>> X = np.random.default_rng(0).standard_normal((200, 5)) * [5, 3, 1, 1, 1]
>>> pca = RiemannianPCA(n_components=2, max_iter=300, random_state=0).fit(X)
>>> pca.components_.shape
(5, 2)
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .data import RelationGraph, init_point, make_rng
from .metrics import mean_average_precision
from .optim import OPTIMIZERS, make_optimizer, run
from .problems import EmbeddingProblem, PCAProblem, RayleighProblem

__all__ = ["DominantEigenvector", "PoincareEmbedding", "RiemannianPCA"]


def _check_optimizer(name):
    if name not in OPTIMIZERS:
        raise ValueError(f"unknown optimizer {name!r}; choose from {sorted(OPTIMIZERS)}")


def _seed(random_state) -> int:
    if random_state is None:
        return int(np.random.SeedSequence().entropy % (2**32))
    if isinstance(random_state, (int, np.integer)):
        return int(random_state)
    raise ValueError("random_state must be None or an int")


class RiemannianPCA(TransformerMixin, BaseEstimator):
    """Top-``n_components`` subspace by stochastic optimization on the Grassmann manifold.

    With a learning-rate-free optimizer (the default) the weighted averaged
    iterate is used as the estimate; lr-based optimizers use the last iterate.
    """

    def __init__(self, n_components=2, optimizer="rdog", eps=1e-6, lr=None, max_iter=2000,
                 batch_size=64, center=True, use_average=True, random_state=None):
        self.n_components = n_components
        self.optimizer = optimizer
        self.eps = eps
        self.lr = lr
        self.max_iter = max_iter
        self.batch_size = batch_size
        self.center = center
        self.use_average = use_average
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=float, ensure_min_samples=2)
        _check_optimizer(self.optimizer)
        if not 1 <= self.n_components < X.shape[1]:
            raise ValueError("n_components must lie in [1, n_features)")
        seed = _seed(self.random_state)
        self.mean_ = X.mean(axis=0) if self.center else np.zeros(X.shape[1])
        prob = PCAProblem(X - self.mean_, self.n_components, batch_size=self.batch_size)
        opt = make_optimizer(self.optimizer, prob.manifold, eps=self.eps, lr=self.lr)
        x0 = init_point(prob.manifold, seed=make_rng(seed, 1))
        trace = run(opt, prob, x0, self.max_iter, seed=make_rng(seed, 2), record_every=self.max_iter)
        if trace.status != "ok":
            raise RuntimeError(f"optimization failed: {trace.error}")
        avg = self.use_average and not OPTIMIZERS[self.optimizer].uses_lr
        self.components_ = trace.averaged if avg else trace.final
        self.n_features_in_ = X.shape[1]
        self.n_iter_ = self.max_iter
        self.trace_ = trace
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return (X - self.mean_) @ self.components_

    def inverse_transform(self, Z):
        check_is_fitted(self, "components_")
        Z = check_array(Z, dtype=float)
        return Z @ self.components_.T + self.mean_

    def score(self, X, y=None) -> float:
        """Negative mean squared reconstruction error."""
        X = check_array(X, dtype=float)
        R = X - self.inverse_transform(self.transform(X))
        return -float(np.mean(np.sum(R * R, axis=1)))


class DominantEigenvector(BaseEstimator):
    """Leading eigenvector of a symmetric matrix via Rayleigh quotient optimization on the sphere."""

    def __init__(self, optimizer="rdog", eps=1e-6, lr=None, max_iter=5000, random_state=None):
        self.optimizer = optimizer
        self.eps = eps
        self.lr = lr
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, A, y=None):
        A = check_array(A, dtype=float)
        _check_optimizer(self.optimizer)
        prob = RayleighProblem(A)
        seed = _seed(self.random_state)
        opt = make_optimizer(self.optimizer, prob.manifold, eps=self.eps, lr=self.lr)
        x0 = init_point(prob.manifold, seed=make_rng(seed, 1))
        trace = run(opt, prob, x0, self.max_iter, seed=make_rng(seed, 2), record_every=self.max_iter)
        if trace.status != "ok":
            raise RuntimeError(f"optimization failed: {trace.error}")
        self.eigenvector_ = trace.final
        self.eigenvalue_ = float(self.eigenvector_ @ A @ self.eigenvector_)
        self.trace_ = trace
        return self


class PoincareEmbedding(TransformerMixin, BaseEstimator):
    """Embed a hierarchy (``(child, parent)`` pairs) in the Poincare ball.

    ``fit`` takes the relation pairs (or a :class:`RelationGraph`); the closure
    is computed if needed. ``transform`` maps node names to embedding rows.
    """

    def __init__(self, dim=5, optimizer="rdog", eps=1e-6, lr=None, epochs=300, batch_size=10,
                 neg_count=50, init_box=1e-3, random_state=None):
        self.dim = dim
        self.optimizer = optimizer
        self.eps = eps
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.neg_count = neg_count
        self.init_box = init_box
        self.random_state = random_state

    def fit(self, relations, y=None):
        _check_optimizer(self.optimizer)
        if isinstance(relations, RelationGraph):
            graph = relations
        else:
            pairs = [tuple(p) for p in relations]
            if not pairs or any(len(p) != 2 for p in pairs):
                raise ValueError("relations must be a nonempty sequence of (u, v) pairs")
            graph = RelationGraph.from_pairs(pairs)
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        graph = graph if graph.closed else graph.transitive_closure()
        prob = EmbeddingProblem(graph, dim=self.dim, batch_size=self.batch_size, neg_count=self.neg_count)
        seed = _seed(self.random_state)
        opt = make_optimizer(self.optimizer, prob.manifold, eps=self.eps, lr=self.lr)
        x0 = init_point(prob.manifold, seed=make_rng(seed, 1), box=self.init_box)
        T = self.epochs * prob.batches_per_epoch
        trace = run(opt, prob, x0, T, seed=make_rng(seed, 2), record_every=T)
        if trace.status != "ok":
            raise RuntimeError(f"optimization failed: {trace.error}")
        self.graph_ = graph
        self.nodes_ = graph.nodes
        self.embedding_ = trace.final
        self.trace_ = trace
        return self

    def transform(self, nodes):
        check_is_fitted(self, "embedding_")
        try:
            idx = [self.graph_.index[n] for n in nodes]
        except KeyError as exc:
            raise ValueError(f"unknown node {exc.args[0]!r}") from None
        return self.embedding_[idx]

    def score(self, relations=None, y=None) -> float:
        """Reconstruction mean average precision on the training hierarchy."""
        check_is_fitted(self, "embedding_")
        return mean_average_precision(self.graph_, self.embedding_)
