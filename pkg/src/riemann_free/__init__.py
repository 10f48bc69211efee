"""Learning-rate-free stochastic optimization on Riemannian manifolds."""

__version__ = "0.1.0"

from .geometry import CurvatureBound, CutLocusError, CutLocusWarning, Manifold, zeta
from .manifolds import Euclidean, Grassmann, PoincareBall, PowerManifold, ProductManifold, Sphere
from .optim import (NRDoG, NRSGD, OPTIMIZERS, RSGD, CORDoG, CORDoWG, RAdam, RDoG, RDoWG, TamedRDoG,
                    TamedRDoWG, make_optimizer, run)
from .problems import EmbeddingProblem, PCAProblem, RayleighProblem
from .estimators import DominantEigenvector, PoincareEmbedding, RiemannianPCA

__all__ = [
    "CORDoG",
    "CORDoWG",
    "CurvatureBound",
    "CutLocusError",
    "CutLocusWarning",
    "DominantEigenvector",
    "EmbeddingProblem",
    "Euclidean",
    "Grassmann",
    "Manifold",
    "NRDoG",
    "NRSGD",
    "OPTIMIZERS",
    "PCAProblem",
    "PoincareBall",
    "PoincareEmbedding",
    "PowerManifold",
    "ProductManifold",
    "RAdam",
    "RDoG",
    "RDoWG",
    "RSGD",
    "RayleighProblem",
    "RiemannianPCA",
    "Sphere",
    "TamedRDoG",
    "TamedRDoWG",
    "make_optimizer",
    "run",
    "zeta",
]
