"""Dataset loading, graph ingestion and seeded generators."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .manifolds import Euclidean, Grassmann, PoincareBall, PowerManifold, Sphere

__all__ = [
    "RNG_ALGORITHM",
    "CycleError",
    "RelationGraph",
    "SplitSpec",
    "TabularDataset",
    "balanced_tree",
    "generate_rayleigh",
    "init_point",
    "load_csv",
    "load_edge_list",
    "make_rng",
    "split",
    "standardize",
    "synthetic_gaussian",
    "transitive_closure",
]

#: recorded in every manifest so runs can be reproduced bit-for-bit
RNG_ALGORITHM = f"numpy-{np.__version__}/PCG64+SeedSequence/v1"


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent stream for ``(seed, *keys)``; distinct keys never share state."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


# ---------------------------------------------------------------------------
# tabular data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TabularDataset:
    X: np.ndarray
    y: np.ndarray | None = None
    provenance: str = ""

    def __post_init__(self):
        if self.X.ndim != 2 or self.X.shape[0] < 2:
            raise ValueError("dataset needs at least two rows")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("dataset contains NaN or Inf")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


def load_csv(path, delimiter: str = ",", has_header: bool = False,
             label_column: int | None = None, encoding: str = "utf-8") -> TabularDataset:
    """Read a numeric CSV; ``label_column`` (if given) is split off into ``y``."""
    path = Path(path)
    rows = []
    with path.open(newline="", encoding=encoding) as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        for lineno, row in enumerate(reader, start=1):
            if has_header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            values = []
            for col, cell in enumerate(row, start=1):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ValueError(f"{path}: non-numeric value {cell!r} at row {lineno}, column {col}") from None
            if rows and len(values) != len(rows[0]):
                raise ValueError(f"{path}: row {lineno} has {len(values)} columns, expected {len(rows[0])}")
            rows.append(values)
    if not rows:
        raise ValueError(f"{path}: empty file")
    data = np.asarray(rows, dtype=float)
    y = None
    if label_column is not None:
        y = data[:, label_column]
        data = np.delete(data, label_column, axis=1)
    return TabularDataset(data, y, provenance=str(path))


def standardize(X, reference=None):
    """Centre and scale columns to unit variance using ``reference`` statistics."""
    ref = X if reference is None else reference
    mu = ref.mean(axis=0)
    sd = ref.std(axis=0)
    sd[sd == 0] = 1.0
    return (X - mu) / sd


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")


def split(n: int, spec: SplitSpec = SplitSpec()):
    """Seeded train/test partition of ``range(n)``."""
    perm = make_rng(spec.seed, 17).permutation(n)
    n_train = int(round(spec.train_fraction * n))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def synthetic_gaussian(n: int = 1000, d: int = 20, seed: int = 0, spectrum=None,
                       n_clusters: int = 1, separation: float = 0.0) -> TabularDataset:
    """Gaussian (mixture) data with a planted covariance spectrum.

    The default spectrum has a clear gap after the second direction.
    """
    rng = make_rng(seed, 3)
    if spectrum is None:
        spectrum = np.concatenate([[12.0, 8.0], np.linspace(2.0, 0.5, d - 2)])
    spectrum = np.asarray(spectrum, dtype=float)
    if spectrum.shape != (d,):
        raise ValueError("spectrum must have length d")
    basis, _ = np.linalg.qr(rng.standard_normal((d, d)))
    X = (rng.standard_normal((n, d)) * np.sqrt(spectrum)) @ basis.T
    labels = None
    if n_clusters > 1:
        centres = separation * rng.standard_normal((n_clusters, d))
        labels = rng.integers(n_clusters, size=n)
        X = X + centres[labels]
    return TabularDataset(X, labels, provenance=f"synthetic_gaussian(n={n}, d={d}, seed={seed})")


# ---------------------------------------------------------------------------
# graphs
# ---------------------------------------------------------------------------


class CycleError(ValueError):
    def __init__(self, path):
        self.path = list(path)
        super().__init__("relation graph has a cycle: " + " -> ".join(map(str, self.path)))


@dataclass(frozen=True)
class RelationGraph:
    """Directed relations ``(u, v)`` between named nodes, stored as index pairs."""

    nodes: tuple
    edges: frozenset
    closed: bool = False
    index: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.index is None:
            object.__setattr__(self, "index", {name: i for i, name in enumerate(self.nodes)})
        if any(u == v for u, v in self.edges):
            raise ValueError("relations must be irreflexive")

    @classmethod
    def from_pairs(cls, pairs) -> "RelationGraph":
        nodes, index, edges = [], {}, set()
        for u, v in pairs:
            for name in (u, v):
                if name not in index:
                    index[name] = len(nodes)
                    nodes.append(name)
            edges.add((index[u], index[v]))
        return cls(tuple(nodes), frozenset(edges))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def successors(self):
        out = [[] for _ in self.nodes]
        for u, v in sorted(self.edges):
            out[u].append(v)
        return out

    def transitive_closure(self) -> "RelationGraph":
        return transitive_closure(self)


def load_edge_list(path, encoding: str = "utf-8") -> RelationGraph:
    """One ``u v`` pair per line (whitespace or comma separated); ``#`` starts a comment."""
    pairs = []
    with Path(path).open(encoding=encoding) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 2:
                raise ValueError(f"{path}: line {lineno}: expected two fields, got {len(parts)}")
            pairs.append((parts[0], parts[1]))
    return RelationGraph.from_pairs(pairs)


def transitive_closure(g: RelationGraph) -> RelationGraph:
    """Reachability closure by memoised DFS; cycles raise :class:`CycleError`."""
    succ = g.successors()
    reach: list = [None] * g.n_nodes
    state = [0] * g.n_nodes  # 0 new, 1 on stack, 2 done

    for root in range(g.n_nodes):
        if state[root]:
            continue
        stack = [(root, iter(succ[root]))]
        state[root] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                acc = set()
                for s in succ[node]:
                    acc.add(s)
                    acc |= reach[s]
                reach[node] = acc
                state[node] = 2
                stack.pop()
            elif state[nxt] == 1:
                names = [g.nodes[n] for n, _ in stack]
                cycle = names[names.index(g.nodes[nxt]):] + [g.nodes[nxt]]
                raise CycleError(cycle)
            elif state[nxt] == 0:
                state[nxt] = 1
                stack.append((nxt, iter(succ[nxt])))
    edges = frozenset((u, v) for u in range(g.n_nodes) for v in reach[u])
    return RelationGraph(g.nodes, edges, closed=True, index=g.index)


def balanced_tree(depth: int, branching: int = 2) -> RelationGraph:
    """Complete ``branching``-ary tree, root first, with child -> parent edges (not closed)."""
    n = sum(branching**k for k in range(depth + 1))
    edges = frozenset((i, (i - 1) // branching) for i in range(1, n))
    return RelationGraph(tuple(f"n{i}" for i in range(n)), edges)


# ---------------------------------------------------------------------------
# problem generators and initial points
# ---------------------------------------------------------------------------


def generate_rayleigh(d: int, q: int, seed: int = 0):
    """``A = B B^T / d`` with standard Gaussian ``B`` of shape ``(d, q)``."""
    from .problems import RayleighProblem

    if d < 1 or q < 1:
        raise ValueError("d and q must be >= 1")
    B = make_rng(seed, 1).standard_normal((d, q))
    A = B @ B.T / d
    A = 0.5 * (A + A.T)
    return RayleighProblem(A)


def init_point(m, scheme: str = "auto", seed=0, box: float = 1e-3):
    """Initial point: normalised Gaussian (sphere), QR of a Gaussian (Grassmann),
    uniform in ``[-box, box]^d`` (Poincare ball or embedding table)."""
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed, 2)
    ball = isinstance(m, PoincareBall) or (isinstance(m, PowerManifold) and isinstance(m.base, PoincareBall))
    if scheme == "auto":
        if isinstance(m, Sphere):
            scheme = "gaussian_normalize"
        elif isinstance(m, Grassmann):
            scheme = "gaussian_qr"
        elif ball:
            scheme = "uniform_box"
        elif isinstance(m, Euclidean):
            scheme = "gaussian"
        else:
            raise ValueError(f"no default initialisation for {m!r}")
    if scheme == "gaussian_normalize" and isinstance(m, Sphere):
        x = rng.standard_normal(m.shape)
        return x / math.sqrt(float(x @ x))
    if scheme == "gaussian_qr" and isinstance(m, Grassmann):
        return m.projx(rng.standard_normal(m.shape))
    if scheme == "uniform_box" and ball:
        return rng.uniform(-box, box, size=m.shape)
    if scheme == "gaussian" and isinstance(m, Euclidean):
        return rng.standard_normal(m.shape)
    raise ValueError(f"initialisation scheme {scheme!r} does not match {m!r}")
