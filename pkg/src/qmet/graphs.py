"""Synthetic quasimetric data: random digraphs, shortest paths and pair datasets."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from . import autodiff as ad
from .analysis import FiniteQuasimetricSpace, PairSet, heldout_range
from .heads.layers import fan_in_uniform
from .optim import Adam
from .rng import stream

__all__ = [
    "DiGraph",
    "GraphGenConfig",
    "BlockGraphConfig",
    "PairDataset",
    "FailureConstruction",
    "generate_random_digraph",
    "generate_block_digraph",
    "all_pairs_shortest",
    "floyd_warshall",
    "make_pair_dataset",
    "toy_three_node",
    "failure_construction",
    "FAILURE_NODES",
    "write_edge_list",
    "read_edge_list",
    "write_features_csv",
    "read_features_csv",
]


@dataclass
class DiGraph:
    """Weighted directed graph on ``n`` nodes with an ``n x d`` feature matrix."""

    n: int
    edges: np.ndarray  # (m, 2) int
    weights: np.ndarray  # (m,) float
    features: np.ndarray

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim == 1:
            self.features = self.features.reshape(self.n, -1)
        if len(self.edges) != len(self.weights):
            raise ValueError("edge and weight counts differ")
        if self.features.shape[0] != self.n:
            raise ValueError(f"features have {self.features.shape[0]} rows for {self.n} nodes")
        if len(self.edges):
            if self.edges.min() < 0 or self.edges.max() >= self.n:
                raise ValueError("edge endpoint out of range")
            if np.any(self.edges[:, 0] == self.edges[:, 1]):
                raise ValueError("self-loops are not allowed")
            if len({(int(a), int(b)) for a, b in self.edges}) != len(self.edges):
                raise ValueError("duplicate edges")
        if not np.all(np.isfinite(self.weights) & (self.weights > 0)):
            raise ValueError("edge weights must be positive and finite")

    def adjacency(self) -> np.ndarray:
        """Dense weight matrix with ``inf`` for missing edges and 0 on the diagonal."""
        a = np.full((self.n, self.n), np.inf)
        a[self.edges[:, 0], self.edges[:, 1]] = self.weights
        np.fill_diagonal(a, 0.0)
        return a


@dataclass
class GraphGenConfig:
    n: int = 50
    d: int = 16
    rho_un: float = 0.15
    rho_di: float = 0.85
    seed: int = 0
    feature_steps: int = 200
    feature_lr: float = 1e-2
    tanh_width: int = 256
    tanh_depth: int = 4

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("a graph needs at least 2 nodes")
        if self.d < 1:
            raise ValueError("feature dim must be positive")
        for name in ("rho_un", "rho_di"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


@dataclass
class BlockGraphConfig:
    """Dense blocks wired together through one representative node each."""

    block: GraphGenConfig = field(default_factory=lambda: GraphGenConfig(n=10, d=8, rho_un=0.18, rho_di=0.15))
    super_graph: GraphGenConfig = field(default_factory=lambda: GraphGenConfig(n=5, d=8, rho_un=0.22, rho_di=0.925))
    seed: int = 0

    @property
    def n(self) -> int:
        return self.block.n * self.super_graph.n


# ---------------------------------------------------------------------------
# generation


def _sample_pairs(n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    iu, ju = np.triu_indices(n, k=1)
    pick = rng.choice(len(iu), size=count, replace=False)
    return np.stack([iu[pick], ju[pick]], axis=1)


def _optimize_features(n, d, pairs, steps, lr, rng) -> np.ndarray:
    """Alignment (alpha=2) + 0.3 * uniformity (t=3) on the unit sphere."""
    x = ad.parameter(rng.standard_normal((n, d)), "features")
    pos = np.zeros((n, n))
    pos[pairs[:, 0], pairs[:, 1]] = 1.0
    off = 1.0 - np.eye(n)
    n_pos = max(pos.sum(), 1.0)
    opt = Adam({"features": x}, lr)
    for _ in range(steps):
        z = x / ad.reshape(ad.norm(x, axis=-1), (n, 1))
        sq = ad.maximum(2.0 - 2.0 * (z @ ad.transpose(z)), 0.0)
        align = ad.sum_(sq * pos) / n_pos
        uniform = ad.log(ad.sum_(ad.exp(sq * -3.0) * off) / off.sum())
        loss = align + 0.3 * uniform
        opt.step(ad.backward(loss, {"features": x}))
    return x.data / np.linalg.norm(x.data, axis=-1, keepdims=True)


def _tanh_scores(features, width, depth, rng) -> np.ndarray:
    h = features
    sizes = [features.shape[1], *([width] * depth), 1]
    for li, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        h = h @ fan_in_uniform(rng, (a, b), a) + fan_in_uniform(rng, (b,), a)
        if li < len(sizes) - 2:
            h = np.tanh(h)
    return h[:, 0]


def generate_random_digraph(cfg: GraphGenConfig) -> DiGraph:
    """Random digraph with optimized node features and a learned-looking orientation.

    ``rho_un`` is the fraction of the ``n(n-1)/2`` unordered pairs that get
    connected.  Among them, the ``round(rho_di * m)`` pairs with the largest
    score gap ``|f(u) - f(v)|`` under a random tanh network keep only the edge
    pointing from the lower-scored to the higher-scored node.
    """
    n = cfg.n
    rng = stream(cfg.seed, "graph", "edges")
    m = int(round(cfg.rho_un * n * (n - 1) / 2))
    pairs = _sample_pairs(n, m, rng)
    feats = _optimize_features(n, cfg.d, pairs, cfg.feature_steps, cfg.feature_lr, stream(cfg.seed, "graph", "features"))
    score = _tanh_scores(feats, cfg.tanh_width, cfg.tanh_depth, stream(cfg.seed, "graph", "tanh"))

    n_one_way = int(round(cfg.rho_di * m))
    edges = []
    if m:
        gap = score[pairs[:, 0]] - score[pairs[:, 1]]
        order = np.argsort(-np.abs(gap), kind="stable")
        one_way = np.zeros(m, dtype=bool)
        one_way[order[:n_one_way]] = True
        for (u, v), g, ow in zip(pairs, gap, one_way):
            u, v = int(u), int(v)
            if not ow:
                edges += [(u, v), (v, u)]
            elif g > 0:
                edges.append((v, u))
            else:
                edges.append((u, v))
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    return DiGraph(n, edges, np.ones(len(edges)), feats)


def generate_block_digraph(cfg: BlockGraphConfig) -> tuple[DiGraph, np.ndarray]:
    """Block graph and the node index of each block's representative."""
    b, size = cfg.super_graph.n, cfg.block.n
    sup = generate_random_digraph(_reseed(cfg.super_graph, cfg.seed, "super"))
    rng = stream(cfg.seed, "block", "representatives")
    edges, feats, reps = [], [], []
    for k in range(b):
        g = generate_random_digraph(_reseed(cfg.block, cfg.seed, f"block{k}"))
        edges.append(g.edges + k * size)
        feats.append(np.concatenate([g.features, np.repeat(sup.features[k : k + 1], size, axis=0)], axis=1))
        reps.append(k * size + int(rng.integers(size)))
    reps = np.asarray(reps)
    edges.append(reps[sup.edges].reshape(-1, 2))
    e = np.concatenate(edges, axis=0)
    return DiGraph(b * size, e, np.ones(len(e)), np.concatenate(feats, axis=0)), reps


def _reseed(cfg: GraphGenConfig, seed: int, tag: str) -> GraphGenConfig:
    child = int(stream(seed, "block", tag).integers(2**31))
    return GraphGenConfig(**{**cfg.__dict__, "seed": child})


# ---------------------------------------------------------------------------
# shortest paths


def all_pairs_shortest(graph: DiGraph) -> np.ndarray:
    """Exact shortest-path table via one Dijkstra run per source node."""
    if np.any(graph.weights <= 0):
        raise ValueError("shortest paths need positive weights")
    a = csr_matrix((graph.weights, (graph.edges[:, 0], graph.edges[:, 1])), shape=(graph.n, graph.n))
    return dijkstra(a, directed=True)


def floyd_warshall(adjacency: np.ndarray) -> np.ndarray:
    d = np.array(adjacency, dtype=np.float64)
    np.fill_diagonal(d, 0.0)
    for k in range(d.shape[0]):
        d = np.minimum(d, d[:, k, None] + d[None, k, :])
    return d


# ---------------------------------------------------------------------------
# datasets


@dataclass
class PairDataset:
    features: np.ndarray
    train_i: np.ndarray
    train_j: np.ndarray
    train_d: np.ndarray
    test_i: np.ndarray
    test_j: np.ndarray
    test_d: np.ndarray
    gamma: float = 0.9

    def __post_init__(self):
        for name in ("train_i", "train_j", "test_i", "test_j"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        self.train_d = np.asarray(self.train_d, dtype=np.float64)
        self.test_d = np.asarray(self.test_d, dtype=np.float64)
        tr = set(zip(self.train_i.tolist(), self.train_j.tolist()))
        te = set(zip(self.test_i.tolist(), self.test_j.tolist()))
        if tr & te:
            raise ValueError("train and test pairs overlap")

    @property
    def n(self) -> int:
        return len(self.features)

    @staticmethod
    def discount(d, gamma: float) -> np.ndarray:
        """``gamma ** d`` with ``gamma ** inf = 0``."""
        d = np.asarray(d, dtype=np.float64)
        return np.where(np.isinf(d), 0.0, gamma ** np.where(np.isinf(d), 0.0, d))

    @property
    def train_target(self) -> np.ndarray:
        return self.discount(self.train_d, self.gamma)

    @property
    def test_target(self) -> np.ndarray:
        return self.discount(self.test_d, self.gamma)

    @property
    def train_pairs(self) -> PairSet:
        return PairSet(np.stack([self.train_i, self.train_j], axis=1), "train")

    @property
    def test_pairs(self) -> PairSet:
        return PairSet(np.stack([self.test_i, self.test_j], axis=1), "test")


def make_pair_dataset(
    table,
    features,
    mode: str = "uniform",
    seed: int = 0,
    fraction: float = 0.3,
    k_train: int = 2,
    k_test: int = 2,
    m_train: int | None = None,
    m_test: int | None = None,
    gamma: float = 0.9,
) -> PairDataset:
    """Split the ordered pairs of a distance table into train and test sets.

    ``uniform``: ``round(fraction * n^2)`` ordered pairs (diagonal included)
    are drawn without replacement for training; the rest are test pairs.

    ``landmark``: two disjoint random landmark sets; every (landmark, node)
    pair in both directions is a candidate.  Test candidates that are also
    training candidates are dropped, then each side is subsampled to
    ``m_train`` / ``m_test`` pairs (all candidates when ``None``).
    """
    t = np.asarray(table, dtype=np.float64)
    n = t.shape[0]
    rng = stream(seed, "dataset", mode)
    if mode == "uniform":
        if not 0.0 < fraction < 1.0:
            raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
        m = int(round(fraction * n * n))
        if not 1 <= m < n * n:
            raise ValueError(f"fraction {fraction} gives {m} of {n * n} pairs; need a non-empty train and test set")
        perm = rng.permutation(n * n)
        tr, te = np.sort(perm[:m]), np.sort(perm[m:])
    elif mode == "landmark":
        if k_train < 1 or k_test < 1 or k_train + k_test > n:
            raise ValueError(f"cannot pick {k_train} + {k_test} disjoint landmarks from {n} nodes")
        nodes = rng.permutation(n)
        tr_all = _landmark_pairs(nodes[:k_train], n)
        te_all = np.setdiff1d(_landmark_pairs(nodes[k_train : k_train + k_test], n), tr_all)
        tr = _subsample(tr_all, m_train, rng, "train")
        te = _subsample(te_all, m_test, rng, "test")
    else:
        raise ValueError(f"unknown dataset mode {mode!r}")
    ti, tj = np.divmod(tr, n)
    vi, vj = np.divmod(te, n)
    return PairDataset(np.asarray(features, dtype=np.float64), ti, tj, t[ti, tj], vi, vj, t[vi, vj], gamma)


def _landmark_pairs(landmarks, n) -> np.ndarray:
    nodes = np.arange(n)
    out = [l * n + nodes for l in landmarks] + [nodes * n + l for l in landmarks]
    return np.unique(np.concatenate(out))


def _subsample(flat, m, rng, what) -> np.ndarray:
    if m is None:
        return flat
    if m > len(flat):
        raise ValueError(f"requested {m} {what} pairs but only {len(flat)} are available")
    return np.sort(rng.choice(flat, size=m, replace=False))


# ---------------------------------------------------------------------------
# small hand-made spaces


def toy_three_node(heldout_truth: float = 30.0) -> tuple[FiniteQuasimetricSpace, PairSet]:
    """Three nodes ``a, b, c`` with every pair but ``(a, c)`` observed.

    Observed: d(a,b)=29, d(b,c)=2, d(b,a)=1, d(c,b)=1, d(c,a)=1.  The
    triangle inequality confines d(a,c) to [28, 31]; ``heldout_truth`` fills
    the table entry so the space is complete.
    """
    d = np.array(
        [
            [0.0, 29.0, heldout_truth],
            [1.0, 0.0, 2.0],
            [1.0, 1.0, 0.0],
        ]
    )
    train = PairSet([(i, j) for i in range(3) for j in range(3) if (i, j) != (0, 2)], "train")
    return FiniteQuasimetricSpace(np.eye(3), d), train


FAILURE_NODES = ("x", "y", "y'", "z", "w", "w'")


@dataclass
class FailureConstruction:
    """Two training patterns that constrain the test pair ``(y, z)`` differently."""

    c: float
    features: np.ndarray
    left: list  # [(i, j, d), ...]
    right: list
    test_pair: tuple
    left_interval: tuple
    right_interval: tuple

    @property
    def disjoint(self) -> bool:
        return self.left_interval[0] > self.right_interval[1] or self.right_interval[0] > self.left_interval[1]


def failure_construction(c: float) -> FailureConstruction:
    if not c > 0:
        raise ValueError("c must be positive")
    x, y, y2, z, w, w2 = range(6)
    left = [(x, z, float(c)), (w, z, 1.0), (x, y, 1.0), (y, w2, 1.0)]
    right = [(x, z, float(c)), (w, z, 1.0), (x, y2, 1.0), (y, w, 1.0)]

    def interval(triples):
        t = np.full((6, 6), np.inf)
        np.fill_diagonal(t, 0.0)
        for i, j, d in triples:
            t[i, j] = d
        return heldout_range(t, [(i, j) for i, j, _ in triples], (y, z))

    return FailureConstruction(float(c), np.eye(6), left, right, (y, z), interval(left), interval(right))


# ---------------------------------------------------------------------------
# file formats: edge list ("n" then "src dst weight" lines) and feature CSV


def write_edge_list(path, graph: DiGraph) -> None:
    with open(path, "w") as fh:
        fh.write(f"{graph.n}\n")
        for (a, b), wt in zip(graph.edges, graph.weights):
            fh.write(f"{int(a)} {int(b)} {float(wt)!r}\n")


def read_edge_list(path, features=None) -> DiGraph:
    with open(path) as fh:
        lines = [ln.split() for ln in fh if ln.strip()]
    if not lines or len(lines[0]) != 1:
        raise ValueError("edge list must start with the node count")
    n = int(lines[0][0])
    rows = lines[1:]
    if any(len(r) != 3 for r in rows):
        raise ValueError("edge lines must have the form 'src dst weight'")
    edges = [(int(a), int(b)) for a, b, _ in rows]
    weights = [float(wt) for _, _, wt in rows]
    feats = np.zeros((n, 0)) if features is None else features
    return DiGraph(n, edges, weights, feats)


def write_features_csv(path, features) -> None:
    f = np.asarray(features, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", *[f"f{k}" for k in range(f.shape[1])]])
        for i, row in enumerate(f):
            w.writerow([i, *map(repr, map(float, row))])


def read_features_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    body = sorted(rows[1:], key=lambda r: int(r[0]))
    if [int(r[0]) for r in body] != list(range(len(body))):
        raise ValueError("feature rows must cover nodes 0..n-1")
    return np.array([[float(v) for v in r[1:]] for r in body]).reshape(len(body), len(rows[0]) - 1)
