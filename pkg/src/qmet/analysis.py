"""Ground-truth quasimetric spaces and evaluation of distance predictors.

Distance tables are dense ``n x n`` float arrays; unreachable pairs hold
``np.inf``.  Ratios follow one convention everywhere:

* ``0/0 = 1``
* ``c/0 = inf`` and ``c/inf = 0`` for finite ``c > 0``
* ``inf/c = inf`` for finite ``c``
* ``inf/inf`` is undefined and excluded from maxima
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import stream

__all__ = [
    "FiniteQuasimetricSpace",
    "PairSet",
    "QuasimetricReport",
    "BoundReport",
    "check_quasimetric",
    "ratio",
    "distortion",
    "violation",
    "mixed_table",
    "mixed_violation",
    "normalize_on_pairs",
    "dis_vio_bound_check",
    "quasipartitions_3",
    "vec6_to_table",
    "table_to_vec6",
    "decompose_three_node",
    "quasimetric_from_weights_3",
    "random_quasimetric_3",
    "heldout_range",
    "write_table_csv",
    "read_table_csv",
]

VIOLATION_EXACT_MAX_N = 512


# ---------------------------------------------------------------------------
# containers


@dataclass(frozen=True)
class PairSet:
    """Ordered ``(i, j)`` index pairs, tagged as training or test pairs."""

    pairs: np.ndarray
    role: str = "train"

    def __post_init__(self):
        p = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "pairs", p)
        if self.role not in ("train", "test"):
            raise ValueError(f"unknown role {self.role!r}")
        if len({(int(i), int(j)) for i, j in p}) != len(p):
            raise ValueError("duplicate pairs")

    def __len__(self):
        return len(self.pairs)

    def validate(self, n: int) -> "PairSet":
        if len(self.pairs) and (self.pairs.min() < 0 or self.pairs.max() >= n):
            raise ValueError(f"pair index out of range for n={n}")
        return self

    def mask(self, n: int) -> np.ndarray:
        self.validate(n)
        m = np.zeros((n, n), dtype=bool)
        m[self.pairs[:, 0], self.pairs[:, 1]] = True
        return m

    @classmethod
    def from_mask(cls, mask: np.ndarray, role: str = "train") -> "PairSet":
        return cls(np.argwhere(mask), role)


@dataclass(frozen=True)
class FiniteQuasimetricSpace:
    features: np.ndarray
    dist: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        d = np.asarray(self.dist, dtype=np.float64)
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "dist", d)
        if d.ndim != 2 or d.shape[0] != d.shape[1] or f.shape[0] != d.shape[0]:
            raise ValueError(f"inconsistent shapes: features {f.shape}, dist {d.shape}")
        report = check_quasimetric(d)
        if not report.ok:
            raise ValueError(f"distance table is not a quasimetric: {report}")

    @property
    def n(self) -> int:
        return self.dist.shape[0]


@dataclass
class QuasimetricReport:
    negative: list = field(default_factory=list)
    identity: list = field(default_factory=list)
    triangle: list = field(default_factory=list)
    triangle_count: int = 0
    max_ratio: float = 1.0

    @property
    def ok(self) -> bool:
        return not (self.negative or self.identity or self.triangle_count)

    @property
    def triangle_ok(self) -> bool:
        return self.triangle_count == 0


def _as_square(table) -> np.ndarray:
    t = np.asarray(table, dtype=np.float64)
    if t.ndim != 2 or t.shape[0] != t.shape[1]:
        raise ValueError(f"expected a square table, got shape {t.shape}")
    if np.isnan(t).any():
        raise ValueError("table contains NaN")
    return t


def _pair_mask(n: int, pairs) -> np.ndarray:
    if pairs is None:
        return ~np.eye(n, dtype=bool)
    if isinstance(pairs, PairSet):
        return pairs.mask(n)
    arr = np.asarray(pairs)
    if arr.dtype == bool:
        return arr.copy()
    return PairSet(arr).mask(n)


# ---------------------------------------------------------------------------
# checks and metrics


def check_quasimetric(table, tol: float = 1e-9, allow_zero: bool = False, max_examples: int = 50) -> QuasimetricReport:
    """Exhaustive check of non-negativity, identity, and every triangle inequality.

    ``allow_zero=True`` accepts zero off-diagonal entries (pseudo-quasimetrics,
    e.g. quasipartitions).
    """
    d = _as_square(table)
    n = d.shape[0]
    rep = QuasimetricReport()
    rep.negative = [tuple(map(int, ij)) for ij in np.argwhere(d < -tol)]
    diag = np.abs(np.diag(d)) > tol
    rep.identity = [(int(i), int(i)) for i in np.flatnonzero(diag)]
    if not allow_zero:
        off = (d <= tol) & ~np.eye(n, dtype=bool)
        rep.identity += [tuple(map(int, ij)) for ij in np.argwhere(off)]
    for j in range(n):
        via = d[:, j, None] + d[None, j, :]
        with np.errstate(invalid="ignore"):
            bad = d > via + tol
        cnt = int(bad.sum())
        if cnt:
            rep.triangle_count += cnt
            for i, k in np.argwhere(bad):
                if len(rep.triangle) >= max_examples:
                    break
                rep.triangle.append((int(i), j, int(k)))
    if n and not rep.negative:
        rep.max_ratio = violation(np.maximum(d, 0.0)) if n <= VIOLATION_EXACT_MAX_N else float("nan")
    return rep


def ratio(num, den) -> np.ndarray:
    """Elementwise ratio with the module conventions; ``inf/inf`` gives NaN (excluded)."""
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = num / den
    r = np.where((num == 0) & (den == 0), 1.0, r)
    return np.where(np.isinf(num) & np.isinf(den), np.nan, r)


def _nanmax(x) -> float:
    x = np.asarray(x)
    x = x[~np.isnan(x)]
    return float(x.max()) if x.size else float("nan")


def distortion(pred, truth, pairs=None) -> float:
    """``max(pred/truth) * max(truth/pred)`` over the off-diagonal pairs in ``pairs``."""
    p, t = _as_square(pred), _as_square(truth)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
    m = _pair_mask(t.shape[0], pairs) & ~np.eye(t.shape[0], dtype=bool)
    if not m.any():
        raise ValueError("distortion needs at least one off-diagonal pair")
    over = _nanmax(ratio(p[m], t[m]))
    under = _nanmax(ratio(t[m], p[m]))
    if np.isnan(over) or np.isnan(under):
        return 1.0
    if np.isinf(over) or np.isinf(under):
        return float("inf")
    return over * under


def violation(pred, max_exact_n: int = VIOLATION_EXACT_MAX_N, n_samples: int = 2_000_000, seed: int = 0) -> float:
    """Max over ordered triples of ``pred[i,k] / (pred[i,j] + pred[j,k])``.

    Exact for ``n <= max_exact_n``.  Larger tables fall back to ``n_samples``
    uniformly drawn triples, which gives a lower estimate.
    """
    d = _as_square(pred)
    if (d < 0).any():
        raise ValueError("violation expects a non-negative table")
    n = d.shape[0]
    if n == 0:
        return 1.0
    if n > max_exact_n:
        rng = stream(seed, "violation-sample")
        i, j, k = rng.integers(0, n, size=(3, n_samples))
        return _nanmax(ratio(d[i, k], d[i, j] + d[j, k]))
    best = -np.inf
    for j in range(n):
        r = ratio(d, d[:, j, None] + d[None, j, :])
        best = max(best, _nanmax(r) if np.isnan(r).any() else float(r.max()))
    return float(best)


def mixed_table(pred, truth, pairs) -> np.ndarray:
    p, t = _as_square(pred), _as_square(truth)
    return np.where(_pair_mask(t.shape[0], pairs), t, p)


def _minplus(a, b):
    return np.min(a[:, :, None] + b[None, :, :], axis=1)


def mixed_violation(pred, truth, pairs, max_len: int | None = None) -> float:
    """Violation of the hybrid table (truth on ``pairs``, ``pred`` elsewhere).

    Maximizes ``mix(A1, Ak) / sum_i mix(Ai, Ai+1)`` over every element
    sequence of length ``3 <= k <= max_len`` (default ``n + 1``) that touches
    ``pairs``, i.e. some consecutive pair or the end pair ``(A1, Ak)`` is in it.
    For fixed end points the best sequence is the one with the smallest
    denominator, so the search is an exact min-plus recursion over walk
    lengths rather than a literal listing of sequences.
    """
    p, t = _as_square(pred), _as_square(truth)
    n = t.shape[0]
    if n > 8:
        raise ValueError(f"mixed_violation is limited to n <= 8 (got {n})")
    if max_len is None:
        max_len = n + 1
    if max_len < 3:
        raise ValueError("max_len must be >= 3")
    if (p < 0).any():
        raise ValueError("mixed_violation expects a non-negative predictor")
    s = _pair_mask(n, pairs)
    w = np.where(s, t, p)
    w_s = np.where(s, w, np.inf)
    w_ns = np.where(s, np.inf, w)
    # walks with one edge, split by whether an S edge has been used
    d0, d1 = w_ns, w_s
    best_den = np.full((n, n), np.inf)
    for _ in range(2, max_len):
        d0, d1 = _minplus(d0, w_ns), np.minimum(_minplus(d1, w), _minplus(d0, w_s))
        den = np.where(s, np.minimum(d0, d1), d1)
        best_den = np.minimum(best_den, den)
    return _nanmax(ratio(w, best_den))


def normalize_on_pairs(pred, truth, pairs) -> np.ndarray:
    """Rescale ``pred`` so that ``min(pred/truth) = 1`` over the off-diagonal ``pairs``."""
    p, t = _as_square(pred), _as_square(truth)
    m = _pair_mask(t.shape[0], pairs) & ~np.eye(t.shape[0], dtype=bool) & np.isfinite(t)
    lo = float(np.min(ratio(p[m], t[m])))
    if not np.isfinite(lo) or lo <= 0:
        raise ValueError("cannot normalize: predictor vanishes on a training pair")
    return p / lo


@dataclass(frozen=True)
class BoundReport:
    dis_full: float
    dis_S: float
    vio: float
    holds: bool


def dis_vio_bound_check(pred, truth, pairs, tol: float = 1e-9) -> BoundReport:
    """Check ``dis(pred) >= max(dis_S(pred), sqrt(vio(pred)))`` against a quasimetric truth."""
    dis_full = distortion(pred, truth)
    dis_s = distortion(pred, truth, pairs)
    vio = violation(pred)
    return BoundReport(dis_full, dis_s, vio, bool(dis_full >= max(dis_s, np.sqrt(vio)) - tol))


# ---------------------------------------------------------------------------
# three-element spaces

# entry order of 6-vectors: d(A,B), d(A,C), d(B,C), d(B,A), d(C,A), d(C,B)
_VEC6_INDEX = [(0, 1), (0, 2), (1, 2), (1, 0), (2, 0), (2, 1)]


def quasipartitions_3() -> np.ndarray:
    """The 12 binary quasipartitions on three elements that span all 3-element quasimetrics."""
    return np.array(
        [
            [1, 1, 0, 0, 0, 0],
            [0, 1, 1, 0, 0, 0],
            [0, 0, 1, 1, 0, 0],
            [0, 0, 0, 1, 1, 0],
            [0, 0, 0, 0, 1, 1],
            [1, 0, 0, 0, 0, 1],
            [1, 1, 1, 0, 0, 0],
            [0, 1, 1, 1, 0, 0],
            [0, 0, 1, 1, 1, 0],
            [0, 0, 0, 1, 1, 1],
            [1, 0, 0, 0, 1, 1],
            [1, 1, 0, 0, 0, 1],
        ],
        dtype=np.float64,
    )


def vec6_to_table(d6) -> np.ndarray:
    d6 = np.asarray(d6, dtype=np.float64)
    t = np.zeros((3, 3))
    for v, (i, j) in zip(d6, _VEC6_INDEX):
        t[i, j] = v
    return t


def table_to_vec6(table) -> np.ndarray:
    t = np.asarray(table, dtype=np.float64)
    return np.array([t[i, j] for i, j in _VEC6_INDEX])


def nnls(a, b, tol: float | None = None, max_iter: int | None = None) -> tuple[np.ndarray, float]:
    """Lawson-Hanson active-set solver for ``min ||a x - b||`` subject to ``x >= 0``.

    Returns the solution and the residual norm.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, n = a.shape
    if tol is None:
        tol = 10 * np.finfo(float).eps * np.linalg.norm(a, 1) * max(m, n) * max(1.0, float(np.linalg.norm(b)))
    if max_iter is None:
        max_iter = 30 * n
    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    w = a.T @ (b - a @ x)
    it = 0
    while (~passive).any() and np.max(np.where(passive, -np.inf, w)) > tol:
        j = int(np.argmax(np.where(passive, -np.inf, w)))
        passive[j] = True
        while True:
            it += 1
            if it > max_iter:
                raise RuntimeError("nnls did not converge")
            s = np.zeros(n)
            s[passive] = np.linalg.lstsq(a[:, passive], b, rcond=None)[0]
            if np.all(s[passive] > 0):
                break
            # step back toward x until the first passive coordinate hits zero
            hit = passive & (s <= 0)
            step = np.min(x[hit] / (x[hit] - s[hit]))
            x = x + step * (s - x)
            passive &= x > tol
            x[~passive] = 0.0
            if not passive[j] and step == 0.0:
                # the new column cannot enter: its gradient entry is roundoff
                return x, float(np.linalg.norm(a @ x - b))
        x = s
        w = a.T @ (b - a @ x)
    return x, float(np.linalg.norm(a @ x - b))


def decompose_three_node(d6) -> np.ndarray:
    """Non-negative weights ``x`` over :func:`quasipartitions_3` with ``P.T @ x = d6``."""
    d6 = np.asarray(d6, dtype=np.float64)
    if d6.shape != (6,) or not np.all(np.isfinite(d6)):
        raise ValueError("expected 6 finite distances (cap infinities first)")
    rep = check_quasimetric(vec6_to_table(d6), allow_zero=True)
    if not rep.ok:
        raise ValueError(f"not a quasimetric on three elements: {rep}")
    x, _ = nnls(quasipartitions_3().T, d6)
    return x


def quasimetric_from_weights_3(w6) -> np.ndarray:
    """Shortest-path distances of the complete 3-node digraph with arc weights ``w6``."""
    t = vec6_to_table(w6)
    for k in range(3):
        t = np.minimum(t, t[:, k, None] + t[None, k, :])
    return table_to_vec6(t)


def random_quasimetric_3(seed: int) -> np.ndarray:
    rng = stream(seed, "random_quasimetric_3")
    w = np.exp(rng.uniform(np.log(0.01), np.log(100.0), size=6))
    return quasimetric_from_weights_3(w)


def heldout_range(truth, pairs, pair) -> tuple[float, float]:
    """Interval of values for ``truth[pair]`` consistent with the triangle inequality.

    Only distances of ``pairs`` (minus the query itself) are treated as known.
    The upper end is the shortest known route; the lower end is the best
    reverse-triangle bound ``d(x,k) - U(y,k)`` or ``d(k,y) - U(k,x)`` where
    ``U`` is a shortest known route.
    """
    t = _as_square(truth)
    n = t.shape[0]
    x, y = map(int, pair)
    if x == y:
        return (0.0, 0.0)
    known = _pair_mask(n, pairs) & ~np.eye(n, dtype=bool)
    known[x, y] = False
    g = np.where(known, t, np.inf)
    np.fill_diagonal(g, 0.0)
    up = g.copy()
    for k in range(n):
        up = np.minimum(up, up[:, k, None] + up[None, k, :])
    hi = float(up[x, y])
    lo = 0.0
    with np.errstate(invalid="ignore"):
        for k in range(n):
            if known[x, k] and np.isfinite(up[y, k]):
                lo = max(lo, t[x, k] - up[y, k])
            if known[k, y] and np.isfinite(up[k, x]):
                lo = max(lo, t[k, y] - up[k, x])
    return (float(lo), hi)


# ---------------------------------------------------------------------------
# CSV format: first row "n,d" (element count, feature dim), then i,j,value rows


def write_table_csv(path, table, pairs=None, d: int = 0) -> None:
    t = _as_square(table)
    n = t.shape[0]
    idx = np.argwhere(_pair_mask(n, pairs) | (np.eye(n, dtype=bool) if pairs is None else False))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([n, d])
        for i, j in idx:
            v = t[i, j]
            w.writerow([int(i), int(j), "inf" if np.isposinf(v) else repr(float(v))])


def read_table_csv(path) -> tuple[np.ndarray, PairSet, int]:
    """Returns ``(table, pairs, d)``; entries not listed in the file are NaN."""
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError("empty table file")
    n, d = int(rows[0][0]), int(rows[0][1])
    table = np.full((n, n), np.nan)
    ij = []
    for r in rows[1:]:
        if not r:
            continue
        i, j = int(r[0]), int(r[1])
        table[i, j] = float(r[2])
        ij.append((i, j))
    return table, PairSet(np.array(ij, dtype=np.int64).reshape(-1, 2)), d

