import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import enumerate_mixed_violation, violation_triples
from qmet.analysis import (
    FiniteQuasimetricSpace,
    PairSet,
    check_quasimetric,
    decompose_three_node,
    dis_vio_bound_check,
    distortion,
    heldout_range,
    mixed_violation,
    nnls,
    normalize_on_pairs,
    quasimetric_from_weights_3,
    quasipartitions_3,
    random_quasimetric_3,
    read_table_csv,
    table_to_vec6,
    vec6_to_table,
    violation,
    write_table_csv,
)

INF = math.inf
# a, b, c with d(a,c) left open
TOY = np.array([[0.0, 29.0, 30.0], [1.0, 0.0, 2.0], [1.0, 1.0, 0.0]])


def random_space(rng, n, p_edge=0.6, inf_ok=False):
    w = np.where(rng.random((n, n)) < p_edge, rng.uniform(0.5, 5.0, (n, n)), INF)
    if not inf_ok:
        w = np.where(np.isinf(w), rng.uniform(5.0, 10.0, (n, n)), w)
    np.fill_diagonal(w, 0.0)
    d = w.copy()
    for k in range(n):
        d = np.minimum(d, d[:, k, None] + d[None, k, :])
    return d


def test_check_quasimetric_examples():
    assert check_quasimetric(TOY).ok
    bad = TOY.copy()
    bad[0, 2] = 40.0
    rep = check_quasimetric(bad)
    assert not rep.ok and (0, 1, 2) in rep.triangle
    assert check_quasimetric(np.zeros((1, 1))).ok
    with pytest.raises(ValueError):
        check_quasimetric(np.zeros((2, 3)))


def test_check_quasimetric_flags():
    t = np.array([[0.0, -1.0], [0.0, 0.5]])
    rep = check_quasimetric(t)
    assert rep.negative == [(0, 1)]
    assert (1, 1) in rep.identity and (1, 0) in rep.identity
    assert check_quasimetric(vec6_to_table([1, 1, 0, 0, 0, 0]), allow_zero=True).ok
    assert not check_quasimetric(vec6_to_table([1, 1, 0, 0, 0, 0])).ok


def test_check_handles_infinity():
    t = np.array([[0.0, 1.0, INF], [INF, 0.0, INF], [INF, INF, 0.0]])
    assert check_quasimetric(t).ok
    t[0, 2] = 1.0
    t[1, 2] = 1.0
    t[0, 1] = INF
    assert check_quasimetric(t).ok


def test_distortion_examples():
    rng = np.random.default_rng(0)
    d = random_space(rng, 5)
    assert distortion(d, d) == 1.0
    assert distortion(2 * d, d) == pytest.approx(1.0, rel=1e-15)
    t = np.array([[0.0, 1.0], [1.0, 0.0]])
    p = np.array([[0.0, 2.0], [0.5, 0.0]])
    assert distortion(p, t) == pytest.approx(4.0)
    with pytest.raises(ValueError):
        distortion(p, t, [(0, 0)])


def test_distortion_infinite_cases():
    t = np.array([[0.0, 1.0], [INF, 0.0]])
    assert distortion(np.array([[0.0, 1.0], [INF, 0.0]]), t) == 1.0
    assert distortion(np.array([[0.0, 1.0], [5.0, 0.0]]), t) == INF
    assert distortion(np.array([[0.0, 0.0], [INF, 0.0]]), t) == INF


def test_distortion_scale_invariant():
    rng = np.random.default_rng(1)
    d = random_space(rng, 6)
    p = d * rng.uniform(0.5, 2.0, d.shape)
    base = distortion(p, d)
    for s in rng.uniform(1e-3, 1e3, 10):
        assert distortion(s * p, d) == pytest.approx(base, rel=1e-12)


def test_violation_examples():
    rng = np.random.default_rng(2)
    assert violation(random_space(rng, 6)) == pytest.approx(1.0, abs=1e-12)
    t = np.ones((3, 3))
    np.fill_diagonal(t, 0.0)
    t[0, 2] = 3.0
    assert violation(t) == pytest.approx(1.5)
    assert violation(np.zeros((4, 4))) == 1.0
    with pytest.raises(ValueError):
        violation(-np.ones((2, 2)))


def test_violation_matches_triple_loop():
    rng = np.random.default_rng(3)
    for _ in range(20):
        t = rng.uniform(0, 3, (5, 5)) * (rng.random((5, 5)) < 0.8)
        t[rng.random((5, 5)) < 0.1] = INF
        assert violation(t) == pytest.approx(violation_triples(t.tolist()), rel=1e-12)


def test_violation_sampling_fallback_is_lower_bound():
    rng = np.random.default_rng(4)
    t = rng.uniform(0.1, 1.0, (30, 30))
    exact = violation(t)
    approx = violation(t, max_exact_n=10, n_samples=20000)
    assert approx <= exact + 1e-15
    assert approx > 0.8 * exact


def test_violation_one_iff_triangle_holds():
    rng = np.random.default_rng(5)
    for _ in range(100):
        n = int(rng.integers(2, 6))
        if rng.random() < 0.5:
            t = random_space(rng, n) * (1 + 0.05 * (rng.random() < 0.5) * rng.random((n, n)))
        else:
            t = random_space(rng, n)
        np.fill_diagonal(t, 0.0)
        rep = check_quasimetric(t)
        assert (violation(t) <= 1.0 + 1e-12) == rep.triangle_ok


def test_mixed_violation_examples():
    rng = np.random.default_rng(6)
    d = random_space(rng, 5)
    s = rng.random((5, 5)) < 0.4
    assert mixed_violation(d, d, s) == pytest.approx(1.0, abs=1e-12)
    p = d * rng.uniform(0.5, 3.0, d.shape)
    assert mixed_violation(p, d, np.ones((5, 5), bool)) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        mixed_violation(np.zeros((9, 9)), np.zeros((9, 9)), None)
    with pytest.raises(ValueError):
        mixed_violation(d, d, s, max_len=2)


def test_mixed_violation_matches_enumeration():
    rng = np.random.default_rng(7)
    for _ in range(15):
        n = int(rng.integers(3, 5))
        d = random_space(rng, n, inf_ok=True)
        p = rng.uniform(0.0, 4.0, (n, n))
        s = rng.random((n, n)) < 0.4
        got = mixed_violation(p, d, s)
        want = enumerate_mixed_violation(p.tolist(), d.tolist(), s.tolist(), n + 1)
        assert got == pytest.approx(want, rel=1e-12)


def test_mixed_violation_needs_normalized_scale():
    # the bound by distortion holds once pred >= truth on S with equality somewhere;
    # an over-scaled copy of the truth is a counterexample otherwise
    rng = np.random.default_rng(8)
    d = random_space(rng, 5)
    s = np.zeros((5, 5), bool)
    s[0, 1] = s[1, 2] = True
    assert mixed_violation(3 * d, d, s) > 1.0 + 1e-6
    assert mixed_violation(normalize_on_pairs(3 * d, d, s), d, s) <= 1.0 + 1e-12


def test_bound_check_examples():
    rng = np.random.default_rng(9)
    d = random_space(rng, 5)
    s = rng.random((5, 5)) < 0.5
    np.fill_diagonal(s, False)
    s[0, 1] = True
    r = dis_vio_bound_check(d, d, s)
    assert (r.dis_full, r.dis_S, r.vio, r.holds) == (1.0, 1.0, 1.0, True)
    r = dis_vio_bound_check(3 * d, d, s)
    assert r.dis_full == pytest.approx(1.0) and r.vio == pytest.approx(1.0) and r.holds


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_bound_holds_for_random_predictors(seed):
    rng = np.random.default_rng(seed)
    d = random_space(rng, 5)
    p = d * np.exp(rng.normal(0, 0.7, d.shape))
    np.fill_diagonal(p, 0.0)
    s = rng.random((5, 5)) < 0.5
    s[0, 1] = True
    assert dis_vio_bound_check(p, d, s).holds


# -- three-element spaces ---------------------------------------------------------


def test_quasipartitions():
    q = quasipartitions_3()
    assert q.shape == (12, 6)
    assert list(q[0]) == [1, 1, 0, 0, 0, 0]
    assert len({tuple(r) for r in q}) == 12
    for row in q:
        assert check_quasimetric(vec6_to_table(row), allow_zero=True).ok


def test_vec6_roundtrip():
    v = np.arange(1.0, 7.0)
    assert np.array_equal(table_to_vec6(vec6_to_table(v)), v)
    assert vec6_to_table(v)[0, 2] == 2.0 and vec6_to_table(v)[2, 1] == 6.0


def test_decompose_examples():
    x = decompose_three_node([1, 1, 0, 0, 0, 0])
    assert np.max(np.abs(quasipartitions_3().T @ x - [1, 1, 0, 0, 0, 0])) <= 1e-12
    assert (x >= 0).all()
    toy = table_to_vec6(TOY)
    x = decompose_three_node(toy)
    assert np.max(np.abs(quasipartitions_3().T @ x - toy)) <= 1e-7
    with pytest.raises(ValueError):
        decompose_three_node([40, 1, 1, 1, 1, 1])  # d(A,B) > d(A,C) + d(C,B)
    with pytest.raises(ValueError):
        decompose_three_node([1, 1, INF, 1, 1, 1])


def test_decompose_random():
    q = quasipartitions_3().T
    for seed in range(200):
        d6 = random_quasimetric_3(seed)
        x = decompose_three_node(d6)
        assert (x >= 0).all()
        assert np.max(np.abs(q @ x - d6)) <= 1e-7


def test_random_quasimetric_3():
    for seed in range(20):
        assert check_quasimetric(vec6_to_table(random_quasimetric_3(seed))).ok
    assert np.array_equal(random_quasimetric_3(4), random_quasimetric_3(4))
    assert np.array_equal(quasimetric_from_weights_3([2.5] * 6), [2.5] * 6)
    assert quasimetric_from_weights_3([10, 1, 1, 1, 1, 1])[0] == 2.0


# -- held-out range ------------------------------------------------------------


def test_heldout_range_toy():
    s = ~np.eye(3, dtype=bool)
    s[0, 2] = False
    assert heldout_range(TOY, s, (0, 2)) == (28.0, 31.0)
    full = np.ones((3, 3), bool)
    assert heldout_range(TOY, full, (1, 1)) == (0.0, 0.0)


def test_heldout_range_contains_truth():
    rng = np.random.default_rng(10)
    for _ in range(50):
        d = random_space(rng, 4, inf_ok=True)
        i, j = rng.choice(4, 2, replace=False)
        s = ~np.eye(4, dtype=bool)
        s[i, j] = False
        lo, hi = heldout_range(d, s, (i, j))
        assert lo - 1e-12 <= d[i, j] <= hi + 1e-12


def test_heldout_range_unbounded():
    d = np.array([[0.0, 1.0], [INF, 0.0]])
    lo, hi = heldout_range(d, np.zeros((2, 2), bool), (1, 0))
    assert hi == INF and lo == 0.0


# -- containers and CSV -----------------------------------------------------------


def test_space_and_pairset_validation():
    FiniteQuasimetricSpace(np.eye(3), TOY)
    with pytest.raises(ValueError):
        FiniteQuasimetricSpace(np.eye(3), TOY * np.array([1, 1, 0]))
    with pytest.raises(ValueError):
        PairSet([(0, 1), (0, 1)])
    with pytest.raises(ValueError):
        PairSet([(0, 5)]).validate(3)
    with pytest.raises(ValueError):
        PairSet([(0, 1)], role="other")
    assert PairSet.from_mask(np.eye(2, dtype=bool)).pairs.tolist() == [[0, 0], [1, 1]]


def test_csv_roundtrip(tmp_path):
    t = np.array([[0.0, 1.5, INF], [2.0, 0.0, 0.1], [INF, 3.0, 0.0]])
    f = tmp_path / "t.csv"
    write_table_csv(f, t, d=3)
    lines = f.read_text().splitlines()
    assert lines[0] == "3,3"
    assert "0,2,inf" in lines
    back, pairs, dim = read_table_csv(f)
    assert dim == 3 and len(pairs) == 9
    assert np.array_equal(back, t)
    write_table_csv(f, t, pairs=[(0, 1), (2, 0)])
    back, pairs, _ = read_table_csv(f)
    assert pairs.pairs.tolist() == [[0, 1], [2, 0]]
    assert back[2, 0] == INF and np.isnan(back[1, 1])


# -- non-negative least squares ----------------------------------------------------


def test_nnls_examples():
    x, r = nnls(np.eye(3), [1.0, -2.0, 3.0])
    assert np.array_equal(x, [1.0, 0.0, 3.0]) and r == pytest.approx(2.0, abs=1e-15)
    x, r = nnls(np.zeros((2, 2)), [1.0, 1.0])
    assert np.array_equal(x, [0.0, 0.0])


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 100_000))
def test_nnls_matches_bounded_least_squares(seed):
    from scipy.optimize import lsq_linear

    rng = np.random.default_rng(seed)
    m, n = rng.integers(1, 15, size=2)
    a = rng.normal(size=(m, n))
    b = rng.normal(size=m) * rng.uniform(0.1, 100)
    x, r = nnls(a, b)
    assert np.all(x >= 0)
    assert r == pytest.approx(float(np.linalg.norm(a @ x - b)), abs=1e-12)
    ref = lsq_linear(a, b, bounds=(0, np.inf), tol=1e-14, method="bvls")
    assert r <= float(np.linalg.norm(a @ ref.x - b)) + 1e-9 * max(1.0, float(np.linalg.norm(b)))
    # optimality: no descent direction among the zero coordinates
    w = a.T @ (b - a @ x)
    assert np.all(w[x == 0] <= 1e-9 * max(1.0, float(np.linalg.norm(b))))


def test_decompose_regression_cases():
    # inputs on which a generic solver stalled away from the exact decomposition
    q = quasipartitions_3()
    for s in (0, 1941650650):
        d6 = random_quasimetric_3(s)
        assert np.max(np.abs(q.T @ decompose_three_node(d6) - d6)) <= 1e-10
