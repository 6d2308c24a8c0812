"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (printed in the terminal summary) and then
asserts the same condition, so a failing criterion fails the suite.
"""

import math
import time

import numpy as np
from scipy import integrate, stats

from _oracles import enumerate_mixed_violation, fd_gradcheck, race_fd_mp
from qmet import autodiff as ad
from qmet.analysis import (
    decompose_three_node,
    dis_vio_bound_check,
    distortion,
    mixed_violation,
    normalize_on_pairs,
    quasipartitions_3,
    random_quasimetric_3,
    ratio,
)
from qmet.config import default_config
from qmet.experiments import cmd_graph_bench, cmd_gridworld, cmd_toy3, cmd_verify_failure
from qmet.graphs import DiGraph, all_pairs_shortest, floyd_warshall
from qmet.heads import (
    FAMILIES,
    DeepLinearNet,
    deep_linear_collapse,
    discounted_forward,
    make_head,
    pqe_gg_measures,
)
from qmet.heads.pqe import gg_total_measure
from qmet.rng import stream
from qmet.special import poisson_race_grad, poisson_race_oracle, poisson_race_prob

GRID = (0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0)


def _reports(out):
    import json

    return [json.loads(ln) for ln in (out / "report.jsonl").read_text().splitlines()]


# 1 ----------------------------------------------------------------------------------


def test_criterion_01_race_numerics(criterion):
    t0 = time.perf_counter()
    prob_err = max(abs(float(poisson_race_prob(a, b)) - poisson_race_oracle(a, b, 1e-12)) for a in GRID for b in GRID)
    grad_err = 0.0
    for a in GRID:
        for b in GRID:
            if a < 1e-3 or b < 1e-3:
                continue
            g1, g2 = poisson_race_grad(a, b)
            for ana, wrt in ((g1, 0), (g2, 1)):
                num = race_fd_mp(a, b, wrt, h=1e-5)
                grad_err = max(grad_err, abs(float(ana) - num) / max(abs(num), 1e-300))
    limit_err = max(abs(float(poisson_race_grad(a, 0.0).d_mu2) - a * math.exp(-a)) for a in GRID)
    elapsed = time.perf_counter() - t0
    ok = prob_err <= 1e-9 and grad_err <= 1e-5 and limit_err <= 1e-8 and elapsed < 10
    criterion(1, ok, f"max |P - oracle| {prob_err:.1e}, grad rel err {grad_err:.1e}, mu2->0 limit err {limit_err:.1e}, {elapsed:.1f}s")
    assert ok


# 2 ----------------------------------------------------------------------------------


def test_criterion_02_endpoints(criterion):
    eps = np.finfo(float).eps
    left = max(abs(float(poisson_race_prob(0.0, b)) - 1.0) for b in GRID)
    right = max(abs(float(poisson_race_prob(a, 0.0)) - math.exp(-a)) / math.exp(-a) for a in GRID)
    ok = left == 0.0 and right <= 2 * eps
    criterion(2, ok, f"max |P(0,b) - 1| = {left:.1e}, max rel |P(a,0) - e^-a| = {right:.1e}")
    assert ok


# 3 ----------------------------------------------------------------------------------


def test_criterion_03_three_node_decomposition(criterion):
    t0 = time.perf_counter()
    q = quasipartitions_3()
    seeds = stream(0, "acceptance", "decompose3").integers(0, 2**31, size=200)
    worst = 0.0
    for s in seeds:
        d6 = random_quasimetric_3(int(s))
        w = decompose_three_node(d6)
        assert np.all(w >= 0)
        worst = max(worst, float(np.max(np.abs(q.T @ w - d6))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-7 and elapsed < 5
    criterion(3, ok, f"200 samples, max residual {worst:.1e}, {elapsed:.1f}s")
    assert ok


# 4 ----------------------------------------------------------------------------------


def test_criterion_04_toy(criterion, tmp_path):
    t0 = time.perf_counter()
    cfg = default_config("toy3")
    assert len(cfg.experiment.seeds) == 20 and cfg.train.gamma == 0.9
    cmd_toy3(cfg, tmp_path)
    elapsed = time.perf_counter() - t0
    runs = [r for r in _reports(tmp_path) if "summary" not in r]
    by = {f: [r for r in runs if r["family"] == f] for f in cfg.experiment.families}
    pqe, euc, unc = by["pqe-lh"], by["metric-euclidean"], by["unconstrained-direct"]
    pqe_mse = max(r["train_mse"] for r in pqe)
    pqe_rate = np.mean([r["in_range"] for r in pqe])
    euc_min = min(r["train_mse"] for r in euc)
    unc_rate = np.mean([r["in_range"] for r in unc])
    ok = pqe_mse <= 1e-3 and pqe_rate >= 0.9 and euc_min >= 10 * pqe_mse and unc_rate < pqe_rate and elapsed < 300
    criterion(
        4,
        ok,
        f"pqe-lh max train MSE {pqe_mse:.1e}, in-range {pqe_rate:.2f}; euclidean min MSE {euc_min:.1e}; "
        f"unconstrained in-range {unc_rate:.2f}; {elapsed:.0f}s",
    )
    assert ok


# 5 ----------------------------------------------------------------------------------


def test_criterion_05_failure_construction(criterion, tmp_path):
    t0 = time.perf_counter()
    cfg = default_config("verify_failure")
    cfg.failure.c_list = (100.0, 1000.0)
    cmd_verify_failure(cfg, tmp_path)
    elapsed = time.perf_counter() - t0
    summ = {r["c"]: r for r in _reports(tmp_path) if r.get("summary") == "verify_failure"}
    gaps = {c: summ[c]["relative_gap"] for c in (100.0, 1000.0)}
    disjoint = all(summ[c]["disjoint"] for c in (100.0, 1000.0))
    ok = all(g <= 0.10 for g in gaps.values()) and disjoint and elapsed < 180
    detail = ", ".join(f"c={c:g}: gap {g:.2%}" for c, g in gaps.items())
    criterion(5, ok, f"{detail}; intervals disjoint {disjoint}; {elapsed:.0f}s")
    assert ok


# 6 ----------------------------------------------------------------------------------


def _random_space(rng, n=5):
    w = rng.uniform(0.5, 5.0, (n, n))
    np.fill_diagonal(w, 0.0)
    for k in range(n):
        w = np.minimum(w, w[:, k, None] + w[None, k, :])
    return w


def test_criterion_06_metric_theorems(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    bound_ok = mixed_ok = True
    worst_slack = math.inf
    worst_mixed = -math.inf
    for _ in range(100):
        d = _random_space(rng)
        s = rng.random((5, 5)) < 0.4
        np.fill_diagonal(s, False)
        s[0, 1] = True
        # (a) arbitrary non-negative predictors
        p = d * np.exp(rng.normal(0.0, 0.8, d.shape))
        np.fill_diagonal(p, 0.0)
        r = dis_vio_bound_check(p, d, s)
        bound_ok &= r.holds
        worst_slack = min(worst_slack, r.dis_full - max(r.dis_S, math.sqrt(r.vio)))
        # (b) quasimetric predictors, scaled so they never under-shoot on S
        q = normalize_on_pairs(_random_space(rng), d, s)
        alpha = distortion(q, d, s)
        mv = enumerate_mixed_violation(q.tolist(), d.tolist(), s.tolist(), 6)
        assert abs(mv - mixed_violation(q, d, s)) <= 1e-12 * max(1.0, mv)
        mixed_ok &= mv <= alpha + 1e-9
        worst_mixed = max(worst_mixed, mv - alpha)
    elapsed = time.perf_counter() - t0
    ok = bound_ok and mixed_ok and elapsed < 120
    criterion(6, ok, f"min dis - max(dis_S, sqrt vio) = {worst_slack:.3g}; max mixed vio - alpha = {worst_mixed:.3g}; {elapsed:.0f}s")
    assert ok


# 7 ----------------------------------------------------------------------------------


def test_criterion_07_pqe_structure(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    x = rng.normal(size=(1000, 8)) * 2.0
    details, ok = [], True
    for family in ("pqe-lh", "pqe-gg"):
        for output in ("raw", "discounted"):
            head = make_head(family, 8, (32,), 16, seed=3, pqe_output=output)
            i, j, k = rng.integers(0, 1000, size=(3, 50_000))
            dij = head.predict(x, i, j, 0.9)
            djk = head.predict(x, j, k, 0.9)
            dik = head.predict(x, i, k, 0.9)
            vio = float(np.nanmax(ratio(dik, dij + djk)))
            diag = head.predict(x, np.arange(1000), np.arange(1000), 0.9)
            good = abs(vio - 1.0) <= 1e-9 and np.all(diag == 0.0)
            ok &= good
            details.append(f"{family}/{output} vio {vio:.12f}")
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 60
    criterion(7, ok, f"{'; '.join(details)}; d(x,x)=0 exactly; {elapsed:.0f}s")
    assert ok


# 8 ----------------------------------------------------------------------------------


def test_criterion_08_graph_benchmark(criterion, tmp_path):
    t0 = time.perf_counter()
    cfg = default_config("graph_bench")
    cfg.data.graph = "dense"
    cfg.data.n = 50
    cfg.data.fractions = (0.3,)
    cfg.experiment.seeds = (0, 1, 2)
    cfg.experiment.families = ("pqe-lh", "unconstrained-direct")
    cmd_graph_bench(cfg, tmp_path)
    elapsed = time.perf_counter() - t0
    runs = [r for r in _reports(tmp_path) if "summary" not in r]
    by = {f: [r for r in runs if r["family"] == f] for f in cfg.experiment.families}
    pqe_med = float(np.median([r["test_mse"] for r in by["pqe-lh"]]))
    unc_med = float(np.median([r["test_mse"] for r in by["unconstrained-direct"]]))
    pqe_vio = [r["violation"] for r in by["pqe-lh"]]
    unc_vio = [r["violation"] for r in by["unconstrained-direct"]]
    ok = pqe_med <= unc_med and all(v == 1.0 for v in pqe_vio) and all(float(v) > 1.0 for v in unc_vio) and elapsed < 1200
    criterion(
        8,
        ok,
        f"median test MSE pqe-lh {pqe_med:.4f} vs unconstrained {unc_med:.4f}; "
        f"violation pqe {max(pqe_vio):.3f}, unconstrained min {min(float(v) for v in unc_vio):.3f}; {elapsed:.0f}s",
    )
    assert ok


# 9 ----------------------------------------------------------------------------------


def test_criterion_09_gridworld(criterion, tmp_path):
    t0 = time.perf_counter()
    cfg = default_config("gridworld")
    cfg.experiment.seeds = (0, 1, 2)
    cfg.experiment.families = ("pqe-lh", "unconstrained-direct")
    cfg.experiment.checkpoints = False
    cfg.gridworld.transitions = (2000,)
    cfg.gridworld.episodes = 50
    cmd_gridworld(cfg, tmp_path)
    elapsed = time.perf_counter() - t0
    summ = {r["family"]: r for r in _reports(tmp_path) if r.get("summary") == "gridworld"}
    pqe, unc = summ["pqe-lh"]["mean_success_rate"], summ["unconstrained-direct"]["mean_success_rate"]
    ok = pqe >= 0.8 and pqe >= unc and elapsed < 1800
    criterion(
        9,
        ok,
        f"success pqe-lh {pqe:.2f} {summ['pqe-lh']['rates']}, unconstrained {unc:.2f} {summ['unconstrained-direct']['rates']}; {elapsed:.0f}s",
    )
    assert ok


# 10 ---------------------------------------------------------------------------------


def _collapse_oracle(mats, bias):
    acc = mats[0]
    for m in mats[1:]:
        out = np.zeros((m.shape[0], acc.shape[1]))
        for r in range(m.shape[0]):
            for c in range(acc.shape[1]):
                out[r, c] = math.fsum(m[r, t] * acc[t, c] for t in range(m.shape[1]))
        acc = out
    return acc + bias


def _gg_intersection_quad(u, v, c, s2):
    def f(x):
        return c * min(stats.norm.pdf(x - u), stats.norm.pdf(x - v)) * stats.norm.pdf(x, scale=math.sqrt(s2))

    mid = 0.5 * (u + v)
    a, _ = integrate.quad(f, -np.inf, mid, epsabs=1e-14, epsrel=1e-13, limit=200)
    b, _ = integrate.quad(f, mid, np.inf, epsabs=1e-14, epsrel=1e-13, limit=200)
    return a + b


def test_criterion_10_engineering_invariants(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    # deep linear collapse
    collapse_err = 0.0
    for trial in range(5):
        net = DeepLinearNet.create(int(rng.integers(2, 9)), int(rng.integers(2, 9)), rng, f"n{trial}")
        net.bias.data = rng.normal(size=net.bias.data.shape)
        ref = _collapse_oracle([f.data for f in net.factors], net.bias.data)
        collapse_err = max(collapse_err, float(np.max(np.abs(deep_linear_collapse(net) - ref))))
    # GG additivity
    add_err = 0.0
    for _ in range(30):
        u, v = rng.normal(0, 1.5, size=2)
        c, s2 = rng.uniform(0.5, 3.0), rng.uniform(0.2, 3.0)
        uv, vu = pqe_gg_measures(u, v, c, s2)
        inter = _gg_intersection_quad(u, v, c, s2)
        add_err = max(add_err, abs(uv.item() + inter - gg_total_measure(u, c, s2)), abs(vu.item() + inter - gg_total_measure(v, c, s2)))
    # discounted identity
    e = rng.uniform(0, 1, size=(50, 8))
    alpha = rng.uniform(0, 4, size=8)
    beta_err = float(np.max(np.abs(discounted_forward(e, 0.9**alpha).data - 0.9 ** (e @ alpha))))
    # finite-difference gradient checks on every head family and the race primitive
    grad_err = 0.0
    x = rng.normal(size=(5, 4))
    i, j = np.arange(5), np.roll(np.arange(5), 1)
    target = rng.uniform(0.2, 0.8, size=5)
    for family in FAMILIES:
        head = make_head(family, 4, (6,), 8, seed=1, k=2)
        grad_err = max(grad_err, fd_gradcheck(lambda: ad.mean(ad.square(head.discounted(x, i, j, 0.9) - target)), head.params, n_probe=20))
    mu = {"a": ad.parameter(rng.uniform(0.1, 5, 6), "a"), "b": ad.parameter(rng.uniform(0.1, 5, 6), "b")}
    grad_err = max(grad_err, fd_gradcheck(lambda: ad.sum_(ad.poisson_race(mu["a"], mu["b"])), mu, n_probe=12))
    # Dijkstra against Floyd-Warshall
    sp_err = 0.0
    sp_inf_ok = True
    for seed in range(20):
        g_rng = np.random.default_rng(1000 + seed)
        n = int(g_rng.integers(5, 80))
        mask = g_rng.random((n, n)) < g_rng.uniform(0.02, 0.2)
        np.fill_diagonal(mask, False)
        edges = np.argwhere(mask)
        g = DiGraph(n, edges, g_rng.uniform(0.1, 5.0, len(edges)), np.zeros((n, 1)))
        a, b = all_pairs_shortest(g), floyd_warshall(g.adjacency())
        sp_inf_ok &= bool(np.array_equal(np.isinf(a), np.isinf(b)))
        fin = np.isfinite(a) & np.isfinite(b)
        sp_err = max(sp_err, float(np.max(np.abs(a[fin] - b[fin]))))
    elapsed = time.perf_counter() - t0
    ok = collapse_err <= 1e-12 and add_err <= 1e-10 and beta_err <= 1e-12 and grad_err <= 1e-4 and sp_inf_ok and sp_err <= 1e-12 and elapsed < 120
    criterion(
        10,
        ok,
        f"collapse {collapse_err:.1e}, GG additivity {add_err:.1e}, discount identity {beta_err:.1e}, "
        f"FD grad rel {grad_err:.1e}, shortest paths {sp_err:.1e}; {elapsed:.0f}s",
    )
    assert ok
