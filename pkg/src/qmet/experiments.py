"""Experiment commands behind the ``qmet`` CLI.

Every command takes an :class:`ExperimentConfig` and an output directory,
writes ``metrics.csv`` (versioned schema, header always present) and
``report.jsonl`` (one JSON object per run, then summary objects) and returns
an exit status.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .analysis import decompose_three_node, quasipartitions_3, random_quasimetric_3
from .config import ExperimentConfig
from .graphs import (
    BlockGraphConfig,
    GraphGenConfig,
    PairDataset,
    all_pairs_shortest,
    failure_construction,
    generate_block_digraph,
    generate_random_digraph,
    make_pair_dataset,
    toy_three_node,
)
from .gridworld import (
    QLearnConfig,
    TableHead,
    collect_transitions,
    evaluate_success,
    groundtruth_distances,
    load_layout,
    q_learning_train,
)
from .heads import make_head, save_checkpoint
from .heads.baselines import UnconstrainedHead
from .heads.training import TrainConfig, train_head
from .rng import stream
from .special import poisson_race_grad, poisson_race_oracle, poisson_race_prob

__all__ = [
    "SCHEMA_VERSION",
    "RunOutput",
    "GRAPH_KINDS",
    "build_graph",
    "cmd_numerics_selftest",
    "cmd_toy3",
    "cmd_verify_failure",
    "cmd_graph_bench",
    "cmd_gridworld",
    "cmd_decompose3",
    "COMMANDS",
]

SCHEMA_VERSION = 1
TOY_RANGE = (28.0, 31.0)


@dataclass
class RunOutput:
    """Collects metric rows and report objects, then writes them in a fixed order."""

    out: Path
    columns: list
    sort_key: tuple = ()
    rows: list = field(default_factory=list)
    reports: list = field(default_factory=list)

    def __post_init__(self):
        self.out = Path(self.out)
        self.out.mkdir(parents=True, exist_ok=True)

    def row(self, **values) -> None:
        unknown = set(values) - set(self.columns)
        if unknown:
            raise KeyError(f"unknown metric columns {sorted(unknown)}")
        self.rows.append(values)

    def report(self, obj: dict) -> None:
        self.reports.append(obj)

    def checkpoint(self, name: str, head) -> Path:
        path = self.out / "checkpoints" / f"{name}.qmet"
        path.parent.mkdir(exist_ok=True)
        save_checkpoint(path, head.state_dict())
        return path

    def close(self) -> None:
        rows = sorted(self.rows, key=lambda r: tuple(r.get(k, "") for k in self.sort_key)) if self.sort_key else self.rows
        with open(self.out / "metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["schema_version", *self.columns])
            for r in rows:
                w.writerow([SCHEMA_VERSION, *[_fmt(r.get(c, "")) for c in self.columns]])
        with open(self.out / "report.jsonl", "w") as fh:
            for obj in self.reports:
                fh.write(json.dumps(_jsonable(obj), sort_keys=True) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _head(cfg: ExperimentConfig, family: str, input_dim: int, seed: int):
    m = cfg.model
    return make_head(family, input_dim, m.hidden, m.latent_dim, seed, m.pqe_output, m.k, m.deep_linear)


def _train_cfg(cfg: ExperimentConfig, seed: int, head=None) -> TrainConfig:
    t = cfg.train
    loss_space = t.loss_space
    if head is not None and head.output == "discounted":
        loss_space = "discounted"
    return TrainConfig(t.gamma, t.batch, t.epochs, t.lr, t.reg_weight, loss_space, t.schedule, t.eval_every, seed)


# ---------------------------------------------------------------------------
# numerics


def _race_grad_oracle(a: float, b: float) -> tuple[float, float]:
    """dP/dmu1 = -P[X = Y] and dP/dmu2 = P[X = Y + 1] for Poisson X, Y."""
    if a == 0.0:
        return -math.exp(-b), 0.0
    if b == 0.0:
        return -math.exp(-a), a * math.exp(-a)
    return -float(stats.skellam.pmf(0, a, b)), float(stats.skellam.pmf(1, a, b))


def cmd_numerics_selftest(cfg: ExperimentConfig, out) -> int:
    s = cfg.selftest
    cols = ["mu1", "mu2", "prob", "oracle", "abs_err", "d_mu1", "d_mu2", "grad_rel_err", "ok"]
    run = RunOutput(out, cols)
    status = 0
    for a in s.grid:
        for b in s.grid:
            p = float(poisson_race_prob(a, b)) + s.perturb
            o = poisson_race_oracle(a, b, 1e-12)
            d1, d2 = poisson_race_grad(a, b)
            r1, r2 = _race_grad_oracle(a, b)
            rel = max(abs(d1 - r1) / max(abs(r1), 1e-300), abs(d2 - r2) / max(abs(r2), 1e-300) if r2 else abs(d2))
            ok = abs(p - o) <= s.tol and rel <= s.grad_rel_tol
            run.row(mu1=a, mu2=b, prob=p, oracle=o, abs_err=abs(p - o), d_mu1=float(d1), d_mu2=float(d2), grad_rel_err=rel, ok=int(ok))
            if not ok:
                status = 1
                run.report({"failure": {"mu1": a, "mu2": b, "prob": p, "oracle": o, "grad_rel_err": rel}})
    run.report({"experiment": "numerics_selftest", "rows": len(run.rows), "status": status})
    run.close()
    return status


def cmd_decompose3(cfg: ExperimentConfig, out) -> int:
    count = cfg.data.count
    seed = cfg.experiment.seeds[0] if cfg.experiment.seeds else 0
    run = RunOutput(out, ["sample", "residual", "n_active"])
    q = quasipartitions_3()
    worst = 0.0
    for k, s in enumerate(stream(seed, "decompose3").integers(0, 2**31, size=count)):
        d6 = random_quasimetric_3(int(s))
        w = decompose_three_node(d6)
        res = float(np.max(np.abs(q.T @ w - d6)))
        worst = max(worst, res)
        run.row(sample=k, residual=res, n_active=int(np.sum(w > 0)))
    status = int(worst > 1e-7)
    run.report({"experiment": "decompose3", "count": count, "seed": seed, "max_residual": worst, "status": status})
    run.close()
    return status


# ---------------------------------------------------------------------------
# toy 3-node space


def toy_dataset(gamma: float) -> PairDataset:
    space, train = toy_three_node()
    p = train.pairs
    return PairDataset(space.features, p[:, 0], p[:, 1], space.dist[p[:, 0], p[:, 1]], [], [], [], gamma)


def cmd_toy3(cfg: ExperimentConfig, out) -> int:
    ds = toy_dataset(cfg.train.gamma)
    run = RunOutput(out, ["family", "seed", "train_mse", "heldout_pred", "in_range", "wall_clock"], ("family", "seed"))
    for family in cfg.experiment.families:
        preds, mses = [], []
        for seed in cfg.experiment.seeds:
            head = _head(cfg, family, 3, seed)
            res = train_head(head, ds, _train_cfg(cfg, seed, head), with_violation=False)
            pred = float(head.predict(ds.features, [0], [2], cfg.train.gamma)[0])
            mse = res.history[-1]["train_mse"] if res.history else _toy_mse(head, ds)
            ok = TOY_RANGE[0] <= pred <= TOY_RANGE[1]
            wall = res.history[-1]["wall_clock"] if res.history else 0.0
            run.row(family=family, seed=seed, train_mse=mse, heldout_pred=pred, in_range=int(ok), wall_clock=wall)
            run.report({"experiment": "toy3", "family": family, "seed": seed, "train_mse": mse, "heldout_pred": pred, "in_range": ok})
            preds.append(pred)
            mses.append(mse)
            if cfg.experiment.checkpoints:
                run.checkpoint(f"toy3_{family}_seed{seed}", head)
        if preds:
            inr = [TOY_RANGE[0] <= p <= TOY_RANGE[1] for p in preds]
            run.report(
                {
                    "summary": "toy3",
                    "family": family,
                    "runs": len(preds),
                    "in_range_rate": float(np.mean(inr)),
                    "median_train_mse": float(np.median(mses)),
                    "max_train_mse": float(np.max(mses)),
                    "valid_range": TOY_RANGE,
                }
            )
    run.close()
    return 0


def _toy_mse(head, ds) -> float:
    pred = head.discounted(ds.features, ds.train_i, ds.train_j, ds.gamma).data
    return float(np.mean((pred - ds.train_target) ** 2))


# ---------------------------------------------------------------------------
# failure construction


def _pattern_dataset(fc, pattern, gamma) -> PairDataset:
    t = np.array(pattern, dtype=np.float64)
    return PairDataset(fc.features, t[:, 0].astype(int), t[:, 1].astype(int), t[:, 2], [], [], [], gamma)


def cmd_verify_failure(cfg: ExperimentConfig, out) -> int:
    f = cfg.failure
    tcfg = cfg.train
    run = RunOutput(out, ["c", "pattern", "run", "train_mse", "heldout_pred"], ("c", "pattern", "run"))
    base_seed = cfg.experiment.seeds[0] if cfg.experiment.seeds else 0
    for c in f.c_list:
        fc = failure_construction(c)
        y, z = fc.test_pair
        means = {}
        for name, pattern in (("left", fc.left), ("right", fc.right)):
            ds = _pattern_dataset(fc, pattern, tcfg.gamma)
            preds = []
            for r in range(f.runs):
                seed = base_seed * 1000 + r
                head = UnconstrainedHead(6, (f.width,), "direct", seed=seed)
                tc = TrainConfig(tcfg.gamma, tcfg.batch, tcfg.epochs, tcfg.lr, 0.0, "raw", tcfg.schedule, 0, seed)
                train_head(head, ds, tc, with_violation=False)
                pred = float(head.forward(fc.features, [y], [z]).data[0])
                fit = head.forward(fc.features, ds.train_i, ds.train_j).data
                mse = float(np.mean((fit - ds.train_d) ** 2))
                run.row(c=float(c), pattern=name, run=r, train_mse=mse, heldout_pred=pred)
                preds.append(pred)
            means[name] = float(np.mean(preds)) if preds else math.nan
        denom = max(abs(means["left"]), abs(means["right"]))
        gap = abs(means["left"] - means["right"]) / denom if denom > 0 else 0.0
        summary = {
            "summary": "verify_failure",
            "c": float(c),
            "mean_left": means["left"],
            "mean_right": means["right"],
            "relative_gap": gap,
            "left_interval": fc.left_interval,
            "right_interval": fc.right_interval,
            "disjoint": fc.disjoint,
        }
        if f.pqe_control:
            summary["pqe_control"] = _pqe_control(cfg, fc, base_seed)
        run.report(summary)
    run.close()
    return 0


def _pqe_control(cfg, fc, seed) -> dict:
    """PQE-LH with raw output fitted to the left pattern."""
    ds = _pattern_dataset(fc, fc.left, cfg.train.gamma)
    head = make_head("pqe-lh", 6, (64, 64), 16, seed, "raw")
    t = cfg.train
    train_head(head, ds, TrainConfig(t.gamma, t.batch, t.epochs, t.lr, 0.0, "raw", t.schedule, 0, seed), with_violation=False)
    y, z = fc.test_pair
    pred = float(head.forward(fc.features, [y], [z]).data[0])
    fit = head.forward(fc.features, ds.train_i, ds.train_j).data
    lo, hi = fc.left_interval
    return {"heldout_pred": pred, "train_mse": float(np.mean((fit - ds.train_d) ** 2)), "in_left_interval": bool(lo <= pred <= hi)}


# ---------------------------------------------------------------------------
# random directed graphs

GRAPH_KINDS = {"dense": (0.15, 0.85), "sparse": (0.05, 0.85), "block": None}


def build_graph(kind: str, n: int = 50, d: int = 16, seed: int = 0, blocks: int = 5):
    """Distance table and node features of one benchmark graph."""
    if kind not in GRAPH_KINDS:
        raise ValueError(f"unknown graph kind {kind!r}; expected one of {sorted(GRAPH_KINDS)}")
    if kind == "block":
        if n % blocks:
            raise ValueError(f"n={n} is not divisible into {blocks} blocks")
        half = max(1, d // 2)
        cfg = BlockGraphConfig(
            GraphGenConfig(n=n // blocks, d=half, rho_un=0.18, rho_di=0.15),
            GraphGenConfig(n=blocks, d=d - half if d > 1 else 1, rho_un=0.22, rho_di=0.925),
            seed,
        )
        g, _ = generate_block_digraph(cfg)
    else:
        un, di = GRAPH_KINDS[kind]
        g = generate_random_digraph(GraphGenConfig(n=n, d=d, rho_un=un, rho_di=di, seed=seed))
    return all_pairs_shortest(g), g.features


def cmd_graph_bench(cfg: ExperimentConfig, out) -> int:
    dc = cfg.data
    table, feats = build_graph(dc.graph, dc.n, dc.d, dc.graph_seed, dc.blocks)
    cols = ["graph", "fraction", "family", "seed", "epoch", "train_mse", "test_mse", "distortion", "violation", "wall_clock"]
    run = RunOutput(out, cols, ("graph", "fraction", "family", "seed", "epoch"))
    groups: dict = {}
    for fraction in dc.fractions:
        for seed in cfg.experiment.seeds:
            ds = make_pair_dataset(
                table,
                feats,
                dc.mode,
                seed,
                fraction=fraction,
                k_train=dc.k_train,
                k_test=dc.k_test,
                m_train=dc.m_train or None,
                m_test=dc.m_test or None,
                gamma=cfg.train.gamma,
            )
            for family in cfg.experiment.families:
                head = _head(cfg, family, feats.shape[1], seed)
                res = train_head(head, ds, _train_cfg(cfg, seed, head))
                for h in res.history:
                    run.row(graph=dc.graph, fraction=float(fraction), family=family, seed=seed, **h)
                last = res.history[-1] if res.history else {}
                run.report({"experiment": "graph_bench", "graph": dc.graph, "fraction": fraction, "family": family, "seed": seed, **last})
                groups.setdefault((fraction, family), []).append(last)
                if cfg.experiment.checkpoints:
                    run.checkpoint(f"graph_{dc.graph}_{fraction:g}_{family}_seed{seed}", head)
    for (fraction, family), lasts in groups.items():
        if lasts and lasts[0]:
            run.report(
                {
                    "summary": "graph_bench",
                    "graph": dc.graph,
                    "fraction": fraction,
                    "family": family,
                    "median_test_mse": float(np.median([x["test_mse"] for x in lasts])),
                    "max_violation": float(np.max([x["violation"] for x in lasts])),
                }
            )
    run.close()
    return 0


# ---------------------------------------------------------------------------
# grid world


def cmd_gridworld(cfg: ExperimentConfig, out) -> int:
    gw = cfg.gridworld
    env = load_layout(gw.layout, gw.pad_dim)
    t = cfg.train
    cols = ["family", "transitions", "seed", "epoch", "final_loss", "success_rate", "wall_clock"]
    run = RunOutput(out, cols, ("family", "transitions", "seed"))
    if gw.groundtruth_baseline:
        for seed in cfg.experiment.seeds:
            rate = evaluate_success(TableHead(groundtruth_distances(env)), env, gw.episodes, seed, t.gamma, gw.max_plan_steps)
            run.row(family="groundtruth", transitions=0, seed=seed, epoch=0, final_loss=0.0, success_rate=rate, wall_clock=0.0)
            run.report({"experiment": "gridworld", "family": "groundtruth", "seed": seed, "success_rate": rate})
    rates: dict = {}
    for size in gw.transitions:
        for seed in cfg.experiment.seeds:
            data = collect_transitions(env, size, gw.epsilon, seed, gw.max_traj_steps)
            for family in cfg.experiment.families:
                head = _head(cfg, family, env.sa_features().shape[1], seed)
                qc = QLearnConfig(t.gamma, t.batch, t.epochs, t.lr, gw.target_sync, 0.5, t.reg_weight, t.schedule, seed)
                res = q_learning_train(head, env, data, qc)
                rate = evaluate_success(head, env, gw.episodes, seed, t.gamma, gw.max_plan_steps)
                final = res.losses[-1] if res.losses else math.nan
                run.row(family=family, transitions=size, seed=seed, epoch=t.epochs, final_loss=final, success_rate=rate, wall_clock=res.wall_clock)
                run.report({"experiment": "gridworld", "family": family, "transitions": size, "seed": seed, "success_rate": rate, "final_loss": final})
                rates.setdefault((size, family), []).append(rate)
                if cfg.experiment.checkpoints:
                    run.checkpoint(f"gridworld_{family}_{size}_seed{seed}", head)
    for (size, family), r in rates.items():
        run.report({"summary": "gridworld", "family": family, "transitions": size, "mean_success_rate": float(np.mean(r)), "rates": r})
    run.close()
    return 0


COMMANDS = {
    "numerics_selftest": cmd_numerics_selftest,
    "toy3": cmd_toy3,
    "verify_failure": cmd_verify_failure,
    "graph_bench": cmd_graph_bench,
    "gridworld": cmd_gridworld,
    "decompose3": cmd_decompose3,
}
