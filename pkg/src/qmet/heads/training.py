"""Regression of distance heads onto discounted (or raw) distances."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..analysis import distortion, violation
from ..optim import Adam, cosine_lr
from ..rng import stream
from .base import Head

__all__ = ["TrainConfig", "TrainResult", "triangle_regularizer", "sample_triples", "train_head", "evaluate_head"]


@dataclass
class TrainConfig:
    gamma: float = 0.9
    batch: int = 256
    epochs: int = 300
    lr: float = 1e-3
    reg_weight: float = 0.0
    loss_space: str = "discounted"  # or "raw"
    schedule: str = "cosine"  # or "constant"
    eval_every: int = 0  # 0: only after the last epoch
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.loss_space not in ("discounted", "raw"):
            raise ValueError(f"unknown loss space {self.loss_space!r}")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.batch < 1 or self.epochs < 0 or self.lr <= 0 or self.reg_weight < 0:
            raise ValueError("batch >= 1, epochs >= 0, lr > 0 and reg_weight >= 0 required")


@dataclass
class TrainResult:
    head: Head
    history: list = field(default_factory=list)
    losses: list = field(default_factory=list)


def sample_triples(n_nodes: int, count: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, n_nodes, size=(count, 3))


def triangle_regularizer(head: Head, x, triples, gamma: float) -> ad.Tensor:
    """Mean of ``max(0, g(a,b) * g(b,c) - g(a,c))^2`` with ``g`` the discounted output."""
    t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    i = np.concatenate([t[:, 0], t[:, 1], t[:, 0]])
    j = np.concatenate([t[:, 1], t[:, 2], t[:, 2]])
    g = head.discounted(x, i, j, gamma)
    m = len(t)
    ab, bc, ac = g[:m], g[m : 2 * m], g[2 * m :]
    return ad.mean(ad.square(ad.relu(ab * bc - ac)))


def _loss(head, x, i, j, target_d, cfg) -> ad.Tensor:
    if cfg.loss_space == "raw":
        if head.output != "raw":
            raise ValueError("raw-space loss needs a head with raw output")
        return ad.mean(ad.square(head.forward(x, i, j) - target_d))
    with np.errstate(over="ignore"):
        target = np.where(np.isinf(target_d), 0.0, cfg.gamma ** np.where(np.isinf(target_d), 0.0, target_d))
    return ad.mean(ad.square(head.discounted(x, i, j, cfg.gamma) - target))


def evaluate_head(head: Head, dataset, gamma: float, with_violation: bool = True) -> dict:
    """Discounted train/test MSE, distortion on the training pairs and violation."""
    x = dataset.features
    out = {}
    for split in ("train", "test"):
        i, j, d = (getattr(dataset, f"{split}_{c}") for c in "ijd")
        if len(i) == 0:
            out[f"{split}_mse"] = math.nan
            continue
        pred = head.discounted(x, i, j, gamma).data
        out[f"{split}_mse"] = float(np.mean((pred - dataset.discount(d, gamma)) ** 2))
    n = dataset.n
    table = head.distance_table(x, gamma)
    truth = np.zeros((n, n))
    truth[dataset.train_i, dataset.train_j] = dataset.train_d
    out["distortion"] = distortion(table, truth, dataset.train_pairs) if len(dataset.train_i) else math.nan
    if with_violation:
        with np.errstate(invalid="ignore", divide="ignore"):
            out["violation"] = violation(table)
    return out


def train_head(head: Head, dataset, cfg: TrainConfig, with_violation: bool = True) -> TrainResult:
    """Adam on MSE of discounted distances, plus an optional triangle regularizer.

    Each epoch is one shuffled pass over the training pairs in mini-batches.
    Raises ``FloatingPointError`` as soon as the loss stops being finite.
    """
    rng = stream(cfg.seed, "train", head.family)
    x = dataset.features
    m = len(dataset.train_i)
    steps_per_epoch = max(1, math.ceil(m / cfg.batch))
    total = steps_per_epoch * cfg.epochs
    opt = Adam(head.params, cfg.lr)
    result = TrainResult(head)
    start = time.perf_counter()
    step = 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(m)
        for s in range(steps_per_epoch):
            idx = perm[s * cfg.batch : (s + 1) * cfg.batch]
            i, j, d = dataset.train_i[idx], dataset.train_j[idx], dataset.train_d[idx]
            try:
                loss = _loss(head, x, i, j, d, cfg)
                if cfg.reg_weight > 0:
                    triples = sample_triples(dataset.n, max(1, len(idx) // 3), rng)
                    loss = loss + cfg.reg_weight * triangle_regularizer(head, x, triples, cfg.gamma)
            except FloatingPointError as e:
                raise FloatingPointError(f"non-finite value at epoch {epoch}, step {step}: {e}") from e
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"loss became {loss.data} at epoch {epoch}, step {step}")
            grads = ad.backward(loss, head.params)
            lr = cosine_lr(step, total, cfg.lr) if cfg.schedule == "cosine" else cfg.lr
            opt.step(grads, lr=lr)
            result.losses.append(float(loss.data))
            step += 1
        last = epoch == cfg.epochs - 1
        if last or (cfg.eval_every and (epoch + 1) % cfg.eval_every == 0):
            row = {"epoch": epoch + 1, **evaluate_head(head, dataset, cfg.gamma, with_violation)}
            row["wall_clock"] = time.perf_counter() - start
            result.history.append(row)
    return result
