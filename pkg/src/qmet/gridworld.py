"""Grid world with one-way doors, offline data and goal-conditioned Q-learning.

Elements of the learned quasimetric are state-action pairs ``(s, a)``,
indexed ``4 * s + a``.  The distance from ``(s, a)`` to ``(g, b)`` is the
number of actions needed to take ``a`` in ``s`` and later take ``b`` in
``g``; it is 0 only for identical pairs.
"""

from __future__ import annotations

import copy
import csv
import math
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .graphs import DiGraph, all_pairs_shortest
from .heads.base import Head
from .heads.training import sample_triples, triangle_regularizer
from .optim import Adam, cosine_lr
from .rng import stream

__all__ = [
    "ACTIONS",
    "GridWorld",
    "Transition",
    "OfflineDataset",
    "QLearnConfig",
    "QLearnResult",
    "load_layout",
    "state_distances",
    "groundtruth_distances",
    "TableHead",
    "collect_offline",
    "collect_transitions",
    "q_learning_train",
    "plan_table",
    "greedy_plan",
    "sample_episodes",
    "evaluate_success",
    "write_transitions_csv",
    "read_transitions_csv",
]

ACTIONS = ("up", "down", "left", "right")
_MOVES = ((0, -1), (0, 1), (-1, 0), (1, 0))
_DOOR_CHARS = {"^": 0, "v": 1, "<": 2, ">": 3}


@dataclass(frozen=True)
class GridWorld:
    """Cells are ``(x, y)`` with ``x`` the column; ``y`` grows downwards."""

    width: int
    height: int
    walls: frozenset
    doors: dict  # cell -> the only action that may enter or leave it
    start: tuple  # start-region cells
    goals: tuple  # goal-region cells
    pad_dim: int = 18

    def __post_init__(self):
        cells = set(self.walls) | set(self.doors) | set(self.start) | set(self.goals)
        for x, y in cells:
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise ValueError(f"cell {(x, y)} lies outside the {self.width}x{self.height} grid")
        if set(self.doors) & set(self.walls):
            raise ValueError("a door cannot be a wall")
        if self.pad_dim < 2:
            raise ValueError("state features need at least the two coordinates")
        states = [(x, y) for y in range(self.height) for x in range(self.width) if (x, y) not in self.walls]
        object.__setattr__(self, "states", tuple(states))
        object.__setattr__(self, "_index", {c: k for k, c in enumerate(states)})

    @classmethod
    def from_text(cls, text: str, pad_dim: int = 18) -> "GridWorld":
        rows = [ln.rstrip("\n") for ln in text.strip("\n").splitlines()]
        width, height = max(map(len, rows)), len(rows)
        walls, doors, start, goals = set(), {}, [], []
        for y, row in enumerate(rows):
            for x in range(width):
                ch = row[x] if x < len(row) else "#"
                if ch == "#":
                    walls.add((x, y))
                elif ch in _DOOR_CHARS:
                    doors[(x, y)] = _DOOR_CHARS[ch]
                elif ch == "S":
                    start.append((x, y))
                elif ch == ".":
                    goals.append((x, y))
                else:
                    raise ValueError(f"unknown layout character {ch!r} at {(x, y)}")
        return cls(width, height, frozenset(walls), doors, tuple(start), tuple(goals), pad_dim)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_sa(self) -> int:
        return 4 * self.n_states

    def index(self, cell) -> int:
        return self._index[tuple(cell)]

    def step(self, cell, action: int) -> tuple:
        """Deterministic move; walls, grid edges and wrong-way doors leave the agent in place."""
        x, y = cell
        dx, dy = _MOVES[action]
        nxt = (x + dx, y + dy)
        if not (0 <= nxt[0] < self.width and 0 <= nxt[1] < self.height) or nxt in self.walls:
            return (x, y)
        if self.doors.get((x, y), action) != action or self.doors.get(nxt, action) != action:
            return (x, y)
        return nxt

    def next_index(self) -> np.ndarray:
        """``(n_states, 4)`` table of successor state indices."""
        return np.array([[self.index(self.step(c, a)) for a in range(4)] for c in self.states])

    def state_features(self) -> np.ndarray:
        xy = np.array(self.states, dtype=np.float64)
        scale = np.array([max(self.width - 1, 1), max(self.height - 1, 1)], dtype=np.float64)
        out = np.zeros((self.n_states, self.pad_dim))
        out[:, :2] = 2.0 * xy / scale - 1.0
        return out

    def sa_features(self) -> np.ndarray:
        """State features followed by a one-hot action, one row per state-action pair."""
        s = np.repeat(self.state_features(), 4, axis=0)
        a = np.tile(np.eye(4), (self.n_states, 1))
        return np.concatenate([s, a], axis=1)


def load_layout(name_or_path="three_rooms", pad_dim: int = 18) -> GridWorld:
    """Read a layout from a file path or from the packaged layouts by name."""
    p = Path(name_or_path)
    if p.suffix == ".txt" and p.exists():
        text = p.read_text()
    else:
        text = resources.files("qmet").joinpath("layouts", f"{name_or_path}.txt").read_text()
    return GridWorld.from_text(text, pad_dim)


# ---------------------------------------------------------------------------
# ground truth


def state_distances(env: GridWorld) -> np.ndarray:
    """Fewest actions between states (``inf`` if unreachable)."""
    nxt = env.next_index()
    edges = {(s, int(t)) for s in range(env.n_states) for t in nxt[s] if t != s}
    e = np.array(sorted(edges), dtype=np.int64).reshape(-1, 2)
    return all_pairs_shortest(DiGraph(env.n_states, e, np.ones(len(e)), np.zeros((env.n_states, 1))))


def groundtruth_distances(env: GridWorld) -> np.ndarray:
    """Distance table over state-action pairs (shortest paths, unit cost per action)."""
    ds = state_distances(env)
    nxt = env.next_index().reshape(-1)  # successor state of each (s, a)
    goal_state = np.repeat(np.arange(env.n_states), 4)
    d = 1.0 + ds[nxt][:, goal_state]
    np.fill_diagonal(d, 0.0)
    return d


class TableHead(Head):
    """A fixed distance table exposed through the head interface."""

    family = "groundtruth"
    output = "raw"

    def __init__(self, table):
        self.table = np.asarray(table, dtype=np.float64)
        self.params = {}

    def forward(self, x, i, j):
        return ad.tensor(self.table[np.asarray(i), np.asarray(j)])


# ---------------------------------------------------------------------------
# offline data


@dataclass(frozen=True)
class Transition:
    s: tuple
    a: int
    s_next: tuple
    cost: float = 1.0


@dataclass
class OfflineDataset:
    trajectories: list = field(default_factory=list)

    def __len__(self):
        return sum(len(t) for t in self.trajectories)

    def arrays(self, env: GridWorld) -> dict:
        """Flat index arrays: state, action, next state, trajectory id, step."""
        rows = [
            (env.index(tr.s), tr.a, env.index(tr.s_next), k, t)
            for k, traj in enumerate(self.trajectories)
            for t, tr in enumerate(traj)
        ]
        a = np.array(rows, dtype=np.int64).reshape(-1, 5)
        return {"s": a[:, 0], "a": a[:, 1], "s_next": a[:, 2], "traj": a[:, 3], "t": a[:, 4]}

    def validate(self, env: GridWorld) -> None:
        for traj in self.trajectories:
            for tr in traj:
                if env.step(tr.s, tr.a) != tuple(tr.s_next):
                    raise ValueError(f"inconsistent transition {tr}")


def _rollout(env, dist, start, goal, epsilon, max_steps, rng):
    nxt = env.next_index()
    s, g = env.index(start), env.index(goal)
    traj = []
    while s != g and len(traj) < max_steps:
        if rng.random() < epsilon:
            a = int(rng.integers(4))
        else:
            cost = dist[nxt[s], g]
            a = int(rng.choice(np.flatnonzero(cost == cost.min())))
        traj.append(Transition(env.states[s], a, env.states[int(nxt[s, a])]))
        s = int(nxt[s, a])
    return traj


def collect_offline(env: GridWorld, epsilon: float = 0.6, n_traj: int = 10, seed: int = 0, max_steps: int = 200) -> OfflineDataset:
    """Epsilon-greedy rollouts toward goals drawn from the environment's goal region."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    rng = stream(seed, "gridworld", "collect")
    dist = state_distances(env)
    trajs = []
    for _ in range(n_traj):
        start = env.start[int(rng.integers(len(env.start)))]
        goal = env.goals[int(rng.integers(len(env.goals)))]
        trajs.append(_rollout(env, dist, start, goal, epsilon, max_steps, rng))
    return OfflineDataset(trajs)


def collect_transitions(env: GridWorld, n_transitions: int, epsilon: float = 0.6, seed: int = 0, max_steps: int = 200) -> OfflineDataset:
    """Roll out trajectories until ``n_transitions`` are gathered (the last one is truncated)."""
    rng = stream(seed, "gridworld", "collect")
    dist = state_distances(env)
    trajs, total = [], 0
    while total < n_transitions:
        start = env.start[int(rng.integers(len(env.start)))]
        goal = env.goals[int(rng.integers(len(env.goals)))]
        traj = _rollout(env, dist, start, goal, epsilon, max_steps, rng)[: n_transitions - total]
        if traj:
            trajs.append(traj)
            total += len(traj)
    return OfflineDataset(trajs)


def write_transitions_csv(path, data: OfflineDataset) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["traj", "t", "x", "y", "action", "x_next", "y_next", "cost"])
        for k, traj in enumerate(data.trajectories):
            for t, tr in enumerate(traj):
                w.writerow([k, t, *tr.s, ACTIONS[tr.a], *tr.s_next, tr.cost])


def read_transitions_csv(path) -> OfflineDataset:
    trajs: dict[int, list] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            tr = Transition(
                (int(row["x"]), int(row["y"])),
                ACTIONS.index(row["action"]),
                (int(row["x_next"]), int(row["y_next"])),
                float(row["cost"]),
            )
            trajs.setdefault(int(row["traj"]), []).append((int(row["t"]), tr))
    return OfflineDataset([[tr for _, tr in sorted(v)] for _, v in sorted(trajs.items())])


# ---------------------------------------------------------------------------
# Q-learning


@dataclass
class QLearnConfig:
    gamma: float = 0.95
    batch: int = 256
    epochs: int = 200
    lr: float = 1e-3
    target_sync: int = 100
    future_fraction: float = 0.5
    reg_weight: float = 0.0
    schedule: str = "cosine"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 <= self.future_fraction <= 1.0:
            raise ValueError("future_fraction must lie in [0, 1]")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")


@dataclass
class QLearnResult:
    head: Head
    losses: list = field(default_factory=list)
    wall_clock: float = 0.0


def sample_goals(arr: dict, idx: np.ndarray, future_fraction: float, rng) -> np.ndarray:
    """Goal state-action index per transition: a future state of the same trajectory
    (current state included) or a random dataset state, each with a random action."""
    n = len(arr["s"])
    # trajectory end positions in the flat arrays
    ends = np.r_[np.flatnonzero(np.diff(arr["traj"])), n - 1]
    end_of = ends[np.searchsorted(ends, idx)]
    future = rng.random(len(idx)) < future_fraction
    k_future = idx + np.floor(rng.random(len(idx)) * (end_of - idx + 2)).astype(np.int64)
    # k_future == end_of + 1 stands for the final next-state of the trajectory
    fut_state = np.where(k_future > end_of, arr["s_next"][end_of], arr["s"][np.minimum(k_future, n - 1)])
    any_state = arr["s"][rng.integers(0, n, size=len(idx))]
    g_state = np.where(future, fut_state, any_state)
    return 4 * g_state + rng.integers(0, 4, size=len(idx))


def q_learning_targets(target_head: Head, x, sa, s_next, goal, gamma: float) -> np.ndarray:
    """``1`` when ``sa`` is the goal, else ``gamma * max_b Q((s', b), goal)``, clipped to [0, 1]."""
    nb = (4 * s_next[:, None] + np.arange(4)[None, :]).reshape(-1)
    q = target_head.discounted(x, nb, np.repeat(goal, 4), gamma).data.reshape(-1, 4)
    t = np.clip(gamma * q.max(axis=1), 0.0, 1.0)
    return np.where(sa == goal, 1.0, t)


def q_learning_train(head: Head, env: GridWorld, data: OfflineDataset, cfg: QLearnConfig) -> QLearnResult:
    """Fit discounted distances to bootstrapped targets from a frozen copy of the head."""
    rng = stream(cfg.seed, "qlearn", head.family)
    x = env.sa_features()
    arr = data.arrays(env)
    n = len(arr["s"])
    sa = 4 * arr["s"] + arr["a"]
    steps_per_epoch = max(1, math.ceil(n / cfg.batch))
    total = steps_per_epoch * cfg.epochs
    target = copy.deepcopy(head)
    opt = Adam(head.params, cfg.lr)
    result = QLearnResult(head)
    start = time.perf_counter()
    step = 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        for s in range(steps_per_epoch):
            idx = perm[s * cfg.batch : (s + 1) * cfg.batch]
            goal = sample_goals(arr, idx, cfg.future_fraction, rng)
            y = q_learning_targets(target, x, sa[idx], arr["s_next"][idx], goal, cfg.gamma)
            loss = ad.mean(ad.square(head.discounted(x, sa[idx], goal, cfg.gamma) - y))
            if cfg.reg_weight > 0:
                tri = sample_triples(env.n_sa, max(1, len(idx) // 3), rng)
                loss = loss + cfg.reg_weight * triangle_regularizer(head, x, tri, cfg.gamma)
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"Q-learning loss became {loss.data} at epoch {epoch}, step {step}")
            lr = cosine_lr(step, total, cfg.lr) if cfg.schedule == "cosine" else cfg.lr
            opt.step(ad.backward(loss, head.params), lr=lr)
            result.losses.append(float(loss.data))
            step += 1
            if step % cfg.target_sync == 0:
                target.load_state_dict(head.state_dict())
    result.wall_clock = time.perf_counter() - start
    return result


# ---------------------------------------------------------------------------
# planning and evaluation


def plan_table(head: Head, env: GridWorld, gamma: float = 0.95) -> np.ndarray:
    """Predicted distances from every state-action pair to every goal state.

    A state goal ``g`` is scored as ``-1 + mean_b d((s, a), (g, b))``.
    """
    sa_table = head.distance_table(env.sa_features(), gamma)
    return -1.0 + sa_table.reshape(env.n_sa, env.n_states, 4).mean(axis=2)


def greedy_plan(head_or_table, env: GridWorld, start, goal_state, max_steps: int = 300, gamma: float = 0.95):
    """Always take the action with the smallest predicted distance to the goal.

    Returns ``(success, path)`` where ``path`` lists the visited cells.
    """
    table = head_or_table if isinstance(head_or_table, np.ndarray) else plan_table(head_or_table, env, gamma)
    nxt = env.next_index()
    s, g = env.index(start), env.index(goal_state)
    path = [env.states[s]]
    for _ in range(max_steps):
        if s == g:
            return True, path
        scores = table[4 * s : 4 * s + 4, g]
        s = int(nxt[s, int(np.argmin(scores))])
        path.append(env.states[s])
    return s == g, path


def sample_episodes(env: GridWorld, n_episodes: int = 50, seed: int = 0) -> list:
    """(start, goal) cells fixed by the seed alone."""
    rng = stream(seed, "gridworld", "episodes")
    return [
        (env.start[int(rng.integers(len(env.start)))], env.goals[int(rng.integers(len(env.goals)))])
        for _ in range(n_episodes)
    ]


def evaluate_success(head: Head, env: GridWorld, n_episodes: int = 50, seed: int = 0, gamma: float = 0.95, max_steps: int = 300) -> float:
    episodes = sample_episodes(env, n_episodes, seed)
    if not episodes:
        return math.nan
    table = plan_table(head, env, gamma)
    wins = sum(greedy_plan(table, env, s, g, max_steps)[0] for s, g in episodes)
    return wins / len(episodes)
