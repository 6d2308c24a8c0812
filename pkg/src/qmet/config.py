"""Experiment configuration: INI-style files mapped onto dataclasses.

A file has sections ``[experiment]``, ``[model]``, ``[train]``, ``[data]``,
``[gridworld]``, ``[failure]`` and ``[selftest]``; every key is optional and
unknown sections or keys are rejected.  Defaults depend on the experiment
kind, so a file only needs the values it changes::

    [experiment]
    kind = graph_bench
    seeds = 0, 1, 2

    [data]
    fractions = 0.1, 0.3
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields

__all__ = [
    "KINDS",
    "ExperimentSection",
    "ModelSection",
    "TrainSection",
    "DataSection",
    "GridworldSection",
    "FailureSection",
    "SelftestSection",
    "ExperimentConfig",
    "default_config",
    "load_config",
    "parse_config",
]

KINDS = ("numerics_selftest", "toy3", "verify_failure", "graph_bench", "gridworld", "decompose3")


@dataclass
class ExperimentSection:
    kind: str = "graph_bench"
    seeds: tuple = (0, 1, 2)
    families: tuple = ("pqe-lh", "unconstrained-direct")
    checkpoints: bool = True


@dataclass
class ModelSection:
    hidden: tuple = (128, 128)
    latent_dim: int = 32
    k: int = 4
    pqe_output: str = "discounted"
    deep_linear: bool = True


@dataclass
class TrainSection:
    gamma: float = 0.9
    batch: int = 128
    epochs: int = 300
    lr: float = 1e-3
    reg_weight: float = 0.0
    loss_space: str = "discounted"
    schedule: str = "cosine"
    eval_every: int = 0


@dataclass
class DataSection:
    graph: str = "dense"
    n: int = 50
    d: int = 16
    graph_seed: int = 0
    mode: str = "uniform"
    fractions: tuple = (0.3,)
    k_train: int = 2
    k_test: int = 2
    m_train: int = 0  # 0: all candidates
    m_test: int = 0
    blocks: int = 5
    count: int = 200  # decompose3 sample count


@dataclass
class GridworldSection:
    layout: str = "three_rooms"
    transitions: tuple = (2000,)
    epsilon: float = 0.6
    max_traj_steps: int = 200
    episodes: int = 50
    max_plan_steps: int = 300
    target_sync: int = 100
    pad_dim: int = 18
    groundtruth_baseline: bool = True


@dataclass
class FailureSection:
    c_list: tuple = (1.0, 10.0, 100.0, 1000.0)
    runs: int = 5
    width: int = 1024
    pqe_control: bool = True


@dataclass
class SelftestSection:
    grid: tuple = (0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0)
    tol: float = 1e-9
    grad_rel_tol: float = 1e-5
    perturb: float = 0.0  # negative control: added to every probability


@dataclass
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    data: DataSection = field(default_factory=DataSection)
    gridworld: GridworldSection = field(default_factory=GridworldSection)
    failure: FailureSection = field(default_factory=FailureSection)
    selftest: SelftestSection = field(default_factory=SelftestSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def default_config(kind: str) -> ExperimentConfig:
    """Desk-scale defaults for one experiment kind."""
    if kind not in KINDS:
        raise ValueError(f"unknown experiment kind {kind!r}; expected one of {KINDS}")
    cfg = ExperimentConfig()
    cfg.experiment.kind = kind
    if kind == "toy3":
        cfg.experiment.seeds = tuple(range(20))
        cfg.experiment.families = ("pqe-lh", "metric-euclidean", "unconstrained-direct")
        cfg.experiment.checkpoints = False
        cfg.model.hidden = (64, 64)
        cfg.model.latent_dim = 16
        cfg.model.pqe_output = "raw"
        cfg.train = TrainSection(batch=8, epochs=1000, lr=1e-3, loss_space="raw", schedule="constant")
    elif kind == "verify_failure":
        cfg.experiment.seeds = (0,)
        cfg.experiment.families = ("unconstrained-direct",)
        cfg.experiment.checkpoints = False
        cfg.model.pqe_output = "raw"
        cfg.train = TrainSection(batch=4, epochs=2000, lr=1e-3, loss_space="raw", schedule="cosine")
    elif kind == "gridworld":
        cfg.model.latent_dim = 64
        cfg.train = TrainSection(gamma=0.95, batch=256, epochs=500, lr=1e-3)
    elif kind in ("numerics_selftest", "decompose3"):
        cfg.experiment.seeds = (0,)
        cfg.experiment.families = ()
        cfg.experiment.checkpoints = False
    return cfg


def _convert(raw: str, default, name: str):
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if isinstance(default, tuple):
        items = [s.strip() for s in raw.split(",") if s.strip()]
        if name.endswith(".families"):
            return tuple(items)
        kind = float if any(isinstance(v, float) for v in default) or name.endswith((".fractions", ".c_list", ".grid")) else int
        try:
            return tuple(kind(s) for s in items)
        except ValueError:
            raise ValueError(f"{name}: cannot parse {raw!r} as a list of {kind.__name__}") from None
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config(text: str, kind: str | None = None) -> ExperimentConfig:
    """Parse a config; ``kind`` supplies the experiment when the file omits it."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read_string(text)
    file_kind = parser.get("experiment", "kind", fallback=None)
    if file_kind is not None and kind is not None and file_kind.strip() != kind:
        raise ValueError(f"config is for {file_kind.strip()!r}, not {kind!r}")
    kind = (file_kind or kind or "graph_bench").strip()
    cfg = default_config(kind)
    for section in parser.sections():
        if section not in {f.name for f in fields(ExperimentConfig)}:
            raise ValueError(f"unknown config section [{section}]")
        target = getattr(cfg, section)
        allowed = {f.name for f in fields(target)}
        for key, raw in parser.items(section):
            if key not in allowed:
                raise ValueError(f"unknown key {key!r} in [{section}]; allowed: {sorted(allowed)}")
            setattr(target, key, _convert(raw, getattr(target, key), f"{section}.{key}"))
    return cfg


def load_config(path, kind: str | None = None) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read(), kind)
