"""Distance heads: PQE variants and the baseline families."""

from __future__ import annotations

from .base import Head, to_distance
from .baselines import AsymDotHead, MetricHead, UnconstrainedHead, apply_transform
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import MLP, DeepLinearNet, EncoderConfig, deep_linear_collapse, hidden_width
from .pqe import (
    PQEHead,
    discounted_forward,
    expected_qparts,
    init_bases,
    pqe_gg_measures,
    pqe_lh_forward,
)

__all__ = [
    "Head",
    "to_distance",
    "AsymDotHead",
    "MetricHead",
    "UnconstrainedHead",
    "apply_transform",
    "load_checkpoint",
    "save_checkpoint",
    "MLP",
    "DeepLinearNet",
    "EncoderConfig",
    "deep_linear_collapse",
    "hidden_width",
    "PQEHead",
    "discounted_forward",
    "expected_qparts",
    "init_bases",
    "pqe_gg_measures",
    "pqe_lh_forward",
    "make_head",
    "FAMILIES",
]

FAMILIES = (
    "pqe-lh",
    "pqe-gg",
    "unconstrained-direct",
    "unconstrained-exp",
    "unconstrained-square",
    "unconstrained-direct-discounted",
    "unconstrained-sigmoid-discounted",
    "asym-dot-direct",
    "asym-dot-exp",
    "asym-dot-square",
    "asym-dot-direct-discounted",
    "asym-dot-sigmoid-discounted",
    "metric-euclidean",
    "metric-l1",
    "metric-spherical",
    "metric-mixture",
)


def make_head(
    family: str,
    input_dim: int,
    hidden=(128, 128),
    latent_dim: int = 32,
    seed: int = 0,
    pqe_output: str = "discounted",
    k: int = 4,
    deep_linear: bool = True,
    measure_mixing: bool | None = None,
) -> Head:
    """Build a head from its family tag.

    Encoder families use ``input_dim -> hidden -> latent_dim``; unconstrained
    networks use ``2 * input_dim -> hidden -> latent_dim -> 1``.
    """
    enc = EncoderConfig(input_dim, tuple(hidden), latent_dim)
    if family in ("pqe-lh", "pqe-gg"):
        return PQEHead(enc, family[4:], k=k, output=pqe_output, seed=seed, deep_linear=deep_linear, measure_mixing=measure_mixing)
    if family.startswith("unconstrained-"):
        return UnconstrainedHead(input_dim, (*hidden, latent_dim), family[len("unconstrained-") :], seed=seed)
    if family.startswith("asym-dot-"):
        return AsymDotHead(enc, family[len("asym-dot-") :], seed=seed)
    if family.startswith("metric-"):
        return MetricHead(enc, family[len("metric-") :], seed=seed)
    raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
