"""Baseline heads: unconstrained networks, asymmetric dot products, metric embeddings."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..rng import stream
from .base import Head
from .layers import MLP, EncoderConfig

__all__ = [
    "TRANSFORMS",
    "apply_transform",
    "transform_output_mode",
    "UnconstrainedHead",
    "AsymDotHead",
    "MetricHead",
    "METRIC_KINDS",
    "euclidean",
    "l1",
    "spherical",
]

# transform tag -> output mode
TRANSFORMS = {
    "direct": "raw",
    "exp": "raw",
    "square": "raw",
    "direct-discounted": "discounted",
    "sigmoid-discounted": "discounted",
}
METRIC_KINDS = ("euclidean", "l1", "spherical", "mixture")


def transform_output_mode(tag: str) -> str:
    try:
        return TRANSFORMS[tag]
    except KeyError:
        raise ValueError(f"unknown transform {tag!r}; expected one of {sorted(TRANSFORMS)}") from None


def apply_transform(f, tag: str) -> Tensor:
    """Map a scalar network output to a raw distance or a discounted distance."""
    transform_output_mode(tag)
    f = ad.as_tensor(f)
    if tag == "exp":
        return ad.exp(f)
    if tag == "square":
        return ad.square(f)
    if tag == "sigmoid-discounted":
        return ad.sigmoid(f)
    return f


class UnconstrainedHead(Head):
    """A scalar MLP on concatenated pair features."""

    def __init__(self, input_dim: int, hidden=(128, 128, 32), transform: str = "direct", seed: int = 0, name: str = "unc"):
        self.transform = transform
        self.output = transform_output_mode(transform)
        self.family = f"unconstrained-{transform}"
        self.net = MLP((2 * input_dim, *hidden, 1), stream(seed, name, "init"), f"{name}.net")
        self.params = dict(self.net.params)

    def forward(self, x, i, j) -> Tensor:
        x = np.asarray(x)
        pair = np.concatenate([x[np.asarray(i)], x[np.asarray(j)]], axis=-1)
        f = ad.reshape(self.net(pair), (len(pair),))
        return apply_transform(f, self.transform)


class AsymDotHead(Head):
    """``f(x, y) = enc1(x) . enc2(y)`` with two independent encoders."""

    def __init__(self, enc: EncoderConfig, transform: str = "direct", seed: int = 0, name: str = "dot"):
        self.transform = transform
        self.output = transform_output_mode(transform)
        self.family = f"asym-dot-{transform}"
        rng = stream(seed, name, "init")
        self.enc1 = MLP(enc.sizes, rng, f"{name}.enc1")
        self.enc2 = MLP(enc.sizes, rng, f"{name}.enc2")
        self.params = {**self.enc1.params, **self.enc2.params}

    def forward(self, x, i, j) -> Tensor:
        a = ad.take(self.enc1(x), np.asarray(i))
        b = ad.take(self.enc2(x), np.asarray(j))
        return apply_transform(ad.sum_(a * b, axis=-1), self.transform)


def euclidean(a, b) -> Tensor:
    return ad.norm(ad.as_tensor(a) - ad.as_tensor(b), axis=-1)


def l1(a, b) -> Tensor:
    return ad.sum_(ad.abs_(ad.as_tensor(a) - ad.as_tensor(b)), axis=-1)


def spherical(a, b, eps: float = 1e-12) -> Tensor:
    """Angle between ``a`` and ``b``; norms floored at ``eps``, cosine clamped to [-1, 1]."""
    a, b = ad.as_tensor(a), ad.as_tensor(b)
    na = ad.maximum(ad.norm(a, axis=-1), eps)
    nb = ad.maximum(ad.norm(b, axis=-1), eps)
    cos = ad.sum_(a * b, axis=-1) / (na * nb)
    # identical directions give an exact zero rather than arccos rounding noise
    same = np.all(a.data == b.data, axis=-1)
    return ad.arccos(ad.clamp(cos, -1.0, 1.0)) * (~same).astype(float)


class MetricHead(Head):
    """Symmetric distances on a shared encoder's latents.

    ``mixture`` splits the latent into a Euclidean half and two quarters for
    the l1 and (unscaled) spherical distances, combined with softmax weights
    of three learnable log-weights.
    """

    def __init__(self, enc: EncoderConfig, kind: str = "euclidean", seed: int = 0, name: str = "metric"):
        if kind not in METRIC_KINDS:
            raise ValueError(f"unknown metric kind {kind!r}")
        if kind == "mixture" and enc.latent_dim % 4:
            raise ValueError("mixture metric needs a latent dim divisible by 4")
        self.kind = kind
        self.output = "raw"
        self.family = f"metric-{kind}"
        self.name = name
        self.encoder = MLP(enc.sizes, stream(seed, name, "init"), f"{name}.enc")
        self.params = dict(self.encoder.params)
        self.d = enc.latent_dim
        if kind == "spherical":
            self.params[f"{name}.log_scale"] = ad.parameter(np.zeros(()), f"{name}.log_scale")
        if kind == "mixture":
            self.params[f"{name}.log_w"] = ad.parameter(np.zeros(3), f"{name}.log_w")

    def latent_distance(self, a: Tensor, b: Tensor) -> Tensor:
        if self.kind == "euclidean":
            return euclidean(a, b)
        if self.kind == "l1":
            return l1(a, b)
        if self.kind == "spherical":
            return spherical(a, b) * ad.exp(self.params[f"{self.name}.log_scale"])
        q = self.d // 4
        parts = [
            euclidean(a[:, : 2 * q], b[:, : 2 * q]),
            l1(a[:, 2 * q : 3 * q], b[:, 2 * q : 3 * q]),
            spherical(a[:, 3 * q :], b[:, 3 * q :]),
        ]
        lw = self.params[f"{self.name}.log_w"]
        w = ad.exp(lw) / ad.sum_(ad.exp(lw))
        stacked = ad.concat([ad.reshape(p, (-1, 1)) for p in parts], axis=1)
        return stacked @ w

    def forward(self, x, i, j) -> Tensor:
        z = self.encoder(x)
        return self.latent_distance(ad.take(z, np.asarray(i)), ad.take(z, np.asarray(j)))

