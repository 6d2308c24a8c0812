"""Poisson quasimetric embeddings.

A latent ``u`` of size ``h * k`` is viewed as ``h`` groups of ``k`` Poisson
processes.  For each process the set difference measures
``mu(A(u) - A(v))`` and ``mu(A(v) - A(u))`` race against each other; a group
contributes ``E_i = 1 - prod_j P[Pois(mu_uv) <= Pois(mu_vu)]``, the expected
value of a random quasipartition.  The distance mixes the ``E_i`` with
non-negative weights ``alpha`` (raw output) or, in discounted form, returns
``prod_i beta_i ** E_i`` with bases ``beta_i`` in (0, 1).

Two set/measure choices are provided:

* ``lh``: half-lines under Lebesgue measure, so ``mu_uv = (u - v)+``.
* ``gg``: unit-variance Gaussian density shapes under a centred Gaussian
  measure with learnable log-variance.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import logit, ndtr

from .. import autodiff as ad
from ..autodiff import Tensor
from ..rng import stream
from .base import Head
from .layers import MLP, DeepLinearNet, EncoderConfig, fan_in_uniform

__all__ = [
    "pqe_lh_forward",
    "pqe_gg_measures",
    "gg_total_measure",
    "gg_intersection",
    "expected_qparts",
    "discounted_forward",
    "init_bases",
    "base_init_range",
    "rescale_base_net",
    "PQEHead",
]


def _t(x) -> Tensor:
    return ad.as_tensor(x)


# ---------------------------------------------------------------------------
# measures


def lh_measures(u, v):
    """Half-line set differences under Lebesgue measure."""
    u, v = _t(u), _t(v)
    return ad.positive_part(u - v), ad.positive_part(v - u)


def gg_total_measure(u, c, sigma2_measure) -> np.ndarray:
    """Measure of a single Gaussian shape centred at ``u``."""
    tot = 1.0 + np.asarray(sigma2_measure, dtype=float)
    u = np.asarray(u, dtype=float)
    return c * np.exp(-0.5 * u * u / tot) / np.sqrt(2.0 * np.pi * tot)


def gg_intersection(u, v, c, sigma2_measure) -> np.ndarray:
    """Measure of ``A(u) & A(v)``: two Gaussian tails meeting at the midpoint."""
    u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
    hi, lo = np.maximum(u, v), np.minimum(u, v)
    s2 = np.asarray(sigma2_measure, dtype=float)
    tot = 1.0 + s2
    scale = np.sqrt(s2 / tot)
    mid = 0.5 * (hi + lo)
    left = gg_total_measure(hi, c, s2) * ndtr((mid - hi * s2 / tot) / scale)
    right = gg_total_measure(lo, c, s2) * ndtr((lo * s2 / tot - mid) / scale)
    return left + right


def pqe_gg_measures(u, v, c=1.0, sigma2_measure=1.0):
    """``(mu(A(u) - A(v)), mu(A(v) - A(u)))`` for Gaussian shapes, as Tensors.

    ``c`` and ``sigma2_measure`` may be Tensors (learnable) or plain values.
    """
    u, v = _t(u), _t(v)
    c = _t(c)
    s2 = _t(sigma2_measure)
    tot = 1.0 + s2
    scale = ad.sqrt(s2 / tot)
    norm = c / ad.sqrt(tot * (2.0 * math.pi))
    total_u = norm * ad.exp(-0.5 * ad.square(u) / tot)
    total_v = norm * ad.exp(-0.5 * ad.square(v) / tot)
    mid = 0.5 * (u + v)
    shrink = s2 / tot
    # orientation: the part of A(u) outside A(v) lies on u's side of the midpoint
    sgn = np.sign(u.data - v.data)
    z_u = sgn * (u * shrink - mid) / scale
    z_v = sgn * (v * shrink - mid) / scale
    uv = total_u * ad.normal_cdf(z_u) - total_v * ad.normal_cdf(z_v)
    vu = total_v * ad.normal_cdf(-z_v) - total_u * ad.normal_cdf(-z_u)
    return uv, vu


# ---------------------------------------------------------------------------
# expected quasipartitions and outputs


def expected_qparts(u, v, k: int, variant: str = "lh", sigma2_measure=None, mixing=None) -> Tensor:
    """``E_i`` for latents of shape ``(..., h * k)``; returns shape ``(..., h)``.

    ``mixing`` is an optional non-negative ``(h*k, h*k)`` matrix combining the
    per-process measures before the race.  All measures are divided by ``k``.
    """
    u, v = _t(u), _t(v)
    if u.shape != v.shape:
        raise ad.ShapeError("expected_qparts", u.shape, v.shape)
    hk = u.shape[-1]
    if hk % k:
        raise ValueError(f"latent size {hk} not divisible by k={k}")
    h = hk // k
    if variant == "lh":
        uv, vu = lh_measures(u, v)
    elif variant == "gg":
        uv, vu = pqe_gg_measures(u, v, 1.0, 1.0 if sigma2_measure is None else sigma2_measure)
    else:
        raise ValueError(f"unknown PQE variant {variant!r}")
    if mixing is not None:
        mt = ad.transpose(_t(mixing))
        uv, vu = uv @ mt, vu @ mt
    uv, vu = uv * (1.0 / k), vu * (1.0 / k)
    lead = u.shape[:-1]
    if variant == "lh" and mixing is None:
        # at most one side is non-zero, so the race is exactly exp(-uv)
        s = ad.sum_(ad.reshape(uv, (*lead, h, k)), axis=-1)
        return 1.0 - ad.exp(-s)
    p = ad.poisson_race(uv, vu)
    return 1.0 - ad.prod(ad.reshape(p, (*lead, h, k)), axis=-1)


def pqe_lh_forward(u, v, alpha) -> np.ndarray:
    """``sum_i alpha_i (1 - exp(-sum_j (u_ij - v_ij)+ / k))`` for ``(..., h, k)`` latents."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if (alpha < 0).any():
        raise ValueError("alpha must be non-negative")
    if u.shape != v.shape or u.shape[-2] != alpha.shape[-1]:
        raise ad.ShapeError("pqe_lh_forward", u.shape, v.shape, alpha.shape)
    k = u.shape[-1]
    e = 1.0 - np.exp(-np.maximum(u - v, 0.0).sum(axis=-1) / k)
    return e @ alpha


def discounted_forward(e, bases) -> Tensor:
    """``prod_i bases_i ** e_i`` computed as ``exp(e @ log bases)``."""
    b = np.asarray(bases.data if isinstance(bases, Tensor) else bases)
    if ((b <= 0) | (b >= 1)).any():
        raise ValueError("bases must lie in (0, 1)")
    return ad.exp(_t(e) @ ad.log(_t(bases)))


def base_init_range(h: int) -> tuple[float, float]:
    return float(logit(0.5 ** (2.0 / h))), float(logit(0.75 ** (2.0 / h)))


def init_bases(h: int, seed: int) -> np.ndarray:
    """Pre-sigmoid logits with ``prod_i sigmoid(b_i) ** 0.5`` in [0.5, 0.75]."""
    lo, hi = base_init_range(h)
    return stream(seed, "init_bases", h).uniform(lo, hi, size=h)


def rescale_base_net(net: DeepLinearNet, rng: np.random.Generator) -> None:
    """Rescale the ``M*`` direction of each row of the last factor of an ``h x 1`` net.

    ``M* = M_{l-1} ... M_1`` is a column; row ``r`` of ``M_l`` gives
    ``b_r = M_l[r] . M*``.  The component of each row along ``M*`` is replaced
    so that the collapsed logits follow the base initialization law, while the
    orthogonal component stays as initialized.  Requires a zero bias.
    """
    h = net.shape[0]
    m_star = net.factors[0].data
    for f in net.factors[1:-1]:
        m_star = f.data @ m_star
    m_star = m_star[:, 0]
    nrm = np.linalg.norm(m_star)
    unit = m_star / nrm
    last = net.factors[-1].data
    lo, hi = base_init_range(h)
    target = rng.uniform(lo, hi, size=h)
    last = last - np.outer(last @ unit, unit) + np.outer(target / nrm, unit)
    net.factors[-1].data = last
    if net.bias is not None:
        net.bias.data = np.zeros_like(net.bias.data)


# ---------------------------------------------------------------------------
# model


class PQEHead(Head):
    """Encoder followed by a PQE head.

    ``output="raw"`` predicts distances ``E @ alpha`` with ``alpha`` the
    elementwise square of a ``1 x h`` map; ``output="discounted"`` predicts
    ``gamma ** d`` as ``prod_i sigmoid(b_i) ** E_i`` with ``b`` an ``h x 1`` map.
    """

    def __init__(
        self,
        enc: EncoderConfig,
        variant: str = "lh",
        k: int = 4,
        output: str = "discounted",
        seed: int = 0,
        deep_linear: bool = True,
        measure_mixing: bool | None = None,
        name: str = "pqe",
    ):
        if variant not in ("lh", "gg"):
            raise ValueError(f"unknown PQE variant {variant!r}")
        if output not in ("raw", "discounted"):
            raise ValueError(f"unknown output mode {output!r}")
        if enc.latent_dim % k:
            raise ValueError(f"latent dim {enc.latent_dim} not divisible by k={k}")
        self.family = f"pqe-{variant}"
        self.variant = variant
        self.output = output
        self.k = k
        self.h = enc.latent_dim // k
        self.deep_linear = deep_linear
        self.measure_mixing = (variant == "gg") if measure_mixing is None else measure_mixing
        rng = stream(seed, name, "init")
        self.encoder = MLP(enc.sizes, rng, f"{name}.enc")
        self.params = dict(self.encoder.params)
        hk = enc.latent_dim
        self.weight_net = None
        if output == "raw":
            if deep_linear:
                self.weight_net = DeepLinearNet.create(1, self.h, rng, f"{name}.alpha")
            else:
                self._add(ad.parameter(fan_in_uniform(rng, (self.h,), self.h), f"{name}.alpha"))
        else:
            if deep_linear:
                self.weight_net = DeepLinearNet.create(self.h, 1, rng, f"{name}.beta")
                rescale_base_net(self.weight_net, rng)
            else:
                lo, hi = base_init_range(self.h)
                self._add(ad.parameter(rng.uniform(lo, hi, size=self.h), f"{name}.beta"))
        if self.weight_net is not None:
            self.params.update(self.weight_net.params)
        self.mix_net = None
        if self.measure_mixing:
            self.mix_net = DeepLinearNet.create(hk, hk, rng, f"{name}.mix")
            self.params.update(self.mix_net.params)
        if variant == "gg":
            self._add(ad.parameter(np.zeros(hk), f"{name}.logvar"))
        self.name = name

    def _add(self, p: Tensor) -> None:
        self.params[p.name] = p

    # -- pieces ------------------------------------------------------------
    def encode(self, x) -> Tensor:
        return self.encoder(x)

    def weights(self) -> Tensor:
        """``alpha`` (raw) or the base logits ``b`` (discounted), shape ``(h,)``."""
        if self.weight_net is not None:
            w = ad.reshape(self.weight_net.collapse(), (self.h,))
        else:
            w = self.params[f"{self.name}.alpha" if self.output == "raw" else f"{self.name}.beta"]
        return ad.square(w) if self.output == "raw" else w

    def mixing(self) -> Tensor | None:
        return None if self.mix_net is None else ad.square(self.mix_net.collapse())

    def qparts(self, zu: Tensor, zv: Tensor) -> Tensor:
        s2 = ad.exp(self.params[f"{self.name}.logvar"]) if self.variant == "gg" else None
        return expected_qparts(zu, zv, self.k, self.variant, s2, self.mixing())

    def latent_pairs(self, zu: Tensor, zv: Tensor) -> Tensor:
        e = self.qparts(zu, zv)
        w = self.weights()
        if self.output == "raw":
            return e @ w
        return ad.exp(e @ ad.log_sigmoid(w))

    def forward(self, x, i, j) -> Tensor:
        z = self.encode(x)
        return self.latent_pairs(ad.take(z, np.asarray(i)), ad.take(z, np.asarray(j)))
