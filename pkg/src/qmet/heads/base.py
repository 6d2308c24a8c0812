"""Common interface of all distance heads."""

from __future__ import annotations

import math

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor

__all__ = ["Head", "to_distance"]


def to_distance(out: np.ndarray, output: str, gamma: float) -> np.ndarray:
    """Map a head's native output to a non-negative distance.

    Raw outputs below 0 are clipped to 0.  Discounted outputs ``g`` map to
    ``log(g) / log(gamma)``; ``g <= 0`` means infinitely far and ``g >= 1``
    means distance 0.
    """
    out = np.asarray(out, dtype=np.float64)
    if output == "raw":
        return np.maximum(out, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.log(np.clip(out, 0.0, 1.0)) / math.log(gamma)
    return np.where(out <= 0, np.inf, np.maximum(d, 0.0))


class Head:
    """A trainable map from an element pair to a distance estimate.

    Subclasses set ``family``, ``output`` ("raw" or "discounted") and
    ``params`` and implement :meth:`forward`.
    """

    family: str = "head"
    output: str = "raw"
    params: dict[str, Tensor]

    def forward(self, x, i, j) -> Tensor:
        """Native output for pairs ``(x[i], x[j])``."""
        raise NotImplementedError

    def discounted(self, x, i, j, gamma: float) -> Tensor:
        out = self.forward(x, i, j)
        if self.output == "discounted":
            return out
        return ad.exp(out * math.log(gamma))

    def predict(self, x, i, j, gamma: float, chunk: int = 65536) -> np.ndarray:
        """Non-negative distance estimates as a plain array (no graph kept)."""
        i, j = np.asarray(i), np.asarray(j)
        parts = [self.forward(x, i[s : s + chunk], j[s : s + chunk]).data for s in range(0, len(i), chunk)]
        native = np.concatenate(parts) if parts else np.zeros(0)
        return to_distance(native, self.output, gamma)

    def distance_table(self, x, gamma: float) -> np.ndarray:
        n = len(x)
        ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        return self.predict(x, ii.ravel(), jj.ravel(), gamma).reshape(n, n)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in sorted(self.params.items())}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) ^ set(state)
        if missing:
            raise KeyError(f"parameter names differ: {sorted(missing)}")
        for k, v in state.items():
            if self.params[k].data.shape != np.shape(v):
                raise ad.ShapeError("load_state_dict", self.params[k].data.shape, np.shape(v))
            self.params[k].data = np.array(v, dtype=np.float64)

    def n_params(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))
