"""Triplet hinge loss (fixed or per-triplet margin), MOS regression loss, and their weighted sum."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from adaptive_triplet.errors import DegeneratePairError, InvalidInputError

DEGENERATE_EPS = 1e-12


@dataclass(frozen=True)
class MarginMode:
    """``kind="fixed"`` uses ``m`` for every triplet; ``kind="adaptive"`` reads each quadruplet's margin."""

    kind: str = "adaptive"
    m: float = 0.5

    def __post_init__(self):
        if self.kind not in ("fixed", "adaptive"):
            raise InvalidInputError(f"margin mode must be 'fixed' or 'adaptive', got {self.kind!r}")
        if self.kind == "fixed" and not (math.isfinite(self.m) and 0.0 <= self.m <= 2.0):
            raise InvalidInputError(f"fixed margin must lie in [0, 2], got {self.m}")

    @classmethod
    def fixed(cls, m: float = 0.5) -> "MarginMode":
        return cls("fixed", float(m))

    @classmethod
    def adaptive(cls) -> "MarginMode":
        return cls("adaptive")

    @property
    def is_fixed(self) -> bool:
        return self.kind == "fixed"


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 0.0

    def __post_init__(self):
        a, b = self.alpha, self.beta
        if not (math.isfinite(a) and math.isfinite(b)) or a < 0 or b < 0:
            raise InvalidInputError(f"loss weights must be finite and nonnegative, got ({a}, {b})")
        if a + b <= 0:
            raise InvalidInputError("alpha + beta must be positive")


# Weights used when a regression head is trained alongside the triplet branch.
COMBINED_WEIGHTS = LossWeights(1.0, 0.1)


class RegressionKind(str, enum.Enum):
    MAE = "mae"
    MSE = "mse"


def triplet_loss(d_ap: float, d_an: float, m: float) -> float:
    """``max(d_ap - d_an + m, 0)``."""
    for name, v in (("d_ap", d_ap), ("d_an", d_an), ("m", m)):
        if not math.isfinite(v):
            raise InvalidInputError(f"{name} is not finite")
    if d_ap < 0 or d_an < 0:
        raise InvalidInputError("distances must be nonnegative")
    if m < 0:
        raise InvalidInputError("margin must be nonnegative")
    return max(d_ap - d_an + m, 0.0)


def batch_triplet_grads(e_a, e_p, e_n, m):
    """Vectorized hinge and its subgradients over rows of unit embeddings.

    Returns ``(loss, g_a, g_p, g_n, active, degenerate)``. Rows flagged
    ``degenerate`` (active hinge with a coincident pair) carry zero gradient;
    the caller decides what to do with them. ``m`` may be a scalar or a
    per-row array and never receives a gradient.
    """
    diff_p = e_a - e_p
    diff_n = e_a - e_n
    d_ap = np.linalg.norm(diff_p, axis=1)
    d_an = np.linalg.norm(diff_n, axis=1)
    loss = np.maximum(d_ap - d_an + m, 0.0)
    active = loss > 0.0
    degenerate = active & ((d_ap < DEGENERATE_EPS) | (d_an < DEGENERATE_EPS))
    live = (active & ~degenerate)[:, None]
    u_p = np.where(live, diff_p / np.where(d_ap > 0, d_ap, 1.0)[:, None], 0.0)
    u_n = np.where(live, diff_n / np.where(d_an > 0, d_an, 1.0)[:, None], 0.0)
    return loss, u_p - u_n, -u_p, u_n, active, degenerate


def triplet_loss_grads(e_a, e_p, e_n, m: float):
    """Hinge loss over embeddings plus gradients w.r.t. each embedding.

    Raises DegeneratePairError when the hinge is active but an anchor
    coincides with its positive or negative.
    """
    e_a, e_p, e_n = (np.asarray(e, dtype=np.float64) for e in (e_a, e_p, e_n))
    if not (e_a.shape == e_p.shape == e_n.shape) or e_a.ndim != 1:
        raise InvalidInputError("anchor, positive and negative must be equal-length vectors")
    if not (math.isfinite(m) and m >= 0):
        raise InvalidInputError(f"margin must be finite and nonnegative, got {m}")
    loss, g_a, g_p, g_n, _, degenerate = batch_triplet_grads(e_a[None], e_p[None], e_n[None], m)
    if degenerate[0]:
        raise DegeneratePairError("active hinge over coincident embeddings")
    return float(loss[0]), g_a[0], g_p[0], g_n[0]


def regression_loss(pred, mos, kind: RegressionKind | str = RegressionKind.MAE):
    """Loss and its derivative w.r.t. ``pred``. Works elementwise on arrays."""
    kind = RegressionKind(kind)
    r = np.asarray(pred, dtype=np.float64) - np.asarray(mos, dtype=np.float64)
    if kind is RegressionKind.MAE:
        loss, dpred = np.abs(r), np.sign(r)
    else:
        loss, dpred = r * r, 2.0 * r
    if np.ndim(r) == 0:
        return float(loss), float(dpred)
    return loss, dpred


def combined_loss(triplet: float, regression: float, w: LossWeights) -> float:
    return w.alpha * triplet + w.beta * regression
