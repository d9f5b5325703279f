"""Mini-batch training of the embedding net (and optional regression head) on quadruplets.

Margins come either from a fixed value or from each quadruplet's stored
margin; they are inputs to the loss only and are never updated.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from adaptive_triplet.embed_net import EmbeddingNet, GradientBundle, backward_cached, forward_cached
from adaptive_triplet.errors import InvalidConfigError, InvalidInputError, NumericFailureError
from adaptive_triplet.losses import (
    LossWeights,
    MarginMode,
    RegressionKind,
    batch_triplet_grads,
    regression_loss,
)
from adaptive_triplet.sampling import FeatureDataset, normalize_mos, quadruplet_arrays

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerSpec:
    name: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.name not in ("sgd", "adam"):
            raise InvalidConfigError(f"unknown optimizer {self.name!r}")
        if not (math.isfinite(self.lr) and self.lr > 0):
            raise InvalidConfigError(f"learning rate must be positive, got {self.lr}")
        if self.name == "adam" and not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise InvalidConfigError("adam needs beta1, beta2 in [0, 1) and eps > 0")

    @classmethod
    def sgd(cls, lr: float) -> "OptimizerSpec":
        return cls("sgd", lr)


@dataclass
class OptimizerState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def optimizer_step(params, grads, state: Optional[OptimizerState], spec: OptimizerSpec):
    """One update. Returns new parameter arrays and a new state; inputs are not modified."""
    if len(params) != len(grads):
        raise InvalidInputError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise InvalidInputError(f"parameter shape {np.shape(p)} != gradient shape {np.shape(g)}")
    params = [np.asarray(p, dtype=np.float64) for p in params]
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    if state is None:
        state = OptimizerState()
    if spec.name == "sgd":
        return [p - spec.lr * g for p, g in zip(params, grads)], OptimizerState(state.step + 1)

    t = state.step + 1
    ms = state.m or [np.zeros_like(p) for p in params]
    vs = state.v or [np.zeros_like(p) for p in params]
    b1, b2 = spec.beta1, spec.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, ms, vs):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        new_p.append(p - spec.lr * (m / c1) / (np.sqrt(v / c2) + spec.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, OptimizerState(t, new_m, new_v)


@dataclass
class RegressionHead:
    """Linear read-out ``g(e) = w . e + b`` on the normalized embedding."""

    w: np.ndarray
    b: float = 0.0

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64).reshape(-1)
        self.b = float(self.b)
        if not (np.all(np.isfinite(self.w)) and math.isfinite(self.b)):
            raise InvalidInputError("regression head has non-finite parameters")

    @classmethod
    def zeros(cls, embed_dim: int) -> "RegressionHead":
        return cls(np.zeros(embed_dim), 0.0)

    def predict(self, e: np.ndarray) -> np.ndarray:
        return e @ self.w + self.b

    def copy(self) -> "RegressionHead":
        return RegressionHead(self.w.copy(), self.b)

    def to_dict(self) -> dict:
        return {"w": self.w.tolist(), "b": self.b}

    @classmethod
    def from_dict(cls, doc) -> "RegressionHead":
        return cls(doc["w"], doc["b"])


@dataclass
class TrainConfig:
    margin_mode: MarginMode = field(default_factory=MarginMode.adaptive)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    regression: Optional[RegressionKind] = None
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    batch_size: int = 64
    epochs: int = 8
    seed: int = 0
    shuffle: bool = True
    collapse_variance_eps: float = 1e-6
    collapse_patience: int = 3
    probe_size: int = 256
    # architecture of a freshly initialized network
    hidden_dims: tuple = (32,)
    activation: str = "relu"
    embed_dim: int = 16

    def __post_init__(self):
        if self.regression is not None:
            self.regression = RegressionKind(self.regression)
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if self.batch_size < 1:
            raise InvalidConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise InvalidConfigError("epochs must be >= 0")
        if self.collapse_patience < 1 or not self.collapse_variance_eps > 0:
            raise InvalidConfigError("collapse_patience must be >= 1 and collapse_variance_eps > 0")
        if self.probe_size < 1:
            raise InvalidConfigError("probe_size must be >= 1")
        if self.loss_weights.beta > 0 and self.regression is None:
            raise InvalidConfigError("beta > 0 requires a regression kind (mae or mse)")

    def to_dict(self) -> dict:
        return {
            "margin_mode": {"kind": self.margin_mode.kind, "m": self.margin_mode.m},
            "loss_weights": asdict(self.loss_weights),
            "regression": None if self.regression is None else self.regression.value,
            "optimizer": asdict(self.optimizer),
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
            "shuffle": self.shuffle,
            "collapse_variance_eps": self.collapse_variance_eps,
            "collapse_patience": self.collapse_patience,
            "probe_size": self.probe_size,
            "hidden_dims": list(self.hidden_dims),
            "activation": self.activation,
            "embed_dim": self.embed_dim,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise InvalidConfigError(f"unknown config field(s): {sorted(unknown)}")
        try:
            if "margin_mode" in doc:
                mm = doc["margin_mode"]
                if isinstance(mm, str):
                    mm = {"kind": mm}
                doc["margin_mode"] = MarginMode(mm.get("kind", "adaptive"), float(mm.get("m", 0.5)))
            if "loss_weights" in doc:
                doc["loss_weights"] = LossWeights(**doc["loss_weights"])
            if "optimizer" in doc:
                doc["optimizer"] = OptimizerSpec(**doc["optimizer"])
            return cls(**doc)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, InvalidConfigError):
                raise
            raise InvalidConfigError(f"invalid train config: {exc}") from exc

    @property
    def train_head(self) -> bool:
        return self.loss_weights.beta > 0


@dataclass
class TrainReport:
    triplet_loss: list = field(default_factory=list)
    regression_loss: list = field(default_factory=list)
    active_fraction: list = field(default_factory=list)
    embedding_variance: list = field(default_factory=list)
    collapse_flags: list = field(default_factory=list)
    collapsed: bool = False
    collapse_epoch: Optional[int] = None
    skipped_degenerate: int = 0

    @property
    def epochs_run(self) -> int:
        return len(self.triplet_loss)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc) -> "TrainReport":
        return cls(**doc)


def detect_collapse(embeddings, eps: float = 1e-6) -> bool:
    """True iff the mean per-coordinate variance across the embeddings is below ``eps``."""
    e = np.asarray(embeddings, dtype=np.float64)
    if e.ndim != 2 or e.shape[0] == 0:
        raise InvalidInputError("need a nonempty list of equal-length embeddings")
    return bool(embedding_variance(e) < eps)


def embedding_variance(e: np.ndarray) -> float:
    return float(np.mean(np.var(e, axis=0)))


@dataclass
class BatchResult:
    net_grads: GradientBundle
    head_grads: Optional[tuple]
    triplet_losses: np.ndarray
    regression_losses: np.ndarray
    active: np.ndarray
    degenerate: np.ndarray

    @property
    def n_valid(self) -> int:
        return int(np.count_nonzero(~self.degenerate))


def batch_gradients(net, head, x_a, x_p, x_n, margins, weights: LossWeights,
                    regression: Optional[RegressionKind] = None, targets=None) -> BatchResult:
    """Batch-mean gradient of ``alpha * triplet + beta * regression`` over one batch.

    Quadruplets whose active hinge sits on coincident embeddings are excluded
    from the mean and flagged in ``degenerate``.
    """
    b = x_a.shape[0]
    raw, cache = forward_cached(net, np.concatenate([x_a, x_p, x_n]))
    with np.errstate(over="ignore", invalid="ignore"):
        norm = np.linalg.norm(raw, axis=1, keepdims=True)
    if not np.all(np.isfinite(norm)):
        raise NumericFailureError("non-finite embedding in batch")
    e = raw / np.maximum(norm, 1e-12)
    e_a, e_p, e_n = e[:b], e[b:2 * b], e[2 * b:]
    loss, g_a, g_p, g_n, active, degenerate = batch_triplet_grads(e_a, e_p, e_n, margins)
    if weights.alpha == 0:
        degenerate = np.zeros_like(degenerate)
    valid = ~degenerate
    n_valid = max(int(np.count_nonzero(valid)), 1)
    scale = weights.alpha / n_valid
    up = np.concatenate([g_a, g_p, g_n]) * scale

    head_grads = None
    reg_losses = np.zeros(b)
    if head is not None and regression is not None:
        pred = head.predict(e_a)
        reg_losses, dpred = regression_loss(pred, targets, regression)
        reg_losses = np.atleast_1d(reg_losses)
        dpred = np.where(valid, np.atleast_1d(dpred), 0.0) * (weights.beta / n_valid)
        up[:b] += dpred[:, None] * head.w[None, :]
        head_grads = (dpred @ e_a, float(dpred.sum()))

    bundle, _ = backward_cached(net, raw, cache, up)
    return BatchResult(bundle, head_grads, loss, reg_losses, active, degenerate)


def quadruplet_loss(net, head, x_a, x_p, x_n, margin, weights: LossWeights,
                    regression: Optional[RegressionKind] = None, target=None) -> float:
    """Scalar ``alpha * triplet + beta * regression`` for one quadruplet."""
    raw, _ = forward_cached(net, np.stack([x_a, x_p, x_n]))
    e = raw / np.maximum(np.linalg.norm(raw, axis=1, keepdims=True), 1e-12)
    trip = max(np.linalg.norm(e[0] - e[1]) - np.linalg.norm(e[0] - e[2]) + margin, 0.0)
    reg = 0.0
    if head is not None and regression is not None:
        reg, _ = regression_loss(float(head.predict(e[0])), target, regression)
    return weights.alpha * trip + weights.beta * reg


def _probe_indices(n: int, size: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 0x9B0E])
    return np.sort(rng.choice(n, size=min(size, n), replace=False))


def train(net: EmbeddingNet, head: Optional[RegressionHead], ds, quads, cfg: TrainConfig):
    """Train on ``quads`` and return ``(net, head, report)``; inputs are left untouched.

    Stops early once embeddings of a fixed probe subset stay collapsed for
    ``cfg.collapse_patience`` consecutive epochs.
    """
    if ds.features.shape[1] != net.in_dim:
        raise InvalidInputError(f"dataset feature dim {ds.features.shape[1]} != network input {net.in_dim}")
    net = net.copy()
    use_head = cfg.regression is not None and cfg.train_head
    if use_head:
        if not isinstance(ds, FeatureDataset):
            raise InvalidConfigError("regression loss needs single-item MOS ratings")
        head = RegressionHead.zeros(net.embed_dim) if head is None else head.copy()
        if head.w.shape[0] != net.embed_dim:
            raise InvalidInputError("regression head does not match embedding dimension")
        targets_all = normalize_mos(ds.mos, ds.scale_n)
    else:
        head = None if head is None else head.copy()
        targets_all = None

    a_idx, p_idx, n_idx, stored = quadruplet_arrays(quads, ds)
    margins = np.full(len(quads), cfg.margin_mode.m) if cfg.margin_mode.is_fixed else stored
    feats = ds.features
    rng = np.random.default_rng(cfg.seed)
    probe = _probe_indices(len(ds), cfg.probe_size, cfg.seed)
    report = TrainReport()
    state = None
    streak = 0
    n_quads = len(quads)

    for epoch in range(cfg.epochs):
        order = rng.permutation(n_quads) if cfg.shuffle else np.arange(n_quads)
        trip_sum = reg_sum = 0.0
        n_active = n_valid = 0
        for start in range(0, n_quads, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            ai = a_idx[idx]
            try:
                res = batch_gradients(
                    net, head if use_head else None, feats[ai], feats[p_idx[idx]], feats[n_idx[idx]],
                    margins[idx], cfg.loss_weights, cfg.regression if use_head else None,
                    None if targets_all is None else targets_all[ai],
                )
            except NumericFailureError as exc:
                raise NumericFailureError(f"{exc} (epoch {epoch})", report) from None
            valid = ~res.degenerate
            report.skipped_degenerate += int(np.count_nonzero(res.degenerate))
            trip_sum += float(res.triplet_losses[valid].sum())
            reg_sum += float(res.regression_losses[valid].sum())
            n_active += int(np.count_nonzero(res.active & valid))
            n_valid += res.n_valid
            if not (math.isfinite(trip_sum) and math.isfinite(reg_sum)):
                raise NumericFailureError(f"non-finite loss in epoch {epoch}", report)
            if res.n_valid == 0:
                continue
            params = net.params()
            grads = res.net_grads.flat()
            if use_head:
                params = params + [head.w, np.array(head.b)]
                grads = grads + [res.head_grads[0], np.array(res.head_grads[1])]
            params, state = optimizer_step(params, grads, state, cfg.optimizer)
            k = len(net.layers)
            net.layers = [(params[2 * i], params[2 * i + 1]) for i in range(k)]
            if use_head:
                head.w, head.b = params[2 * k], float(params[2 * k + 1])

        denom = max(n_valid, 1)
        report.triplet_loss.append(trip_sum / denom)
        report.regression_loss.append(reg_sum / denom)
        report.active_fraction.append(n_active / denom)
        with np.errstate(over="ignore", invalid="ignore"):
            raw, _ = forward_cached(net, feats[probe])
        pe = raw / np.maximum(np.linalg.norm(raw, axis=1, keepdims=True), 1e-12)
        var = embedding_variance(pe)
        if not math.isfinite(var):
            raise NumericFailureError(f"non-finite embeddings after epoch {epoch}", report)
        report.embedding_variance.append(var)
        flag = var < cfg.collapse_variance_eps
        report.collapse_flags.append(flag)
        streak = streak + 1 if flag else 0
        log.debug("epoch %d: triplet %.5f reg %.5f active %.3f var %.3g",
                  epoch, report.triplet_loss[-1], report.regression_loss[-1],
                  report.active_fraction[-1], var)
        if streak >= cfg.collapse_patience:
            report.collapsed = True
            report.collapse_epoch = epoch
            break

    return net, head, report
