"""Small feed-forward embedding network with an L2-normalized output.

The network maps a feature vector to a point on the unit hypersphere. All
gradients are derived by hand so they can be checked exactly against finite
differences. Every public function accepts a single vector or a 2-D batch
(one row per example).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from adaptive_triplet.errors import InvalidInputError

NORM_EPS = 1e-12
ACTIVATIONS = ("relu", "tanh")


@dataclass
class EmbeddingNet:
    """Stack of dense layers; hidden layers share one activation, the output layer is linear.

    ``layers[k]`` is ``(W, b)`` with ``W`` of shape ``(out_dim, in_dim)``.
    """

    layers: list[tuple[np.ndarray, np.ndarray]]
    activation: str = "relu"

    def __post_init__(self):
        if not self.layers:
            raise InvalidInputError("network needs at least one layer")
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(f"unknown activation {self.activation!r}")
        fixed = []
        prev_out = None
        for k, (w, b) in enumerate(self.layers):
            w = np.array(w, dtype=np.float64, ndmin=2)
            b = np.array(b, dtype=np.float64, ndmin=1)
            if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[0]:
                raise InvalidInputError(f"layer {k}: weight {w.shape} and bias {b.shape} disagree")
            if prev_out is not None and w.shape[1] != prev_out:
                raise InvalidInputError(
                    f"layer {k}: in_dim {w.shape[1]} != previous out_dim {prev_out}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise InvalidInputError(f"layer {k}: non-finite parameters")
            prev_out = w.shape[0]
            fixed.append((w, b))
        self.layers = fixed

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def embed_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    def copy(self) -> "EmbeddingNet":
        return EmbeddingNet([(w.copy(), b.copy()) for w, b in self.layers], self.activation)

    def params(self) -> list[np.ndarray]:
        """Flat parameter list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        out = []
        for w, b in self.layers:
            out.extend((w, b))
        return out

    def to_dict(self) -> dict:
        return {
            "layers": [{"w": w.tolist(), "b": b.tolist()} for w, b in self.layers],
            "activation": self.activation,
            "embed_dim": self.embed_dim,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EmbeddingNet":
        try:
            layers = [(np.array(l["w"], dtype=np.float64), np.array(l["b"], dtype=np.float64))
                      for l in doc["layers"]]
            net = cls(layers, doc.get("activation", "relu"))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidInputError):
                raise
            raise InvalidInputError(f"malformed network document: {exc}") from exc
        if "embed_dim" in doc and int(doc["embed_dim"]) != net.embed_dim:
            raise InvalidInputError(
                f"embed_dim {doc['embed_dim']} does not match output layer ({net.embed_dim})"
            )
        return net


@dataclass
class GradientBundle:
    """Per-layer ``(dW, db)`` congruent with the network they were computed for."""

    layers: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)

    def flat(self) -> list[np.ndarray]:
        out = []
        for dw, db in self.layers:
            out.extend((dw, db))
        return out


def init_net(in_dim, hidden_dims=(32,), embed_dim=16, activation="relu", seed=0) -> EmbeddingNet:
    """Glorot-uniform weights, zero biases, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    dims = [int(in_dim), *[int(h) for h in hidden_dims], int(embed_dim)]
    if any(d < 1 for d in dims):
        raise InvalidInputError(f"layer dimensions must be positive, got {dims}")
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        s = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append((rng.uniform(-s, s, size=(fan_out, fan_in)), np.zeros(fan_out)))
    return EmbeddingNet(layers, activation)


def _as_batch(net: EmbeddingNet, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise InvalidInputError(f"expected input dim {net.in_dim}, got shape {x.shape[1:]}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("input contains non-finite values")
    return x, single


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _act_grad(name, z, a):
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    return 1.0 - a * a


def forward_cached(net: EmbeddingNet, x: np.ndarray):
    """Batch forward pass without validation; returns raw output and the activations cache."""
    acts = [x]
    pre = []
    h = x
    last = len(net.layers) - 1
    for k, (w, b) in enumerate(net.layers):
        z = h @ w.T + b
        pre.append(z)
        h = z if k == last else _act(net.activation, z)
        acts.append(h)
    return h, (acts, pre)


def forward(net: EmbeddingNet, x) -> np.ndarray:
    """Raw (pre-normalization) embedding."""
    xb, single = _as_batch(net, x)
    raw, _ = forward_cached(net, xb)
    return raw[0] if single else raw


def l2_normalize(v, eps: float = NORM_EPS) -> np.ndarray:
    """``v / max(||v||, eps)`` row-wise; the zero vector maps to itself."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("cannot normalize a non-finite vector")
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.maximum(norm, eps)


def embed(net: EmbeddingNet, x) -> np.ndarray:
    """The unit-norm embedding ``f(x)`` used by every loss and evaluation."""
    return l2_normalize(forward(net, x))


def embedding_distance(e1, e2) -> float | np.ndarray:
    """Plain (unsquared) Euclidean distance; row-wise for batches."""
    e1 = np.asarray(e1, dtype=np.float64)
    e2 = np.asarray(e2, dtype=np.float64)
    if e1.shape != e2.shape:
        raise InvalidInputError(f"dimension mismatch: {e1.shape} vs {e2.shape}")
    d = np.linalg.norm(e1 - e2, axis=-1)
    return float(d) if d.ndim == 0 else d


def normalize_backward(raw: np.ndarray, upstream: np.ndarray, eps: float = NORM_EPS) -> np.ndarray:
    """Pull a gradient w.r.t. ``raw / max(||raw||, eps)`` back onto ``raw`` (row-wise).

    Uses ``(I - u u^T) / ||raw||`` with ``u`` the unit direction; below ``eps``
    the map is the linear ``raw / eps`` and its Jacobian is ``I / eps``.
    """
    norm = np.linalg.norm(raw, axis=1, keepdims=True)
    small = norm < eps
    safe = np.where(small, eps, norm)
    unit = raw / safe
    proj = upstream - unit * np.sum(unit * upstream, axis=1, keepdims=True)
    return np.where(small, upstream / eps, proj / safe)


def backward_cached(net: EmbeddingNet, raw, cache, upstream: np.ndarray):
    """Batch backward pass. Parameter gradients are summed over rows.

    ``upstream`` is the gradient with respect to the *normalized* embedding.
    """
    acts, pre = cache
    g = normalize_backward(raw, upstream)
    grads = [None] * len(net.layers)
    last = len(net.layers) - 1
    for k in range(last, -1, -1):
        w, _ = net.layers[k]
        if k != last:
            g = g * _act_grad(net.activation, pre[k], acts[k + 1])
        grads[k] = (g.T @ acts[k], g.sum(axis=0))
        g = g @ w
    return GradientBundle(grads), g


def backward(net: EmbeddingNet, x, upstream) -> tuple[GradientBundle, np.ndarray]:
    """Exact parameter and input gradients of ``<upstream, embed(net, x)>``.

    For a batch, parameter gradients are summed over rows and the input
    gradient is returned per row.
    """
    xb, single = _as_batch(net, x)
    up = np.asarray(upstream, dtype=np.float64)
    if single:
        up = up[None, :]
    if up.shape != (xb.shape[0], net.embed_dim):
        raise InvalidInputError(
            f"upstream shape {up.shape} does not match ({xb.shape[0]}, {net.embed_dim})"
        )
    if not np.all(np.isfinite(up)):
        raise InvalidInputError("upstream gradient contains non-finite values")
    raw, cache = forward_cached(net, xb)
    bundle, gx = backward_cached(net, raw, cache, up)
    return bundle, (gx[0] if single else gx)
