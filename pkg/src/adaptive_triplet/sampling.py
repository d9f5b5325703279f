"""Rating datasets and quadruplet ``(anchor, positive, negative, margin)`` generation.

Margins are computed once, up front, from ground-truth rating distances and
travel with each triplet through training unchanged.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import NamedTuple, Sequence

import numpy as np

from adaptive_triplet.errors import InvalidConfigError, InvalidInputError

log = logging.getLogger(__name__)


class RatedItem(NamedTuple):
    id: str
    features: np.ndarray
    mos: float


class RatedPair(NamedTuple):
    ref_id: str
    eval_id: str
    similarity: float


class Quadruplet(NamedTuple):
    anchor_id: str
    positive_id: str
    negative_id: str
    margin: float


class HardnessClass(str, enum.Enum):
    HARD = "hard"
    SEMI_HARD = "semi_hard"
    EASY = "easy"


class ItemTable:
    """Items stored column-wise: ``ids`` (list), ``features`` (n, d) and ``mos`` (n,)."""

    def __init__(self, ids: Sequence[str], features, mos):
        self.ids = [str(i) for i in ids]
        n = len(self.ids)
        feats = np.asarray(features, dtype=np.float64)
        if n == 0 and feats.size == 0:
            feats = feats.reshape(0, feats.shape[1] if feats.ndim == 2 else 0)
        if feats.ndim != 2 or feats.shape[0] != n:
            raise InvalidInputError(f"features must be ({n}, d), got {feats.shape}")
        self.features = feats
        self.mos = np.asarray(mos, dtype=np.float64).reshape(n)
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.mos))):
            raise InvalidInputError("non-finite feature or MOS value")
        self._index = {}
        for k, i in enumerate(self.ids):
            if i in self._index:
                raise InvalidInputError(f"duplicate id {i!r}")
            self._index[i] = k

    def __len__(self):
        return len(self.ids)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def index_of(self, item_id: str) -> int:
        try:
            return self._index[item_id]
        except KeyError:
            raise InvalidInputError(f"unknown item id {item_id!r}") from None

    def indices(self, item_ids: Sequence[str]) -> np.ndarray:
        return np.fromiter((self.index_of(i) for i in item_ids), dtype=np.int64, count=len(item_ids))

    @property
    def items(self) -> list[RatedItem]:
        return [RatedItem(i, self.features[k], float(self.mos[k])) for k, i in enumerate(self.ids)]

    def subset(self, item_ids: Sequence[str]):
        idx = self.indices(item_ids)
        return ItemTable([self.ids[k] for k in idx], self.features[idx], self.mos[idx])

    def __eq__(self, other):
        return (
            isinstance(other, ItemTable)
            and self.ids == other.ids
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.mos, other.mos)
        )


class FeatureDataset(ItemTable):
    """Single-item ratings: every MOS lies on the declared scale ``[1, scale_n]``."""

    def __init__(self, ids, features, mos, scale_n: int = 5):
        super().__init__(ids, features, mos)
        if int(scale_n) != scale_n or scale_n < 2:
            raise InvalidInputError(f"scale_n must be an integer >= 2, got {scale_n}")
        self.scale_n = int(scale_n)
        bad = np.flatnonzero((self.mos < 1) | (self.mos > self.scale_n))
        if bad.size:
            k = bad[0]
            raise InvalidInputError(
                f"item {self.ids[k]!r}: MOS {self.mos[k]} outside [1, {self.scale_n}]"
            )

    @classmethod
    def from_items(cls, items: Sequence[RatedItem], scale_n: int) -> "FeatureDataset":
        if not items:
            return cls([], np.zeros((0, 0)), [], scale_n)
        return cls([it.id for it in items], np.stack([np.asarray(it.features) for it in items]),
                   [it.mos for it in items], scale_n)

    def subset(self, item_ids):
        t = super().subset(item_ids)
        return FeatureDataset(t.ids, t.features, t.mos, self.scale_n)

    def normalized_mos(self) -> np.ndarray:
        return normalize_mos(self.mos, self.scale_n)

    def __eq__(self, other):
        return isinstance(other, FeatureDataset) and self.scale_n == other.scale_n and super().__eq__(other)


@dataclass
class PairRatingDataset:
    """Reference/evaluated image pairs with crowd similarity scores on ``[1, scale_n]``."""

    items: ItemTable
    pairs: list[RatedPair]
    scale_n: int = 5
    _keys: set = field(default_factory=set, init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.scale_n) != self.scale_n or self.scale_n < 2:
            raise InvalidInputError(f"scale_n must be an integer >= 2, got {self.scale_n}")
        self.pairs = [RatedPair(str(p[0]), str(p[1]), float(p[2])) for p in self.pairs]
        for p in self.pairs:
            self.items.index_of(p.ref_id)
            self.items.index_of(p.eval_id)
            if not (1 <= p.similarity <= self.scale_n):
                raise InvalidInputError(
                    f"pair ({p.ref_id}, {p.eval_id}): similarity {p.similarity} outside [1, {self.scale_n}]"
                )
            key = (p.ref_id, p.eval_id)
            if key in self._keys:
                raise InvalidInputError(f"duplicate pair {key}")
            self._keys.add(key)

    # training and evaluation look items up through the same interface as FeatureDataset
    @property
    def ids(self):
        return self.items.ids

    @property
    def features(self):
        return self.items.features

    def index_of(self, item_id):
        return self.items.index_of(item_id)

    def indices(self, item_ids):
        return self.items.indices(item_ids)

    def __len__(self):
        return len(self.items)

    def reference_ids(self) -> list[str]:
        return sorted({p.ref_id for p in self.pairs})

    def with_pairs(self, pairs) -> "PairRatingDataset":
        return PairRatingDataset(self.items, list(pairs), self.scale_n)


def normalize_mos(mos, scale_n: int):
    """Map ratings on ``[1, n]`` onto ``[0, 1]``."""
    return (np.asarray(mos, dtype=np.float64) - 1.0) / (scale_n - 1)


def adaptive_margin(d_gt_ap, d_gt_an, scale_n: int):
    """``|d_ap - d_an| / (n - 1)``; accepts scalars or arrays."""
    if int(scale_n) != scale_n or scale_n < 2:
        raise InvalidInputError(f"scale_n must be an integer >= 2, got {scale_n}")
    a = np.asarray(d_gt_ap, dtype=np.float64)
    b = np.asarray(d_gt_an, dtype=np.float64)
    hi = scale_n - 1
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidInputError("ground-truth distances must be finite")
    if np.any(a < 0) or np.any(b < 0) or np.any(a > hi) or np.any(b > hi):
        raise InvalidInputError(f"ground-truth distances must lie in [0, {hi}]")
    m = np.abs(a - b) / hi
    return float(m) if m.ndim == 0 else m


def similarity_to_distance(s, scale_n: int):
    """``(n - s) / (n - 1)``: the top rating maps to 0, the bottom rating to 1."""
    if int(scale_n) != scale_n or scale_n < 2:
        raise InvalidInputError(f"scale_n must be an integer >= 2, got {scale_n}")
    s_arr = np.asarray(s, dtype=np.float64)
    if not np.all(np.isfinite(s_arr)) or np.any(s_arr < 1) or np.any(s_arr > scale_n):
        raise InvalidInputError(f"similarity outside [1, {scale_n}]")
    d = (scale_n - s_arr) / (scale_n - 1)
    return float(d) if d.ndim == 0 else d


def _draw_partners(n: int, n_draw: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    out = np.empty((n, n_draw), dtype=np.int64)
    for i in range(n):
        d = rng.choice(n - 1, size=n_draw, replace=False)
        out[i] = d + (d >= i)  # skip the anchor itself
    return out


def generate_quadruplets_single(ds: FeatureDataset, pairs_per_anchor: int, seed: int) -> list[Quadruplet]:
    """Quadruplets from single-item ratings, every item serving as an anchor.

    Each anchor draws ``2 * pairs_per_anchor`` distinct partners without
    replacement; consecutive draws form a pair, and the partner whose MOS is
    closer to the anchor's becomes the positive (draw order breaks ties).
    """
    n = len(ds)
    if n < 3:
        raise InvalidConfigError(f"need at least 3 items, got {n}")
    if pairs_per_anchor < 1:
        raise InvalidConfigError("pairs_per_anchor must be >= 1")
    n_draw = 2 * pairs_per_anchor
    if n_draw > n - 1:
        raise InvalidConfigError(
            f"pairs_per_anchor={pairs_per_anchor} needs {n_draw} partners but only {n - 1} are available"
        )
    draws = _draw_partners(n, n_draw, seed)
    x, y = draws[:, 0::2], draws[:, 1::2]
    anchor = np.repeat(np.arange(n), pairs_per_anchor).reshape(n, pairs_per_anchor)
    mos = ds.mos
    dx = np.abs(mos[anchor] - mos[x])
    dy = np.abs(mos[anchor] - mos[y])
    x_pos = dx <= dy
    pos = np.where(x_pos, x, y).ravel()
    neg = np.where(x_pos, y, x).ravel()
    d_ap = np.where(x_pos, dx, dy).ravel()
    d_an = np.where(x_pos, dy, dx).ravel()
    margins = adaptive_margin(d_ap, d_an, ds.scale_n)
    ids = ds.ids
    return [
        Quadruplet(ids[a], ids[p], ids[q], m)
        for a, p, q, m in zip(anchor.ravel().tolist(), pos.tolist(), neg.tolist(), margins.tolist())
    ]


@dataclass
class PairwiseStats:
    emitted: int = 0
    ties_skipped: int = 0
    references_skipped: int = 0


def generate_quadruplets_pairwise(ds: PairRatingDataset, seed: int = 0, return_stats: bool = False):
    """Quadruplets from pair ratings: every reference is an anchor, and every
    unordered pair of its evaluated items yields one triplet.

    The more similar member becomes the positive; equal similarities are
    skipped. Similarities are already mapped onto ``[0, 1]`` distances, so the
    margin is their absolute difference. Ordering is by id; ``seed`` is
    accepted for interface symmetry and does not affect the result.
    """
    del seed
    by_ref: dict[str, list[RatedPair]] = {}
    for p in ds.pairs:
        by_ref.setdefault(p.ref_id, []).append(p)
    stats = PairwiseStats()
    quads = []
    n = ds.scale_n
    for ref in sorted(by_ref):
        rated = sorted(by_ref[ref], key=lambda p: p.eval_id)
        if len(rated) < 2:
            stats.references_skipped += 1
            continue
        for x, y in combinations(rated, 2):
            if x.similarity == y.similarity:
                stats.ties_skipped += 1
                continue
            p, q = (x, y) if x.similarity > y.similarity else (y, x)
            d_p = similarity_to_distance(p.similarity, n)
            d_q = similarity_to_distance(q.similarity, n)
            quads.append(Quadruplet(ref, p.eval_id, q.eval_id, abs(d_p - d_q)))
    stats.emitted = len(quads)
    if stats.references_skipped:
        log.warning("skipped %d reference(s) with fewer than 2 rated pairs", stats.references_skipped)
    return (quads, stats) if return_stats else quads


def quadruplet_arrays(quads: Sequence[Quadruplet], ds) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Resolve ids to row indices: ``(anchor, positive, negative, margin)`` arrays."""
    index = ds.index_of
    a = np.fromiter((index(q[0]) for q in quads), dtype=np.int64, count=len(quads))
    p = np.fromiter((index(q[1]) for q in quads), dtype=np.int64, count=len(quads))
    n = np.fromiter((index(q[2]) for q in quads), dtype=np.int64, count=len(quads))
    m = np.fromiter((q[3] for q in quads), dtype=np.float64, count=len(quads))
    return a, p, n, m


def classify_hardness(d_ap: float, d_an: float, m: float) -> HardnessClass:
    if d_an < d_ap:
        return HardnessClass.HARD
    if d_an < d_ap + m:
        return HardnessClass.SEMI_HARD
    return HardnessClass.EASY


def margin_histogram(quads, bins: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Histogram of margins on uniform edges over ``[0, 1]`` (last bin closed on the right).

    ``quads`` may be Quadruplets or bare margin values.
    """
    if bins < 1:
        raise InvalidInputError("bins must be >= 1")
    margins = np.fromiter(
        (q[3] if isinstance(q, tuple) else q for q in quads), dtype=np.float64
    )
    if margins.size and not np.all(np.isfinite(margins)):
        raise InvalidInputError("non-finite margin")
    counts, edges = np.histogram(np.clip(margins, 0.0, 1.0), bins=bins, range=(0.0, 1.0))
    return edges, counts


def check_margin_range(quads: Sequence[Quadruplet]) -> None:
    for q in quads:
        if not (0.0 <= q.margin <= 1.0) or math.isnan(q.margin):
            raise InvalidInputError(f"margin {q.margin} outside [0, 1] in {q}")
        if len({q.anchor_id, q.positive_id, q.negative_id}) != 3:
            raise InvalidInputError(f"quadruplet ids must be distinct: {q}")
