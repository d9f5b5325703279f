"""Rank-correlation evaluation of trained embeddings.

Three procedures are supported: distances of rated test pairs against their
ground-truth distances, distances of test items to the highest-rated test
item, and the predictions of a regression head.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from adaptive_triplet.embed_net import EmbeddingNet, embed
from adaptive_triplet.errors import InvalidInputError
from adaptive_triplet.sampling import FeatureDataset, PairRatingDataset, RatedPair, similarity_to_distance


class RankMethod(str, enum.Enum):
    PAIRWISE_DISTANCE = "pairwise_distance"
    REFERENCE_IMAGE = "reference_image"
    REGRESSION_BRANCH = "regression_branch"


# Orientation of each method's score: a better-than-random model scores positive.
ORIENTATION = {
    RankMethod.PAIRWISE_DISTANCE: "embedding distance vs ground-truth distance",
    RankMethod.REFERENCE_IMAGE: "negated: distance to best-rated item vs MOS",
    RankMethod.REGRESSION_BRANCH: "predicted MOS vs MOS",
}


@dataclass(frozen=True)
class RankResult:
    srocc: float
    n: int
    method: RankMethod

    def to_dict(self) -> dict:
        return {"method": self.method.value, "srocc": self.srocc, "n": self.n}


def rankdata(x) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x))
    # boundaries of runs of equal values in sorted order
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], len(x)]
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = 0.5 * (s + e - 1) + 1.0
    return ranks


def srocc(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman's rho: Pearson correlation of average ranks. Constant input scores 0."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape:
        raise InvalidInputError(f"srocc needs two equal-length vectors, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise InvalidInputError("srocc needs at least 2 observations")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InvalidInputError("srocc inputs must be finite")
    rx = rankdata(x)
    ry = rankdata(y)
    rx -= rx.mean()
    ry -= ry.mean()
    sxx = float(rx @ rx)
    syy = float(ry @ ry)
    if sxx == 0.0 or syy == 0.0:
        return 0.0
    rho = float(rx @ ry) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, rho))


def eval_pairwise(net: EmbeddingNet, ds: PairRatingDataset, test_pairs: Sequence[RatedPair],
                  train_ref_ids: Optional[Sequence[str]] = None) -> RankResult:
    """SROCC between embedding distances of test pairs and their ground-truth distances."""
    pairs = [RatedPair(*p) for p in test_pairs]
    if len(pairs) < 2:
        raise InvalidInputError("need at least 2 test pairs")
    if train_ref_ids is not None:
        shared = {p.ref_id for p in pairs} & set(train_ref_ids)
        if shared:
            raise InvalidInputError(f"test references overlap training references: {sorted(shared)[:5]}")
    ref = ds.indices([p.ref_id for p in pairs])
    ev = ds.indices([p.eval_id for p in pairs])
    e_ref = embed(net, ds.features[ref])
    e_ev = embed(net, ds.features[ev])
    pred = np.linalg.norm(e_ref - e_ev, axis=1)
    gt = similarity_to_distance(np.array([p.similarity for p in pairs]), ds.scale_n)
    return RankResult(srocc(pred, gt), len(pairs), RankMethod.PAIRWISE_DISTANCE)


def reference_id(ds: FeatureDataset, test_ids: Sequence[str]) -> str:
    """Highest-MOS test item; ties go to the lexicographically smallest id."""
    mos = ds.mos[ds.indices(test_ids)]
    best = mos.max()
    return min(i for i, m in zip(test_ids, mos) if m == best)


def eval_reference(net: EmbeddingNet, ds: FeatureDataset, test_ids: Sequence[str]) -> RankResult:
    """Rank test items by embedding distance to the best-rated test item."""
    test_ids = list(test_ids)
    if len(test_ids) < 2:
        raise InvalidInputError("need at least 2 test items")
    ref = reference_id(ds, test_ids)
    others = [i for i in test_ids if i != ref]
    e_ref = embed(net, ds.features[ds.index_of(ref)])
    idx = ds.indices(others)
    dist = np.linalg.norm(embed(net, ds.features[idx]) - e_ref, axis=1)
    if len(others) < 2:
        return RankResult(0.0, len(others), RankMethod.REFERENCE_IMAGE)
    rho = srocc(dist, ds.mos[idx])
    # closer to the best item should mean higher MOS; avoid reporting -0.0
    return RankResult(-rho if rho else 0.0, len(others), RankMethod.REFERENCE_IMAGE)


def eval_regression(net: EmbeddingNet, head, ds: FeatureDataset, test_ids: Sequence[str]) -> RankResult:
    """SROCC between regression-head predictions and MOS."""
    test_ids = list(test_ids)
    if len(test_ids) < 2:
        raise InvalidInputError("need at least 2 test items")
    if head is None:
        raise InvalidInputError("model has no regression head")
    idx = ds.indices(test_ids)
    pred = head.predict(embed(net, ds.features[idx]))
    return RankResult(srocc(pred, ds.mos[idx]), len(test_ids), RankMethod.REGRESSION_BRANCH)


def format_table(results: Sequence[RankResult]) -> str:
    rows = [("method", "srocc", "n", "orientation")]
    rows += [(r.method.value, f"{r.srocc:.4f}", str(r.n), ORIENTATION[r.method]) for r in results]
    widths = [max(len(row[c]) for row in rows) for c in range(4)]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows) + "\n"


def hardness_counts(net: EmbeddingNet, ds, quads, fixed_margin: Optional[float] = None) -> dict:
    """Count hard / semi-hard / easy quadruplets under the current embedding.

    Uses each quadruplet's own margin unless ``fixed_margin`` is given.
    """
    from adaptive_triplet.sampling import HardnessClass, classify_hardness, quadruplet_arrays

    a, p, n, m = quadruplet_arrays(quads, ds)
    counts = {h.value: 0 for h in HardnessClass}
    if len(a) == 0:
        return counts
    e = embed(net, ds.features)
    d_ap = np.linalg.norm(e[a] - e[p], axis=1)
    d_an = np.linalg.norm(e[a] - e[n], axis=1)
    if fixed_margin is not None:
        m = np.full_like(m, fixed_margin)
    for x, y, z in zip(d_ap.tolist(), d_an.tolist(), m.tolist()):
        counts[classify_hardness(x, y, z).value] += 1
    return counts
