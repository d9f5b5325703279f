"""File formats, train/test splits and the synthetic planted-score generator.

Every float is written with 17 significant digits so doubles survive a
round trip bit-exactly. Writes go to a temporary file that is renamed into
place, so a failed run never leaves a half-written output behind.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from adaptive_triplet.embed_net import EmbeddingNet
from adaptive_triplet.errors import InvalidConfigError, InvalidInputError, ParseError
from adaptive_triplet.sampling import (
    FeatureDataset,
    ItemTable,
    PairRatingDataset,
    Quadruplet,
    RatedPair,
)
from adaptive_triplet.training import RegressionHead, TrainConfig, TrainReport


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _read_rows(path):
    """Yield ``(line_number, row)`` for each data row; the header is returned first."""
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except UnicodeDecodeError as exc:
        raise ParseError(f"not UTF-8: {exc}", path) from exc
    if not rows:
        raise ParseError("missing header", path, 1)
    return rows[0], [(k + 2, r) for k, r in enumerate(rows[1:]) if r]


def _float(cell: str, path, line, what) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise ParseError(f"{what}: not a number: {cell!r}", path, line) from None
    if not math.isfinite(v):
        raise ParseError(f"{what}: non-finite value {cell!r}", path, line)
    return v


# ---------------------------------------------------------------------------
# datasets


def _item_rows(table: ItemTable):
    for i, f, m in zip(table.ids, table.features, table.mos):
        yield [i, fmt(m), *(fmt(v) for v in f)]


def dumps_items(table: ItemTable) -> str:
    header = ["id", "mos", *(f"f{k}" for k in range(table.features.shape[1]))]
    return _csv_text(header, _item_rows(table))


def save_feature_dataset(ds: ItemTable, path) -> None:
    atomic_write(path, dumps_items(ds))


def _load_item_columns(path):
    header, rows = _read_rows(path)
    if header[:2] != ["id", "mos"] or any(h != f"f{k}" for k, h in enumerate(header[2:])):
        raise ParseError(f"expected header id,mos,f0,f1,..., got {','.join(header)}", path, 1)
    dim = len(header) - 2
    ids, mos, feats, seen = [], [], [], {}
    for line, r in rows:
        if len(r) != dim + 2:
            raise ParseError(f"expected {dim + 2} fields, got {len(r)}", path, line)
        if r[0] in seen:
            raise ParseError(f"duplicate id {r[0]!r} (first seen on line {seen[r[0]]})", path, line)
        seen[r[0]] = line
        ids.append(r[0])
        mos.append(_float(r[1], path, line, "mos"))
        feats.append([_float(c, path, line, f"f{k}") for k, c in enumerate(r[2:])])
    return ids, np.array(feats, dtype=np.float64).reshape(len(ids), dim), np.array(mos), rows


def load_feature_dataset(path, scale_n: int = 5) -> FeatureDataset:
    ids, feats, mos, rows = _load_item_columns(path)
    for (line, _), m in zip(rows, mos):
        if not 1 <= m <= scale_n:
            raise ParseError(f"mos {m} outside [1, {scale_n}]", path, line)
    return FeatureDataset(ids, feats, mos, scale_n)


def dumps_pairs(pairs: Sequence[RatedPair]) -> str:
    return _csv_text(["ref_id", "eval_id", "similarity"],
                     ([p.ref_id, p.eval_id, fmt(p.similarity)] for p in pairs))


def load_pairs(path, scale_n: Optional[int] = None) -> list[RatedPair]:
    header, rows = _read_rows(path)
    if header != ["ref_id", "eval_id", "similarity"]:
        raise ParseError(f"expected header ref_id,eval_id,similarity, got {','.join(header)}", path, 1)
    out, seen = [], set()
    for line, r in rows:
        if len(r) != 3:
            raise ParseError(f"expected 3 fields, got {len(r)}", path, line)
        s = _float(r[2], path, line, "similarity")
        if scale_n is not None and not 1 <= s <= scale_n:
            raise ParseError(f"similarity {s} outside [1, {scale_n}]", path, line)
        if (r[0], r[1]) in seen:
            raise ParseError(f"duplicate pair ({r[0]}, {r[1]})", path, line)
        seen.add((r[0], r[1]))
        out.append(RatedPair(r[0], r[1], s))
    return out


def save_pair_dataset(ds: PairRatingDataset, items_path, pairs_path) -> None:
    atomic_write(items_path, dumps_items(ds.items))
    atomic_write(pairs_path, dumps_pairs(ds.pairs))


def load_pair_dataset(items_path, pairs_path, scale_n: int = 5) -> PairRatingDataset:
    ids, feats, mos, _ = _load_item_columns(items_path)
    items = ItemTable(ids, feats, mos)
    pairs = load_pairs(pairs_path, scale_n)
    for k, p in enumerate(pairs):
        for i in (p.ref_id, p.eval_id):
            if i not in items._index:
                raise ParseError(f"unknown item id {i!r}", pairs_path, k + 2)
    return PairRatingDataset(items, pairs, scale_n)


def dumps_quadruplets(quads: Sequence[Quadruplet]) -> str:
    return _csv_text(["anchor_id", "positive_id", "negative_id", "margin"],
                     ([q[0], q[1], q[2], fmt(q[3])] for q in quads))


def save_quadruplets(quads, path) -> None:
    atomic_write(path, dumps_quadruplets(quads))


def load_quadruplets(path) -> list[Quadruplet]:
    header, rows = _read_rows(path)
    if header != ["anchor_id", "positive_id", "negative_id", "margin"]:
        raise ParseError("expected header anchor_id,positive_id,negative_id,margin", path, 1)
    out = []
    for line, r in rows:
        if len(r) != 4:
            raise ParseError(f"expected 4 fields, got {len(r)}", path, line)
        m = _float(r[3], path, line, "margin")
        if not 0.0 <= m <= 1.0:
            raise ParseError(f"margin {m} outside [0, 1]", path, line)
        if len({r[0], r[1], r[2]}) != 3:
            raise ParseError("anchor, positive and negative ids must be distinct", path, line)
        out.append(Quadruplet(r[0], r[1], r[2], m))
    return out


def save_ids(ids: Sequence[str], path) -> None:
    atomic_write(path, "".join(f"{i}\n" for i in ids))


def load_ids(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# JSON documents


def _dumps_json(doc) -> str:
    return json.dumps(doc, indent=1, allow_nan=False) + "\n"


def _load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path, exc.lineno) from exc


def save_model(net: EmbeddingNet, path, head: Optional[RegressionHead] = None) -> None:
    """Network JSON; a trained regression head rides along under ``"head"``."""
    doc = net.to_dict()
    if head is not None:
        doc["head"] = head.to_dict()
    atomic_write(path, _dumps_json(doc))


def load_model(path) -> tuple[EmbeddingNet, Optional[RegressionHead]]:
    doc = _load_json(path)
    try:
        net = EmbeddingNet.from_dict(doc)
        head = RegressionHead.from_dict(doc["head"]) if doc.get("head") else None
    except (InvalidInputError, KeyError, TypeError) as exc:
        raise ParseError(f"invalid model: {exc}", path) from exc
    return net, head


def save_config(cfg: TrainConfig, path) -> None:
    atomic_write(path, _dumps_json(cfg.to_dict()))


def load_config(path) -> TrainConfig:
    doc = _load_json(path)
    if not isinstance(doc, dict):
        raise ParseError("config must be a JSON object", path)
    try:
        return TrainConfig.from_dict(doc)
    except (InvalidConfigError, InvalidInputError) as exc:
        raise ParseError(str(exc), path) from exc


def save_report(report: TrainReport, path) -> None:
    atomic_write(path, _dumps_json(report.to_dict()))


def load_report(path) -> TrainReport:
    return TrainReport.from_dict(_load_json(path))


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    n_items: int = 2000
    feature_dim: int = 8
    scale_n: int = 5
    noise_sigma: float = 0.25
    feature_noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n_items < 10 or self.feature_dim < 2 or self.scale_n < 2:
            raise InvalidConfigError("need n_items >= 10, feature_dim >= 2, scale_n >= 2")
        for s in (self.noise_sigma, self.feature_noise_sigma):
            if not (math.isfinite(s) and s >= 0):
                raise InvalidConfigError("noise sigmas must be finite and nonnegative")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        try:
            return cls(**doc)
        except TypeError as exc:
            raise InvalidConfigError(f"invalid synthetic spec: {exc}") from exc


def load_synthetic_spec(path) -> SyntheticSpec:
    try:
        return SyntheticSpec.from_dict(_load_json(path))
    except InvalidConfigError as exc:
        raise ParseError(str(exc), path) from exc


def generate_synthetic(spec: SyntheticSpec, return_latent: bool = False):
    """Planted-score dataset: a hidden ``z ~ U[0, 1]`` drives both MOS and features.

    MOS is ``1 + z (n - 1)`` plus rating noise, clamped to the scale. Features
    are a seeded random linear mix of ``(z, z^2, sin 2 pi z)`` plus noise.
    """
    rng = np.random.default_rng(spec.seed)
    n, top = spec.n_items, spec.scale_n
    z = rng.uniform(0.0, 1.0, n)
    mos = np.clip(1.0 + z * (top - 1) + rng.normal(0.0, spec.noise_sigma, n), 1.0, top)
    mix = rng.normal(size=(spec.feature_dim, 3))
    basis = np.column_stack([z, z * z, np.sin(2 * np.pi * z)])
    feats = basis @ mix.T + rng.normal(0.0, spec.feature_noise_sigma, (n, spec.feature_dim))
    width = len(str(n - 1))
    ids = [f"item{k:0{width}d}" for k in range(n)]
    ds = FeatureDataset(ids, feats, mos, top)
    return (ds, z) if return_latent else ds


def generate_synthetic_pairwise(spec: SyntheticSpec, refs: int, evals_per_ref: int,
                                return_latent: bool = False):
    """Pair-rating dataset: each reference gets its own evaluated items.

    ``similarity = clamp(n - |z_r - z_e| (n - 1) + noise, 1, n)``.
    """
    if refs < 1 or evals_per_ref < 1 or refs * (evals_per_ref + 1) > spec.n_items:
        raise InvalidConfigError(
            f"{refs} references x {evals_per_ref} evaluated items need "
            f"{refs * (evals_per_ref + 1)} items, spec has {spec.n_items}"
        )
    ds, z = generate_synthetic(spec, return_latent=True)
    rng = np.random.default_rng([spec.seed, 1])
    perm = rng.permutation(spec.n_items)
    top = spec.scale_n
    ref_idx = perm[:refs]
    ev_idx = perm[refs:refs + refs * evals_per_ref].reshape(refs, evals_per_ref)
    gap = np.abs(z[ref_idx][:, None] - z[ev_idx])
    sim = np.clip(top - gap * (top - 1) + rng.normal(0.0, spec.noise_sigma, gap.shape), 1.0, top)
    pairs = [
        RatedPair(ds.ids[r], ds.ids[e], float(s))
        for r, row_e, row_s in zip(ref_idx, ev_idx, sim)
        for e, s in zip(row_e, row_s)
    ]
    out = PairRatingDataset(ItemTable(ds.ids, ds.features, ds.mos), pairs, top)
    return (out, z) if return_latent else out


def split_ids(ids: Sequence[str], test_frac: float, seed: int) -> tuple[list[str], list[str]]:
    """Seeded random split; both halves keep the input's order."""
    if not 0 < test_frac < 1:
        raise InvalidConfigError("test_frac must lie in (0, 1)")
    n = len(ids)
    n_test = int(round(n * test_frac))
    rng = np.random.default_rng([seed, 2])
    test_mask = np.zeros(n, dtype=bool)
    test_mask[rng.choice(n, size=n_test, replace=False)] = True
    train = [i for i, t in zip(ids, test_mask) if not t]
    test = [i for i, t in zip(ids, test_mask) if t]
    return train, test


def split_pairs_by_reference(ds: PairRatingDataset, test_frac: float, seed: int):
    """Split pairs so no reference appears on both sides."""
    train_refs, test_refs = split_ids(ds.reference_ids(), test_frac, seed)
    test_set = set(test_refs)
    train = [p for p in ds.pairs if p.ref_id not in test_set]
    test = [p for p in ds.pairs if p.ref_id in test_set]
    return train, test
