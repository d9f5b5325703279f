"""Seeded end-to-end runs: split, generate quadruplets, train, evaluate.

``run_comparison`` trains MOS regression, fixed-margin and adaptive-margin
models on identical splits and quadruplets for each seed.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from adaptive_triplet.data_io import split_ids
from adaptive_triplet.embed_net import init_net
from adaptive_triplet.evaluation import eval_reference, eval_regression
from adaptive_triplet.losses import LossWeights, RegressionKind
from adaptive_triplet.sampling import FeatureDataset, generate_quadruplets_single
from adaptive_triplet.training import TrainConfig, train

METHODS = ("regression", "fixed", "adaptive")
DEFAULT_PAIRS_PER_ANCHOR = 5


@dataclass
class RunResult:
    method: str
    seed: int
    reference_srocc: float
    regression_srocc: Optional[float]
    collapsed: bool
    epochs_run: int
    final_triplet_loss: float


@dataclass
class ComparisonResult:
    runs: list[RunResult] = field(default_factory=list)

    def for_method(self, method: str) -> list[RunResult]:
        return [r for r in self.runs if r.method == method]

    def median_reference(self, method: str) -> float:
        return statistics.median(r.reference_srocc for r in self.for_method(method))

    def median_regression(self, method: str) -> Optional[float]:
        vals = [r.regression_srocc for r in self.for_method(method) if r.regression_srocc is not None]
        return statistics.median(vals) if vals else None

    def collapse_count(self, method: str) -> int:
        return sum(r.collapsed for r in self.for_method(method))

    def methods(self) -> list[str]:
        return [m for m in METHODS if self.for_method(m)]

    def to_dict(self) -> dict:
        return {
            "summary": {
                m: {
                    "median_reference_srocc": self.median_reference(m),
                    "median_regression_srocc": self.median_regression(m),
                    "collapsed": self.collapse_count(m),
                    "runs": len(self.for_method(m)),
                }
                for m in self.methods()
            },
            "runs": [vars(r) for r in self.runs],
        }

    def table(self) -> str:
        rows = [("", *self.methods())]
        rows.append(("median SROCC (reference image)",
                     *(f"{self.median_reference(m):.4f}" for m in self.methods())))
        rows.append(("median SROCC (regression branch)",
                     *(_opt(self.median_regression(m)) for m in self.methods())))
        rows.append(("collapsed runs", *(f"{self.collapse_count(m)}/{len(self.for_method(m))}"
                                         for m in self.methods())))
        widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
        return "\n".join("  ".join(c.rjust(w) if k else c.ljust(w) for k, (c, w) in enumerate(zip(r, widths)))
                         for r in rows) + "\n"


def _opt(v):
    return "-" if v is None else f"{v:.4f}"


def regression_config(base: TrainConfig) -> TrainConfig:
    """MOS-regression-only variant of ``base``: triplet weight 0, regression weight 1."""
    return replace(base, loss_weights=LossWeights(0.0, 1.0),
                   regression=base.regression or RegressionKind.MAE)


def run_single(ds: FeatureDataset, cfg: TrainConfig, seed: int, method: str = "adaptive",
               pairs_per_anchor: int = DEFAULT_PAIRS_PER_ANCHOR, test_frac: float = 0.2,
               quads=None, split=None) -> RunResult:
    train_ids, test_ids = split or split_ids(ds.ids, test_frac, seed)
    train_ds = ds.subset(train_ids)
    if quads is None:
        quads = generate_quadruplets_single(train_ds, pairs_per_anchor, seed)
    cfg = replace(cfg, seed=seed)
    net0 = init_net(ds.feature_dim, cfg.hidden_dims, cfg.embed_dim, cfg.activation, seed=seed)
    net, head, report = train(net0, None, train_ds, quads, cfg)
    ref = eval_reference(net, ds, test_ids).srocc
    reg = eval_regression(net, head, ds, test_ids).srocc if head is not None else None
    return RunResult(method, seed, ref, reg, report.collapsed, report.epochs_run,
                     report.triplet_loss[-1] if report.triplet_loss else float("nan"))


def run_comparison(ds: FeatureDataset, cfg_fixed: TrainConfig, cfg_adaptive: TrainConfig,
                   seeds: Sequence[int], pairs_per_anchor: int = DEFAULT_PAIRS_PER_ANCHOR,
                   test_frac: float = 0.2, cfg_regression: Optional[TrainConfig] = None,
                   methods: Sequence[str] = METHODS) -> ComparisonResult:
    """All requested methods see the same split, quadruplets and initial weights per seed."""
    cfgs = {
        "regression": cfg_regression or regression_config(cfg_adaptive),
        "fixed": cfg_fixed,
        "adaptive": cfg_adaptive,
    }
    out = ComparisonResult()
    for seed in seeds:
        split = split_ids(ds.ids, test_frac, seed)
        quads = generate_quadruplets_single(ds.subset(split[0]), pairs_per_anchor, seed)
        for m in METHODS:
            if m in methods:
                out.runs.append(run_single(ds, cfgs[m], seed, m, quads=quads, split=split))
    return out
