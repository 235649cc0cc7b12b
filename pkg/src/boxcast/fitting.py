"""Maximum-likelihood fitting of the tabular chain and the Gaussian baseline.

Fitting is count-based: symmetry-equivalent parameter tuples of each label
are enumerated, quantized, and accumulated as fractional counts into the
per-(context, step, prefix-bucket) tables.  Accumulation is order-independent
so a shuffled dataset produces bit-identical tables.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxes import (
    PARAM_NAMES,
    BoxCodec,
    BoxParams,
    Normalizer,
    Quantizer,
    SymmetryMode,
    default_ranges,
    enumerate_equivalent_params,
    quantize_box,
)
from .distributions import (
    DEFAULT_PARAM_ORDER,
    GaussianBaseline,
    TabularChain,
    log_prob,
    expectation_refine,
    sample,
)
from .geometry import iou

__all__ = [
    "TrainingExample",
    "FitConfig",
    "FitReport",
    "build_targets",
    "fit_tabular",
    "fit_gaussian",
    "evaluate_nll",
    "expected_iou_loss",
]


@dataclass(frozen=True)
class TrainingExample:
    """One labeled object: context, ground-truth box, and its scene frame."""

    ctx: object  # Context
    box: BoxParams
    normalizer: Normalizer
    symmetry: SymmetryMode = SymmetryMode.NONE


@dataclass(frozen=True)
class FitConfig:
    alpha: float = 0.1
    prefix_buckets: int = 8
    symmetry_averaging: bool = True
    bins: int = 512
    ranges: np.ndarray = None
    auto_ranges: bool = True
    param_order: tuple = DEFAULT_PARAM_ORDER

    def __post_init__(self):
        if self.alpha <= 0.0:
            raise ValueError("alpha must be positive")
        if self.prefix_buckets < 1:
            raise ValueError("prefix_buckets must be >= 1")


@dataclass(frozen=True)
class FitReport:
    dataset_size: int
    overflow_rate: float
    nll: float
    per_step_entropy: tuple

    def to_json_dict(self):
        return {
            "dataset_size": self.dataset_size,
            "overflow_rate": self.overflow_rate,
            "nll": self.nll,
            "per_step_entropy": list(self.per_step_entropy),
        }


def build_targets(example, quantizer, symmetry_averaging=True):
    """Weighted quantized targets for one example.

    With symmetry averaging, every parameter tuple equivalent to the label
    under the example's symmetry mode becomes a target with weight 1/|B|.
    """
    if symmetry_averaging:
        members = enumerate_equivalent_params(example.box, example.symmetry)
    else:
        members = [example.box.canonical()]
    weight = 1.0 / len(members)
    return [
        (quantize_box(m, example.normalizer, quantizer, example.symmetry), weight)
        for m in members
    ]


def _resolve_quantizer(data, cfg):
    if cfg.ranges is not None:
        return Quantizer(cfg.bins, cfg.ranges)
    if not cfg.auto_ranges:
        return Quantizer(cfg.bins, default_ranges())
    # Calibrate dim/center ranges to cover the normalized training values.
    # Ranges are per parameter: a near-degenerate scale on one axis (e.g. a
    # flat top-face stub in z) must not stretch the bins of the others.
    ranges = default_ranges()
    vecs = np.stack(
        [ex.normalizer.normalize_params(ex.box.canonical().params_vector()) for ex in data]
    )
    for p in range(3):
        hi = max(float(vecs[:, p].max()) * 1.05, 1.0)
        ranges[p] = [0.0, hi]
    for p in range(3, 6):
        hw = max(float(np.abs(vecs[:, p]).max()) * 1.05, 1.0)
        ranges[p] = [-hw, hw]
    return Quantizer(cfg.bins, ranges)


def fit_tabular(data, cfg=FitConfig()):
    """Fit a TabularChain by (weighted counts + alpha) row normalization."""
    data = list(data)
    if not data:
        raise ValueError("empty dataset")
    quantizer = _resolve_quantizer(data, cfg)
    order_pos = [PARAM_NAMES.index(name) for name in cfg.param_order]
    buckets = cfg.prefix_buckets
    bins = cfg.bins

    contributions = []  # (ctx, step, prefix_key, bin, weight)
    vocab = set()
    for ex in data:
        cid = int(ex.ctx.scene_id)
        vocab.add(cid)
        for qbox, weight in build_targets(ex, quantizer, cfg.symmetry_averaging):
            seq = tuple(qbox.indices[p] for p in order_pos)
            for step in range(len(seq)):
                key = tuple(i * buckets // bins for i in seq[:step])
                contributions.append((cid, step, key, seq[step], weight))
    # Order-independent accumulation: sorted before summing.
    contributions.sort()
    tables = {}
    marginals = {}
    for cid, step, key, b, weight in contributions:
        row = tables.setdefault((cid, step, key), np.zeros(bins))
        row[b] += weight
        marg = marginals.setdefault((cid, step), np.zeros(bins))
        marg[b] += weight

    sample_norm = data[0].normalizer
    codec = BoxCodec(sample_norm, quantizer, data[0].symmetry)
    return TabularChain(
        bins,
        vocab,
        tables,
        marginals,
        alpha=cfg.alpha,
        prefix_buckets=buckets,
        param_order=cfg.param_order,
        codec=codec,
    )


def fit_gaussian(data, cfg=FitConfig()):
    """Fit the independent-Gaussian baseline on normalized parameters."""
    data = list(data)
    if not data:
        raise ValueError("empty dataset")
    quantizer = _resolve_quantizer(data, cfg)
    per_ctx = {}
    for ex in data:
        cid = int(ex.ctx.scene_id)
        if cfg.symmetry_averaging:
            members = enumerate_equivalent_params(ex.box, ex.symmetry)
        else:
            members = [ex.box.canonical()]
        weight = 1.0 / len(members)
        for m in members:
            vec = ex.normalizer.normalize_params(m.params_vector())
            per_ctx.setdefault(cid, []).append((vec, weight))
    means = {}
    log_vars = {}
    for cid, rows in per_ctx.items():
        vecs = np.stack([r[0] for r in rows])
        weights = np.array([r[1] for r in rows])
        weights = weights / weights.sum()
        mu = weights @ vecs
        var = weights @ (vecs - mu) ** 2
        var = np.maximum(var, 1e-8)
        means[cid] = mu
        log_vars[cid] = np.log(var)
    codec = BoxCodec(data[0].normalizer, quantizer, data[0].symmetry)
    return GaussianBaseline(means, log_vars, codec, param_order=cfg.param_order)


def evaluate_nll(model, data):
    """Mean negative log likelihood over symmetry-averaged targets."""
    data = list(data)
    if not data:
        raise ValueError("empty dataset")
    total = 0.0
    for ex in data:
        quantizer = model.codec.quantizer
        targets = build_targets(ex, quantizer, symmetry_averaging=True)
        total += -sum(w * log_prob(model, qb, ex.ctx) for qb, w in targets)
    return total / len(data)


def expected_iou_loss(model, ctx, gt, n_samples, rng):
    """Monte-Carlo estimate of E[1 - IoU(refined sample, gt)]; diagnostic only."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    total = 0.0
    for _ in range(n_samples):
        sampled = sample(model, ctx, rng)
        refined = expectation_refine(model, sampled, ctx)
        total += 1.0 - iou(refined, gt)
    return total / n_samples


def fit_report(model, data):
    """Dataset-level diagnostics: size, overflow rate, NLL, per-step entropy."""
    data = list(data)
    quantizer = model.codec.quantizer
    flagged = 0
    total_params = 0
    for ex in data:
        for qbox, _ in build_targets(ex, quantizer, symmetry_averaging=True):
            flagged += sum(qbox.overflow_flags)
            total_params += len(qbox.overflow_flags)
    entropies = []
    for step in range(model.num_params):
        ent = 0.0
        for cid in sorted(model.context_vocab):
            probs = model._marginal_probs[(cid, step)]
            ent += -float(np.sum(probs * np.log(np.maximum(probs, 1e-300))))
        entropies.append(ent / max(len(model.context_vocab), 1))
    return FitReport(
        dataset_size=len(data),
        overflow_rate=flagged / max(total_params, 1),
        nll=evaluate_nll(model, data),
        per_step_entropy=tuple(entropies),
    )
