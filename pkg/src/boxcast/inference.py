"""Decoding procedures for autoregressive box distributions.

Covers beam-search mode finding, Monte-Carlo occupancy, quantile-box
construction (minimum-volume box over the occupancy quantile, searched over
sampled rotations), the quantile-IoU uncertainty measure, and SKU
dimension-conditioned prediction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boxes import BoxParams, corners
from .distributions import NEG_INF, condition_on_dims, log_prob, sample
from .geometry import iou

__all__ = [
    "BeamConfig",
    "QuantileConfig",
    "QuantileResult",
    "beam_search",
    "estimate_occupancy",
    "sample_points_in_box",
    "quantile_box",
    "quantile_boxes",
    "uncertainty_measure",
    "dimension_conditioned_predict",
]


@dataclass(frozen=True)
class BeamConfig:
    beam_width: int = 32

    def __post_init__(self):
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")


@dataclass(frozen=True)
class QuantileConfig:
    q: float = 0.5
    k: int = 64  # box samples
    m: int = 64  # interior points per box (stratified when a perfect cube)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.q < 1.0:
            raise ValueError("q must be in (0, 1)")
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.m < 1:
            raise ValueError("m must be >= 1")


@dataclass(frozen=True, eq=False)
class QuantileResult:
    """Sampled boxes, occupancy-tagged point set, and the quantile box."""

    q: float
    sampled_boxes: tuple
    points: np.ndarray  # (n, 3) pooled point set
    occupancy: np.ndarray  # (n,) occupancy of each pooled point
    quantile_points: np.ndarray  # subset with occupancy > q
    box: BoxParams
    rotation_index: int
    config: QuantileConfig = field(default=None, compare=False)


def beam_search(dist, ctx, cfg=BeamConfig()):
    """Approximate argmax of the chain by breadth beam search.

    Keeps the top-width prefixes by cumulative log probability at each step;
    ties break toward the lowest bin index.  Returns (tuple, log_prob), where
    the score is recomputed through log_prob for exact consistency.
    """
    dist.validate_context(ctx)
    width = min(cfg.beam_width, dist.bins ** dist.num_params)
    beams = [()]
    scores = np.zeros(1)
    for _ in range(dist.num_params):
        cand_scores = []
        cand_seqs = []
        for beam, score in zip(beams, scores):
            probs = dist.conditional_probs(beam, ctx)
            with np.errstate(divide="ignore"):
                logs = np.where(probs > 0.0, np.log(np.maximum(probs, 1e-300)), NEG_INF)
            cand_scores.append(score + logs)
            cand_seqs.extend(beam + (b,) for b in range(dist.bins))
        flat = np.concatenate(cand_scores)
        top = np.argsort(-flat, kind="stable")[:width]
        beams = [cand_seqs[i] for i in top]
        scores = flat[top]
    best = beams[0]
    return dist.sequence_to_quantized(best), log_prob(dist, best, ctx)


def estimate_occupancy(points, boxes, weights=None):
    """O(x) = (1/k) sum of box membership indicators, for each point.

    Optional weights turn the boxes into a weighted sample (multiplicities);
    the result is then the weighted membership fraction.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(boxes) == 0:
        raise ValueError("need at least one box")
    if weights is None:
        return _containment_counts(points, boxes) / len(boxes)
    weights = np.asarray(weights, dtype=float)
    return _containment_counts(points, boxes, weights=weights) / weights.sum()


def _containment_counts(points, boxes, tol=1e-12, weights=None):
    """(Weighted) number of boxes containing each point, batched over chunks."""
    n = len(points)
    counts = np.zeros(n)
    chunk = max(1, int(2_000_000 // max(n, 1)))
    for start in range(0, len(boxes), chunk):
        part = boxes[start : start + chunk]
        rots = np.stack([b.rotation_matrix() for b in part])  # (c, 3, 3)
        centers = np.stack([np.asarray(b.center) for b in part])  # (c, 3)
        halves = np.stack([np.asarray(b.dims) / 2.0 for b in part]) + tol  # (c, 3)
        local = np.einsum("nj,cjk->cnk", points, rots) - np.einsum(
            "cj,cjk->ck", centers, rots
        )[:, None, :]
        inside = np.all(np.abs(local) <= halves[:, None, :], axis=2)
        if weights is None:
            counts += inside.sum(axis=0)
        else:
            counts += weights[start : start + chunk] @ inside
    return counts


def sample_points_in_box(box, m, rng):
    """m points uniform in the box; jittered s^3 grid strata when m = s^3."""
    s = round(m ** (1.0 / 3.0))
    if s**3 == m and s > 1:
        cells = np.stack(
            np.meshgrid(np.arange(s), np.arange(s), np.arange(s), indexing="ij"), axis=-1
        ).reshape(-1, 3)
        unit = (cells + rng.random((m, 3))) / s
    else:
        unit = rng.random((m, 3))
    local = (unit - 0.5) * np.asarray(box.dims)
    return np.asarray(box.center) + local @ box.rotation_matrix().T


def quantile_boxes(dist, ctx, qs, cfg=QuantileConfig()):
    """Quantile boxes for several q values from one shared sample set.

    Samples k boxes, pools m interior points plus the 8 corners of each box
    (the corner augmentation keeps the sampled occupancy-quantile hull from
    systematically undershooting the sampled boxes' extents), estimates
    occupancy, and for each q returns the minimum-volume box over Q(q) among
    the sampled rotations.
    """
    dist.validate_context(ctx)
    rng = np.random.default_rng(cfg.seed)
    boxes = [dist.sample_box(ctx, rng) for _ in range(cfg.k)]
    # Draws repeat heavily on concentrated chains; fold duplicates into
    # multiplicity weights so occupancy and the rotation search scale with
    # the number of distinct boxes, not k.
    unique = {}
    for b in boxes:
        key = (b.dims, b.center, b.rot)
        if key in unique:
            unique[key][1] += 1.0
        else:
            unique[key] = [b, 1.0]
    uniq_boxes = [v[0] for v in unique.values()]
    weights = np.array([v[1] for v in unique.values()])
    pools = [sample_points_in_box(b, cfg.m, rng) for b in uniq_boxes]
    pools.extend(corners(b) for b in uniq_boxes)
    points = np.vstack(pools)
    occupancy = estimate_occupancy(points, uniq_boxes, weights=weights)
    results = {}
    for q in qs:
        if not 0.0 < q < 1.0:
            raise ValueError("q must be in (0, 1)")
        keep = occupancy > q
        if not np.any(keep):
            raise ValueError(f"quantile too high for sample (q={q})")
        qpts = points[keep]
        best = None
        for i, box in enumerate(uniq_boxes):
            rot = box.rotation_matrix()
            local = qpts @ rot
            lo = local.min(axis=0)
            hi = local.max(axis=0)
            vol = float(np.prod(hi - lo))
            if best is None or vol < best[0] - 1e-15:
                best = (vol, i, lo, hi, rot, box)
        _, _, lo, hi, rot, src = best
        dims = np.maximum(hi - lo, 1e-9)
        center = rot @ (lo + dims / 2.0)
        out_box = BoxParams(tuple(dims), tuple(center), src.rot)
        idx = boxes.index(src)  # report the index among the raw draws
        results[q] = QuantileResult(
            q=q,
            sampled_boxes=tuple(boxes),
            points=points,
            occupancy=occupancy,
            quantile_points=qpts,
            box=out_box,
            rotation_index=idx,
            config=cfg,
        )
    return results


def quantile_box(dist, ctx, cfg=QuantileConfig()):
    """The quantile box for cfg.q; see quantile_boxes."""
    return quantile_boxes(dist, ctx, [cfg.q], cfg)[cfg.q]


def uncertainty_measure(dist, ctx, alpha, beta, cfg=QuantileConfig()):
    """U = 1 - IoU of the alpha- and beta-quantile boxes (shared samples)."""
    if not 0.0 < alpha < beta < 1.0:
        raise ValueError("need 0 < alpha < beta < 1")
    results = quantile_boxes(dist, ctx, [alpha, beta], cfg)
    return 1.0 - iou(results[alpha].box, results[beta].box)


def dimension_conditioned_predict(dist, ctx, sku_dims, cfg=BeamConfig()):
    """Best box over beam searches conditioned on each candidate SKU dims.

    Each dims triple is quantized through the model codec, the remaining
    parameters are beam-decoded, and the full tuple with the highest chain
    log probability wins (ties go to the lowest SKU index).  Returns
    (QuantizedBox, sku_index, score).
    """
    if dist.codec is None:
        raise ValueError("dimension conditioning requires a codec")
    if not sku_dims:
        raise ValueError("need at least one SKU dims candidate")
    best = None
    for sku_idx, dims in enumerate(sku_dims):
        dims = tuple(float(v) for v in dims)
        probe = BoxParams(dims, (0.0, 0.0, 0.0), (0.0, 0.0, 0.0))
        qb = dist.codec.encode(probe)
        dims_prefix = tuple(qb.indices[0:3])
        conditioned = condition_on_dims(dist, dims_prefix)
        suffix, _ = beam_search(conditioned, ctx, cfg)
        full = conditioned.full_sequence(suffix)
        score = log_prob(dist, full, ctx)
        if best is None or score > best[0]:
            best = (score, sku_idx, full)
    score, sku_idx, full = best
    return dist.sequence_to_quantized(full), sku_idx, score
