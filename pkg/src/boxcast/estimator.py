"""Scikit-learn style front end over the functional fitting/inference modules.

The estimator consumes SceneRecords (context id, visible-surface point stub,
ground-truth box), fits the chosen probabilistic backend on per-scene
normalized parameters, and predicts boxes back in each scene's world frame.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .boxes import BoxParams, SymmetryMode, normalize_cloud
from .distributions import Context, log_prob
from .fitting import FitConfig, TrainingExample, fit_gaussian, fit_tabular
from .geometry import iou
from .inference import (
    BeamConfig,
    QuantileConfig,
    beam_search,
    dimension_conditioned_predict,
    quantile_box,
)

__all__ = ["AutoregressiveBoxEstimator", "check_records"]


def check_records(X, require_gt=False):
    """Validate a sequence of scene records and return it as a list.

    A record needs ``context_id`` and ``points`` attributes; ``gt_box`` is
    required only when fitting or scoring.
    """
    records = list(X)
    if not records:
        raise ValueError("empty record sequence")
    for i, rec in enumerate(records):
        for attr in ("context_id", "points"):
            if not hasattr(rec, attr):
                raise TypeError(f"record {i} lacks attribute {attr!r}")
        pts = np.asarray(rec.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] == 0:
            raise ValueError(f"record {i} points must have shape (n, 3) with n >= 1")
        if not np.all(np.isfinite(pts)):
            raise ValueError(f"record {i} has non-finite points")
        if require_gt and getattr(rec, "gt_box", None) is None:
            raise ValueError(f"record {i} lacks a ground-truth box")
    return records


class AutoregressiveBoxEstimator(BaseEstimator):
    """Fit/predict wrapper around the autoregressive box chain.

    Parameters
    ----------
    backend : {"tabular", "gaussian"}
        Conditional-chain backend ("gaussian" is the independence baseline).
    symmetry : {"none", "yaw", "full_so3"}
        Label symmetry mode used for target averaging.
    alpha, prefix_buckets, bins : tabular-chain hyperparameters.
    beam_width : beam size for mode decoding.
    quantile_q, quantile_k, quantile_m, seed : quantile-box settings.
    """

    def __init__(
        self,
        backend="tabular",
        symmetry="none",
        alpha=0.1,
        prefix_buckets=8,
        bins=512,
        beam_width=32,
        quantile_q=0.5,
        quantile_k=64,
        quantile_m=64,
        seed=0,
    ):
        self.backend = backend
        self.symmetry = symmetry
        self.alpha = alpha
        self.prefix_buckets = prefix_buckets
        self.bins = bins
        self.beam_width = beam_width
        self.quantile_q = quantile_q
        self.quantile_k = quantile_k
        self.quantile_m = quantile_m
        self.seed = seed

    def _examples(self, records):
        mode = SymmetryMode(self.symmetry)
        examples = []
        for rec in records:
            normalizer = normalize_cloud(rec.points)
            examples.append(
                TrainingExample(Context(int(rec.context_id)), rec.gt_box, normalizer, mode)
            )
        return examples

    def fit(self, X, y=None):
        """Fit the backend on scene records carrying ground-truth boxes."""
        records = check_records(X, require_gt=True)
        cfg = FitConfig(
            alpha=self.alpha,
            prefix_buckets=self.prefix_buckets,
            bins=self.bins,
        )
        examples = self._examples(records)
        if self.backend == "tabular":
            self.model_ = fit_tabular(examples, cfg)
        elif self.backend == "gaussian":
            self.model_ = fit_gaussian(examples, cfg)
        else:
            raise ValueError(f"unknown backend {self.backend!r}")
        self.n_records_ = len(records)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(
                "AutoregressiveBoxEstimator is not fitted; call fit() first"
            )

    def _scene_view(self, rec):
        return self.model_.with_normalizer(normalize_cloud(rec.points))

    def predict(self, X, method="beam", sku_dims=None):
        """World-frame box predictions for each record.

        method is "beam" (chain mode), "quantile" (occupancy-quantile box at
        quantile_q), or "conditioned" (beam restricted to the best of the
        given sku_dims triples).
        """
        self._check_fitted()
        records = check_records(X)
        out = []
        for rec in records:
            view = self._scene_view(rec)
            ctx = Context(int(rec.context_id))
            if method == "beam":
                qbox, _ = beam_search(view, ctx, BeamConfig(self.beam_width))
                out.append(view.codec.decode(qbox))
            elif method == "quantile":
                cfg = QuantileConfig(
                    q=self.quantile_q, k=self.quantile_k, m=self.quantile_m, seed=self.seed
                )
                out.append(quantile_box(view, ctx, cfg).box)
            elif method == "conditioned":
                if not sku_dims:
                    raise ValueError("method='conditioned' requires sku_dims")
                qbox, _, _ = dimension_conditioned_predict(
                    view, ctx, sku_dims, BeamConfig(self.beam_width)
                )
                out.append(view.codec.decode(qbox))
            else:
                raise ValueError(f"unknown method {method!r}")
        return out

    def sample(self, X, n_samples=1, rng=None):
        """n_samples world-frame box draws per record; rng is caller-owned."""
        self._check_fitted()
        if rng is None:
            rng = np.random.default_rng(self.seed)
        records = check_records(X)
        out = []
        for rec in records:
            view = self._scene_view(rec)
            ctx = Context(int(rec.context_id))
            out.append([view.sample_box(ctx, rng) for _ in range(n_samples)])
        return out

    def score(self, X, y=None):
        """Mean IoU of beam predictions against the records' ground truth."""
        records = check_records(X, require_gt=True)
        preds = self.predict(records, method="beam")
        return float(np.mean([iou(p, r.gt_box) for p, r in zip(preds, records)]))

    def log_likelihood(self, X):
        """Per-record chain log probability of the quantized ground truth."""
        self._check_fitted()
        records = check_records(X, require_gt=True)
        out = []
        for rec in records:
            view = self._scene_view(rec)
            qbox = view.codec.encode(rec.gt_box)
            out.append(log_prob(view, qbox, Context(int(rec.context_id))))
        return out
