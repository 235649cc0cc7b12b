"""Autoregressive distributions over quantized box parameters.

Three backends share one conditional-chain interface: a fitted tabular chain,
analytic finite-support distributions (including nested "ordered" box sets),
and an independent-Gaussian baseline.  All backends are immutable after
construction; random state is always caller-owned.
"""

from __future__ import annotations

import abc
import copy
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm as _scipy_norm

from .boxes import (
    PARAM_NAMES,
    BoxCodec,
    BoxParams,
    Normalizer,
    QuantizedBox,
    Quantizer,
    SymmetryMode,
)
from . import geometry

__all__ = [
    "NEG_INF",
    "Context",
    "BoxDistribution",
    "TabularChain",
    "OrderedAnalytic",
    "GaussianBaseline",
    "ConditionedChain",
    "log_prob",
    "sample",
    "expectation_refine",
    "condition_on_dims",
    "save_model",
    "load_model",
]

NEG_INF = -1e30  # sentinel for log(0); keeps arithmetic total

DEFAULT_PARAM_ORDER = PARAM_NAMES  # dims -> center -> rotation


@dataclass(frozen=True)
class Context:
    """Discrete scene-feature identifier with optional continuous side features."""

    scene_id: int
    side_features: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "side_features", tuple(self.side_features))


class UnknownContextError(KeyError):
    pass


class BoxDistribution(abc.ABC):
    """Conditional chain p(b_i | b_1..b_{i-1}, context) over bin indices.

    Sequence positions follow ``param_order``; prefixes handed to
    ``conditional_probs`` are tuples of bin indices in sequence order.
    """

    param_order: tuple = DEFAULT_PARAM_ORDER
    bins: int = 512
    codec: BoxCodec | None = None

    @property
    def num_params(self):
        return len(self.param_order)

    @abc.abstractmethod
    def conditional_probs(self, prefix, ctx):
        """Probability vector over the next parameter's bins given a prefix."""

    def validate_context(self, ctx):
        pass

    def sequence_of(self, qbox):
        """Bin indices of a QuantizedBox in this chain's sequence order.

        Plain tuples are taken to already be in sequence order.
        """
        if isinstance(qbox, QuantizedBox):
            return tuple(qbox.indices[PARAM_NAMES.index(name)] for name in self.param_order)
        return tuple(int(i) for i in qbox)

    def sequence_to_quantized(self, seq):
        """Scatter a sequence-order tuple back to a canonical QuantizedBox."""
        if len(seq) != 9:
            return tuple(seq)
        out = [0] * 9
        for step, name in enumerate(self.param_order):
            out[PARAM_NAMES.index(name)] = int(seq[step])
        return QuantizedBox(tuple(out))

    def sample_box(self, ctx, rng):
        """Draw a continuous box; default decodes an ancestral sample."""
        if self.codec is None:
            raise ValueError("distribution has no codec; cannot produce continuous boxes")
        return self.codec.decode(sample(self, ctx, rng))

    def with_normalizer(self, normalizer):
        """A shallow view of this distribution decoding into another scene frame.

        The chain probabilities are unchanged; only the codec's normalizer is
        swapped, so sampled/decoded boxes land in the new frame.
        """
        if self.codec is None:
            raise ValueError("distribution has no codec")
        view = copy.copy(self)
        view.codec = self.codec.with_normalizer(normalizer)
        return view


def log_prob(dist, qbox, ctx):
    """Chain-rule log probability of a full tuple; log(0) becomes NEG_INF."""
    seq = dist.sequence_of(qbox)
    if len(seq) != dist.num_params:
        raise ValueError(f"expected {dist.num_params} indices, got {len(seq)}")
    dist.validate_context(ctx)
    total = 0.0
    for step, idx in enumerate(seq):
        if idx < 0 or idx >= dist.bins:
            raise ValueError(f"bin index {idx} out of range at step {step}")
        p = dist.conditional_probs(seq[:step], ctx)[idx]
        if p <= 0.0:
            return NEG_INF
        total += math.log(p)
    return total


def sample(dist, ctx, rng):
    """Ancestral sample in sequence order; returns a QuantizedBox for 9-param chains."""
    dist.validate_context(ctx)
    seq = []
    for _ in range(dist.num_params):
        probs = dist.conditional_probs(tuple(seq), ctx)
        cdf = np.cumsum(probs)
        idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        seq.append(min(idx, dist.bins - 1))
    return dist.sequence_to_quantized(tuple(seq))


def expectation_refine(dist, sampled, ctx):
    """Replace each sampled bin by its conditional mean given the sampled prefix.

    Means are taken over dequantized bin centers, so the result is a
    continuous box in the distribution's codec frame.
    """
    if dist.codec is None:
        raise ValueError("expectation_refine requires a codec")
    dist.validate_context(ctx)
    seq = dist.sequence_of(sampled)
    quantizer = dist.codec.quantizer
    refined_norm = np.zeros(9)
    for step, name in enumerate(dist.param_order):
        param = PARAM_NAMES.index(name)
        probs = dist.conditional_probs(seq[:step], ctx)
        centers = quantizer.bin_centers(param)
        refined_norm[param] = float(probs @ centers)
    vec = dist.codec.normalizer.denormalize_params(refined_norm)
    if dist.codec.symmetry is SymmetryMode.YAW:
        vec[7] = 0.0
        vec[8] = 0.0
    vec[0:3] = np.maximum(vec[0:3], 1e-12)
    return BoxParams.from_params_vector(vec)


def condition_on_dims(dist, dims_prefix, ctx=None):
    """Fix the three dimension bins and return the distribution of the rest."""
    if tuple(dist.param_order[:3]) != ("dx", "dy", "dz"):
        raise ValueError("dimensions not prefix of ordering")
    dims_prefix = tuple(int(i) for i in dims_prefix)
    if len(dims_prefix) != 3:
        raise ValueError("dims prefix must have exactly 3 indices")
    return ConditionedChain(dist, dims_prefix)


class ConditionedChain(BoxDistribution):
    """A chain with its first three (dimension) steps pinned."""

    def __init__(self, base, dims_prefix):
        self.base = base
        self.dims_prefix = tuple(dims_prefix)
        self.param_order = tuple(base.param_order[3:])
        self.bins = base.bins
        self.codec = base.codec

    def conditional_probs(self, prefix, ctx):
        return self.base.conditional_probs(self.dims_prefix + tuple(prefix), ctx)

    def validate_context(self, ctx):
        self.base.validate_context(ctx)

    def full_sequence(self, suffix_seq):
        return self.dims_prefix + tuple(suffix_seq)


class TabularChain(BoxDistribution):
    """Count-based conditional tables with Laplace smoothing.

    Tables are keyed by (context id, step, coarse prefix key); unseen prefixes
    fall back to the per-(context, step) marginal row.
    """

    def __init__(
        self,
        bins,
        context_vocab,
        tables,
        marginals,
        alpha=0.1,
        prefix_buckets=8,
        param_order=DEFAULT_PARAM_ORDER,
        codec=None,
    ):
        if alpha <= 0.0:
            raise ValueError("alpha must be positive")
        self.bins = int(bins)
        self.param_order = tuple(param_order)
        self.context_vocab = frozenset(int(c) for c in context_vocab)
        self.alpha = float(alpha)
        self.prefix_buckets = int(prefix_buckets)
        self.codec = codec
        self._tables = {k: np.asarray(v, dtype=float) for k, v in tables.items()}
        self._marginals = {k: np.asarray(v, dtype=float) for k, v in marginals.items()}
        self._prob_cache = {}
        for key, counts in self._tables.items():
            self._prob_cache[key] = self._smooth(counts)
        self._marginal_probs = {k: self._smooth(v) for k, v in self._marginals.items()}

    def _smooth(self, counts):
        total = counts.sum() + self.alpha * self.bins
        return (counts + self.alpha) / total

    def bucket_key(self, prefix):
        b = self.prefix_buckets
        return tuple(int(i) * b // self.bins for i in prefix)

    def validate_context(self, ctx):
        if int(ctx.scene_id) not in self.context_vocab:
            raise UnknownContextError(f"context id {ctx.scene_id} outside vocabulary")

    def conditional_probs(self, prefix, ctx):
        self.validate_context(ctx)
        cid = int(ctx.scene_id)
        step = len(prefix)
        key = (cid, step, self.bucket_key(prefix))
        probs = self._prob_cache.get(key)
        if probs is None:
            probs = self._marginal_probs[(cid, step)]
        return probs

    def raw_counts(self, ctx_id, step, prefix):
        """Unsmoothed counts for a prefix row (marginal row if unseen)."""
        key = (int(ctx_id), int(step), self.bucket_key(prefix))
        if key in self._tables:
            return self._tables[key].copy()
        return self._marginals[(int(ctx_id), int(step))].copy()


class OrderedAnalytic(BoxDistribution):
    """Finite distribution over nested boxes b_1 c b_2 c ... c b_n.

    The nesting (iog of each larger box against every smaller one equals 1)
    is verified at construction.  The chain view quantizes each box through
    the codec; sampling returns the stored continuous boxes exactly.
    """

    def __init__(self, boxes, probs, codec, param_order=DEFAULT_PARAM_ORDER, check_nesting=True):
        probs = np.asarray(probs, dtype=float)
        if len(boxes) != len(probs) or len(boxes) == 0:
            raise ValueError("need matching, non-empty boxes and probs")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("probs must be non-negative and sum to 1")
        order = np.argsort([b.volume() for b in boxes])
        self.boxes = [boxes[i] for i in order]
        self.probs = probs[order]
        self.codec = codec
        self.bins = codec.quantizer.bins_per_param
        self.param_order = tuple(param_order)
        if check_nesting:
            for i in range(len(self.boxes) - 1):
                inner, outer = self.boxes[i], self.boxes[i + 1]
                if geometry.iog(outer, inner) < 1.0 - 1e-9:
                    raise ValueError(f"boxes {i} and {i + 1} are not nested")
        self._atoms = []
        seen = {}
        for box, p in zip(self.boxes, self.probs):
            seq = self.sequence_of(codec.encode(box))
            if seq in seen:
                raise ValueError("two boxes quantize to the same tuple; refine the quantizer")
            seen[seq] = box
            self._atoms.append((seq, float(p), box))

    def validate_context(self, ctx):
        pass

    def conditional_probs(self, prefix, ctx):
        step = len(prefix)
        probs = np.zeros(self.bins)
        total = 0.0
        for seq, p, _ in self._atoms:
            if seq[:step] == tuple(prefix):
                probs[seq[step]] += p
                total += p
        if total <= 0.0:
            return np.full(self.bins, 1.0 / self.bins)  # unreachable prefix
        return probs / total

    def sample_box(self, ctx, rng):
        idx = int(rng.choice(len(self._atoms), p=self.probs / self.probs.sum()))
        return self._atoms[idx][2]

    def tail_probability(self, i):
        """Probability mass of boxes containing box i (including itself)."""
        return float(self.probs[i:].sum())


class GaussianBaseline(BoxDistribution):
    """Independent per-parameter Gaussians, discretized over the bin grid."""

    def __init__(self, means, log_vars, codec, param_order=DEFAULT_PARAM_ORDER):
        self.means = {int(k): np.asarray(v, dtype=float) for k, v in means.items()}
        self.log_vars = {int(k): np.asarray(v, dtype=float) for k, v in log_vars.items()}
        self.codec = codec
        self.bins = codec.quantizer.bins_per_param
        self.param_order = tuple(param_order)
        self._probs = {}
        for cid, mu in self.means.items():
            sigma = np.exp(0.5 * self.log_vars[cid])
            if np.any(sigma <= 0.0):
                raise ValueError("sigma must be positive")
            table = np.zeros((9, self.bins))
            for param in range(9):
                lo, hi = codec.quantizer.ranges[param]
                edges = np.linspace(lo, hi, self.bins + 1)
                cdf = _scipy_norm.cdf(edges, loc=mu[param], scale=sigma[param])
                mass = np.diff(cdf)
                total = mass.sum()
                if total <= 0.0:
                    mass = np.full(self.bins, 1.0 / self.bins)
                else:
                    mass = mass / total
                table[param] = mass
            self._probs[cid] = table

    def validate_context(self, ctx):
        if int(ctx.scene_id) not in self.means:
            raise UnknownContextError(f"context id {ctx.scene_id} outside vocabulary")

    def conditional_probs(self, prefix, ctx):
        self.validate_context(ctx)
        name = self.param_order[len(prefix)]
        return self._probs[int(ctx.scene_id)][PARAM_NAMES.index(name)]

    def dims_moments(self, ctx):
        """(mu, sigma) of the three dimension parameters in normalized units."""
        self.validate_context(ctx)
        mu = self.means[int(ctx.scene_id)][0:3]
        sigma = np.exp(0.5 * self.log_vars[int(ctx.scene_id)][0:3])
        return mu, sigma


MODEL_SCHEMA_VERSION = 1


def _codec_to_json(codec):
    if codec is None:
        return None
    return {
        "normalizer": codec.normalizer.to_json_dict(),
        "quantizer": codec.quantizer.to_json_dict(),
        "symmetry": codec.symmetry.value,
    }


def _codec_from_json(obj):
    if obj is None:
        return None
    return BoxCodec(
        Normalizer.from_json_dict(obj["normalizer"]),
        Quantizer.from_json_dict(obj["quantizer"]),
        SymmetryMode(obj["symmetry"]),
    )


def model_to_json_dict(dist):
    """Versioned JSON representation of a distribution (see load_model)."""
    header = {
        "schema_version": MODEL_SCHEMA_VERSION,
        "param_order": list(dist.param_order),
        "bins": dist.bins,
        "codec": _codec_to_json(dist.codec),
    }
    if isinstance(dist, TabularChain):
        header["backend"] = "tabular"
        header["alpha"] = dist.alpha
        header["prefix_buckets"] = dist.prefix_buckets
        header["context_vocab"] = sorted(dist.context_vocab)
        header["tables"] = [
            {"ctx": k[0], "step": k[1], "key": list(k[2]), "counts": v.tolist()}
            for k, v in sorted(dist._tables.items())
        ]
        header["marginals"] = [
            {"ctx": k[0], "step": k[1], "counts": v.tolist()}
            for k, v in sorted(dist._marginals.items())
        ]
    elif isinstance(dist, OrderedAnalytic):
        header["backend"] = "ordered_analytic"
        header["boxes"] = [b.to_json_dict() for b in dist.boxes]
        header["probs"] = dist.probs.tolist()
    elif isinstance(dist, GaussianBaseline):
        header["backend"] = "gaussian"
        header["means"] = {str(k): v.tolist() for k, v in sorted(dist.means.items())}
        header["log_vars"] = {str(k): v.tolist() for k, v in sorted(dist.log_vars.items())}
    else:
        raise TypeError(f"cannot serialize {type(dist).__name__}")
    return header


def model_from_json_dict(obj):
    version = obj.get("schema_version")
    if version != MODEL_SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema_version {version}")
    codec = _codec_from_json(obj["codec"])
    order = tuple(obj["param_order"])
    backend = obj["backend"]
    if backend == "tabular":
        tables = {
            (t["ctx"], t["step"], tuple(t["key"])): np.asarray(t["counts"])
            for t in obj["tables"]
        }
        marginals = {
            (m["ctx"], m["step"]): np.asarray(m["counts"]) for m in obj["marginals"]
        }
        return TabularChain(
            obj["bins"],
            obj["context_vocab"],
            tables,
            marginals,
            alpha=obj["alpha"],
            prefix_buckets=obj["prefix_buckets"],
            param_order=order,
            codec=codec,
        )
    if backend == "ordered_analytic":
        boxes = [BoxParams.from_json_dict(b) for b in obj["boxes"]]
        return OrderedAnalytic(boxes, obj["probs"], codec, param_order=order)
    if backend == "gaussian":
        means = {int(k): np.asarray(v) for k, v in obj["means"].items()}
        log_vars = {int(k): np.asarray(v) for k, v in obj["log_vars"].items()}
        return GaussianBaseline(means, log_vars, codec, param_order=order)
    raise ValueError(f"unknown backend {backend!r}")


def save_model(dist, path):
    with open(path, "w") as f:
        json.dump(model_to_json_dict(dist), f, indent=1)


def load_model(path):
    with open(path) as f:
        return model_from_json_dict(json.load(f))
