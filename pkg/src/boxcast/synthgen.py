"""Deterministic generators for ambiguous synthetic scenes.

Each scenario kind mirrors one of the ambiguity classes seen in cluttered
bin-picking data: stacks of unknown depth, rotationally symmetric objects,
generic nested alternatives, and unambiguous controls.  Records carry a
visible-face point-cloud stub, the latent ground-truth box, and a context id
that encodes only the observable footprint, never the latent variable.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass

import numpy as np

from .boxes import BoxCodec, BoxParams, Normalizer, NormalizerMode, Quantizer
from .distributions import OrderedAnalytic

__all__ = [
    "ScenarioKind",
    "ScenarioSpec",
    "SceneRecord",
    "generate",
    "latent_distribution",
    "write_jsonl",
    "read_jsonl",
]

DATASET_SCHEMA_VERSION = 1


class ScenarioKind(enum.Enum):
    STACKED_BIN = "stacked_bin"
    ROT_SYMMETRIC = "rot_symmetric"
    NESTED_ORDERED = "nested_ordered"
    UNAMBIGUOUS = "unambiguous"


@dataclass(frozen=True)
class ScenarioSpec:
    """Parameters of one synthetic scene family."""

    kind: ScenarioKind
    context_id: int = 0
    footprint: tuple = (0.3, 0.3)
    height: float = 0.3
    n_levels: int = 4  # stacked_bin: heights H/i for i in 1..n_levels
    probs: tuple = None  # class-conditional probabilities; default uniform
    yaw_choices: tuple = (0.0, math.pi / 2, math.pi, -math.pi / 2)
    nesting_ratios: tuple = (0.5, 1.0)  # nested_ordered: scale factors
    noise_sigma: float = 0.0  # unambiguous jitter (meters)
    stub_points: int = 64
    stub_jitter: float = 0.0  # random stub-point jitter, as a fraction of extent
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", ScenarioKind(self.kind))
        if self.footprint[0] <= 0 or self.footprint[1] <= 0 or self.height <= 0:
            raise ValueError("extents must be positive")
        probs = self.probs
        if probs is not None:
            probs = tuple(float(p) for p in probs)
            if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
                raise ValueError("probs must be non-negative and sum to 1")
            object.__setattr__(self, "probs", probs)

    def outcome_boxes(self):
        """The latent support: candidate ground-truth boxes with probabilities."""
        fx, fy = self.footprint
        if self.kind is ScenarioKind.STACKED_BIN:
            # Top faces aligned at z = 0; depth below is unobservable.
            heights = [self.height / i for i in range(1, self.n_levels + 1)]
            boxes = [BoxParams((fx, fy, h), (0.0, 0.0, -h / 2.0), (0.0, 0.0, 0.0)) for h in heights]
        elif self.kind is ScenarioKind.ROT_SYMMETRIC:
            boxes = [
                BoxParams((fx, fy, self.height), (0.0, 0.0, -self.height / 2.0), (yaw, 0.0, 0.0))
                for yaw in self.yaw_choices
            ]
        elif self.kind is ScenarioKind.NESTED_ORDERED:
            boxes = []
            for r in self.nesting_ratios:
                if not 0.0 < r <= 1.0:
                    raise ValueError("nesting ratios must be in (0, 1]")
                h = self.height * r
                boxes.append(BoxParams((fx * r, fy * r, h), (0.0, 0.0, -h / 2.0), (0.0, 0.0, 0.0)))
        elif self.kind is ScenarioKind.UNAMBIGUOUS:
            boxes = [
                BoxParams((fx, fy, self.height), (0.0, 0.0, -self.height / 2.0), (0.0, 0.0, 0.0))
            ]
        else:  # pragma: no cover
            raise ValueError(f"invalid scenario kind {self.kind}")
        probs = self.probs
        if probs is None:
            probs = tuple(1.0 / len(boxes) for _ in boxes)
        if len(probs) != len(boxes):
            raise ValueError("probs length does not match the latent support")
        return boxes, probs

    def to_json_dict(self):
        return {
            "kind": self.kind.value,
            "context_id": self.context_id,
            "footprint": list(self.footprint),
            "height": self.height,
            "n_levels": self.n_levels,
            "probs": list(self.probs) if self.probs is not None else None,
            "yaw_choices": list(self.yaw_choices),
            "nesting_ratios": list(self.nesting_ratios),
            "noise_sigma": self.noise_sigma,
            "stub_points": self.stub_points,
            "stub_jitter": self.stub_jitter,
            "seed": self.seed,
        }

    @staticmethod
    def from_json_dict(obj):
        return ScenarioSpec(
            kind=ScenarioKind(obj["kind"]),
            context_id=obj.get("context_id", 0),
            footprint=tuple(obj.get("footprint", (0.3, 0.3))),
            height=obj.get("height", 0.3),
            n_levels=obj.get("n_levels", 4),
            probs=tuple(obj["probs"]) if obj.get("probs") else None,
            yaw_choices=tuple(obj.get("yaw_choices", (0.0, math.pi / 2, math.pi, -math.pi / 2))),
            nesting_ratios=tuple(obj.get("nesting_ratios", (0.5, 1.0))),
            noise_sigma=obj.get("noise_sigma", 0.0),
            stub_points=obj.get("stub_points", 64),
            stub_jitter=obj.get("stub_jitter", 0.0),
            seed=obj.get("seed", 0),
        )


@dataclass(frozen=True, eq=False)
class SceneRecord:
    """One synthetic observation: context, visible-face stub, latent gt box."""

    context_id: int
    points: np.ndarray  # (n, 3) point-cloud stub on visible faces
    gt_box: BoxParams
    scenario_kind: ScenarioKind
    latent_index: int

    def to_json_dict(self):
        return {
            "schema_version": DATASET_SCHEMA_VERSION,
            "context_id": self.context_id,
            "points": np.round(self.points, 9).tolist(),
            "gt_box": self.gt_box.to_json_dict(),
            "scenario": {"kind": self.scenario_kind.value, "latent_index": self.latent_index},
        }

    @staticmethod
    def from_json_dict(obj):
        version = obj.get("schema_version")
        if version != DATASET_SCHEMA_VERSION:
            raise ValueError(f"unsupported dataset schema_version {version}")
        points = np.asarray(obj["points"], dtype=float)
        gt = BoxParams.from_json_dict(obj["gt_box"])
        if not np.all(np.isfinite(points)):
            raise ValueError("non-finite stub points")
        return SceneRecord(
            context_id=int(obj["context_id"]),
            points=points,
            gt_box=gt,
            scenario_kind=ScenarioKind(obj["scenario"]["kind"]),
            latent_index=int(obj["scenario"]["latent_index"]),
        )


def _visible_stub(spec, gt, rng):
    """Points on the top face plus a shallow skirt on the side faces.

    The base pattern is a deterministic scan grid, so the quartile
    normalization of a scene depends only on the observed extents; random
    jitter is opt-in through stub_jitter.  The skirt depth depends only on
    the footprint so the stub never encodes the latent height.
    """
    n = spec.stub_points
    fx, fy = spec.footprint
    dims = np.asarray(gt.dims)
    rot = gt.rotation_matrix()
    center = np.asarray(gt.center)
    top_n = max(n - n // 4, 4)
    side_n = n - top_n
    # Top face in local coordinates (z = +dz/2): cell-centered s x s grid.
    s = max(int(math.ceil(math.sqrt(top_n))), 2)
    g = (np.arange(s) + 0.5) / s - 0.5
    uv = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)[:top_n]
    top_local = np.column_stack(
        [uv[:, 0] * dims[0], uv[:, 1] * dims[1], np.full(top_n, dims[2] / 2)]
    )
    skirt = 0.1 * max(fx, fy)
    skirt = min(skirt, float(dims[2]))
    side_local = np.zeros((max(side_n, 0), 3))
    for i in range(side_n):
        axis = i % 2  # alternate x / y side faces
        sign = 1.0 if (i // 2) % 2 == 0 else -1.0
        other = 1 - axis
        frac = (i + 0.5) / side_n - 0.5
        pt = np.zeros(3)
        pt[axis] = sign * dims[axis] / 2
        pt[other] = frac * dims[other]
        pt[2] = dims[2] / 2 - ((i % 4) + 0.5) / 4 * skirt
        side_local[i] = pt
    local = np.vstack([top_local, side_local])
    if spec.stub_jitter > 0.0:
        local = local + rng.normal(0.0, spec.stub_jitter, local.shape) * np.maximum(dims, 1e-6)
    return center + local @ rot.T


def generate(spec, n, rng=None):
    """Draw n SceneRecords from the scenario's latent distribution."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    elif isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    boxes, probs = spec.outcome_boxes()
    records = []
    # Per-record child seeds keep generation order-independent and parallelizable.
    for sub in rng.spawn(n):
        latent = int(sub.choice(len(boxes), p=np.asarray(probs) / np.sum(probs)))
        gt = boxes[latent]
        if spec.noise_sigma > 0.0:
            dims = np.maximum(np.asarray(gt.dims) + sub.normal(0, spec.noise_sigma, 3), 1e-3)
            center = np.asarray(gt.center) + sub.normal(0, spec.noise_sigma, 3)
            gt = BoxParams(tuple(dims), tuple(center), gt.rot)
        stub = _visible_stub(spec, gt, sub)
        records.append(
            SceneRecord(
                context_id=spec.context_id,
                points=stub,
                gt_box=gt,
                scenario_kind=spec.kind,
                latent_index=latent,
            )
        )
    return records


def latent_distribution(spec, bins=512):
    """The exact generating distribution of an ordered scenario.

    Only stacked_bin and nested_ordered scenarios have a totally ordered
    support; other kinds raise.
    """
    if spec.kind not in (ScenarioKind.STACKED_BIN, ScenarioKind.NESTED_ORDERED):
        raise ValueError("no analytic form")
    boxes, probs = spec.outcome_boxes()
    largest = max(boxes, key=lambda b: b.volume())
    scale = max(max(largest.dims), 1e-3)
    normalizer = Normalizer((scale, scale, scale), largest.center, NormalizerMode.SCALAR_MAX)
    codec = BoxCodec(normalizer, Quantizer(bins))
    return OrderedAnalytic(list(boxes), list(probs), codec)


def write_jsonl(records, path):
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec.to_json_dict()) + "\n")


def read_jsonl(path):
    records = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(SceneRecord.from_json_dict(json.loads(line)))
    return records
