"""Oriented 3D box representations, normalization, and quantization.

A box is parameterized by its dimensions (extent along each local axis),
center, and an intrinsic Z-Y-X Euler rotation (yaw, pitch, roll).  The
continuous parameters can be normalized to a scene-relative frame and
discretized into per-parameter bins for use by the autoregressive chain.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "PARAM_NAMES",
    "BoxParams",
    "Quaternion",
    "SymmetryMode",
    "NormalizerMode",
    "Normalizer",
    "Quantizer",
    "QuantizedBox",
    "BoxCodec",
    "normalize_cloud",
    "quantize_box",
    "dequantize_box",
    "enumerate_equivalent_params",
    "euler_zyx_to_matrix",
    "matrix_to_euler_zyx",
    "euler_zyx_to_quaternion",
    "corners",
]

# Canonical parameter layout used everywhere: dims, center, rotation.
PARAM_NAMES = ("dx", "dy", "dz", "cx", "cy", "cz", "yaw", "pitch", "roll")

EPS_SCALE = 1e-3  # floor on normalizer scale for degenerate clouds (meters)
_TWO_PI = 2.0 * math.pi


def _wrap_pi(angle):
    """Wrap an angle to [-pi, pi)."""
    a = math.fmod(angle + math.pi, _TWO_PI)
    if a < 0.0:
        a += _TWO_PI
    return a - math.pi


def euler_zyx_to_matrix(yaw, pitch, roll):
    """Rotation matrix of the intrinsic Z-Y-X Euler angles: Rz(yaw)Ry(pitch)Rx(roll)."""
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cr, sr = math.cos(roll), math.sin(roll)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def matrix_to_euler_zyx(rot):
    """Extract (yaw, pitch, roll) from a rotation matrix, inverse of euler_zyx_to_matrix.

    yaw and roll are returned in [-pi, pi), pitch in [-pi/2, pi/2].  At the
    gimbal-lock singularity (|pitch| = pi/2) roll is fixed to 0.
    """
    rot = np.asarray(rot, dtype=float)
    sp = -rot[2, 0]
    sp = min(1.0, max(-1.0, sp))
    pitch = math.asin(sp)
    if abs(sp) > 1.0 - 1e-12:
        # Gimbal lock: only yaw -/+ roll is determined; put it all in yaw.
        yaw = math.atan2(-rot[0, 1], rot[1, 1])
        roll = 0.0
    else:
        yaw = math.atan2(rot[1, 0], rot[0, 0])
        roll = math.atan2(rot[2, 1], rot[2, 2])
    return _wrap_pi(yaw), pitch, _wrap_pi(roll)


@dataclass(frozen=True)
class Quaternion:
    """Unit quaternion, canonicalized to the w >= 0 hemisphere."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        norm = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"quaternion norm {norm} is not 1")

    @staticmethod
    def from_components(w, x, y, z):
        """Normalize and hemisphere-canonicalize raw components."""
        norm = math.sqrt(w * w + x * x + y * y + z * z)
        if norm < 1e-12:
            raise ValueError("zero quaternion")
        w, x, y, z = w / norm, x / norm, y / norm, z / norm
        if w < 0.0 or (w == 0.0 and (x, y, z) < (0.0, 0.0, 0.0)):
            w, x, y, z = -w, -x, -y, -z
        return Quaternion(w, x, y, z)

    def as_array(self):
        return np.array([self.w, self.x, self.y, self.z])


def euler_zyx_to_quaternion(yaw, pitch, roll):
    """Quaternion of the intrinsic Z-Y-X rotation (matches euler_zyx_to_matrix)."""
    cy, sy = math.cos(yaw / 2), math.sin(yaw / 2)
    cp, sp = math.cos(pitch / 2), math.sin(pitch / 2)
    cr, sr = math.cos(roll / 2), math.sin(roll / 2)
    # q = qz(yaw) * qy(pitch) * qx(roll)
    w = cy * cp * cr + sy * sp * sr
    x = cy * cp * sr - sy * sp * cr
    y = cy * sp * cr + sy * cp * sr
    z = sy * cp * cr - cy * sp * sr
    return Quaternion.from_components(w, x, y, z)


class SymmetryMode(enum.Enum):
    """Which parameter tuples are considered the same physical box."""

    NONE = "none"
    YAW = "yaw"
    FULL_SO3 = "full_so3"


@dataclass(frozen=True)
class BoxParams:
    """Continuous oriented box: dimensions, center, Z-Y-X Euler rotation."""

    dims: tuple
    center: tuple
    rot: tuple  # (yaw, pitch, roll)

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(float(v) for v in self.dims))
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "rot", tuple(float(v) for v in self.rot))
        if len(self.dims) != 3 or len(self.center) != 3 or len(self.rot) != 3:
            raise ValueError("dims, center, and rot must each have length 3")
        if any(not math.isfinite(v) for v in self.dims + self.center + self.rot):
            raise ValueError("box parameters must be finite")
        if any(d <= 0.0 for d in self.dims):
            raise ValueError(f"dims must be positive, got {self.dims}")

    def canonical(self):
        """Return the box with angles folded into their canonical ranges."""
        angles = matrix_to_euler_zyx(self.rotation_matrix())
        return replace(self, rot=angles)

    def rotation_matrix(self):
        return euler_zyx_to_matrix(*self.rot)

    def quaternion(self):
        return euler_zyx_to_quaternion(*self.rot)

    def volume(self):
        return self.dims[0] * self.dims[1] * self.dims[2]

    def params_vector(self):
        """The 9-vector in canonical layout (dims, center, rotation)."""
        return np.array(self.dims + self.center + self.rot)

    @staticmethod
    def from_params_vector(vec):
        vec = np.asarray(vec, dtype=float)
        return BoxParams(tuple(vec[0:3]), tuple(vec[3:6]), tuple(vec[6:9]))

    def to_json_dict(self):
        return {
            "dims": list(self.dims),
            "center": list(self.center),
            "euler_zyx": list(self.rot),
        }

    @staticmethod
    def from_json_dict(obj):
        return BoxParams(tuple(obj["dims"]), tuple(obj["center"]), tuple(obj["euler_zyx"]))


def corners(box):
    """The 8 corner points of a box, shape (8, 3): center + R (+-d/2)."""
    half = np.asarray(box.dims) / 2.0
    signs = np.array(
        [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float
    )
    local = signs * half
    return np.asarray(box.center) + local @ box.rotation_matrix().T


class NormalizerMode(enum.Enum):
    QUARTILE = "quartile"
    SCALAR_MAX = "scalar-max"
    FIXED = "fixed"


@dataclass(frozen=True)
class Normalizer:
    """Affine scene frame: dims scale by `scale`, centers shift by `offset` then scale."""

    scale: tuple
    offset: tuple
    mode: NormalizerMode = NormalizerMode.FIXED

    def __post_init__(self):
        object.__setattr__(self, "scale", tuple(float(v) for v in self.scale))
        object.__setattr__(self, "offset", tuple(float(v) for v in self.offset))
        if isinstance(self.mode, str):
            object.__setattr__(self, "mode", NormalizerMode(self.mode))
        if any(s < EPS_SCALE for s in self.scale):
            raise ValueError(f"scale below {EPS_SCALE}: {self.scale}")

    def normalize_params(self, vec):
        """Map a canonical 9-vector to normalized units (angles untouched)."""
        vec = np.asarray(vec, dtype=float)
        out = vec.copy()
        scale = np.asarray(self.scale)
        out[0:3] = vec[0:3] / scale
        out[3:6] = (vec[3:6] - np.asarray(self.offset)) / scale
        return out

    def denormalize_params(self, vec):
        vec = np.asarray(vec, dtype=float)
        out = vec.copy()
        scale = np.asarray(self.scale)
        out[0:3] = vec[0:3] * scale
        out[3:6] = vec[3:6] * scale + np.asarray(self.offset)
        return out

    @staticmethod
    def from_dims_estimate(dims, offset=(0.0, 0.0, 0.0)):
        """Detection-style scalar scale: s = max of an estimated dims triple."""
        s = max(float(max(dims)), EPS_SCALE)
        return Normalizer((s, s, s), tuple(offset), NormalizerMode.SCALAR_MAX)

    def to_json_dict(self):
        return {"scale": list(self.scale), "offset": list(self.offset), "mode": self.mode.value}

    @staticmethod
    def from_json_dict(obj):
        return Normalizer(tuple(obj["scale"]), tuple(obj["offset"]), NormalizerMode(obj["mode"]))


def normalize_cloud(points):
    """Fit a quartile Normalizer to a point cloud.

    Per axis: scale = max(Q3 - Q1, EPS_SCALE), offset = (Q1 + Q3) / 2, with
    linear-interpolation quantiles.
    """
    points = np.asarray(points, dtype=float)
    if points.size == 0:
        raise ValueError("empty point set")
    points = points.reshape(-1, 3)
    if not np.all(np.isfinite(points)):
        raise ValueError("point cloud contains non-finite coordinates")
    q1, q3 = np.quantile(points, [0.25, 0.75], axis=0)
    scale = np.maximum(q3 - q1, EPS_SCALE)
    offset = (q1 + q3) / 2.0
    return Normalizer(tuple(scale), tuple(offset), NormalizerMode.QUARTILE)


def default_ranges():
    """Per-parameter [lo, hi] bin ranges in normalized units."""
    return np.array(
        [
            [0.0, 1.0],  # dx
            [0.0, 1.0],  # dy
            [0.0, 1.0],  # dz
            [-1.0, 1.0],  # cx
            [-1.0, 1.0],  # cy
            [-1.0, 1.0],  # cz
            [-math.pi, math.pi],  # yaw
            [-math.pi / 2, math.pi / 2],  # pitch
            [-math.pi, math.pi],  # roll
        ]
    )


@dataclass(frozen=True)
class Quantizer:
    """Uniform per-parameter binning of the normalized 9-vector."""

    bins_per_param: int = 512
    ranges: np.ndarray = field(default_factory=default_ranges)

    def __post_init__(self):
        object.__setattr__(self, "ranges", np.asarray(self.ranges, dtype=float))
        if self.bins_per_param < 2:
            raise ValueError("bins_per_param must be >= 2")
        if self.ranges.shape != (9, 2):
            raise ValueError("ranges must have shape (9, 2)")
        if not np.all(self.ranges[:, 0] < self.ranges[:, 1]):
            raise ValueError("every range must satisfy lo < hi")

    def encode_values(self, vec):
        """Map normalized values to (indices, overflow_flags) with clamping."""
        vec = np.asarray(vec, dtype=float)
        lo, hi = self.ranges[:, 0], self.ranges[:, 1]
        raw = np.floor((vec - lo) / (hi - lo) * self.bins_per_param).astype(int)
        overflow = (vec < lo) | (vec > hi)  # v == hi clamps to the last bin, no flag
        indices = np.clip(raw, 0, self.bins_per_param - 1)
        return indices, overflow

    def decode_indices(self, indices):
        """Bin centers of the given indices, in normalized units."""
        indices = np.asarray(indices)
        if np.any(indices < 0) or np.any(indices >= self.bins_per_param):
            raise ValueError("bin index out of range")
        lo, hi = self.ranges[:, 0], self.ranges[:, 1]
        return (indices + 0.5) / self.bins_per_param * (hi - lo) + lo

    def bin_centers(self, param):
        """All bin-center values for one parameter index (normalized units)."""
        lo, hi = self.ranges[param]
        return (np.arange(self.bins_per_param) + 0.5) / self.bins_per_param * (hi - lo) + lo

    def to_json_dict(self):
        return {"bins_per_param": self.bins_per_param, "ranges": self.ranges.tolist()}

    @staticmethod
    def from_json_dict(obj):
        return Quantizer(obj["bins_per_param"], np.asarray(obj["ranges"]))


@dataclass(frozen=True)
class QuantizedBox:
    """The 9 bin indices of a box plus per-parameter clamp flags."""

    indices: tuple
    overflow_flags: tuple = (False,) * 9

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        object.__setattr__(self, "overflow_flags", tuple(bool(f) for f in self.overflow_flags))
        if len(self.indices) != 9 or len(self.overflow_flags) != 9:
            raise ValueError("indices and overflow_flags must have length 9")
        if any(i < 0 for i in self.indices):
            raise ValueError("negative bin index")

    def overflowed(self):
        return any(self.overflow_flags)


def quantize_box(box, normalizer, quantizer, mode=SymmetryMode.NONE):
    """Quantize a box: normalize, bin each parameter, clamp out-of-range values."""
    box = box.canonical()
    if mode is SymmetryMode.YAW:
        box = replace(box, rot=(box.rot[0], 0.0, 0.0))
    vec = normalizer.normalize_params(box.params_vector())
    indices, overflow = quantizer.encode_values(vec)
    return QuantizedBox(tuple(indices), tuple(overflow))


def dequantize_box(qbox, normalizer, quantizer, mode=SymmetryMode.NONE):
    """Inverse of quantize_box up to bin resolution (indices map to bin centers)."""
    vec = quantizer.decode_indices(np.asarray(qbox.indices))
    vec = normalizer.denormalize_params(vec)
    if mode is SymmetryMode.YAW:
        vec[7] = 0.0
        vec[8] = 0.0
    vec[0:3] = np.maximum(vec[0:3], 1e-12)
    return BoxParams.from_params_vector(vec)


@dataclass(frozen=True)
class BoxCodec:
    """Bundles the normalizer, quantizer, and symmetry mode of one model."""

    normalizer: Normalizer
    quantizer: Quantizer
    symmetry: SymmetryMode = SymmetryMode.NONE

    def encode(self, box):
        return quantize_box(box, self.normalizer, self.quantizer, self.symmetry)

    def decode(self, qbox):
        return dequantize_box(qbox, self.normalizer, self.quantizer, self.symmetry)

    def with_normalizer(self, normalizer):
        return replace(self, normalizer=normalizer)


def _signed_permutation_rotations():
    """The 24 proper signed permutation matrices (chiral octahedral group)."""
    import itertools

    mats = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1.0, -1.0), repeat=3):
            mat = np.zeros((3, 3))
            for row, (col, sign) in enumerate(zip(perm, signs)):
                mat[row, col] = sign
            if np.linalg.det(mat) > 0.5:
                mats.append(mat)
    return mats


_OCTAHEDRAL_ROTATIONS = _signed_permutation_rotations()


def enumerate_equivalent_params(box, mode=SymmetryMode.NONE):
    """All parameter tuples describing the same physical box under `mode`.

    full_so3 applies the 24 proper axis relabelings (permuting dims to match);
    yaw gives {theta, theta+pi} plus the (dx, dy)-swapped theta +- pi/2 pair.
    Members are canonicalized and deduplicated by exact tuple equality.
    """
    box = box.canonical()
    if mode is SymmetryMode.NONE:
        return [box]
    results = {}
    if mode is SymmetryMode.YAW:
        dx, dy, dz = box.dims
        yaw = box.rot[0]
        candidates = [
            BoxParams((dx, dy, dz), box.center, (_wrap_pi(yaw), 0.0, 0.0)),
            BoxParams((dx, dy, dz), box.center, (_wrap_pi(yaw + math.pi), 0.0, 0.0)),
            BoxParams((dy, dx, dz), box.center, (_wrap_pi(yaw + math.pi / 2), 0.0, 0.0)),
            BoxParams((dy, dx, dz), box.center, (_wrap_pi(yaw - math.pi / 2), 0.0, 0.0)),
        ]
        for cand in candidates:
            results.setdefault((cand.dims, cand.center, cand.rot), cand)
        return list(results.values())
    # FULL_SO3: box points {c + R P u} with |u_i| <= d'_i / 2, d' = |P|^T d.
    rot = box.rotation_matrix()
    dims = np.asarray(box.dims)
    for perm_mat in _OCTAHEDRAL_ROTATIONS:
        new_rot = rot @ perm_mat
        new_dims = np.abs(perm_mat).T @ dims
        angles = matrix_to_euler_zyx(new_rot)
        cand = BoxParams(tuple(new_dims), box.center, angles)
        results.setdefault((cand.dims, cand.center, cand.rot), cand)
    return list(results.values())
