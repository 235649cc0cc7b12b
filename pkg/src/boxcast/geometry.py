"""Exact oriented-box set operations.

Intersection volumes are computed by clipping one box's polytope against the
other box's six half-spaces (3D Sutherland-Hodgman), which keeps IoU/IoG
deterministic and exact up to floating point.  A voxel rasterization oracle
is included for testing only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .boxes import corners

__all__ = [
    "ConvexPolytope",
    "box_polytope",
    "intersection_volume",
    "iou",
    "iog",
    "contains_point",
    "contains_points",
    "voxel_iou_oracle",
]

_PLANE_EPS = 1e-12
DEGENERATE_DIM = 1e-9

# Local-frame quad faces of the unit cube, outward-oriented (CCW from outside).
_FACE_CORNER_SIGNS = [
    # -x face, normal (-1, 0, 0)
    [(-1, -1, -1), (-1, -1, 1), (-1, 1, 1), (-1, 1, -1)],
    # +x face
    [(1, -1, -1), (1, 1, -1), (1, 1, 1), (1, -1, 1)],
    # -y face
    [(-1, -1, -1), (1, -1, -1), (1, -1, 1), (-1, -1, 1)],
    # +y face
    [(-1, 1, -1), (-1, 1, 1), (1, 1, 1), (1, 1, -1)],
    # -z face
    [(-1, -1, -1), (-1, 1, -1), (1, 1, -1), (1, -1, -1)],
    # +z face
    [(-1, -1, 1), (1, -1, 1), (1, 1, 1), (-1, 1, 1)],
]


@dataclass
class ConvexPolytope:
    """A convex solid as a list of outward-oriented polygon faces."""

    faces: list  # each an (n, 3) float array, n >= 3

    def vertices(self):
        if not self.faces:
            return np.zeros((0, 3))
        return np.unique(np.round(np.vstack(self.faces), 9), axis=0)

    def volume(self):
        """Signed-tetrahedra volume; non-negative for outward-oriented faces."""
        total = 0.0
        for face in self.faces:
            v0 = face[0]
            for i in range(1, len(face) - 1):
                total += np.dot(v0, np.cross(face[i], face[i + 1]))
        return max(total / 6.0, 0.0)

    def clip_halfspace(self, normal, offset):
        """Clip to {x : normal . x <= offset}, closing the cut with a cap face."""
        new_faces = []
        cut_points = []
        for face in self.faces:
            dist = face @ normal - offset
            if np.all(dist <= _PLANE_EPS):
                new_faces.append(face)
                continue
            if np.all(dist >= -_PLANE_EPS):
                continue
            out = []
            n = len(face)
            for i in range(n):
                j = (i + 1) % n
                di, dj = dist[i], dist[j]
                if di <= _PLANE_EPS:
                    out.append(face[i])
                crosses = (di > _PLANE_EPS) != (dj > _PLANE_EPS)
                if crosses and abs(di - dj) > _PLANE_EPS:
                    t = di / (di - dj)
                    point = face[i] + t * (face[j] - face[i])
                    out.append(point)
                    cut_points.append(point)
            if len(out) >= 3:
                new_faces.append(np.asarray(out))
        cap = _build_cap(cut_points, normal)
        if cap is not None:
            new_faces.append(cap)
        return ConvexPolytope(new_faces)


def _build_cap(points, normal):
    """Order cut points into an outward-facing polygon on the clip plane."""
    if len(points) < 3:
        return None
    pts = np.unique(np.round(np.asarray(points), 12), axis=0)
    if len(pts) < 3:
        return None
    # Basis (e1, e2) with e1 x e2 = normal so CCW order faces +normal.
    axis = np.argmin(np.abs(normal))
    e1 = np.zeros(3)
    e1[axis] = 1.0
    e1 = e1 - np.dot(e1, normal) * normal / np.dot(normal, normal)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(normal, e1)
    e2 /= np.linalg.norm(e2)
    centroid = pts.mean(axis=0)
    rel = pts - centroid
    angles = np.arctan2(rel @ e2, rel @ e1)
    return pts[np.argsort(angles)]


def box_polytope(box):
    """The oriented box as a ConvexPolytope with 6 outward quad faces."""
    half = np.asarray(box.dims) / 2.0
    rot = box.rotation_matrix()
    center = np.asarray(box.center)
    faces = []
    for quad in _FACE_CORNER_SIGNS:
        local = np.asarray(quad, dtype=float) * half
        faces.append(center + local @ rot.T)
    return ConvexPolytope(faces)


def _box_halfspaces(box):
    """(normals, offsets) of the six planes with inside given by n . x <= d."""
    rot = box.rotation_matrix()
    center = np.asarray(box.center)
    half = np.asarray(box.dims) / 2.0
    normals = np.vstack([rot.T, -rot.T])
    offsets = np.concatenate(
        [rot.T @ center + half, -(rot.T @ center) + half]
    )
    return normals, offsets


def _is_degenerate(box):
    return min(box.dims) < DEGENERATE_DIM


def intersection_volume(a, b):
    """Volume of the intersection of two oriented boxes (m^3)."""
    if _is_degenerate(a) or _is_degenerate(b):
        return 0.0
    poly = box_polytope(a)
    normals, offsets = _box_halfspaces(b)
    for normal, offset in zip(normals, offsets):
        poly = poly.clip_halfspace(normal, offset)
        if not poly.faces:
            return 0.0
    return min(poly.volume(), a.volume(), b.volume())


def iou(a, b):
    """Intersection over union of two oriented boxes, in [0, 1]."""
    if _is_degenerate(a) or _is_degenerate(b):
        return 0.0
    inter = intersection_volume(a, b)
    union = a.volume() + b.volume() - inter
    if union <= 0.0:
        return 0.0
    return min(inter / union, 1.0)


def iog(pred, gt):
    """Fraction of the ground-truth box covered by the prediction, in [0, 1].

    A degenerate ground truth is evaluated on its limiting slab (area, length,
    or point measure) rather than raising.
    """
    if _is_degenerate(gt):
        return _degenerate_iog(pred, gt)
    if _is_degenerate(pred):
        return 0.0
    return min(intersection_volume(pred, gt) / gt.volume(), 1.0)


def _degenerate_iog(pred, gt):
    """IoG against a flat/linear/point ground truth via the limiting measure."""
    dims = np.asarray(gt.dims)
    thin = dims < DEGENERATE_DIM
    rot = gt.rotation_matrix()
    center = np.asarray(gt.center)
    if thin.sum() >= 3 or (thin.sum() == 2 and not _is_degenerate(pred)):
        # Point / segment against a solid: sample the extremes.
        pts = corners(gt)
        inside = contains_points(pred, pts)
        return float(np.mean(inside))
    if thin.sum() == 2:
        pts = corners(gt)
        inside = contains_points(pred, pts)
        return float(np.mean(inside))
    # Exactly one thin axis: clip the mid-plane rectangle against pred.
    axes = [i for i in range(3) if not thin[i]]
    thin_axis = int(np.where(thin)[0][0])
    u, v = rot[:, axes[0]] * dims[axes[0]] / 2.0, rot[:, axes[1]] * dims[axes[1]] / 2.0
    quad = np.array([center - u - v, center + u - v, center + u + v, center - u + v])
    normals, offsets = _box_halfspaces(pred)
    poly = quad
    for normal, offset in zip(normals, offsets):
        if abs(np.dot(normal, rot[:, thin_axis])) > 1.0 - 1e-9:
            # Plane parallel to the slab: keep/drop wholesale.
            dist = poly @ normal - offset if len(poly) else np.array([])
            if len(dist) and np.all(dist > _PLANE_EPS):
                poly = np.zeros((0, 3))
            continue
        poly = _clip_polygon(poly, normal, offset)
        if len(poly) < 3:
            return 0.0
    area = _polygon_area(poly)
    full = dims[axes[0]] * dims[axes[1]]
    return min(area / full, 1.0)


def _clip_polygon(poly, normal, offset):
    if len(poly) == 0:
        return poly
    dist = poly @ normal - offset
    out = []
    n = len(poly)
    for i in range(n):
        j = (i + 1) % n
        if dist[i] <= _PLANE_EPS:
            out.append(poly[i])
        if (dist[i] > _PLANE_EPS) != (dist[j] > _PLANE_EPS) and abs(dist[i] - dist[j]) > _PLANE_EPS:
            t = dist[i] / (dist[i] - dist[j])
            out.append(poly[i] + t * (poly[j] - poly[i]))
    return np.asarray(out) if out else np.zeros((0, 3))


def _polygon_area(poly):
    if len(poly) < 3:
        return 0.0
    v0 = poly[0]
    cross = np.zeros(3)
    for i in range(1, len(poly) - 1):
        cross += np.cross(poly[i] - v0, poly[i + 1] - v0)
    return float(np.linalg.norm(cross) / 2.0)


def contains_point(box, point, tol=1e-12):
    """Boundary-inclusive containment: |R^T (x - c)| <= d / 2."""
    local = box.rotation_matrix().T @ (np.asarray(point, dtype=float) - np.asarray(box.center))
    return bool(np.all(np.abs(local) <= np.asarray(box.dims) / 2.0 + tol))


def contains_points(box, points, tol=1e-12):
    """Vectorized contains_point over an (n, 3) array; returns bool (n,)."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    local = (points - np.asarray(box.center)) @ box.rotation_matrix()
    return np.all(np.abs(local) <= np.asarray(box.dims) / 2.0 + tol, axis=1)


def voxel_iou_oracle(a, b, resolution=128):
    """Brute-force (iou, iog(a, b)) estimates on a shared voxel grid.

    Rasterizes both boxes over the axis-aligned bounding box of their union;
    error is O(1 / resolution).  Test oracle only.
    """
    if resolution < 16:
        raise ValueError("resolution must be >= 16")
    pts = np.vstack([corners(a), corners(b)])
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = np.maximum(hi - lo, 1e-12)
    centers = [
        (lo[k] + (np.arange(resolution) + 0.5) / resolution * span[k]).astype(np.float32)
        for k in range(3)
    ]

    def rasterize(box):
        rot = box.rotation_matrix().astype(np.float32)
        c = np.asarray(box.center, dtype=np.float32)
        half = (np.asarray(box.dims, dtype=np.float32) / 2.0) + np.float32(1e-6)
        inside = np.ones((resolution, resolution, resolution), dtype=bool)
        # Separable broadcast of the local coordinate along each box axis.
        for axis in range(3):
            r = rot[:, axis]
            local = (
                (centers[0] - c[0])[:, None, None] * r[0]
                + (centers[1] - c[1])[None, :, None] * r[1]
                + (centers[2] - c[2])[None, None, :] * r[2]
            )
            inside &= np.abs(local) <= half[axis]
        return inside

    in_a = rasterize(a)
    in_b = rasterize(b)
    inter = np.count_nonzero(in_a & in_b)
    union = np.count_nonzero(in_a | in_b)
    n_b = np.count_nonzero(in_b)
    iou_est = inter / union if union else 0.0
    iog_est = inter / n_b if n_b else 0.0
    return iou_est, iog_est
