"""Planar projective geometry, point sampling, and mask/box arithmetic.

All operations are pure functions; randomized ones take an explicit seed.
Pixel coordinates are (x, y) with x along columns and y along rows, and
row-major order means index = y * width + x.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import (
    DegenerateConfiguration,
    EmptyIntersection,
    EmptyMask,
    EmptySet,
    NoConsensus,
    PointAtInfinity,
    SingularSystem,
)

_DET_EPS = 1e-12


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def as_array(self):
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True)
class Box:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"invalid box {self}")

    @property
    def width(self):
        return self.x_max - self.x_min

    @property
    def height(self):
        return self.y_max - self.y_min

    def area(self):
        return self.width * self.height

    def contains(self, p: Point2) -> bool:
        return self.x_min <= p.x <= self.x_max and self.y_min <= p.y <= self.y_max

    def shifted(self, dx, dy):
        return Box(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)


class PointSet:
    """Ordered list of Point2, backed by an (N, 2) float array."""

    def __init__(self, points):
        if isinstance(points, np.ndarray):
            self.array = points.astype(float).reshape(-1, 2)
        else:
            self.array = np.array([[p.x, p.y] for p in points], dtype=float).reshape(-1, 2)

    @classmethod
    def from_array(cls, arr):
        return cls(np.asarray(arr, dtype=float))

    def __len__(self):
        return self.array.shape[0]

    def __getitem__(self, i) -> Point2:
        return Point2(float(self.array[i, 0]), float(self.array[i, 1]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def mean(self) -> Point2:
        if len(self) == 0:
            raise EmptySet("cannot average an empty point set")
        m = self.array.mean(axis=0)
        return Point2(float(m[0]), float(m[1]))


class Homography:
    """3x3 projective transform, normalized so h[2,2] = 1 when possible."""

    def __init__(self, h):
        h = np.asarray(h, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(h)):
            raise ValueError("non-finite homography entries")
        if abs(np.linalg.det(h)) <= _DET_EPS:
            raise ValueError("homography is not invertible")
        if abs(h[2, 2]) > _DET_EPS:
            h = h / h[2, 2]
        self.h = h

    @classmethod
    def identity(cls):
        return cls(np.eye(3))

    @classmethod
    def translation(cls, dx, dy):
        return cls(np.array([[1.0, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]]))

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.h))

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self.h @ other.h)


class BinaryMask:
    """Row-major boolean pixel grid."""

    def __init__(self, data):
        data = np.asarray(data)
        if data.ndim != 2:
            raise ValueError("mask must be 2-D")
        self.data = data.astype(bool)

    @classmethod
    def zeros(cls, width, height):
        return cls(np.zeros((height, width), dtype=bool))

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def height(self):
        return self.data.shape[0]

    def count(self):
        return int(self.data.sum())

    def is_empty(self):
        return not self.data.any()

    def pixels(self) -> PointSet:
        """Set pixels as (x, y) points in row-major order."""
        ys, xs = np.nonzero(self.data)
        return PointSet.from_array(np.stack([xs, ys], axis=1))

    def __and__(self, other):
        return BinaryMask(self.data & other.data)

    def __or__(self, other):
        return BinaryMask(self.data | other.data)

    def __sub__(self, other):
        return BinaryMask(self.data & ~other.data)


# ---------------------------------------------------------------------------
# homography estimation


def _hartley_normalization(pts):
    """Translate to centroid and scale mean distance to sqrt(2)."""
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    s = np.sqrt(2.0) / max(d, 1e-12)
    T = np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])
    ph = np.column_stack([pts, np.ones(len(pts))])
    return (T @ ph.T).T[:, :2], T


def _has_collinear_triple(pts, eps=1e-9):
    n = len(pts)
    for i in range(n - 2):
        for j in range(i + 1, n - 1):
            v = pts[j] - pts[i]
            for k in range(j + 1, n):
                w = pts[k] - pts[i]
                if abs(v[0] * w[1] - v[1] * w[0]) <= eps * (1.0 + np.abs(pts).max()) ** 2:
                    return True
    return False


def estimate_homography_dlt(src: PointSet, dst: PointSet) -> Homography:
    """Normalized DLT estimate mapping src points onto dst points."""
    a, b = src.array, dst.array
    if len(a) != len(b):
        raise DegenerateConfiguration("src/dst length mismatch")
    if len(a) < 4:
        raise DegenerateConfiguration(f"need >= 4 correspondences, got {len(a)}")
    # Exhaustive collinearity test only on minimal sets; larger sets may
    # legitimately contain collinear triples and are guarded by the rank check.
    if len(a) == 4 and (_has_collinear_triple(a) or _has_collinear_triple(b)):
        raise DegenerateConfiguration("collinear triple in a minimal 4-point set")

    an, Ta = _hartley_normalization(a)
    bn, Tb = _hartley_normalization(b)

    n = len(an)
    x, y = an[:, 0], an[:, 1]
    u, v = bn[:, 0], bn[:, 1]
    z = np.zeros(n)
    o = np.ones(n)
    A = np.empty((2 * n, 9))
    A[0::2] = np.column_stack([x, y, o, z, z, z, -u * x, -u * y, -u])
    A[1::2] = np.column_stack([z, z, z, x, y, o, -v * x, -v * y, -v])

    _, s, Vt = np.linalg.svd(A)
    if s[0] <= 0 or s[7] / s[0] < 1e-10:
        raise SingularSystem("rank-deficient design matrix")
    Hn = Vt[-1].reshape(3, 3)
    H = np.linalg.inv(Tb) @ Hn @ Ta
    try:
        return Homography(H)
    except ValueError as exc:
        raise SingularSystem(str(exc)) from exc


def _transfer_errors(h: Homography, src, dst):
    ph = np.column_stack([src, np.ones(len(src))])
    q = (h.h @ ph.T).T
    w = q[:, 2]
    bad = np.abs(w) < _DET_EPS
    w = np.where(bad, 1.0, w)
    proj = q[:, :2] / w[:, None]
    err = np.sqrt(((proj - dst) ** 2).sum(axis=1))
    err[bad] = np.inf
    return err


def estimate_homography_ransac(
    src: PointSet,
    dst: PointSet,
    threshold: float = 3.0,
    max_iters: int = 2000,
    seed: int = 0,
):
    """RANSAC over 4-point minimal samples; best model refit on its inliers.

    Returns (Homography, inlier index array). Deterministic given seed.
    """
    a, b = src.array, dst.array
    if len(a) != len(b) or len(a) < 4:
        raise DegenerateConfiguration("need >= 4 correspondences of equal length")

    rng = np.random.default_rng(seed)
    n = len(a)
    best_inliers = None
    best_err = np.inf
    for _ in range(max_iters):
        idx = rng.choice(n, size=4, replace=False)
        try:
            h = estimate_homography_dlt(
                PointSet.from_array(a[idx]), PointSet.from_array(b[idx])
            )
        except (DegenerateConfiguration, SingularSystem):
            continue
        err = _transfer_errors(h, a, b)
        inliers = err <= threshold
        count = int(inliers.sum())
        mean_err = float(err[inliers].mean()) if count else np.inf
        if best_inliers is None or count > int(best_inliers.sum()) or (
            count == int(best_inliers.sum()) and mean_err < best_err
        ):
            best_inliers = inliers
            best_err = mean_err

    if best_inliers is None or int(best_inliers.sum()) < 4:
        raise NoConsensus("no 4-point consensus within threshold")

    idx = np.nonzero(best_inliers)[0]
    h = estimate_homography_dlt(PointSet.from_array(a[idx]), PointSet.from_array(b[idx]))
    # refitting can move the boundary; recompute the supported inlier set
    err = _transfer_errors(h, a, b)
    final = np.nonzero(err <= threshold)[0]
    if len(final) < 4:
        final = idx
        h = estimate_homography_dlt(PointSet.from_array(a[idx]), PointSet.from_array(b[idx]))
    return h, final


def project_point(h: Homography, p: Point2) -> Point2:
    q = h.h @ np.array([p.x, p.y, 1.0])
    if abs(q[2]) < _DET_EPS:
        raise PointAtInfinity(f"point {p} maps to infinity")
    return Point2(float(q[0] / q[2]), float(q[1] / q[2]))


# ---------------------------------------------------------------------------
# point sampling and mask/box arithmetic


def farthest_point(reference: PointSet, candidates: PointSet) -> Point2:
    """Candidate maximizing its min distance to the reference set (ties: lowest index)."""
    if len(reference) == 0 or len(candidates) == 0:
        raise EmptySet("farthest_point requires non-empty sets")
    d = np.sqrt(
        ((candidates.array[:, None, :] - reference.array[None, :, :]) ** 2).sum(axis=2)
    )
    min_d = d.min(axis=1)
    return candidates[int(np.argmax(min_d))]


def box_iou(a: Box, b: Box) -> float:
    ix = max(0.0, min(a.x_max, b.x_max) - max(a.x_min, b.x_min))
    iy = max(0.0, min(a.y_max, b.y_max) - max(a.y_min, b.y_min))
    inter = ix * iy
    union = a.area() + b.area() - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def erode_mask(m: BinaryMask, radius: int) -> BinaryMask:
    """Chebyshev erosion: a pixel survives iff its full (2r+1)^2 neighborhood is set."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return BinaryMask(m.data.copy())
    k = 2 * radius + 1
    eroded = ndimage.binary_erosion(
        m.data, structure=np.ones((k, k), dtype=bool), border_value=0
    )
    return BinaryMask(eroded)


def nearest_point_between_masks(source: BinaryMask, target: BinaryMask) -> Point2:
    """Source pixel closest to the target mask (ties: lowest row-major index)."""
    if source.is_empty() or target.is_empty():
        raise EmptyMask("nearest_point_between_masks requires non-empty masks")
    if source.data.shape != target.data.shape:
        raise ValueError("masks must share dimensions")
    dist = ndimage.distance_transform_edt(~target.data)
    d = np.where(source.data, dist, np.inf)
    flat = int(np.argmin(d))  # argmin is row-major, matching the tie-break rule
    y, x = np.unravel_index(flat, d.shape)
    return Point2(float(x), float(y))


def sample_intersection_points(
    region_a: BinaryMask, region_b: Box, n: int, seed: int = 0
) -> PointSet:
    """Uniform pixel sample from mask-and-box intersection; deterministic given seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    ys, xs = np.nonzero(region_a.data)
    inside = (
        (xs >= region_b.x_min)
        & (xs <= region_b.x_max)
        & (ys >= region_b.y_min)
        & (ys <= region_b.y_max)
    )
    xs, ys = xs[inside], ys[inside]
    if len(xs) == 0:
        raise EmptyIntersection("mask and box do not intersect")
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(xs), size=n, replace=len(xs) < n)
    return PointSet.from_array(np.stack([xs[picks], ys[picks]], axis=1))
