"""
Point-cloud preprocessing: normalization, farthest point sampling, kNN patches.

Everything is brute force on float64 numpy arrays (clouds here stay below a few
thousand points). Ties are always broken towards the lower index.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from models.errors import EmptyInputError, SampleSizeError, InvalidParameterError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PointCloud:
    """N points (rows are Point3 = x, y, z) plus the index each point had in the source cloud."""

    points: np.ndarray
    source_indices: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        if points.ndim != 2 or points.shape[0] == 0:
            raise EmptyInputError()
        if points.shape[1] != 3:
            raise InvalidParameterError(f"points must have shape (N, 3), got {points.shape}")
        if not np.all(np.isfinite(points)):
            raise InvalidParameterError("point coordinates must be finite")
        indices = np.asarray(self.source_indices, dtype=np.int64)
        if indices.shape != (points.shape[0],):
            raise InvalidParameterError("source_indices must have one entry per point")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "source_indices", indices)

    @classmethod
    def from_points(cls, points):
        points = np.asarray(points, dtype=np.float64)
        if points.size == 0:
            raise EmptyInputError()
        return cls(points, np.arange(len(points)))

    def __len__(self):
        return self.points.shape[0]

    def subset(self, keep):
        """Rows selected by `keep` (index array or boolean mask), provenance preserved."""
        return PointCloud(self.points[keep], self.source_indices[keep])

    def with_points(self, points):
        return PointCloud(points, self.source_indices)


@dataclass(frozen=True)
class PatchSet:
    centers: np.ndarray          # (n_c, 3)
    center_indices: np.ndarray   # (n_c,) row indices into the cloud
    patches: np.ndarray          # (n_c, n_p, 3), center-relative
    patch_indices: np.ndarray    # (n_c, n_p) source indices

    @property
    def n_c(self):
        return self.centers.shape[0]

    @property
    def n_p(self):
        return self.patches.shape[1]


def normalize(cloud):
    """Center on the centroid and scale so the farthest point has norm 1.

    A cloud whose points all coincide maps to the origin.
    """
    if cloud is None or len(cloud) == 0:
        raise EmptyInputError()
    centered = cloud.points - cloud.points.mean(axis=0)
    scale = np.linalg.norm(centered, axis=1).max()
    if scale > 0:
        centered = centered / scale
    else:
        centered = np.zeros_like(centered)
    return cloud.with_points(centered)


def farthest_point_sampling(cloud, n_c, start=0, seed=None):
    """Greedy FPS; returns (centers, center_indices) in selection order.

    `start` is the seed row index, or "random" to draw it from `seed`.
    """
    points = cloud.points
    n = len(points)
    if n_c < 1:
        raise InvalidParameterError(f"n_c must be >= 1, got {n_c}")
    if n_c > n:
        raise SampleSizeError(n_c, n)

    if start == "random":
        start = int(np.random.default_rng(seed).integers(n))
    elif not 0 <= start < n:
        raise InvalidParameterError(f"start index {start} out of range for {n} points")

    selected = np.empty(n_c, dtype=np.int64)
    selected[0] = start
    min_dist = np.linalg.norm(points - points[start], axis=1)
    # chosen rows sit below every real distance so coincident points are still picked once
    min_dist[start] = -np.inf
    for i in range(1, n_c):
        # argmax returns the first maximum, i.e. the lower index on ties
        nxt = int(np.argmax(min_dist))
        selected[i] = nxt
        min_dist = np.minimum(min_dist, np.linalg.norm(points - points[nxt], axis=1))
        min_dist[nxt] = -np.inf
    log.debug("fps: %d of %d points, start=%d", n_c, n, start)
    return points[selected].copy(), selected


def knn_group(cloud, centers, n_p, center_indices=None):
    """The n_p nearest cloud points of each center, expressed relative to the center."""
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    n = len(cloud)
    if n_p < 1:
        raise InvalidParameterError(f"n_p must be >= 1, got {n_p}")
    if n_p > n:
        raise SampleSizeError(n_p, n)

    dist = cdist(centers, cloud.points)
    # stable sort keeps equal distances in index order
    nearest = np.argsort(dist, axis=1, kind="stable")[:, :n_p]
    patches = cloud.points[nearest] - centers[:, None, :]
    if center_indices is None:
        center_indices = np.full(len(centers), -1, dtype=np.int64)
    return PatchSet(
        centers=centers.copy(),
        center_indices=np.asarray(center_indices, dtype=np.int64),
        patches=patches,
        patch_indices=cloud.source_indices[nearest],
    )


def build_patches(cloud, n_c, n_p, start=0, seed=None):
    """FPS followed by kNN grouping on an already-normalized cloud."""
    centers, center_indices = farthest_point_sampling(cloud, n_c, start=start, seed=seed)
    return knn_group(cloud, centers, n_p, center_indices=cloud.source_indices[center_indices])
