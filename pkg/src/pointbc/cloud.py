"""Point cloud containers and tokenization primitives.

A cloud is turned into a fixed-size set of local groups in two steps:
farthest point sampling picks ``c`` well-spread center points, then
k-nearest-neighbor grouping collects ``p`` points around each center and
re-expresses them relative to that center.  Both steps are deterministic
given a seed and run in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

VALID_FRAMES = ("camera", "base")


@dataclass
class PointCloud:
    """Unordered 3D points with a frame tag and owning object id.

    points: (N, 3) float64, finite.
    frame: "camera" or "base".
    object_id: id of the segmented object this cloud belongs to.
    """

    points: np.ndarray
    frame: str
    object_id: int = -1

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {self.points.shape}")
        if not np.isfinite(self.points).all():
            raise ValueError("points contain non-finite values")
        if self.frame not in VALID_FRAMES:
            raise ValueError(f"unknown frame {self.frame!r}")

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class ClusterSet:
    """Output of center sampling + grouping for one cloud.

    centers: (c, 3) absolute coordinates of the sampled centers.
    groups: (c, p, 3) center-relative coordinates of each group member.
    group_points: (c, p, 3) the same members in absolute coordinates,
        kept so absolute positions can be recovered bitwise (adding the
        center back in floating point does not round-trip in general).
    indices: (c, p) int64 indices of the members into the source cloud.
    frame, object_id: carried over from the source cloud.
    """

    centers: np.ndarray
    groups: np.ndarray
    group_points: np.ndarray
    indices: np.ndarray
    frame: str
    object_id: int = -1

    def __post_init__(self) -> None:
        c, p = self.indices.shape
        if self.centers.shape != (c, 3):
            raise ValueError("centers shape mismatch")
        if self.groups.shape != (c, p, 3) or self.group_points.shape != (c, p, 3):
            raise ValueError("groups shape mismatch")

    @property
    def num_clusters(self) -> int:
        return self.indices.shape[0]

    @property
    def points_per_cluster(self) -> int:
        return self.indices.shape[1]


def farthest_point_sample(
    points: np.ndarray, count: int, seed: int, first_index: int | None = None
) -> np.ndarray:
    """Greedy max-min sampling of ``count`` center indices.

    The first center is drawn uniformly from the seeded generator (or
    forced via ``first_index``); each following center is the point
    with the largest distance to the already chosen set, ties broken by
    lowest index.  If the cloud has fewer than ``count`` points the
    chosen indices are recycled in round-robin order.

    Returns (count,) int64 indices into ``points``.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if n == 0:
        raise ValueError("cannot sample centers from an empty cloud")
    if count < 1:
        raise ValueError("count must be >= 1")
    if first_index is None:
        first = int(np.random.default_rng(seed).integers(n))
    else:
        first = int(first_index)
        if not 0 <= first < n:
            raise ValueError("first_index out of range")

    k = min(count, n)
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = first
    # min squared distance from every point to the chosen set so far
    d2 = np.sum((pts - pts[first]) ** 2, axis=1)
    for i in range(1, k):
        nxt = int(np.argmax(d2))  # argmax takes the lowest index on ties
        chosen[i] = nxt
        d2 = np.minimum(d2, np.sum((pts - pts[nxt]) ** 2, axis=1))
    if k == count:
        return chosen
    reps = -(-count // k)  # ceil
    return np.tile(chosen, reps)[:count]


def knn_group(points: np.ndarray, center_indices: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Group the ``size`` nearest points around each center.

    Each group contains the center itself plus its nearest neighbors,
    ordered by increasing distance with ties broken by lowest index.
    If the cloud has fewer than ``size`` points, members repeat
    cyclically in that order.

    Returns (groups, indices): (c, size, 3) center-relative float64
    coordinates and (c, size) int64 member indices.
    """
    pts = np.asarray(points, dtype=np.float64)
    centers = np.asarray(center_indices, dtype=np.int64)
    n = pts.shape[0]
    if n == 0:
        raise ValueError("cannot group an empty cloud")
    if size < 1:
        raise ValueError("size must be >= 1")

    c = centers.shape[0]
    d2 = np.sum((pts[centers, None, :] - pts[None, :, :]) ** 2, axis=2)  # (c, n)
    # stable sort on distance keeps lowest-index ordering among ties; the
    # center itself is at distance 0 and sorts first (or ties with exact
    # duplicates, still fine: the center index is <= any duplicate's rank
    # only by index order, which is the documented rule)
    order = np.argsort(d2, axis=1, kind="stable")
    if n >= size:
        idx = order[:, :size]
    else:
        reps = -(-size // n)
        idx = np.tile(order, (1, reps))[:, :size]
    groups = pts[idx] - pts[centers][:, None, :]
    return groups, idx.astype(np.int64)


def build_clusters(
    cloud: PointCloud, count: int, size: int, seed: int, first_index: int | None = None
) -> ClusterSet:
    """Run center sampling and grouping on one cloud."""
    centers_idx = farthest_point_sample(cloud.points, count, seed, first_index)
    groups, idx = knn_group(cloud.points, centers_idx, size)
    return ClusterSet(
        centers=cloud.points[centers_idx].copy(),
        groups=groups,
        group_points=cloud.points[idx].copy(),
        indices=idx,
        frame=cloud.frame,
        object_id=cloud.object_id,
    )


def mask_tokens(count: int, ratio: float, seed: int) -> np.ndarray:
    """Pick the cluster indices kept after random masking.

    Keeps round((1 - ratio) * count) clusters (half away from zero, at
    least one), drawn uniformly without replacement.  Returns sorted
    int64 indices.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if not 0.0 <= ratio < 1.0:
        raise ValueError("mask ratio must be in [0, 1)")
    keep = kept_count(count, ratio)
    rng = np.random.default_rng(seed)
    kept = rng.choice(count, size=keep, replace=False)
    return np.sort(kept.astype(np.int64))


def kept_count(count: int, ratio: float) -> int:
    """Number of clusters surviving masking: round half away from zero, min 1."""
    x = (1.0 - ratio) * count
    return max(1, int(np.floor(x + 0.5)))
