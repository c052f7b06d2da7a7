"""Open-vocabulary object extraction.

Pipeline: cosine-similarity threshold over decoded primitive features
(local head) → DBSCAN over the surviving centers to drop stray matches →
largest cluster → convex-hull completion to recover members suppressed by
the threshold → centroid + extent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .errors import DegenerateRegionError, NoObjectFoundError
from .scene import SceneModel
from .semantics import decode


@dataclass
class QueryConfig:
    similarity_threshold: float = 0.6
    dbscan_eps: float = 0.02
    dbscan_min_samples: int = 15
    hull_tolerance: float = 1e-4

    def __post_init__(self):
        if self.dbscan_eps <= 0:
            raise ValueError("dbscan_eps must be positive")
        if self.dbscan_min_samples < 1:
            raise ValueError("dbscan_min_samples must be >= 1")


@dataclass
class ObjectExtract:
    primitive_indices: np.ndarray  # sorted unique indices into the scene
    centroid: np.ndarray           # (3,) mean of member centers
    extent: np.ndarray             # (3,) axis-aligned half-sizes
    hull_degenerate: bool = False
    cluster_sizes: list = field(default_factory=list)
    noise_count: int = 0


def query_initial(scene: SceneModel, query_embedding: np.ndarray,
                  cfg: QueryConfig | None = None) -> np.ndarray:
    """Indices of primitives whose decoded local feature matches the query."""
    cfg = cfg or QueryConfig()
    q = np.asarray(query_embedding, dtype=np.float64).ravel()
    qn = np.linalg.norm(q)
    if qn == 0.0:
        raise DegenerateRegionError("query embedding has zero norm")
    q = q / qn
    f_l, _ = decode(scene.decoder, scene.features)
    sims = f_l @ q  # decoded heads are unit (or zero) vectors
    return np.nonzero(sims >= cfg.similarity_threshold)[0]


def dbscan(points: np.ndarray, eps: float, min_samples: int):
    """Density clustering; returns (clusters, noise) as index arrays.

    A core point has at least ``min_samples`` neighbors within ``eps``
    including itself. Clusters are the connected components of core points
    (component ids assigned in point-index scan order); a border point joins
    the cluster of its lowest-index core neighbor; everything else is noise.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = pts.shape[0]
    if n == 0:
        return [], np.empty(0, dtype=np.int64)
    tree = cKDTree(pts)
    neighbors = [np.sort(np.asarray(idx, dtype=np.int64))
                 for idx in tree.query_ball_point(pts, eps)]
    core = np.array([len(nb) >= min_samples for nb in neighbors])
    labels = np.full(n, -1, dtype=np.int64)
    next_label = 0
    for i in range(n):
        if not core[i] or labels[i] >= 0:
            continue
        labels[i] = next_label
        frontier = [i]
        while frontier:
            j = frontier.pop()
            for nb in neighbors[j]:
                if core[nb] and labels[nb] < 0:
                    labels[nb] = next_label
                    frontier.append(nb)
        next_label += 1
    for i in range(n):
        if core[i] or labels[i] >= 0:
            continue
        for nb in neighbors[i]:
            if core[nb]:
                labels[i] = labels[nb]
                break
    clusters = [np.nonzero(labels == c)[0] for c in range(next_label)]
    noise = np.nonzero(labels < 0)[0]
    return clusters, noise


def select_target(clusters: list) -> np.ndarray:
    """Largest cluster; ties go to the one holding the smallest index."""
    if not clusters:
        raise NoObjectFoundError("no clusters to select from")
    best = None
    for cluster in clusters:
        cluster = np.asarray(cluster, dtype=np.int64)
        if (best is None or cluster.size > best.size
                or (cluster.size == best.size and cluster.min() < best.min())):
            best = cluster
    return best


def hull_complete(cluster: np.ndarray, scene: SceneModel, tol: float = 1e-4):
    """Union of the cluster with all primitives inside its centers' hull.

    Returns (indices, degenerate_flag); fewer than 4 points or a flat/
    degenerate point set keeps the cluster unchanged with the flag set.
    """
    cluster = np.asarray(cluster, dtype=np.int64)
    pts = scene.centers[cluster]
    if cluster.size < 4:
        return cluster.copy(), True
    try:
        hull = ConvexHull(pts)
    except QhullError:
        return cluster.copy(), True
    # face planes: eq[:, :3] @ x + eq[:, 3] <= 0 inside
    eq = hull.equations
    dist = scene.centers @ eq[:, :3].T + eq[:, 3]
    inside = np.nonzero(dist.max(axis=1) <= tol)[0]
    return np.union1d(cluster, inside), False


def extract_object(scene: SceneModel, query_embedding: np.ndarray,
                   cfg: QueryConfig | None = None) -> ObjectExtract:
    cfg = cfg or QueryConfig()
    initial = query_initial(scene, query_embedding, cfg)
    if initial.size == 0:
        raise NoObjectFoundError("no primitive matched the query embedding")
    clusters, noise = dbscan(scene.centers[initial], cfg.dbscan_eps,
                             cfg.dbscan_min_samples)
    if not clusters:
        raise NoObjectFoundError("all query matches were rejected as noise")
    target_local = select_target(clusters)
    members, degenerate = hull_complete(initial[target_local], scene,
                                        cfg.hull_tolerance)
    centers = scene.centers[members]
    centroid = centers.mean(axis=0)
    extent = 0.5 * (centers.max(axis=0) - centers.min(axis=0))
    return ObjectExtract(
        primitive_indices=members,
        centroid=centroid,
        extent=extent,
        hull_degenerate=degenerate,
        cluster_sizes=[int(np.asarray(c).size) for c in clusters],
        noise_count=int(noise.size),
    )
