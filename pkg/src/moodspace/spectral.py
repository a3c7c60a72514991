"""Affinity graphs and their eigenstructure.

Everything the pipeline knows about token geometry lives here: the RBF
affinity matrix with its normalizations, the top-k eigendecomposition used
both as training target and training variable, farthest point sampling for
bounding graph size, and the per-image token clustering + cross-image
cluster correspondence used by image-level path construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SYMMETRY_TOL = 1e-8


def pairwise_sq_dists(points: np.ndarray, other: np.ndarray | None = None) -> np.ndarray:
    """Squared Euclidean distances between rows, clipped at zero."""
    points = np.asarray(points, dtype=np.float64)
    other = points if other is None else np.asarray(other, dtype=np.float64)
    p2 = np.sum(points * points, axis=1)
    o2 = np.sum(other * other, axis=1)
    d2 = p2[:, None] + o2[None, :] - 2.0 * (points @ other.T)
    return np.maximum(d2, 0.0)


@dataclass
class AffinityMatrix:
    """Dense RBF affinity over a point set, with its row normalization."""

    kappa: float
    bandwidth: float
    raw: np.ndarray
    row_normalized: np.ndarray

    @property
    def n(self) -> int:
        return int(self.raw.shape[0])

    def sym_normalized(self) -> np.ndarray:
        """D^(-1/2) S D^(-1/2); same spectrum as the row-stochastic matrix."""
        d = self.raw.sum(axis=1)
        inv_sqrt = 1.0 / np.sqrt(d)
        return self.raw * inv_sqrt[:, None] * inv_sqrt[None, :]


MEDIAN_EXACT_LIMIT = 2048


def median_bandwidth(points: np.ndarray, max_points: int = 512) -> float:
    """Median of pairwise squared distances; FPS subsample of ``max_points``
    once the exact computation gets big (above ``MEDIAN_EXACT_LIMIT`` points).

    Sets the kernel bandwidth scale; errors out when the points carry no
    spread at all. The subsample estimate runs high on dense clouds (FPS
    thins crowded regions first), which only rescales the kernel.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n < 2:
        raise ValueError("need at least two points for a bandwidth")
    if n > MEDIAN_EXACT_LIMIT:
        points = points[fps(points, max_points, seed=0)]
        n = max_points
    d2 = pairwise_sq_dists(points)
    iu = np.triu_indices(n, k=1)
    med = float(np.median(d2[iu]))
    if med <= 0.0:
        raise ValueError("degenerate bandwidth: points carry no spread")
    return med


def rbf_affinity(points: np.ndarray, kappa: float = 1.0,
                 bandwidth: float | None = None) -> AffinityMatrix:
    """kappa * exp(-||p_i - p_j||^2 / h) over all point pairs.

    ``bandwidth=None`` applies the median heuristic. The row-normalized
    matrix is invariant to ``kappa``.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 2:
        raise ValueError("points must be an (n>=2, d) array")
    if not np.isfinite(points).all():
        raise ValueError("non-finite points")
    if kappa <= 0.0:
        raise ValueError("kappa must be positive")
    if bandwidth is None:
        bandwidth = median_bandwidth(points)
    if bandwidth <= 0.0:
        raise ValueError("bandwidth must be positive")
    raw = kappa * np.exp(-pairwise_sq_dists(points) / bandwidth)
    raw = 0.5 * (raw + raw.T)  # exact symmetry despite rounding
    row = raw / raw.sum(axis=1, keepdims=True)
    return AffinityMatrix(kappa=float(kappa), bandwidth=float(bandwidth),
                          raw=raw, row_normalized=row)


@dataclass
class SpectralEmbedding:
    """Top-k eigenpairs of a symmetric matrix, eigenvalues non-increasing."""

    vectors: np.ndarray  # (n, k), orthonormal columns
    values: np.ndarray   # (k,)
    eigengap_at_cut: float | None = None

    @property
    def n(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def k(self) -> int:
        return int(self.vectors.shape[1])


def full_symmetric_eig(s: np.ndarray):
    """All eigenpairs of a symmetric matrix, sorted by descending eigenvalue."""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError("matrix must be square")
    if np.max(np.abs(s - s.T)) > SYMMETRY_TOL:
        raise ValueError("matrix is not symmetric")
    values, vectors = np.linalg.eigh(0.5 * (s + s.T))
    return values[::-1].copy(), vectors[:, ::-1].copy()


def top_k_eigs(s: np.ndarray, k: int) -> SpectralEmbedding:
    """The k largest-eigenvalue eigenpairs of a symmetric matrix.

    In the pipeline ``s`` is the symmetrically normalized affinity (see
    :meth:`AffinityMatrix.sym_normalized`); the routine itself decomposes
    its input as given.
    """
    values, vectors = full_symmetric_eig(s)
    n = values.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for n={n}")
    gap = float(values[k - 1] - values[k]) if k < n else None
    return SpectralEmbedding(vectors=vectors[:, :k].copy(), values=values[:k].copy(),
                             eigengap_at_cut=gap)


def projector(emb: SpectralEmbedding, i: int) -> np.ndarray:
    """Orthogonal projector onto the span of the top-i eigenvectors."""
    if not 1 <= i <= emb.k:
        raise ValueError(f"prefix {i} exceeds available {emb.k} eigenvectors")
    block = emb.vectors[:, :i]
    return block @ block.T


def fps(points: np.ndarray, m: int, seed: int) -> np.ndarray:
    """Greedy farthest point sampling of ``m`` indices.

    The start index is a seeded uniform draw; every later pick maximizes the
    minimum distance to the already-chosen set, ties resolved toward the
    lowest index.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"cannot sample {m} of {n} points")
    rng = np.random.default_rng(seed)
    start = int(rng.integers(n))
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = start
    sq = np.sum(points * points, axis=1)
    min_d2 = np.maximum(sq + sq[start] - 2.0 * (points @ points[start]), 0.0)
    min_d2[start] = -1.0  # exclude chosen points from future argmax
    for i in range(1, m):
        nxt = int(np.argmax(min_d2))  # argmax returns the first (lowest) index on ties
        chosen[i] = nxt
        d2 = np.maximum(sq + sq[nxt] - 2.0 * (points @ points[nxt]), 0.0)
        np.minimum(min_d2, d2, out=min_d2)
        min_d2[nxt] = -1.0
    return chosen


@dataclass
class TokenClusterMap:
    """Per-image token cluster labels with feature-space centroids.

    ``labels`` is (n_images, tokens) with ids in [0, h); ``centroids`` is
    (n_images, h, dim) in the original feature space. ``correspondence``
    holds a cluster id map between two images once matched.
    """

    labels: np.ndarray
    h: int
    centroids: np.ndarray
    correspondence: np.ndarray | None = None


def _kmeans_pp_init(rows: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = rows.shape[0]
    centers = np.empty((k, rows.shape[1]))
    centers[0] = rows[int(rng.integers(n))]
    d2 = np.sum((rows - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[j] = rows[int(rng.integers(n))]
            continue
        probs = d2 / total
        centers[j] = rows[int(rng.choice(n, p=probs))]
        d2 = np.minimum(d2, np.sum((rows - centers[j]) ** 2, axis=1))
    return centers


def _kmeans(rows: np.ndarray, k: int, rng: np.random.Generator, max_iter: int = 100):
    centers = _kmeans_pp_init(rows, k, rng)
    labels = np.full(rows.shape[0], -1, dtype=np.int64)
    for _ in range(max_iter):
        d2 = pairwise_sq_dists(rows, centers)
        new_labels = np.argmin(d2, axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            mask = labels == j
            if not mask.any():
                return None  # empty cluster: caller re-seeds
            centers[j] = rows[mask].mean(axis=0)
    if len(np.unique(labels)) != k:
        return None
    return labels


def spectral_cluster(features: np.ndarray, h: int, seed: int,
                     kappa: float = 1.0, max_reseed: int = 5) -> TokenClusterMap:
    """Cluster each image's tokens into ``h`` groups via its own token affinity.

    Per image: RBF affinity, symmetric normalization, top-h eigenvectors,
    unit-normalized rows, then seeded k-means with k-means++ starts.
    Centroids are means in the original feature space.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 2:
        features = features[None, :, :]
    n_images, tokens, dim = features.shape
    if h < 1 or h > tokens:
        raise ValueError(f"h={h} out of range for {tokens} tokens per image")
    labels = np.empty((n_images, tokens), dtype=np.int64)
    centroids = np.empty((n_images, h, dim))
    for img in range(n_images):
        rows = features[img]
        if h == 1:
            labels[img] = 0
            centroids[img, 0] = rows.mean(axis=0)
            continue
        aff = rbf_affinity(rows, kappa=kappa)
        emb = top_k_eigs(aff.sym_normalized(), h)
        spec_rows = emb.vectors.copy()
        norms = np.linalg.norm(spec_rows, axis=1, keepdims=True)
        spec_rows = np.where(norms > 0.0, spec_rows / np.maximum(norms, 1e-300), spec_rows)
        img_labels = None
        # every image uses the same seed schedule, so identical images
        # produce identical labelings
        for attempt in range(max_reseed):
            rng = np.random.default_rng(seed + attempt)
            img_labels = _kmeans(spec_rows, h, rng)
            if img_labels is not None:
                break
        if img_labels is None:
            raise ValueError(f"clustering produced an empty cluster in image {img} "
                             f"after {max_reseed} re-seeds")
        labels[img] = img_labels
        for j in range(h):
            centroids[img, j] = rows[img_labels == j].mean(axis=0)
    return TokenClusterMap(labels=labels, h=h, centroids=centroids)


def match_clusters(src_centroids: np.ndarray, dst_centroids: np.ndarray,
                   kappa: float = 1.0, bandwidth: float | None = None) -> np.ndarray:
    """Greedy cluster correspondence: each source centroid maps to the target
    centroid of maximal RBF affinity, lowest index on ties. Not necessarily
    injective.
    """
    src = np.asarray(src_centroids, dtype=np.float64)
    dst = np.asarray(dst_centroids, dtype=np.float64)
    if src.shape != dst.shape:
        raise ValueError("centroid sets must have identical shape")
    d2 = pairwise_sq_dists(src, dst)
    if bandwidth is None:
        med = float(np.median(d2))
        bandwidth = med if med > 0.0 else 1.0
    affinity = kappa * np.exp(-d2 / bandwidth)
    return np.argmax(affinity, axis=1)
