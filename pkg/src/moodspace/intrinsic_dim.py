"""Maximum-likelihood intrinsic dimension estimation.

Sizes the compact latent space: the estimator treats neighbor distances as
arrivals of a Poisson process and inverts the mean log distance ratio, then
averages over points and over a range of neighborhood sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import pairwise_sq_dists


@dataclass
class DimEstimate:
    g_hat: float
    g_rounded: int
    k_range: tuple[int, int]
    per_point: np.ndarray | None = None


def estimate_dim(points: np.ndarray, k_min: int = 10, k_max: int = 20,
                 return_per_point: bool = False) -> DimEstimate:
    """MLE dimension estimate from nearest-neighbor distance ratios.

    For each point and neighbor count k, the local estimate is the inverse
    of the mean of log(T_k / T_j) over j < k, where T_j is the distance to
    the j-th nearest distinct neighbor. Pairs at distance zero (duplicate
    points) are excluded; a point must still have k_max distinct neighbors.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError("points must be a 2-d array")
    n, d = points.shape
    if not 3 <= k_min <= k_max:
        raise ValueError("need k_max >= k_min >= 3")
    if n <= k_max:
        raise ValueError(f"need more than k_max={k_max} points, got {n}")

    d2 = pairwise_sq_dists(points)
    np.fill_diagonal(d2, np.inf)
    d2[d2 == 0.0] = np.inf  # duplicates are not neighbors
    finite_counts = (~np.isinf(d2)).sum(axis=1)
    if finite_counts.min() < k_max:
        raise ValueError(f"a point has fewer than k_max={k_max} distinct neighbors")

    knn = np.sqrt(np.sort(d2, axis=1)[:, :k_max])
    log_t = np.log(knn)

    per_point_sum = np.zeros(n)
    k_count = 0
    cum = np.cumsum(log_t, axis=1)
    for k in range(k_min, k_max + 1):
        mean_log = cum[:, k - 2] / (k - 1)  # mean over T_1 .. T_{k-1}
        denom = log_t[:, k - 1] - mean_log
        est = np.where(denom > 0.0, 1.0 / np.maximum(denom, 1e-300), np.nan)
        per_point_sum += est
        k_count += 1
    per_point = per_point_sum / k_count
    valid = np.isfinite(per_point)
    if not valid.any():
        raise ValueError("estimator degenerate: all neighbor distances tie")
    g_hat = float(per_point[valid].mean())
    g_rounded = int(np.clip(round(g_hat), 1, d))
    return DimEstimate(g_hat=g_hat, g_rounded=g_rounded, k_range=(k_min, k_max),
                       per_point=per_point if return_per_point else None)
