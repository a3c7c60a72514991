"""Embedding diagnostics: uniformity entropies and eigenvector grid export.

The uniformity report measures how evenly an embedding fills its space:
per-dimension histogram entropy of the raw coordinates, the same after PCA
compression, and the entropy of the PCA eigenvalue distribution (1 when all
retained eigenvalues are equal, 0 when one direction dominates).
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .spectral import SpectralEmbedding

HISTOGRAM_BINS = 64
PCA_TARGET_DIM = 250


@dataclass
class UniformityReport:
    entropy_raw: float
    entropy_pca: float
    entropy_eigvals: float
    n_points: int
    dim: int
    pca_dims: int
    bins: int = HISTOGRAM_BINS

    def as_dict(self) -> dict:
        return {
            "entropy_raw": self.entropy_raw,
            "entropy_pca": self.entropy_pca,
            "entropy_eigvals": self.entropy_eigvals,
            "n_points": self.n_points,
            "dim": self.dim,
            "pca_dims": self.pca_dims,
            "bins": self.bins,
        }


def _histogram_entropy(points: np.ndarray, bins: int = HISTOGRAM_BINS) -> float:
    """Per-dimension Shannon entropy over uniform bins, averaged and
    normalized to [0, 1] by log(bins)."""
    n, d = points.shape
    total = 0.0
    for col in range(d):
        x = points[:, col]
        lo, hi = float(x.min()), float(x.max())
        if hi <= lo:
            continue  # constant dimension carries zero entropy
        counts, _ = np.histogram(x, bins=bins, range=(lo, hi))
        p = counts[counts > 0] / n
        total += float(-(p * np.log(p)).sum())
    return total / (d * np.log(bins))


def _pca(points: np.ndarray, max_dim: int):
    centered = points - points.mean(axis=0)
    # eigenvalues of the covariance via SVD; rank limits what is retained
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    eigvals = (svals * svals) / max(points.shape[0] - 1, 1)
    r = min(max_dim, eigvals.shape[0])
    return centered @ vt[:r].T, eigvals[:r]


def eigenvalue_entropy(eigvals: np.ndarray) -> float:
    """Normalized entropy of an eigenvalue distribution; 0 for a degenerate
    (single-direction or zero-variance) spectrum."""
    eigvals = np.asarray(eigvals, dtype=np.float64)
    r = eigvals.shape[0]
    if r < 2:
        return 0.0
    total = eigvals.sum()
    if total <= 0.0:
        return 0.0
    p = eigvals / total
    p = p[p > 0.0]
    return float(-(p * np.log(p)).sum() / np.log(r))


def uniformity(points: np.ndarray, pca_dim: int = PCA_TARGET_DIM,
               bins: int = HISTOGRAM_BINS) -> UniformityReport:
    """Uniformity entropies of a point cloud; all values in [0, 1]."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 2:
        raise ValueError("need an (n>=2, d) array")
    projected, eigvals = _pca(points, pca_dim)
    return UniformityReport(
        entropy_raw=_histogram_entropy(points, bins),
        entropy_pca=_histogram_entropy(projected, bins),
        entropy_eigvals=eigenvalue_entropy(eigvals),
        n_points=points.shape[0], dim=points.shape[1],
        pca_dims=int(eigvals.shape[0]), bins=bins)


def _to_gray(values: np.ndarray) -> np.ndarray:
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        return np.full(values.shape, 128, dtype=np.uint8)
    scaled = (values - lo) / (hi - lo) * 255.0
    return np.rint(scaled).astype(np.uint8)


def write_pgm(path, gray: np.ndarray) -> None:
    """8-bit binary PGM (P5)."""
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(gray.astype(np.uint8).tobytes())


def export_eigvec_grids(emb: SpectralEmbedding, n_images: int, grid_h: int,
                        grid_w: int, out_dir) -> list[str]:
    """One PGM and one CSV per eigenvector per image.

    Rows of the embedding must be grid tokens in raster order, image by
    image. Gray levels map the eigenvector's global [min, max] to [0, 255]
    so images of one eigenvector share a scale; constant vectors render
    mid-gray.
    """
    per_image = grid_h * grid_w
    if per_image < 1 or emb.n != n_images * per_image:
        raise ValueError(f"{emb.n} rows do not fill {n_images} grids of {grid_h}x{grid_w}")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for j in range(emb.k):
        column = emb.vectors[:, j]
        gray_all = _to_gray(column)
        for img in range(n_images):
            block = slice(img * per_image, (img + 1) * per_image)
            grid = column[block].reshape(grid_h, grid_w)
            base = os.path.join(out_dir, f"eigvec{j:02d}_img{img:02d}")
            write_pgm(base + ".pgm", gray_all[block].reshape(grid_h, grid_w))
            with open(base + ".csv", "w", newline="", encoding="utf-8") as f:
                writer = csv.writer(f)
                for row in grid:
                    writer.writerow(["%.17g" % x for x in row])
            written += [base + ".pgm", base + ".csv"]
    return written
