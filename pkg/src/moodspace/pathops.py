"""Vector-algebra operations in the learned space.

A straight segment between two latent codes is "lifted" to the target
embedding space by decoding the code difference once and anchoring the
resulting displacement ray at a chosen embedding. Re-anchoring the same
ray somewhere else yields an analogy; combining it with per-image token
clustering and cross-image cluster correspondence yields image-level paths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedding_io import MoodSpaceModel
from .spectral import TokenClusterMap, match_clusters, spectral_cluster
from .trainer import decode, decode_displacement, encode

PATH_MODES = ("connect", "analogy", "image_path", "decode_along_path")


@dataclass
class LiftedPath:
    """A latent segment with its lifted target-space samples."""

    t_samples: np.ndarray   # (s,)
    m_path: np.ndarray      # (s, G), affine in t
    w_path: np.ndarray      # (s, D_w)
    anchor_w: np.ndarray    # (D_w,)
    mode: str
    extrapolated: bool = False
    slope_w: np.ndarray | None = None  # decoded displacement, for lift modes


def _as_code(x, g: int, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64).reshape(-1)
    if arr.shape[0] != g:
        raise ValueError(f"{name} must have dimension {g}, got {arr.shape[0]}")
    return arr


def _prep_t(t_samples) -> tuple[np.ndarray, bool]:
    t = np.asarray(t_samples, dtype=np.float64).reshape(-1)
    if t.size == 0:
        raise ValueError("need at least one t sample")
    extrapolated = bool((t < 0.0).any() or (t > 1.0).any())
    return t, extrapolated


def connect(model: MoodSpaceModel, w_a1, m_a1, m_a2, t_samples,
            mode: str = "connect") -> LiftedPath:
    """Lift the straight latent segment m_a1 -> m_a2, anchored at ``w_a1``.

    The decoded code difference is evaluated once; every sample is
    w_a1 + t * slope, so t=0 reproduces the anchor exactly.
    """
    m_a1 = _as_code(m_a1, model.g, "m_a1")
    m_a2 = _as_code(m_a2, model.g, "m_a2")
    anchor = np.asarray(w_a1, dtype=np.float64).reshape(-1)
    if anchor.shape[0] != model.output_dim_w:
        raise ValueError(f"anchor must have dimension {model.output_dim_w}")
    t, extrapolated = _prep_t(t_samples)
    slope = decode_displacement(model, (m_a2 - m_a1)[None, :])[0]
    m_path = m_a1[None, :] + t[:, None] * (m_a2 - m_a1)[None, :]
    w_path = anchor[None, :] + t[:, None] * slope[None, :]
    return LiftedPath(t_samples=t, m_path=m_path, w_path=w_path, anchor_w=anchor,
                      mode=mode, extrapolated=extrapolated, slope_w=slope)


def analogy(model: MoodSpaceModel, w_b1, m_a1, m_a2, t_samples) -> LiftedPath:
    """The connect ray re-anchored at ``w_b1``: same slope, different start."""
    return connect(model, w_b1, m_a1, m_a2, t_samples, mode="analogy")


def decode_along_path(model: MoodSpaceModel, m_a1, m_a2, t_samples) -> LiftedPath:
    """Decode every point of the latent segment instead of lifting a ray.

    Nonlinear in t; follows the decoder's image of the segment. Offered as
    the geometric alternative to :func:`connect`.
    """
    m_a1 = _as_code(m_a1, model.g, "m_a1")
    m_a2 = _as_code(m_a2, model.g, "m_a2")
    t, extrapolated = _prep_t(t_samples)
    m_path = m_a1[None, :] + t[:, None] * (m_a2 - m_a1)[None, :]
    w_path = decode(model, m_path)
    anchor = w_path[0].copy() if t[0] == 0.0 else decode(model, m_a1[None, :])[0]
    return LiftedPath(t_samples=t, m_path=m_path, w_path=w_path, anchor_w=anchor,
                      mode="decode_along_path", extrapolated=extrapolated)


def segmented_connect(model: MoodSpaceModel, m_a1, m_a2, w_a1, q: int) -> LiftedPath:
    """Piecewise lifting over ``q`` equal segments of the latent path.

    Each node adds the decoded displacement of its segment's latent step;
    q=1 reduces to :func:`connect` on the grid t = 0, 1.
    """
    if q < 1:
        raise ValueError("need at least one segment")
    m_a1 = _as_code(m_a1, model.g, "m_a1")
    m_a2 = _as_code(m_a2, model.g, "m_a2")
    anchor = np.asarray(w_a1, dtype=np.float64).reshape(-1)
    if anchor.shape[0] != model.output_dim_w:
        raise ValueError(f"anchor must have dimension {model.output_dim_w}")
    t = np.linspace(0.0, 1.0, q + 1)
    m_path = m_a1[None, :] + t[:, None] * (m_a2 - m_a1)[None, :]
    steps = m_path[1:] - m_path[:-1]
    deltas = decode_displacement(model, steps)
    w_path = np.empty((q + 1, anchor.shape[0]))
    w_path[0] = anchor
    np.cumsum(deltas, axis=0, out=w_path[1:])
    w_path[1:] += anchor[None, :]
    return LiftedPath(t_samples=t, m_path=m_path, w_path=w_path, anchor_w=anchor,
                      mode="connect", extrapolated=False)


def analogy_consistency_gap(model: MoodSpaceModel, m_a1, m_a2, m_b1) -> float:
    """Endpoint gap between the two analogy routes through a triangle.

    Route one lifts a1->a2 starting at b1's reconstruction; route two lifts
    a1->b1 starting at a2's reconstruction. The distance between the two
    endpoints is a diagnostic for path composability, reported rather than
    asserted (nothing forces it to vanish).
    """
    m_a1 = _as_code(m_a1, model.g, "m_a1")
    m_a2 = _as_code(m_a2, model.g, "m_a2")
    m_b1 = _as_code(m_b1, model.g, "m_b1")
    anchors = decode(model, np.stack([m_b1, m_a2]))
    end_one = analogy(model, anchors[0], m_a1, m_a2, [0.0, 1.0]).w_path[-1]
    end_two = analogy(model, anchors[1], m_a1, m_b1, [0.0, 1.0]).w_path[-1]
    return float(np.linalg.norm(end_one - end_two))


@dataclass
class ImagePathResult:
    """Per-token lifted paths plus the clustering evidence behind them."""

    paths: list[LiftedPath]
    clusters: TokenClusterMap           # images stacked in order (A1, A2, B1)
    drift_map: np.ndarray               # cluster correspondence A1 -> A2
    b1_to_a1: np.ndarray                # cluster correspondence B1 -> A1
    cluster_slopes: np.ndarray          # (H, D_w) decoded drift per A1 cluster


def image_path(model: MoodSpaceModel, v_tokens_a1: np.ndarray, v_tokens_a2: np.ndarray,
               v_tokens_b1: np.ndarray, t_samples, h: int = 10, seed: int = 0,
               kappa: float = 1.0) -> ImagePathResult:
    """Image-level path transfer through cluster correspondence.

    Clusters each image's tokens separately, matches clusters A1->A2 (the
    drift pairs) and B1->A1 (to route every token to a drift), then lifts
    each token's drift ray starting at that token's reconstructed embedding.
    """
    stacks = [np.asarray(x, dtype=np.float64) for x in (v_tokens_a1, v_tokens_a2, v_tokens_b1)]
    shape = stacks[0].shape
    if any(s.shape != shape for s in stacks):
        raise ValueError("all three images must be tokenized identically")
    t, extrapolated = _prep_t(t_samples)

    clusters = spectral_cluster(np.stack(stacks), h, seed=seed, kappa=kappa)
    cent_a1, cent_a2, cent_b1 = clusters.centroids
    drift_map = match_clusters(cent_a1, cent_a2, kappa=kappa)
    b1_to_a1 = match_clusters(cent_b1, cent_a1, kappa=kappa)
    clusters.correspondence = drift_map

    m_a1 = encode(model, cent_a1)
    m_a2 = encode(model, cent_a2)
    drift_m = m_a2[drift_map] - m_a1               # (H, G) latent drift per A1 cluster
    cluster_slopes = decode_displacement(model, drift_m)

    anchors = decode(model, encode(model, stacks[2]))
    labels_b1 = clusters.labels[2]
    paths = []
    for token in range(shape[0]):
        i = int(b1_to_a1[labels_b1[token]])
        m_start = m_a1[i]
        m_path = m_start[None, :] + t[:, None] * drift_m[i][None, :]
        w_path = anchors[token][None, :] + t[:, None] * cluster_slopes[i][None, :]
        paths.append(LiftedPath(t_samples=t, m_path=m_path, w_path=w_path,
                                anchor_w=anchors[token], mode="image_path",
                                extrapolated=extrapolated))
    return ImagePathResult(paths=paths, clusters=clusters, drift_map=drift_map,
                           b1_to_a1=b1_to_a1, cluster_slopes=cluster_slopes)
