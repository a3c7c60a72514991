"""Training objective: the five loss terms and their analytic gradients.

The spectral term compares rank-i eigenvector projectors of a fixed target
affinity with those of the affinity built from the current latent points;
its gradient propagates through the eigendecomposition via first-order
perturbation of the projector (cross terms between the kept subspace and
its complement), then through the symmetric normalization and the RBF
kernel down to the latent coordinates. All other terms are closed-form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mlp
from .spectral import SpectralEmbedding, full_symmetric_eig, median_bandwidth, pairwise_sq_dists

DEFAULT_EIGENGAP_TOL = 1e-10
DEFAULT_REPULSION_EPS = 1e-4
DEFAULT_LAMBDAS = (1e-5, 1e-5, 1.0, 1e-5)  # curvature, repulsion, reconstruction, covariance


def default_prefixes(k: int) -> list[int]:
    """Prefix sizes 4, 8, 16, ... capped by and always including k."""
    if k < 4:
        return [k]
    out = []
    i = 4
    while i < k:
        out.append(i)
        i *= 2
    out.append(k)
    return out


@dataclass
class LossBreakdown:
    spec: float
    curv: float
    rep: float
    recon: float
    var: float
    total: float
    lambdas: tuple[float, float, float, float]
    degenerate_prefixes: list[int] = field(default_factory=list)

    def as_row(self, step: int) -> list[float]:
        return [float(step), self.spec, self.curv, self.rep, self.recon, self.var, self.total]


@dataclass
class SpectralLossResult:
    value: float
    grad: np.ndarray
    degenerate_prefixes: list[int]
    bandwidth: float


def _affinity_forward(points: np.ndarray, kappa: float, bandwidth: float | None,
                      bandwidth_scale: float = 1.0):
    """Raw RBF affinity and its symmetric normalization, keeping the pieces
    needed for the backward pass. A missing bandwidth is filled in by the
    median heuristic on the already-computed distances."""
    d2 = pairwise_sq_dists(points)
    n = d2.shape[0]
    if bandwidth is None:
        if n > 512:
            bandwidth = median_bandwidth(points)
        else:
            bandwidth = float(np.median(d2[np.triu_indices(n, k=1)]))
            if bandwidth <= 0.0:
                raise ValueError("degenerate bandwidth: points carry no spread")
        bandwidth *= bandwidth_scale
    raw = kappa * np.exp(-d2 / bandwidth)
    raw = 0.5 * (raw + raw.T)
    deg = raw.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    normed = raw * inv_sqrt[:, None] * inv_sqrt[None, :]
    return raw, deg, normed, bandwidth


def _affinity_backward(points: np.ndarray, raw: np.ndarray, deg: np.ndarray,
                       normed: np.ndarray, d_normed: np.ndarray,
                       bandwidth: float) -> np.ndarray:
    """Chain a gradient w.r.t. the normalized affinity down to the points."""
    inv_sqrt = 1.0 / np.sqrt(deg)
    # through N_ij = S_ij / sqrt(d_i d_j): direct term plus degree terms,
    # where d_p depends on every entry of row p of S
    d_raw = d_normed * inv_sqrt[:, None] * inv_sqrt[None, :]
    gn = d_normed * normed
    d_deg = -0.5 * (gn.sum(axis=1) + gn.sum(axis=0)) / deg
    d_raw += d_deg[:, None]
    # through S_ij = kappa * exp(-||p_i - p_j||^2 / h)
    b = (d_raw + d_raw.T) * raw * (-2.0 / bandwidth)
    np.fill_diagonal(b, 0.0)
    grad = b.sum(axis=1)[:, None] * points - b @ points
    return grad


def spectral_loss(target: SpectralEmbedding, m_points: np.ndarray, kappa: float = 1.0,
                  prefixes: list[int] | None = None, bandwidth: float | None = None,
                  bandwidth_scale: float = 1.0,
                  eigengap_tol: float = DEFAULT_EIGENGAP_TOL) -> SpectralLossResult:
    """Sum over prefixes i of ||P_i(target) - P_i(current)||_F^2 with dL/dM.

    The bandwidth of the current affinity is ``bandwidth_scale`` times the
    median heuristic on ``m_points`` unless given explicitly; either way it
    is treated as a per-call constant by the gradient. Prefixes whose
    eigengap falls below ``eigengap_tol`` keep their value but contribute
    zero gradient and are reported.
    """
    m_points = np.asarray(m_points, dtype=np.float64)
    n = m_points.shape[0]
    prefixes = default_prefixes(target.k) if prefixes is None else list(prefixes)
    if max(prefixes) > target.k:
        raise ValueError(f"prefix {max(prefixes)} exceeds target k={target.k}")
    if max(prefixes) > n or n != target.n:
        raise ValueError(f"point count {n} does not cover the target embedding ({target.n})")

    raw, deg, normed, bandwidth = _affinity_forward(m_points, kappa, bandwidth,
                                                    bandwidth_scale)
    values, vectors = full_symmetric_eig(normed)

    value = 0.0
    d_normed = np.zeros_like(normed)
    degenerate = []
    for i in sorted(prefixes):
        u = target.vectors[:, :i]
        v_top = vectors[:, :i]
        overlap = u.T @ v_top
        # ||P_u - P_v||^2 = tr P_u + tr P_v - 2 tr(P_u P_v) = 2i - 2 ||U^T V||^2,
        # clamped against cancellation when the projectors coincide
        value += max(0.0, 2.0 * i - 2.0 * float(np.sum(overlap * overlap)))
        gap = values[i - 1] - values[i] if i < n else np.inf
        if gap < eigengap_tol:
            degenerate.append(i)
            continue
        v_rest = vectors[:, i:]
        # dL = 2 <P_v - P_u, dP_v>; cross-block coefficients of dP_v
        cross = -(overlap.T @ (u.T @ v_rest))  # C = V_top^T (P_v - P_u) V_rest
        denom = values[:i, None] - values[None, i:]
        k_mat = cross / denom
        half = v_top @ (k_mat @ v_rest.T)
        d_normed += 2.0 * (half + half.T)
    grad = _affinity_backward(m_points, raw, deg, normed, d_normed, bandwidth)
    return SpectralLossResult(value=value, grad=grad, degenerate_prefixes=degenerate,
                              bandwidth=float(bandwidth))


def sample_curvature_triples(points: np.ndarray, n_triples: int, seed: int,
                             n_neighbors: int = 8) -> np.ndarray:
    """Seeded (i, j, k) triples with j, k drawn from each point's nearest neighbors."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n < 3:
        raise ValueError("need at least three points for curvature triples")
    m = min(n_neighbors, n - 1)
    d2 = pairwise_sq_dists(points)
    np.fill_diagonal(d2, np.inf)
    if m < n - 1:
        part = np.argpartition(d2, m, axis=1)[:, :m]
        order = np.take_along_axis(d2, part, axis=1).argsort(axis=1)
        nbrs = np.take_along_axis(part, order, axis=1)
    else:
        nbrs = np.argsort(d2, axis=1)[:, :m]
    rng = np.random.default_rng(seed)
    # draw an ordered pair without replacement per triple, all at once
    first = rng.integers(0, m, size=n * n_triples)
    second = rng.integers(0, m - 1, size=n * n_triples)
    second += second >= first
    anchors = np.repeat(np.arange(n), n_triples)
    triples = np.empty((n * n_triples, 3), dtype=np.int64)
    triples[:, 0] = anchors
    triples[:, 1] = nbrs[anchors, first]
    triples[:, 2] = nbrs[anchors, second]
    return triples


def menger_energy(points: np.ndarray, triples: np.ndarray):
    """Mean squared Menger curvature over the given triples, with gradient.

    c(i,j,k) = 4 Area / (|ij| |ik| |jk|); degenerate triples (a repeated or
    coincident vertex) contribute zero, matching the flat limit.
    """
    points = np.asarray(points, dtype=np.float64)
    triples = np.asarray(triples, dtype=np.int64)
    grad = np.zeros_like(points)
    if triples.size == 0:
        return 0.0, grad
    i, j, k = triples[:, 0], triples[:, 1], triples[:, 2]
    u = points[j] - points[i]
    v = points[k] - points[i]
    a = np.sum(u * u, axis=1)        # |ij|^2
    b = np.sum(v * v, axis=1)        # |ik|^2
    c = np.sum(u * v, axis=1)
    w = u - v
    d = np.sum(w * w, axis=1)        # |jk|^2
    num = a * b - c * c              # 4 Area^2
    den = a * b * d
    ok = den > 0.0
    energy = np.zeros(len(triples))
    energy[ok] = 4.0 * num[ok] / den[ok]
    value = float(energy.mean())

    scale = 4.0 / len(triples)
    inv_den = np.zeros_like(den)
    inv_den[ok] = 1.0 / den[ok]
    # quotient rule for E = 4 (ab - c^2) / (abd), per triple
    dnum_du = 2.0 * b[:, None] * u - 2.0 * c[:, None] * v
    dnum_dv = 2.0 * a[:, None] * v - 2.0 * c[:, None] * u
    dden_du = 2.0 * (b * d)[:, None] * u + 2.0 * (a * b)[:, None] * w
    dden_dv = 2.0 * (a * d)[:, None] * v - 2.0 * (a * b)[:, None] * w
    coef_n = (scale * inv_den)[:, None]
    coef_d = (scale * num * inv_den * inv_den)[:, None]
    du = coef_n * dnum_du - coef_d * dden_du
    dv = coef_n * dnum_dv - coef_d * dden_dv
    np.add.at(grad, j, du)
    np.add.at(grad, k, dv)
    np.add.at(grad, i, -(du + dv))
    return value, grad


def curvature_loss(m_points: np.ndarray, n_triples: int = 4, seed: int = 0,
                   n_neighbors: int = 8):
    """Locally-straight regularizer: squared Menger curvature over sampled
    neighbor triples. The gradient holds the sampled triples fixed."""
    triples = sample_curvature_triples(m_points, n_triples, seed, n_neighbors)
    return menger_energy(m_points, triples)


def repulsion_loss(m_points: np.ndarray, eps: float = DEFAULT_REPULSION_EPS):
    """Sum over ordered pairs i != j of 1 / (||m_i - m_j||^2 + eps)."""
    m_points = np.asarray(m_points, dtype=np.float64)
    if m_points.shape[0] < 2:
        raise ValueError("need at least two points")
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    d2 = pairwise_sq_dists(m_points)
    inv = 1.0 / (d2 + eps)
    np.fill_diagonal(inv, 0.0)
    value = float(inv.sum())
    w = inv * inv  # 1/(d2+eps)^2, zero diagonal
    grad = -4.0 * (w.sum(axis=1)[:, None] * m_points - w @ m_points)
    return value, grad


def recon_loss(w_target: np.ndarray, w_pred: np.ndarray):
    """Mean squared error over all entries, with gradient w.r.t. the prediction."""
    w_target = np.asarray(w_target, dtype=np.float64)
    w_pred = np.asarray(w_pred, dtype=np.float64)
    if w_target.shape != w_pred.shape:
        raise ValueError(f"shape mismatch {w_target.shape} vs {w_pred.shape}")
    diff = w_pred - w_target
    count = diff.size
    value = float(np.sum(diff * diff) / count)
    return value, 2.0 * diff / count


def variance_loss(m_points: np.ndarray):
    """||(1/n) M^T M - I||_F^2: pushes latent coordinates toward unit covariance."""
    m_points = np.asarray(m_points, dtype=np.float64)
    n, g = m_points.shape
    if n < g:
        raise ValueError(f"need at least G={g} points, got {n}")
    q = (m_points.T @ m_points) / n - np.eye(g)
    value = float(np.sum(q * q))
    grad = (4.0 / n) * (m_points @ q)
    return value, grad


def total_loss(encoder: mlp.MlpParams, decoder: mlp.MlpParams,
               v_std: np.ndarray, w_std: np.ndarray, subset: np.ndarray,
               target: SpectralEmbedding, *,
               kappa: float = 1.0,
               prefixes: list[int] | None = None,
               bandwidth: float | None = None,
               bandwidth_scale: float = 1.0,
               lambdas: tuple[float, float, float, float] = DEFAULT_LAMBDAS,
               repulsion_eps: float = DEFAULT_REPULSION_EPS,
               curvature_triples: int = 4,
               curvature_seed: int = 0):
    """One full objective evaluation with parameter gradients for both networks.

    ``v_std``/``w_std`` are the standardized token features for the whole
    context set; the geometry terms run on ``subset`` rows of the encoded
    points while reconstruction covers every token.

    Returns ``(breakdown, encoder_grads, decoder_grads)``.
    """
    lam1, lam2, lam3, lam4 = lambdas
    m_all, enc_cache = mlp.mlp_forward(encoder, v_std)
    w_pred, dec_cache = mlp.mlp_forward(decoder, m_all)
    m_sub = m_all[subset]

    spec_res = spectral_loss(target, m_sub, kappa=kappa, prefixes=prefixes,
                             bandwidth=bandwidth, bandwidth_scale=bandwidth_scale)
    curv_val, curv_grad = curvature_loss(m_sub, n_triples=curvature_triples,
                                         seed=curvature_seed)
    rep_val, rep_grad = repulsion_loss(m_sub, eps=repulsion_eps)
    recon_val, recon_grad = recon_loss(w_std, w_pred)
    var_val, var_grad = variance_loss(m_sub)

    total = (spec_res.value + lam1 * curv_val + lam2 * rep_val
             + lam3 * recon_val + lam4 * var_val)
    breakdown = LossBreakdown(spec=spec_res.value, curv=curv_val, rep=rep_val,
                              recon=recon_val, var=var_val, total=total,
                              lambdas=lambdas,
                              degenerate_prefixes=spec_res.degenerate_prefixes)

    dec_grads, d_m_from_dec = mlp.mlp_backward(decoder, dec_cache, lam3 * recon_grad)
    d_m = d_m_from_dec
    d_m[subset] += (spec_res.grad + lam1 * curv_grad + lam2 * rep_grad
                    + lam4 * var_grad)
    enc_grads, _ = mlp.mlp_backward(encoder, enc_cache, d_m)
    return breakdown, enc_grads, dec_grads
