"""End-to-end learning of the compact space and its two maps.

The fit loop standardizes both feature spaces, picks a farthest-point
subset of tokens, computes the fixed eigenstructure target once, and then
jointly optimizes the encoder and decoder with Adam against the combined
objective. Every run is a pure function of (inputs, config): repeating it
reproduces the model bit for bit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import losses, mlp
from .embedding_io import (FeatureNormStats, LOSS_HISTORY_COLUMNS, MoodSpaceModel,
                           TokenEmbeddingSet)
from .intrinsic_dim import estimate_dim
from .spectral import fps, median_bandwidth, rbf_affinity, top_k_eigs

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 1000
    lr: float = 1e-3
    k: int = 32
    fps_count: int = 512
    lambda1: float = 1e-5   # curvature
    lambda2: float = 1e-5   # repulsion
    lambda3: float = 1.0    # reconstruction
    lambda4: float = 1e-5   # covariance
    g: int | None = None    # None: estimate from the data
    seed: int = 0
    kappa: float = 1.0
    bandwidth: float | None = None  # None: median heuristic, recomputed per step
    bandwidth_scale: float = 1.0    # multiplies the median heuristic on both sides
    include_class_tokens: bool = True
    log_every: int = 100
    curvature_triples: int = 4
    repulsion_eps: float = 1e-4
    grad_clip: float = 10.0
    dim_k_min: int = 10
    dim_k_max: int = 20

    def validate(self) -> None:
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.lr <= 0 or self.kappa <= 0:
            raise ValueError("lr and kappa must be positive")
        if self.k < 1 or self.fps_count < 1:
            raise ValueError("k and fps_count must be positive")
        if self.bandwidth_scale <= 0:
            raise ValueError("bandwidth_scale must be positive")
        if self.g is not None and self.g < 1:
            raise ValueError("g must be positive when given")


def standardize_stats(x: np.ndarray):
    """Per-dimension mean and scale; zero-variance dimensions keep scale 1."""
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale > 0.0, scale, 1.0)
    return mean, scale


def _training_tokens(emb: TokenEmbeddingSet, include_class_tokens: bool) -> np.ndarray:
    data = emb.data if include_class_tokens else emb.patch_data()
    return data.reshape(-1, emb.dim).astype(np.float64)


def fit(v_set: TokenEmbeddingSet, w_set: TokenEmbeddingSet, cfg: TrainConfig) -> MoodSpaceModel:
    """Learn encoder and decoder for one context set.

    ``v_set`` and ``w_set`` must be aligned token for token. Returns a model
    carrying the trained parameters, normalization statistics, the full
    hyperparameter record and the logged loss history.
    """
    cfg.validate()
    v_set.validate()
    w_set.validate()
    if (v_set.n_images != w_set.n_images
            or v_set.tokens_per_image != w_set.tokens_per_image
            or v_set.has_class_token != w_set.has_class_token):
        raise ValueError("source and target sets are not aligned token-for-token")

    v_all = _training_tokens(v_set, cfg.include_class_tokens)
    w_all = _training_tokens(w_set, cfg.include_class_tokens)
    n_tokens, d_v = v_all.shape
    d_w = w_all.shape[1]

    v_mean, v_scale = standardize_stats(v_all)
    w_mean, w_scale = standardize_stats(w_all)
    v_std = (v_all - v_mean) / v_scale
    w_std = (w_all - w_mean) / w_scale

    if cfg.g is not None:
        g = cfg.g
    else:
        est = estimate_dim(v_all, cfg.dim_k_min, cfg.dim_k_max)
        g = max(2, est.g_rounded)
        log.info("estimated latent dimension %.2f -> G=%d", est.g_hat, g)
    if g > d_v:
        raise ValueError(f"G={g} exceeds source dimension {d_v}")

    fps_count = cfg.fps_count
    if fps_count > n_tokens:
        log.warning("fps_count %d clamped to token count %d", fps_count, n_tokens)
        fps_count = n_tokens
    k = cfg.k
    if k > fps_count:
        log.warning("k %d clamped to subset size %d", k, fps_count)
        k = fps_count

    seeds = np.random.SeedSequence(cfg.seed).generate_state(4)
    fps_seed, enc_seed, dec_seed, curv_seed = (int(s) for s in seeds)

    subset = fps(v_std, fps_count, seed=fps_seed)
    v_sub = v_std[subset]
    if cfg.bandwidth is not None:
        h_v = cfg.bandwidth
    else:
        h_v = cfg.bandwidth_scale * median_bandwidth(v_sub)
    target_aff = rbf_affinity(v_sub, kappa=cfg.kappa, bandwidth=h_v)
    target = top_k_eigs(target_aff.sym_normalized(), k)
    prefixes = losses.default_prefixes(k)

    encoder = mlp.mlp_init(d_v, g, seed=enc_seed)
    decoder = mlp.mlp_init(g, d_w, seed=dec_seed)
    enc_state = mlp.adam_init(encoder, cfg.lr)
    dec_state = mlp.adam_init(decoder, cfg.lr)
    lambdas = (cfg.lambda1, cfg.lambda2, cfg.lambda3, cfg.lambda4)

    def evaluate(step: int):
        return losses.total_loss(
            encoder, decoder, v_std, w_std, subset, target,
            kappa=cfg.kappa, prefixes=prefixes, bandwidth=cfg.bandwidth,
            bandwidth_scale=cfg.bandwidth_scale,
            lambdas=lambdas, repulsion_eps=cfg.repulsion_eps,
            curvature_triples=cfg.curvature_triples,
            curvature_seed=curv_seed + step)

    history: list[list[float]] = []
    for step in range(cfg.steps):
        breakdown, enc_grads, dec_grads = evaluate(step)
        if not np.isfinite(breakdown.total):
            raise FloatingPointError(f"non-finite loss at step {step}: {breakdown}")
        if step % cfg.log_every == 0:
            history.append(breakdown.as_row(step))
            log.info("step %d: total=%.6g spec=%.6g recon=%.6g", step,
                     breakdown.total, breakdown.spec, breakdown.recon)
        mlp.clip_global_norm([enc_grads, dec_grads], cfg.grad_clip)
        mlp.adam_step(encoder, enc_grads, enc_state)
        mlp.adam_step(decoder, dec_grads, dec_state)
    final_breakdown, _, _ = evaluate(cfg.steps)
    history.append(final_breakdown.as_row(cfg.steps))

    hyperparams = {
        "steps": cfg.steps, "lr": cfg.lr, "k": k, "fps_count": fps_count,
        "lambda1": cfg.lambda1, "lambda2": cfg.lambda2,
        "lambda3": cfg.lambda3, "lambda4": cfg.lambda4,
        "g": g, "g_requested": cfg.g if cfg.g is not None else "auto",
        "seed": cfg.seed, "kappa": cfg.kappa,
        "bandwidth_policy": "median" if cfg.bandwidth is None else cfg.bandwidth,
        "bandwidth_scale": cfg.bandwidth_scale,
        "bandwidth_v": h_v,
        "include_class_tokens": cfg.include_class_tokens,
        "log_every": cfg.log_every,
        "curvature_triples": cfg.curvature_triples,
        "repulsion_eps": cfg.repulsion_eps,
        "grad_clip": cfg.grad_clip,
        "prefixes": prefixes,
        "n_tokens": n_tokens,
        "source_tag_v": v_set.source_tag, "source_tag_w": w_set.source_tag,
    }
    model = MoodSpaceModel(
        g=g, encoder=encoder, decoder=decoder,
        norm_stats=FeatureNormStats(v_mean=v_mean, v_scale=v_scale,
                                    w_mean=w_mean, w_scale=w_scale),
        hyperparams=hyperparams,
        loss_history=np.array(history, dtype=np.float64),
    )
    model.validate()
    return model


def encode(model: MoodSpaceModel, tokens: np.ndarray) -> np.ndarray:
    """Map source-space tokens (n, D_v) to latent coordinates (n, G)."""
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 2 or tokens.shape[1] != model.input_dim_v:
        raise ValueError(f"expected (n, {model.input_dim_v}) tokens, got {tokens.shape}")
    std = (tokens - model.norm_stats.v_mean) / model.norm_stats.v_scale
    out, _ = mlp.mlp_forward(model.encoder, std)
    return out


def decode(model: MoodSpaceModel, codes: np.ndarray) -> np.ndarray:
    """Map latent coordinates (n, G) to target-space embeddings (n, D_w)."""
    codes = np.asarray(codes, dtype=np.float64)
    if codes.ndim != 2 or codes.shape[1] != model.g:
        raise ValueError(f"expected (n, {model.g}) codes, got {codes.shape}")
    out, _ = mlp.mlp_forward(model.decoder, codes)
    return out * model.norm_stats.w_scale + model.norm_stats.w_mean


def decode_displacement(model: MoodSpaceModel, deltas: np.ndarray) -> np.ndarray:
    """Decode latent difference vectors as target-space displacements.

    Applies the output scale but not the offset, so a displacement anchors
    paths exactly at t=0.
    """
    deltas = np.asarray(deltas, dtype=np.float64)
    if deltas.ndim != 2 or deltas.shape[1] != model.g:
        raise ValueError(f"expected (n, {model.g}) deltas, got {deltas.shape}")
    out, _ = mlp.mlp_forward(model.decoder, deltas)
    return out * model.norm_stats.w_scale


def write_loss_csv(model: MoodSpaceModel, path) -> None:
    """Loss history as CSV with the standard column header."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(LOSS_HISTORY_COLUMNS) + "\n")
        for row in model.loss_history:
            f.write("%d,%s\n" % (int(row[0]), ",".join("%.17g" % x for x in row[1:])))
