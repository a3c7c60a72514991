import numpy as np
import pytest

from moodspace.embedding_io import TokenEmbeddingSet
from moodspace.trainer import TrainConfig, fit


def make_board(seed, n_images=2, tokens=256, grid=(16, 16), d_v=48, d_w=64,
               latent=3, noise=0.01, class_token=False):
    """Synthetic context set: token latents drawn from shared cluster centers,
    pushed through two different fixed nonlinear maps into the V and W spaces.
    """
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((6, latent)) * 2.0
    zs = []
    for _ in range(n_images):
        which = rng.integers(0, len(centers), size=tokens)
        z = centers[which] + 0.35 * rng.standard_normal((tokens, latent))
        z += 0.5 * rng.standard_normal((1, latent))
        zs.append(z)
    z_all = np.stack(zs)

    def lift(z, d, sub_seed):
        sub = np.random.default_rng(seed * 1000 + sub_seed)
        a = sub.standard_normal((latent, d)) / np.sqrt(latent)
        b = sub.standard_normal((latent, d)) / np.sqrt(latent)
        flat = z.reshape(-1, latent)
        x = flat @ a + np.tanh(flat @ b)
        x = x + noise * sub.standard_normal(x.shape)
        return x.reshape(z.shape[0], z.shape[1], d).astype(np.float32)

    grid_h, grid_w = grid
    v = TokenEmbeddingSet(data=lift(z_all, d_v, 1), space_tag="V",
                          grid_h=grid_h, grid_w=grid_w, has_class_token=class_token,
                          source_tag="synthetic-v")
    w = TokenEmbeddingSet(data=lift(z_all, d_w, 2), space_tag="W",
                          grid_h=grid_h, grid_w=grid_w, has_class_token=class_token,
                          source_tag="synthetic-w")
    if class_token:
        v = TokenEmbeddingSet(data=np.concatenate([v.data, v.data[:, :1]], axis=1),
                              space_tag="V", grid_h=grid_h, grid_w=grid_w,
                              has_class_token=True, source_tag=v.source_tag)
        w = TokenEmbeddingSet(data=np.concatenate([w.data, w.data[:, :1]], axis=1),
                              space_tag="W", grid_h=grid_h, grid_w=grid_w,
                              has_class_token=True, source_tag=w.source_tag)
    return v, w


def small_board(seed=0):
    """A quick-to-train board for semantic tests: 2 images of an 8x8 grid."""
    return make_board(seed, n_images=2, tokens=64, grid=(8, 8), d_v=12, d_w=10)


def small_config(seed=0, steps=120):
    return TrainConfig(steps=steps, seed=seed, fps_count=128, k=8, g=3,
                       log_every=40)


@pytest.fixture(scope="session")
def small_model():
    """One trained small model shared by semantic tests (paths, CLI, metrics)."""
    v, w = small_board(0)
    model = fit(v, w, small_config(0))
    return model, v, w
