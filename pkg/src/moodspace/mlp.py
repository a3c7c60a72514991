"""Token-wise 4-layer MLPs with hand-written backpropagation and Adam.

The encoder and decoder networks are plain feed-forward stacks operating
row-wise on a batch of tokens: three leaky-ReLU hidden layers of 512 units
and a linear output layer. Gradients are computed analytically; there is no
autodiff dependency anywhere in the training path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HIDDEN_DIM = 512
NUM_LAYERS = 4
LEAKY_SLOPE = 0.01


@dataclass
class MlpParams:
    """Weights and biases of one network, layer by layer.

    ``weights[i]`` has shape (fan_in, fan_out); ``biases[i]`` has shape
    (fan_out,). The same container is reused for gradient arrays, which
    mirror the parameter layout exactly.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def arrays(self) -> list[np.ndarray]:
        """All parameter arrays in a fixed order (weights then bias per layer)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def validate(self) -> None:
        if len(self.weights) != len(self.biases):
            raise ValueError("layer count mismatch between weights and biases")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
                raise ValueError(f"bad shapes in layer {i}: {w.shape} / {b.shape}")
            if i > 0 and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"shape chain broken entering layer {i}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"non-finite parameters in layer {i}")


def mlp_init(in_dim: int, out_dim: int, seed: int, hidden: int = HIDDEN_DIM,
             n_layers: int = NUM_LAYERS) -> MlpParams:
    """Glorot-uniform weights, zero biases; fully determined by ``seed``."""
    if in_dim <= 0 or out_dim <= 0:
        raise ValueError("dimensions must be positive")
    dims = [in_dim] + [hidden] * (n_layers - 1) + [out_dim]
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def leaky_relu(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0.0, x, LEAKY_SLOPE * x)


def leaky_relu_grad(pre: np.ndarray) -> np.ndarray:
    return np.where(pre >= 0.0, 1.0, LEAKY_SLOPE)


def mlp_forward(params: MlpParams, x: np.ndarray):
    """Run the network over a batch of rows.

    Returns ``(y, cache)`` where the cache holds the layer inputs and
    activation slopes needed by :func:`mlp_backward`.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ValueError(f"expected input of shape (n, {params.in_dim}), got {x.shape}")
    acts = [x]
    slopes = []
    h = x
    last = params.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        # a non-finite value anywhere poisons the sum, so one reduction suffices
        if not np.isfinite(z.sum()):
            raise FloatingPointError(f"non-finite activation in layer {i}")
        if i == last:
            h = z
        else:
            slope = leaky_relu_grad(z)
            h = z * slope
            slopes.append(slope)
            acts.append(h)
    return h, (acts, slopes)


def mlp_backward(params: MlpParams, cache, dy: np.ndarray):
    """Exact gradients of the forward map.

    Returns ``(grads, dx)`` with ``grads`` in the same layout as ``params``.
    """
    acts, slopes = cache
    dy = np.asarray(dy, dtype=np.float64)
    if dy.shape != (acts[0].shape[0], params.out_dim):
        raise ValueError(f"upstream gradient shape {dy.shape} does not match output")
    d_weights = [None] * params.n_layers
    d_biases = [None] * params.n_layers
    dz = dy
    for i in range(params.n_layers - 1, -1, -1):
        d_weights[i] = acts[i].T @ dz
        d_biases[i] = dz.sum(axis=0)
        dx = dz @ params.weights[i].T
        if i > 0:
            dz = dx * slopes[i - 1]
    return MlpParams(d_weights, d_biases), dx


@dataclass
class AdamState:
    """Adam moment buffers for one network (or any list of arrays)."""

    lr: float
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: MlpParams, lr: float) -> AdamState:
    arrays = params.arrays()
    return AdamState(lr=lr,
                     m=[np.zeros_like(a) for a in arrays],
                     v=[np.zeros_like(a) for a in arrays])


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState):
    """One Adam update with bias correction, applied in place."""
    g_arrays = grads.arrays()
    for g in g_arrays:
        if not np.isfinite(g).all():
            raise FloatingPointError("non-finite gradient; update refused")
    p_arrays = params.arrays()
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(p_arrays, g_arrays, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


def clip_global_norm(grad_list: list[MlpParams], max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is at most ``max_norm``.

    Returns the pre-clip norm.
    """
    total = 0.0
    for grads in grad_list:
        for a in grads.arrays():
            total += float(np.sum(a * a))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for grads in grad_list:
            for a in grads.arrays():
                a *= scale
    return norm
