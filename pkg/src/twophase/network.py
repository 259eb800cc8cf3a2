"""Fully-connected softplus networks with optional per-layer batch normalization.

The network maps a batch X (n x m_0) through H hidden layers to a feature
matrix h (n x m_H), then through an affine head to outputs f (n x m_y).
Hidden layer l computes

    z = h_prev @ W_l + b_l          (affine)
    z = BN(z)                       (optional, per unit, batch statistics)
    h = softplus(z; sharpness)

Parameters flatten to a single vector.  Within each layer the weight matrix
and bias row are stacked as [W; b] and vectorized column-major, so the head
block of the flat vector is exactly the vector the output is linear in:
f(x)^T = (I_{m_y} kron [h(x), 1]) 'head block'.  Batch-norm scale/shift
vectors follow the [W; b] block of their layer and count as hidden-layer
parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import as_matrix

__all__ = [
    "NetworkSpec",
    "Params",
    "ForwardTrace",
    "softplus",
    "softplus_deriv",
    "batchnorm_forward",
    "forward_hidden",
    "forward_output",
    "backprop",
    "batch_statistics",
    "params_zero",
    "params_from_flat",
    "random_params",
    "init_params",
]


@dataclass
class NetworkSpec:
    """Architecture description.

    widths: (m_0, m_1, ..., m_H) with m_0 the input dimension and m_H the
    last hidden width.  `bn_flags[l-1]` turns on batch normalization after
    the affine part of hidden layer l.
    """

    widths: tuple
    output_dim: int
    sharpness: float = 100.0
    bn_flags: tuple = ()
    bn_epsilon: float = 1e-5

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) < 2:
            raise ValueError("widths must list the input dim and at least one hidden layer")
        if any(w < 1 for w in self.widths) or self.output_dim < 1:
            raise ValueError("all widths must be >= 1")
        if self.sharpness <= 0:
            raise ValueError("sharpness must be positive")
        if self.bn_epsilon <= 0:
            raise ValueError("bn_epsilon must be positive")
        if not self.bn_flags:
            self.bn_flags = (False,) * self.depth
        else:
            self.bn_flags = tuple(bool(f) for f in self.bn_flags)
        if len(self.bn_flags) != self.depth:
            raise ValueError(f"bn_flags must have one entry per hidden layer ({self.depth})")

    @property
    def depth(self) -> int:
        """Number of hidden layers H."""
        return len(self.widths) - 1

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def feature_dim(self) -> int:
        """Width of the last hidden layer, m_H."""
        return self.widths[-1]

    def layer_param_sizes(self) -> list:
        """Flat parameter count per layer, hidden layers first, head last."""
        sizes = []
        for l in range(1, self.depth + 1):
            d = (self.widths[l - 1] + 1) * self.widths[l]
            if self.bn_flags[l - 1]:
                d += 2 * self.widths[l]
            sizes.append(d)
        sizes.append((self.feature_dim + 1) * self.output_dim)
        return sizes

    def hidden_param_count(self) -> int:
        return sum(self.layer_param_sizes()[:-1])

    def head_param_count(self) -> int:
        return (self.feature_dim + 1) * self.output_dim

    def param_count(self) -> int:
        return sum(self.layer_param_sizes())


@dataclass
class Params:
    """Per-layer parameter arrays.

    weights[l] is W_{l+1} (m_l x m_{l+1}); the last entry is the head weight.
    bn_scale/bn_shift have one entry per hidden layer, None where batch
    normalization is off.
    """

    weights: list
    biases: list
    bn_scale: list = field(default_factory=list)
    bn_shift: list = field(default_factory=list)

    def __post_init__(self):
        if not self.bn_scale:
            self.bn_scale = [None] * (len(self.weights) - 1)
        if not self.bn_shift:
            self.bn_shift = [None] * (len(self.weights) - 1)

    @property
    def depth(self) -> int:
        return len(self.weights) - 1

    def copy(self) -> "Params":
        return Params(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            [None if g is None else g.copy() for g in self.bn_scale],
            [None if s is None else s.copy() for s in self.bn_shift],
        )

    def layer_param_sizes(self) -> list:
        sizes = []
        for l in range(self.depth):
            d = (self.weights[l].shape[0] + 1) * self.weights[l].shape[1]
            if self.bn_scale[l] is not None:
                d += 2 * self.bn_scale[l].size
            sizes.append(d)
        w = self.weights[-1]
        sizes.append((w.shape[0] + 1) * w.shape[1])
        return sizes

    def hidden_param_count(self) -> int:
        return sum(self.layer_param_sizes()[:-1])

    def head_param_count(self) -> int:
        return self.layer_param_sizes()[-1]

    def head_block(self) -> np.ndarray:
        """Stacked [W; b] of the output head, shape (m_H + 1) x m_y."""
        return np.vstack([self.weights[-1], self.biases[-1]])

    def set_head_block(self, block: np.ndarray) -> None:
        self.weights[-1] = np.array(block[:-1], dtype=np.float64)
        self.biases[-1] = np.array(block[-1:], dtype=np.float64)

    def to_flat(self) -> np.ndarray:
        chunks = []
        for l in range(self.depth + 1):
            stacked = np.vstack([self.weights[l], self.biases[l]])
            chunks.append(stacked.ravel(order="F"))
            if l < self.depth and self.bn_scale[l] is not None:
                chunks.append(np.asarray(self.bn_scale[l], dtype=np.float64))
                chunks.append(np.asarray(self.bn_shift[l], dtype=np.float64))
        return np.concatenate(chunks)


def params_zero(spec: NetworkSpec) -> Params:
    weights, biases, gammas, betas = [], [], [], []
    dims = list(spec.widths) + [spec.output_dim]
    for l in range(1, len(dims)):
        weights.append(np.zeros((dims[l - 1], dims[l])))
        biases.append(np.zeros((1, dims[l])))
        if l <= spec.depth:
            if spec.bn_flags[l - 1]:
                gammas.append(np.ones(dims[l]))
                betas.append(np.zeros(dims[l]))
            else:
                gammas.append(None)
                betas.append(None)
    return Params(weights, biases, gammas, betas)


def params_from_flat(spec: NetworkSpec, flat: np.ndarray) -> Params:
    """Inverse of Params.to_flat for the given architecture."""
    flat = np.asarray(flat, dtype=np.float64).ravel()
    if flat.size != spec.param_count():
        raise ValueError(f"flat vector has {flat.size} entries, expected {spec.param_count()}")
    p = params_zero(spec)
    dims = list(spec.widths) + [spec.output_dim]
    off = 0
    for l in range(1, len(dims)):
        rows, cols = dims[l - 1] + 1, dims[l]
        stacked = flat[off : off + rows * cols].reshape(rows, cols, order="F")
        p.weights[l - 1] = stacked[:-1].copy()
        p.biases[l - 1] = stacked[-1:].copy()
        off += rows * cols
        if l <= spec.depth and spec.bn_flags[l - 1]:
            p.bn_scale[l - 1] = flat[off : off + cols].copy()
            off += cols
            p.bn_shift[l - 1] = flat[off : off + cols].copy()
            off += cols
    return p


def random_params(spec: NetworkSpec, rng, scale: float = 1.0) -> Params:
    """Gaussian draw of every parameter; BN scales centered at 1."""
    p = params_zero(spec)
    for l in range(spec.depth + 1):
        p.weights[l] = rng.standard_normal(p.weights[l].shape) * scale
        p.biases[l] = rng.standard_normal(p.biases[l].shape) * scale
        if l < spec.depth and p.bn_scale[l] is not None:
            p.bn_scale[l] = 1.0 + rng.standard_normal(p.bn_scale[l].shape) * scale
            p.bn_shift[l] = rng.standard_normal(p.bn_shift[l].shape) * scale
    return p


def init_params(spec: NetworkSpec, seed: int = 0) -> Params:
    """Fan-in scaled Gaussian weights, zero biases, identity BN."""
    rng = np.random.default_rng(seed)
    p = params_zero(spec)
    for l in range(spec.depth + 1):
        fan_in = p.weights[l].shape[0]
        p.weights[l] = rng.standard_normal(p.weights[l].shape) * np.sqrt(2.0 / fan_in)
    return p


# ---------------------------------------------------------------------------
# elementwise pieces
# ---------------------------------------------------------------------------

def softplus(z, sharpness: float):
    """ln(1 + exp(s z)) / s via the overflow-free split max(z,0) + ln(1+e^{-s|z|})/s."""
    if sharpness <= 0:
        raise ValueError("sharpness must be positive")
    z = np.asarray(z, dtype=np.float64)
    out = np.maximum(z, 0.0) + np.log1p(np.exp(-sharpness * np.abs(z))) / sharpness
    return out if out.ndim else float(out)


def softplus_deriv(z, sharpness: float):
    """Logistic(s z), the exact derivative of the stabilized softplus."""
    z = np.asarray(z, dtype=np.float64)
    # logistic(t) = (1 + tanh(t/2)) / 2 is overflow-free for all t
    return 0.5 * (1.0 + np.tanh(0.5 * sharpness * z))


def batchnorm_forward(z_batch, gamma, beta, eps, mean=None, var=None):
    """Normalize a batch per unit: gamma * (z - mu) / sqrt(var + eps) + beta.

    mu and var default to the batch mean and population variance of
    `z_batch` (axis 0 for 2-D input).  Passing `mean`/`var` evaluates the
    same map with frozen statistics.
    """
    z = np.asarray(z_batch, dtype=np.float64)
    if z.size == 0:
        raise ValueError("batch normalization needs a nonempty batch")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    axis = 0
    if mean is None:
        mean = z.mean(axis=axis)
    if var is None:
        var = z.var(axis=axis)
    return gamma * (z - mean) / np.sqrt(var + eps) + beta


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

@dataclass
class ForwardTrace:
    """All intermediates of one forward pass, enough to backpropagate."""

    inputs: np.ndarray
    affine: list            # z per hidden layer (pre-BN)
    bn_cache: list          # (mu, var, z_hat, z_bn) or None per hidden layer
    post: list              # h per hidden layer
    frozen_stats: list | None = None
    output: np.ndarray | None = None

    @property
    def hidden(self) -> np.ndarray:
        """Feature matrix h of the last hidden layer, n x m_H."""
        return self.post[-1]


def _validate_forward_shapes(spec: NetworkSpec, params: Params, x: np.ndarray) -> None:
    if x.shape[1] != spec.input_dim:
        raise ValueError(
            f"input has {x.shape[1]} columns, layer 1 expects {spec.input_dim}"
        )
    dims = list(spec.widths) + [spec.output_dim]
    for l in range(1, len(dims)):
        w = params.weights[l - 1]
        if w.shape != (dims[l - 1], dims[l]):
            raise ValueError(
                f"layer {l} weight has shape {w.shape}, expected {(dims[l - 1], dims[l])}"
            )


def forward_hidden(spec: NetworkSpec, params: Params, x, frozen_stats=None) -> ForwardTrace:
    """Run the hidden stack on a batch; returns the full trace.

    `frozen_stats` is a per-hidden-layer list of (mean, var) pairs (None for
    layers without BN); when given, BN layers use those statistics instead
    of the batch's own, which makes every row a function of its own input.
    """
    x = as_matrix(x, "X")
    _validate_forward_shapes(spec, params, x)
    if frozen_stats is not None and len(frozen_stats) != spec.depth:
        raise ValueError("frozen_stats must have one entry per hidden layer")
    affine, bn_cache, post = [], [], []
    h = x
    for l in range(spec.depth):
        z = h @ params.weights[l] + params.biases[l]
        affine.append(z)
        if spec.bn_flags[l]:
            if frozen_stats is not None:
                mu, var = frozen_stats[l]
            else:
                mu, var = z.mean(axis=0), z.var(axis=0)
            z_hat = (z - mu) / np.sqrt(var + spec.bn_epsilon)
            z_bn = params.bn_scale[l] * z_hat + params.bn_shift[l]
            bn_cache.append((mu, var, z_hat, z_bn))
            h = softplus(z_bn, spec.sharpness)
        else:
            bn_cache.append(None)
            h = softplus(z, spec.sharpness)
        post.append(h)
    return ForwardTrace(x, affine, bn_cache, post, frozen_stats=frozen_stats)


def forward_output(spec: NetworkSpec, params: Params, x, frozen_stats=None, trace=None):
    """Head outputs f = [h, 1] [W; b], shape n x m_y.  Fills trace.output."""
    if trace is None:
        trace = forward_hidden(spec, params, x, frozen_stats)
    f = trace.hidden @ params.weights[-1] + params.biases[-1]
    trace.output = f
    return f


def batch_statistics(trace: ForwardTrace) -> list:
    """Extract per-layer (mean, var) pairs from a training-mode trace."""
    stats = []
    for cache in trace.bn_cache:
        stats.append(None if cache is None else (cache[0].copy(), cache[1].copy()))
    return stats


def _bn_backward(dz_bn, cache, gamma, eps, frozen: bool):
    mu, var, z_hat, _ = cache
    dgamma = (dz_bn * z_hat).sum(axis=0)
    dbeta = dz_bn.sum(axis=0)
    dz_hat = dz_bn * gamma
    inv_std = 1.0 / np.sqrt(var + eps)
    if frozen:
        dz = dz_hat * inv_std
    else:
        n = dz_bn.shape[0]
        dz = (inv_std / n) * (
            n * dz_hat - dz_hat.sum(axis=0) - z_hat * (dz_hat * z_hat).sum(axis=0)
        )
    return dz, dgamma, dbeta


def backprop(
    spec: NetworkSpec,
    params: Params,
    x,
    upstream,
    subset: str = "all",
    frozen_stats=None,
    trace: ForwardTrace | None = None,
) -> np.ndarray:
    """Gradient of <upstream, f(X)> with respect to the flat parameter vector.

    `upstream` is d(objective)/d(f), shape n x m_y.  `subset` selects which
    blocks are populated ("all", "last_layer_only", "hidden_only"); the
    result is always zero-padded to the full parameter length.  BN layers
    differentiate through their batch statistics unless the trace was built
    with frozen ones.
    """
    if subset not in ("all", "last_layer_only", "hidden_only"):
        raise ValueError(f"unknown subset {subset!r}")
    if trace is None:
        trace = forward_hidden(spec, params, x, frozen_stats)
    upstream = as_matrix(upstream, "upstream")
    n = trace.inputs.shape[0]
    if upstream.shape != (n, spec.output_dim):
        raise ValueError(
            f"upstream has shape {upstream.shape}, expected {(n, spec.output_dim)}"
        )
    frozen = trace.frozen_stats is not None

    grads_w = [None] * (spec.depth + 1)
    grads_b = [None] * (spec.depth + 1)
    grads_gamma = [None] * spec.depth
    grads_beta = [None] * spec.depth

    h_last = trace.hidden
    grads_w[-1] = h_last.T @ upstream
    grads_b[-1] = upstream.sum(axis=0, keepdims=True)

    if subset != "last_layer_only":
        dh = upstream @ params.weights[-1].T
        for l in range(spec.depth - 1, -1, -1):
            cache = trace.bn_cache[l]
            sig_in = trace.affine[l] if cache is None else cache[3]
            dz = dh * softplus_deriv(sig_in, spec.sharpness)
            if cache is not None:
                dz, dgamma, dbeta = _bn_backward(
                    dz, cache, params.bn_scale[l], spec.bn_epsilon, frozen
                )
                grads_gamma[l] = dgamma
                grads_beta[l] = dbeta
            h_prev = trace.inputs if l == 0 else trace.post[l - 1]
            grads_w[l] = h_prev.T @ dz
            grads_b[l] = dz.sum(axis=0, keepdims=True)
            if l > 0:
                dh = dz @ params.weights[l].T

    chunks = []
    for l in range(spec.depth + 1):
        size_wb = (params.weights[l].shape[0] + 1) * params.weights[l].shape[1]
        include = (
            subset == "all"
            or (subset == "last_layer_only" and l == spec.depth)
            or (subset == "hidden_only" and l < spec.depth)
        )
        if include and grads_w[l] is not None:
            chunks.append(np.vstack([grads_w[l], grads_b[l]]).ravel(order="F"))
        else:
            chunks.append(np.zeros(size_wb))
        if l < spec.depth and params.bn_scale[l] is not None:
            if include and grads_gamma[l] is not None:
                chunks.append(grads_gamma[l])
                chunks.append(grads_beta[l])
            else:
                chunks.append(np.zeros(params.bn_scale[l].size))
                chunks.append(np.zeros(params.bn_shift[l].size))
    return np.concatenate(chunks)
