"""Minimal differentiable building blocks with hand-written backward passes.

Parameters live in flat ``dict[str, np.ndarray]`` maps so the optimizer,
Polyak averaging and checkpointing can treat them uniformly.  Weight
matrices are stored ``[out, in]``: training batches compute ``x @ w.T``
(fastest BLAS orientation for tall inputs) while the low-latency inference
path in :mod:`marlnav.policy` computes ``w @ x.T``.

Everything here trains in float32; test oracles re-instantiate the same
graphs in float64 (see :func:`grad_check`).
"""

from __future__ import annotations

from typing import Callable

import numpy as np

Params = dict[str, np.ndarray]
Grads = dict[str, np.ndarray]

LN_EPS = 1e-5
LEAKY_SLOPE = 0.01


class NonFiniteError(FloatingPointError):
    """A tensor picked up a NaN or Inf somewhere it must not."""


def check_finite(name: str, x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        bad = int(np.size(x) - np.isfinite(x).sum())
        raise NonFiniteError(f"{name} contains {bad} non-finite entries "
                             f"(max |finite| = {np.max(np.abs(x[np.isfinite(x)]), initial=0.0):.3g})")


# ---------------------------------------------------------------------------
# parameter initialisation

def init_linear(rng: np.random.Generator, d_in: int, d_out: int,
                dtype=np.float32, scale: float | None = None) -> Params:
    """He-style init for a bare affine layer; ``w`` is ``[out, in]``."""
    if scale is None:
        scale = float(np.sqrt(2.0 / d_in))
    return {
        "w": (rng.standard_normal((d_out, d_in)) * scale).astype(dtype),
        "b": np.zeros(d_out, dtype=dtype),
    }


def init_block(rng: np.random.Generator, d_in: int, d_out: int,
               dtype=np.float32) -> Params:
    """Affine + layer norm + leaky ReLU parameter bundle."""
    p = init_linear(rng, d_in, d_out, dtype)
    p["g"] = np.ones(d_out, dtype=dtype)
    p["beta"] = np.zeros(d_out, dtype=dtype)
    return p


def prefix_params(prefix: str, p: Params) -> Params:
    return {f"{prefix}.{k}": v for k, v in p.items()}


# ---------------------------------------------------------------------------
# layers

def affine_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"affine: input dim {x.shape[-1]} != weight in-dim {w.shape[1]}")
    # flatten leading dims: one big GEMM beats numpy's batched-matmul loop
    flat = np.ascontiguousarray(x).reshape(-1, x.shape[-1])
    y = flat @ w.T
    y += b
    return y.reshape(x.shape[:-1] + (w.shape[0],)), (flat, w, x.shape)


def affine_backward(dy: np.ndarray, cache) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    flat_x, w, x_shape = cache
    flat_dy = np.ascontiguousarray(dy).reshape(-1, dy.shape[-1])
    dw = flat_dy.T @ flat_x
    db = flat_dy.sum(axis=0)
    dx = (flat_dy @ w).reshape(x_shape)
    return dx, dw, db


def layer_norm_forward(x: np.ndarray, g: np.ndarray, beta: np.ndarray,
                       eps: float = LN_EPS):
    """Normalize over the trailing feature axis.

    A constant row has zero variance and normalizes to exactly zero
    (the epsilon keeps the division defined), so the output there is
    just ``beta``.
    """
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.einsum("...i,...i->...", xc, xc)[..., None] / x.shape[-1]
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc
    xhat *= inv_std
    y = g * xhat
    y += beta
    return y, (xhat, inv_std, g)


def layer_norm_backward(dy: np.ndarray, cache):
    xhat, inv_std, g = cache
    d = dy.shape[-1]
    dg = np.einsum("ri,ri->i", dy.reshape(-1, d), xhat.reshape(-1, d))
    dbeta = dy.reshape(-1, d).sum(axis=0)
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = np.einsum("...i,...i->...", dxhat, xhat)[..., None] / d
    dx = dxhat
    dx -= m1
    dx -= xhat * m2
    dx *= inv_std
    return dx, dg, dbeta


def leaky_relu_forward(x: np.ndarray, slope: float = LEAKY_SLOPE):
    # slope > 0 preserves sign, so the backward mask can come from y itself
    y = np.multiply(x, np.float32(slope) if x.dtype == np.float32 else slope)
    np.maximum(x, y, out=y)
    return y, (y, slope)


def leaky_relu_backward(dy: np.ndarray, cache) -> np.ndarray:
    y, slope = cache
    scale = np.float32(slope) if dy.dtype == np.float32 else slope
    dx = np.multiply(dy, scale)
    np.copyto(dx, dy, where=y > 0)
    return dx


def block_forward(params: Params, prefix: str, x: np.ndarray):
    """One block: leaky_relu(layer_norm(w @ x + b))."""
    z1, c1 = affine_forward(x, params[f"{prefix}.w"], params[f"{prefix}.b"])
    z2, c2 = layer_norm_forward(z1, params[f"{prefix}.g"], params[f"{prefix}.beta"])
    y, c3 = leaky_relu_forward(z2)
    return y, (c1, c2, c3)


def block_backward(dy: np.ndarray, cache, prefix: str, grads: Grads) -> np.ndarray:
    c1, c2, c3 = cache
    dz2 = leaky_relu_backward(dy, c3)
    dz1, dg, dbeta = layer_norm_backward(dz2, c2)
    dx, dw, db = affine_backward(dz1, c1)
    grads[f"{prefix}.w"] = grads.get(f"{prefix}.w", 0) + dw
    grads[f"{prefix}.b"] = grads.get(f"{prefix}.b", 0) + db
    grads[f"{prefix}.g"] = grads.get(f"{prefix}.g", 0) + dg
    grads[f"{prefix}.beta"] = grads.get(f"{prefix}.beta", 0) + dbeta
    return dx


def linear_forward(params: Params, prefix: str, x: np.ndarray):
    return affine_forward(x, params[f"{prefix}.w"], params[f"{prefix}.b"])


def linear_backward(dy: np.ndarray, cache, prefix: str, grads: Grads) -> np.ndarray:
    dx, dw, db = affine_backward(dy, cache)
    grads[f"{prefix}.w"] = grads.get(f"{prefix}.w", 0) + dw
    grads[f"{prefix}.b"] = grads.get(f"{prefix}.b", 0) + db
    return dx


def softmax(x: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Max-subtracted softmax over the trailing axis."""
    if temperature <= 0:
        raise ValueError(f"softmax temperature must be > 0, got {temperature}")
    z = x / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def logsumexp(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True)))[..., 0]


# ---------------------------------------------------------------------------
# MLP stacks (decoder / transition model share this shape)

def init_mlp(rng: np.random.Generator, d_in: int, hidden: int, depth: int,
             d_out: int, dtype=np.float32) -> Params:
    """``depth`` blocks followed by a bare linear output layer."""
    params: Params = {}
    d = d_in
    for i in range(depth):
        params.update(prefix_params(f"b{i}", init_block(rng, d, hidden, dtype)))
        d = hidden
    params.update(prefix_params("out", init_linear(rng, d, d_out, dtype)))
    return params


def mlp_forward(params: Params, x: np.ndarray, depth: int):
    caches = []
    h = x
    for i in range(depth):
        h, c = block_forward(params, f"b{i}", h)
        caches.append(c)
    y, c = linear_forward(params, "out", h)
    caches.append(c)
    return y, caches


def mlp_backward(dy: np.ndarray, caches, depth: int, grads: Grads) -> np.ndarray:
    dh = linear_backward(dy, caches[-1], "out", grads)
    for i in reversed(range(depth)):
        dh = block_backward(dh, caches[i], f"b{i}", grads)
    return dh


# ---------------------------------------------------------------------------
# finite-difference oracle

def grad_check(f: Callable[[np.ndarray], tuple[float, np.ndarray]],
               point: np.ndarray, step: float = 1e-4) -> float:
    """Max relative error between f's analytic gradient and central differences.

    ``f`` maps a float64 vector to ``(value, gradient)``.  The relative
    error per component is ``|a - n| / max(|a| + |n|, 1e-8)``.
    """
    point = np.asarray(point, dtype=np.float64)
    _, analytic = f(point)
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.empty_like(point)
    for i in range(point.size):
        e = np.zeros_like(point)
        e.flat[i] = step
        up, _ = f(point + e)
        dn, _ = f(point - e)
        numeric.flat[i] = (up - dn) / (2 * step)
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
