"""Numeric primitives shared by every model.

Arrays are plain float64 numpy arrays. Randomness goes through
``numpy.random.Generator`` instances; :func:`rng_streams` hands out one
independent stream per concern so that, say, toggling shuffling never shifts
the noise draws.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Optional

import numpy as np
from scipy.special import expit

from .exceptions import DimensionError, DistributionError, NumericError

DTYPE = np.float64


def as_array(x) -> np.ndarray:
    arr = np.asarray(x, dtype=DTYPE)
    if arr.ndim > 3:
        raise DimensionError(f"arrays are limited to 3 dimensions, got {arr.ndim}")
    return arr


def check_finite(arr, what: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")
    return arr


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> np.ndarray:
    a = as_array(a)
    b = as_array(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


# ---------------------------------------------------------------- nonlinearities

def softmax(v, axis: int = -1) -> np.ndarray:
    """Max-shifted softmax along ``axis`` (the last axis by default)."""
    v = as_array(v)
    if v.size == 0:
        raise DimensionError("softmax of an empty array")
    z = np.exp(v - v.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def softmax_backward(p: np.ndarray, grad_p: np.ndarray, axis: int = -1) -> np.ndarray:
    """Vector-Jacobian product of softmax given its output ``p``."""
    return p * (grad_p - np.sum(grad_p * p, axis=axis, keepdims=True))


def log_sum_exp(v, axis: Optional[int] = None):
    v = as_array(v)
    if v.size == 0:
        raise DimensionError("log_sum_exp of an empty array")
    m = v.max(axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True))
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def softplus_grad(x: np.ndarray) -> np.ndarray:
    return expit(x)


# ---------------------------------------------------------------- randomness

STREAMS = ("init", "shuffle", "noise", "pretrain")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def rng_streams(seed: int, names: Iterable[str] = STREAMS) -> Dict[str, np.random.Generator]:
    """Independent generators, one per named concern, all derived from ``seed``."""
    names = list(names)
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: np.random.Generator(np.random.PCG64(ss)) for name, ss in zip(names, children)}


def sample_standard_normal(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.standard_normal(shape)


def sample_categorical(rng: np.random.Generator, p) -> int:
    """Inverse-CDF draw of one index from the probability vector ``p``."""
    p = as_array(p)
    if p.ndim != 1 or p.size == 0:
        raise DimensionError("sample_categorical expects a non-empty 1-D vector")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise DistributionError("p must be non-negative and sum to 1")
    cdf = np.cumsum(p)
    idx = int(np.searchsorted(cdf, rng.random(), side="right"))
    if idx >= p.size:
        # u landed above a cdf total that rounded below 1
        idx = int(np.flatnonzero(p)[-1])
    return idx


# ---------------------------------------------------------------- optimisation

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    step_count: int = 0


def adam_update(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
                state: AdamState, names: Optional[Iterable[str]] = None):
    """One bias-corrected Adam step, applied in place to ``params``.

    Only the entries listed in ``names`` (default: every key of ``grads``) are
    touched. Returns ``(params, state)`` for convenience.
    """
    names = list(grads) if names is None else list(names)
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name in names:
        p, g = params[name], grads[name]
        if p.shape != g.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match {name} {p.shape}")
        if name not in state.first_moment:
            state.first_moment[name] = np.zeros_like(p)
            state.second_moment[name] = np.zeros_like(p)
        m = state.first_moment[name]
        v = state.second_moment[name]
        # in place, but in the same operation order as
        # p -= lr * (m / bc1) / (sqrt(v / bc2) + eps)
        tmp = np.array(g, dtype=DTYPE)
        tmp *= 1.0 - state.beta1
        m *= state.beta1
        m += tmp
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - state.beta2
        v *= state.beta2
        v += tmp
        np.divide(v, bc2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += state.eps
        step = np.array(m)
        step /= bc1
        step *= state.lr
        step /= tmp
        p -= step
    return params, state


# ---------------------------------------------------------------- gradient checks

def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5,
                     order: int = 2) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time.

    ``order=2`` is the three-point stencil (f(x+h) - f(x-h)) / 2h. ``order=4`` is
    its Richardson extrapolation, the five-point stencil
    (8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h. The larger step it
    tolerates keeps cancellation error small when the function value is large
    compared with individual gradient entries.
    """
    if order not in (2, 4):
        raise ValueError(f"order must be 2 or 4, got {order}")
    x = np.array(x, dtype=DTYPE)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)

    def at(i, orig, step):
        flat[i] = orig + step
        value = f(x)
        flat[i] = orig
        return value

    for i in range(flat.size):
        orig = flat[i]
        d1 = at(i, orig, h) - at(i, orig, -h)
        if order == 2:
            gflat[i] = d1 / (2.0 * h)
        else:
            d2 = at(i, orig, 2.0 * h) - at(i, orig, -2.0 * h)
            gflat[i] = (8.0 * d1 - d2) / (12.0 * h)
    return grad


def relative_error(a, b, floor: float = 1e-8) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    return np.abs(a - b) / np.maximum(floor, np.abs(a) + np.abs(b))
