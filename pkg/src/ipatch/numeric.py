"""Numeric substrate: seeded RNG, real FFT, circular correlation, gradient
checking and the Adam update.

Everything runs in float64. The model itself uses torch autograd as its
gradient tape; the helpers here are the reference/oracle side and the
optimizer math shared by the trainer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch


class ConfigError(ValueError):
    """Raised for invalid hyperparameters or configuration values."""


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; the draw sequence is platform independent."""
    return np.random.default_rng(int(seed))


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Uniform in +-sqrt(6 / (fan_in + fan_out)), fan_out = shape[0]."""
    fan_out = shape[0]
    fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else 1
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


# --------------------------------------------------------------------------
# FFT
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ComplexSpectrum:
    values: np.ndarray  # complex128, n // 2 + 1 bins
    original_length: int

    def __post_init__(self):
        if self.original_length < 1:
            raise ValueError("original_length must be positive")


def rfft(x: Sequence[float]) -> ComplexSpectrum:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("rfft expects a non-empty 1-D sequence")
    return ComplexSpectrum(np.fft.rfft(x), x.size)


def irfft(s: ComplexSpectrum) -> np.ndarray:
    n = s.original_length
    values = np.asarray(s.values, dtype=np.complex128)
    if values.shape != (n // 2 + 1,):
        raise ValueError(
            f"spectrum has {values.size} bins, expected {n // 2 + 1} for length {n}"
        )
    return np.fft.irfft(values, n=n)


def naive_dft(x: Sequence[float]) -> np.ndarray:
    """O(n^2) DFT returning the n // 2 + 1 non-negative frequency bins."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    t = np.arange(n)
    out = np.empty(n // 2 + 1, dtype=np.complex128)
    for m in range(n // 2 + 1):
        out[m] = np.sum(x * np.exp(-2j * np.pi * m * t / n))
    return out


def circular_xcorr_oracle(q: Sequence[float], k: Sequence[float]) -> np.ndarray:
    """Direct O(n^2) circular cross-correlation.

    ``out[tau] = sum_t q[(t + tau) mod n] * k[t]``, which is what
    ``irfft(rfft(q) * conj(rfft(k)))`` computes.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.shape != k.shape or q.ndim != 1:
        raise ValueError(f"length mismatch: {q.shape} vs {k.shape}")
    n = q.size
    out = np.zeros(n)
    for tau in range(n):
        acc = 0.0
        for t in range(n):
            acc += q[(t + tau) % n] * k[t]
        out[tau] = acc
    return out


def fft_xcorr(q: Sequence[float], k: Sequence[float]) -> np.ndarray:
    """Circular cross-correlation through the spectrum product."""
    sq, sk = rfft(q), rfft(k)
    if sq.original_length != sk.original_length:
        raise ValueError("length mismatch")
    return irfft(ComplexSpectrum(sq.values * np.conj(sk.values), sq.original_length))


def roll(v: Sequence[float], tau: int) -> np.ndarray:
    """``out[i] = v[(i + tau) mod n]`` (a left rotation by ``tau``)."""
    v = np.asarray(v)
    n = v.shape[0]
    if n < 1:
        raise ValueError("roll of an empty sequence")
    return v[(np.arange(n) + tau) % n]


def softmax(x: Sequence[float]) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(x - np.max(x))
    return z / z.sum()


# --------------------------------------------------------------------------
# Gradient checking
# --------------------------------------------------------------------------


def grad_check(
    f: Callable[[], torch.Tensor],
    params: Sequence[torch.Tensor],
    eps: float = 1e-6,
) -> float:
    """Compare autograd gradients against central differences.

    ``f`` takes no arguments and closes over ``params`` (float64 leaf tensors
    with ``requires_grad``). Returns the max over every scalar parameter of
    ``|analytic - numeric| / max(1, |numeric|)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = list(params)
    loss = f()
    if not torch.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss.item()}")
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    worst = 0.0
    with torch.no_grad():
        for p, g in zip(params, grads):
            analytic = torch.zeros_like(p) if g is None else g
            flat = p.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = f().item()
                flat[i] = orig - eps
                down = f().item()
                flat[i] = orig
                if not (math.isfinite(up) and math.isfinite(down)):
                    raise FloatingPointError("non-finite loss during perturbation")
                numeric = (up - down) / (2 * eps)
                err = abs(analytic.view(-1)[i].item() - numeric) / max(1.0, abs(numeric))
                worst = max(worst, err)
    return worst


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state: AdamState, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update.

    Works on numpy arrays or torch tensors. Returns ``(new_params, state)``;
    ``state`` is updated in place and also returned.
    """
    params, grads = list(params), list(grads)
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params but {len(grads)} grads")
    for p, g in zip(params, grads):
        if tuple(p.shape) != tuple(g.shape):
            raise ValueError(f"shape mismatch: param {tuple(p.shape)} vs grad {tuple(g.shape)}")
    if not state.m:
        state.m = [g * 0.0 for g in grads]
        state.v = [g * 0.0 for g in grads]
    elif len(state.m) != len(params) or any(
        tuple(m.shape) != tuple(p.shape) for m, p in zip(state.m, params)
    ):
        raise ValueError("optimizer state does not match parameter shapes")

    state.step += 1
    c1 = 1.0 - beta1**state.step
    c2 = 1.0 - beta2**state.step
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        sqrt = torch.sqrt if isinstance(v_hat, torch.Tensor) else np.sqrt
        out.append(p - lr * m_hat / (sqrt(v_hat) + eps))
    return out, state
