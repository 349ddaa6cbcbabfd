"""Intra-patch spectral autocorrelation stream.

Correlation, lag selection and rolling all run along the per-token embedding
axis (length d_h), independently for every patch token column. Lag indices
are a hard top-J choice; gradients reach the projections through the
selected correlation values and through V.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .attention import head_dim, merge_heads, project_qkv
from .numeric import ConfigError

WEIGHTINGS = ("fourier", "softmax")


def default_lags(d_h: int) -> int:
    return max(1, int(math.floor(math.log2(d_h))))


def spectral_autocorr(Q: torch.Tensor, K: torch.Tensor) -> torch.Tensor:
    """corr[:, c] = irfft(rfft(Q[:, c]) * conj(rfft(K[:, c]))) along axis -2.

    ``corr[tau, c] = sum_t Q[(t + tau) mod d, c] * K[t, c]``.
    """
    if Q.shape != K.shape:
        raise ValueError(f"shape mismatch {tuple(Q.shape)} vs {tuple(K.shape)}")
    d = Q.shape[-2]
    spec = torch.fft.rfft(Q, dim=-2) * torch.conj(torch.fft.rfft(K, dim=-2))
    return torch.fft.irfft(spec, n=d, dim=-2)


@dataclass(frozen=True)
class LagSet:
    taus: tuple[int, ...]
    weights: tuple[float, ...]


def select_lags(corr: torch.Tensor, J: int, shared: bool = False):
    """Top-J lags per column of a (..., d, N) correlation tensor.

    Returns ``(taus, weights)``, each (..., J, N), sorted by descending
    weight; equal weights keep the smaller lag first. With ``shared`` the
    ranking uses the column-mean correlation and every column receives the
    same lags (weights are still read per column).
    """
    d = corr.shape[-2]
    if not 1 <= J <= d:
        raise ConfigError(f"number of lags J={J} must lie in [1, {d}]")
    score = corr.detach()
    if shared:
        score = score.mean(dim=-1, keepdim=True).expand_as(score)
    order = torch.sort(score, dim=-2, descending=True, stable=True).indices
    taus = order[..., :J, :]
    return taus, torch.gather(corr, -2, taus)


def lag_sets(corr: torch.Tensor, J: int) -> list[LagSet]:
    """Per-column LagSet view of :func:`select_lags` for a 2-D (d, N) input."""
    taus, w = select_lags(corr, J)
    return [
        LagSet(tuple(int(t) for t in taus[:, c]), tuple(float(x) for x in w[:, c]))
        for c in range(corr.shape[-1])
    ]


def fkan(w: torch.Tensor, A: torch.Tensor, B: torch.Tensor) -> torch.Tensor:
    """Truncated Fourier series sum_m A_m cos(m w) + B_m sin(m w), m = 1..G.

    ``A`` and ``B`` have a trailing axis of length G; their leading axes
    broadcast against ``w``.
    """
    w = torch.as_tensor(w, dtype=torch.float64)
    A = torch.as_tensor(A, dtype=torch.float64)
    B = torch.as_tensor(B, dtype=torch.float64)
    m = torch.arange(1, A.shape[-1] + 1, dtype=w.dtype)
    mw = w.unsqueeze(-1) * m
    return (torch.cos(mw) * A + torch.sin(mw) * B).sum(-1)


def rolled(V: torch.Tensor, taus: torch.Tensor) -> torch.Tensor:
    """Stack of roll(V[:, c], tau) for each selected lag: (..., J, d, N)."""
    d = V.shape[-2]
    idx = (torch.arange(d).view(d, 1) + taus.unsqueeze(-2)) % d  # (..., J, d, N)
    src = V.unsqueeze(-3).expand(*idx.shape)
    return torch.gather(src, -2, idx)


def applied_weights(w: torch.Tensor, weighting: str, A=None, B=None) -> torch.Tensor:
    """Map raw lag weights (..., J, N) to the factors used in aggregation."""
    if weighting == "softmax":
        return torch.softmax(w, dim=-2)
    if weighting == "fourier":
        return fkan(w, A, B)
    raise ConfigError(f"unknown weighting {weighting!r}; expected one of {WEIGHTINGS}")


def aggregate(V, taus, w, weighting: str, A=None, B=None) -> torch.Tensor:
    """sum_l roll(V[:, c], tau_l) * g(w_l) per column c."""
    g = applied_weights(w, weighting, A, B)
    return (rolled(V, taus) * g.unsqueeze(-2)).sum(-3)


class AutocorrBlock(nn.Module):
    """Multi-head autocorrelation producing the local stream (..., D, N)."""

    def __init__(self, D: int, n_heads: int, J: int | None = None, G: int = 4,
                 weighting: str = "fourier", shared_lags: bool = False):
        super().__init__()
        d_h = head_dim(D, n_heads)
        J = default_lags(d_h) if J is None else J
        if not 1 <= J <= d_h:
            raise ConfigError(f"number of lags J={J} must lie in [1, d_h={d_h}]")
        if G < 1:
            raise ConfigError(f"FKAN frequency count G must be >= 1, got {G}")
        if weighting not in WEIGHTINGS:
            raise ConfigError(f"unknown weighting {weighting!r}; expected one of {WEIGHTINGS}")
        self.n_heads, self.J, self.weighting, self.shared_lags = n_heads, J, weighting, shared_lags
        self.W_Q = nn.Parameter(torch.zeros(D, D, dtype=torch.float64))
        self.W_K = nn.Parameter(torch.zeros(D, D, dtype=torch.float64))
        self.W_V = nn.Parameter(torch.zeros(D, D, dtype=torch.float64))
        # one FKAN per head; unused (and not created) under softmax weighting
        if weighting == "fourier":
            self.fkan_A = nn.Parameter(torch.zeros(n_heads, G, dtype=torch.float64))
            self.fkan_B = nn.Parameter(torch.zeros(n_heads, G, dtype=torch.float64))
        else:
            self.fkan_A = self.fkan_B = None

    def _fkan_coeffs(self):
        if self.fkan_A is None:
            return None, None
        # (H, G) -> (H, 1, 1, G) to broadcast over (..., H, J, N)
        return self.fkan_A[:, None, None, :], self.fkan_B[:, None, None, :]

    def lags(self, tokens: torch.Tensor):
        Q, K, V = project_qkv(tokens, self.W_Q, self.W_K, self.W_V, self.n_heads)
        corr = spectral_autocorr(Q, K)
        taus, w = select_lags(corr, self.J, self.shared_lags)
        return V, taus, w

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        V, taus, w = self.lags(tokens)
        A, B = self._fkan_coeffs()
        return merge_heads(aggregate(V, taus, w, self.weighting, A, B))
