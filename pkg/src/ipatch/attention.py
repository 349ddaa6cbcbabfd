"""Inter-patch multi-head self-attention (the global stream).

Tokens are laid out as (..., D, N): embedding axis first, patch axis last.
Head h owns rows [h*d_h, (h+1)*d_h) of each projection matrix.
"""
from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .numeric import ConfigError


def head_dim(D: int, n_heads: int) -> int:
    if n_heads < 1 or D % n_heads != 0:
        raise ConfigError(f"embedding dimension D={D} is not divisible by n_heads={n_heads}")
    return D // n_heads


def split_heads(x: torch.Tensor, n_heads: int) -> torch.Tensor:
    """(..., D, N) -> (..., H, d_h, N)."""
    D, N = x.shape[-2:]
    return x.reshape(*x.shape[:-2], n_heads, head_dim(D, n_heads), N)


def merge_heads(x: torch.Tensor) -> torch.Tensor:
    """(..., H, d_h, N) -> (..., D, N); heads stacked along the embedding axis."""
    H, d, N = x.shape[-3:]
    return x.reshape(*x.shape[:-3], H * d, N)


def project_qkv(tokens, W_Q, W_K, W_V, n_heads: int):
    """Linear Q/K/V projections of a (..., D, N) token matrix, split per head.

    The W's are (D, D) with head h in row block h, so each head's projection
    is the d_h x D slice. Returns three (..., H, d_h, N) tensors.
    """
    head_dim(tokens.shape[-2], n_heads)
    return tuple(split_heads(W @ tokens, n_heads) for W in (W_Q, W_K, W_V))


def attention_weights(Q: torch.Tensor, K: torch.Tensor) -> torch.Tensor:
    """A = softmax(Q^T K / sqrt(d_h)) over keys; (..., d_h, N) -> (..., N, N)."""
    d = Q.shape[-2]
    logits = Q.transpose(-1, -2) @ K / math.sqrt(d)
    return torch.softmax(logits, dim=-1)


def attend(A: torch.Tensor, V: torch.Tensor) -> torch.Tensor:
    """Output token i is sum_j A[i, j] * V[:, j]; returns (..., d_h, N)."""
    if A.shape[-1] != V.shape[-1]:
        raise ValueError(f"attention over {A.shape[-1]} keys but {V.shape[-1]} value tokens")
    return V @ A.transpose(-1, -2)


def multi_head(tokens, W_Q, W_K, W_V, n_heads: int, W_O=None):
    """Concatenated per-head attention outputs, shape (..., D, N)."""
    Q, K, V = project_qkv(tokens, W_Q, W_K, W_V, n_heads)
    out = merge_heads(attend(attention_weights(Q, K), V))
    if W_O is not None:
        out = W_O @ out
    return out


class PatchAttention(nn.Module):
    def __init__(self, D: int, n_heads: int, output_projection: bool = False):
        super().__init__()
        head_dim(D, n_heads)
        self.n_heads = n_heads
        self.W_Q = nn.Parameter(torch.zeros(D, D, dtype=torch.float64))
        self.W_K = nn.Parameter(torch.zeros(D, D, dtype=torch.float64))
        self.W_V = nn.Parameter(torch.zeros(D, D, dtype=torch.float64))
        self.W_O = nn.Parameter(torch.zeros(D, D, dtype=torch.float64)) if output_projection else None

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        return multi_head(tokens, self.W_Q, self.W_K, self.W_V, self.n_heads, self.W_O)

    def weights(self, tokens: torch.Tensor) -> torch.Tensor:
        Q, K, _ = project_qkv(tokens, self.W_Q, self.W_K, self.W_V, self.n_heads)
        return attention_weights(Q, K)


class EncoderLayer(nn.Module):
    """Post-norm Transformer encoder layer on (..., D, N) tokens.

    attention -> residual -> LayerNorm -> FFN(D -> 2D -> D, GELU) -> residual
    -> LayerNorm.
    """

    def __init__(self, D: int, n_heads: int, output_projection: bool = False, dropout: float = 0.0):
        super().__init__()
        self.attn = PatchAttention(D, n_heads, output_projection)
        self.norm1 = nn.LayerNorm(D, dtype=torch.float64)
        self.ff1 = nn.Linear(D, 2 * D, dtype=torch.float64)
        self.ff2 = nn.Linear(2 * D, D, dtype=torch.float64)
        self.norm2 = nn.LayerNorm(D, dtype=torch.float64)
        self.dropout = dropout
        self.generator: torch.Generator | None = None

    def _drop(self, x: torch.Tensor) -> torch.Tensor:
        if not self.training or self.dropout <= 0.0:
            return x
        keep = torch.rand(x.shape, generator=self.generator, dtype=x.dtype) >= self.dropout
        return x * keep / (1.0 - self.dropout)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        x = tokens.transpose(-1, -2)  # (..., N, D)
        x = self.norm1(x + self._drop(self.attn(tokens).transpose(-1, -2)))
        x = self.norm2(x + self._drop(self.ff2(F.gelu(self.ff1(x)))))
        return x.transpose(-1, -2)


class PatchEncoder(nn.Module):
    def __init__(self, D: int, n_heads: int, layers: int = 1, output_projection: bool = False,
                 dropout: float = 0.0):
        super().__init__()
        if layers < 1:
            raise ConfigError(f"encoder_layers must be >= 1, got {layers}")
        self.layers = nn.ModuleList(
            EncoderLayer(D, n_heads, output_projection, dropout) for _ in range(layers)
        )

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        for layer in self.layers:
            tokens = layer(tokens)
        return tokens
