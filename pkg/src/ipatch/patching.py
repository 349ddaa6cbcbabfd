"""Patch segmentation, patch embedding and reversible instance normalization."""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .numeric import ConfigError

STD_FLOOR = 1e-5


def patch_count(L: int, S: int, O: int) -> int:
    return (L - S) // O + 1


@dataclass(frozen=True)
class PatchConfig:
    L: int  # look-back length
    S: int  # patch length
    O: int  # stride between patch starts; O == S means no overlap
    D: int  # embedding dimension

    def __post_init__(self):
        for name in ("L", "S", "O", "D"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if self.S >= self.L:
            raise ConfigError(f"patch length S={self.S} must be smaller than L={self.L}")
        if self.O > self.S:
            raise ConfigError(f"stride O={self.O} must not exceed patch length S={self.S}")

    @property
    def N(self) -> int:
        return patch_count(self.L, self.S, self.O)

    def starts(self) -> list[int]:
        return [k * self.O for k in range(self.N)]


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(x, dtype=torch.float64)


def patchify(x: torch.Tensor, S: int, O: int) -> torch.Tensor:
    """(..., L) -> (..., S, N); column k holds x[k*O : k*O + S]."""
    return x.unfold(-1, S, O).transpose(-1, -2)


def segment(window, cfg: PatchConfig) -> torch.Tensor:
    """Split an L x M window into per-variable S x N patch matrices.

    Returns a tensor of shape (M, S, N). Any tail that does not fill a whole
    patch is dropped.
    """
    window = _as_tensor(window)
    if window.ndim != 2 or window.shape[0] != cfg.L:
        raise ConfigError(f"expected window of shape (L={cfg.L}, M), got {tuple(window.shape)}")
    return patchify(window.transpose(0, 1), cfg.S, cfg.O)


def embed(patches, W_proj, W_pos) -> torch.Tensor:
    """P' = W_proj @ P + W_pos, shared across variables.

    ``patches`` is (..., S, N), ``W_proj`` is (D, S), ``W_pos`` is (D, N).
    """
    patches, W_proj, W_pos = _as_tensor(patches), _as_tensor(W_proj), _as_tensor(W_pos)
    S, N = patches.shape[-2:]
    if W_proj.ndim != 2 or W_proj.shape[1] != S:
        raise ValueError(f"W_proj shape {tuple(W_proj.shape)} incompatible with patch length {S}")
    if tuple(W_pos.shape) != (W_proj.shape[0], N):
        raise ValueError(
            f"W_pos shape {tuple(W_pos.shape)} does not match ({W_proj.shape[0]}, {N})"
        )
    return W_proj @ patches + W_pos


@dataclass
class InstanceNormState:
    mean: torch.Tensor
    std: torch.Tensor
    floor: float = STD_FLOOR


def instance_normalize(window, floor: float = STD_FLOOR):
    """Per-channel standardization over the time axis (-2) of a window.

    Uses the population std floored at ``floor``. Returns the normalized
    window and the state needed by :func:`denormalize`.
    """
    window = _as_tensor(window)
    mean = window.mean(dim=-2, keepdim=True)
    var = ((window - mean) ** 2).mean(dim=-2, keepdim=True)
    std = torch.sqrt(var.clamp_min(floor * floor))
    return (window - mean) / std, InstanceNormState(mean, std, floor)


def denormalize(forecast, state: InstanceNormState) -> torch.Tensor:
    return _as_tensor(forecast) * state.std + state.mean
