"""Gradient verification of the full model at toy size."""
from __future__ import annotations

import torch

from .autocorrelation import WEIGHTINGS
from .model import VARIANTS, ModelConfig, build, parameters
from .numeric import grad_check, make_rng
from .patching import PatchConfig

TOY_CONFIG = ModelConfig(PatchConfig(L=16, S=4, O=4, D=8), horizon=4, n_heads=2, J=2, G=4)
TOY_M = 2


def model_grad_error(cfg: ModelConfig = TOY_CONFIG, M: int = TOY_M, batch: int = 3,
                     seed: int = 7, eps: float = 1e-6) -> float:
    """Max relative gradient error of MSE loss over every model parameter."""
    model = build(cfg.replace(seed=seed))
    rng = make_rng(seed + 1)
    x = torch.from_numpy(rng.standard_normal((batch, cfg.patch.L, M)))
    y = torch.from_numpy(rng.standard_normal((batch, cfg.horizon, M)))
    params = [p for _, p in parameters(model)]
    return grad_check(lambda: torch.mean((model(x) - y) ** 2), params, eps)


def gradient_suite(seed: int = 7, base: ModelConfig = TOY_CONFIG) -> dict:
    """Gradient errors for every variant x weighting at toy size."""
    return {
        (v, w): model_grad_error(base.replace(variant=v, weighting=w), seed=seed)
        for v in VARIANTS
        for w in WEIGHTINGS
    }
