"""IPatch model assembly, construction and checkpoint I/O.

Parameter count for a config (k = 2 for the full variant, else 1):

    embedding     D*S + D*N
    encoder       layers * (7*D^2 + 7*D)      [+ layers * D^2 with W_O]
    autocorr      3*D^2 + 2*H_n*G             [FKAN terms only for fourier]
    head          H*k*D*N + H

The encoder is counted only when the variant uses the attention stream and
the autocorrelation block only when it uses the autocorrelation stream.
"""
from __future__ import annotations

import dataclasses
import io
import json
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .attention import PatchEncoder, head_dim
from .autocorrelation import WEIGHTINGS, AutocorrBlock, default_lags
from .numeric import ConfigError, glorot_uniform, make_rng
from .patching import PatchConfig, denormalize, instance_normalize, patchify

VARIANTS = ("full", "patch_only", "autocorr_only")
CHECKPOINT_MAGIC = "IPATCH-CHECKPOINT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    patch: PatchConfig
    horizon: int
    n_heads: int = 2
    J: int | None = None  # None -> max(1, floor(log2 d_h))
    G: int = 4
    variant: str = "full"
    weighting: str = "fourier"
    encoder_layers: int = 1
    instance_norm: bool = True
    shared_lags: bool = False
    attn_output_projection: bool = False
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.weighting not in WEIGHTINGS:
            raise ConfigError(f"unknown weighting {self.weighting!r}; expected one of {WEIGHTINGS}")
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        if self.encoder_layers < 1:
            raise ConfigError(f"encoder_layers must be >= 1, got {self.encoder_layers}")
        if self.G < 1:
            raise ConfigError(f"G must be >= 1, got {self.G}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        d_h = head_dim(self.patch.D, self.n_heads)
        if not 1 <= self.lags <= d_h:
            raise ConfigError(f"J={self.J} must lie in [1, d_h={d_h}]")

    @property
    def lags(self) -> int:
        return default_lags(self.patch.D // self.n_heads) if self.J is None else self.J

    @property
    def uses_attention(self) -> bool:
        return self.variant in ("full", "patch_only")

    @property
    def uses_autocorr(self) -> bool:
        return self.variant in ("full", "autocorr_only")

    @property
    def streams(self) -> int:
        return 2 if self.variant == "full" else 1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["patch"] = PatchConfig(**d["patch"])
        return cls(**d)

    def replace(self, **changes) -> "ModelConfig":
        patch_changes = {k: changes.pop(k) for k in ("L", "S", "O", "D") if k in changes}
        if patch_changes:
            changes["patch"] = dataclasses.replace(self.patch, **patch_changes)
        return dataclasses.replace(self, **changes)


def parameter_count(cfg: ModelConfig) -> int:
    """Closed-form count; see the module docstring."""
    p = cfg.patch
    D, N = p.D, p.N
    total = D * p.S + D * N
    if cfg.uses_attention:
        per_layer = 7 * D * D + 7 * D + (D * D if cfg.attn_output_projection else 0)
        total += cfg.encoder_layers * per_layer
    if cfg.uses_autocorr:
        total += 3 * D * D + (2 * cfg.n_heads * cfg.G if cfg.weighting == "fourier" else 0)
    total += cfg.horizon * cfg.streams * D * N + cfg.horizon
    return total


class IPatchModel(nn.Module):
    """Dual-stream patch forecaster, channel independent.

    ``forward`` maps (L, M) -> (H, M), or batched (B, L, M) -> (B, H, M).
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        p = config.patch
        self.W_proj = nn.Parameter(torch.zeros(p.D, p.S, dtype=torch.float64))
        self.W_pos = nn.Parameter(torch.zeros(p.D, p.N, dtype=torch.float64))
        self.encoder = (
            PatchEncoder(p.D, config.n_heads, config.encoder_layers,
                         config.attn_output_projection, config.dropout)
            if config.uses_attention else None
        )
        self.autocorr = (
            AutocorrBlock(p.D, config.n_heads, config.lags, config.G,
                          config.weighting, config.shared_lags)
            if config.uses_autocorr else None
        )
        fan_in = config.streams * p.D * p.N
        self.W_out = nn.Parameter(torch.zeros(config.horizon, fan_in, dtype=torch.float64))
        self.b_out = nn.Parameter(torch.zeros(config.horizon, dtype=torch.float64))

    def set_dropout_seed(self, seed: int):
        if self.encoder is None:
            return
        gen = torch.Generator().manual_seed(int(seed))
        for layer in self.encoder.layers:
            layer.generator = gen

    def tokens(self, x: torch.Tensor) -> torch.Tensor:
        """(B, L, M) normalized window -> (B, M, D, N) patch tokens."""
        p = self.config.patch
        patches = patchify(x.transpose(-1, -2), p.S, p.O)
        return self.W_proj @ patches + self.W_pos

    def streams(self, tokens: torch.Tensor) -> torch.Tensor:
        parts = []
        if self.encoder is not None:
            parts.append(self.encoder(tokens))
        if self.autocorr is not None:
            parts.append(self.autocorr(tokens))
        return torch.cat(parts, dim=-2)

    def forward(self, window) -> torch.Tensor:
        x = torch.as_tensor(window, dtype=torch.float64)
        unbatched = x.ndim == 2
        if unbatched:
            x = x.unsqueeze(0)
        if x.ndim != 3 or x.shape[1] != self.config.patch.L:
            raise ConfigError(
                f"expected window of shape (L={self.config.patch.L}, M), got {tuple(x.shape[-2:])}"
            )
        if not torch.isfinite(x).all():
            raise ValueError("input window contains non-finite values")
        state = None
        if self.config.instance_norm:
            x, state = instance_normalize(x)
        flat = self.streams(self.tokens(x)).flatten(-2)  # (B, M, k*D*N)
        y = (flat @ self.W_out.T + self.b_out).transpose(-1, -2)  # (B, H, M)
        if state is not None:
            y = denormalize(y, state)
        return y[0] if unbatched else y


def _init_value(name: str, shape: tuple, cfg: ModelConfig, rng: np.random.Generator) -> np.ndarray:
    leaf = name.rsplit(".", 1)[-1]
    if "norm" in name:
        return np.ones(shape) if leaf == "weight" else np.zeros(shape)
    if leaf in ("bias", "b_out"):
        return np.zeros(shape)
    if leaf in ("fkan_A", "fkan_B"):
        return rng.uniform(-1.0, 1.0, size=shape) / cfg.G
    return glorot_uniform(rng, shape)


def build(config: ModelConfig, rng: np.random.Generator | None = None) -> IPatchModel:
    """Construct a model with every parameter drawn from ``rng``.

    Parameters are initialized in :func:`parameters` order, so equal seeds
    give identical models.
    """
    rng = make_rng(config.seed) if rng is None else rng
    model = IPatchModel(config)
    with torch.no_grad():
        for name, p in model.named_parameters():
            p.copy_(torch.from_numpy(_init_value(name, tuple(p.shape), config, rng)))
    model.set_dropout_seed(config.seed)
    return model


def parameters(model: IPatchModel) -> list[tuple[str, torch.Tensor]]:
    """Trainable arrays in their stable, serialized order."""
    return list(model.named_parameters())


def flat_parameters(model: IPatchModel) -> np.ndarray:
    return np.concatenate([p.detach().numpy().ravel() for _, p in parameters(model)])


# --------------------------------------------------------------------------
# Checkpoints: text header + raw little-endian float64 blob
# --------------------------------------------------------------------------


def checkpoint_bytes(model: IPatchModel) -> bytes:
    cfg = model.config
    lines = [
        f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}",
        "config " + json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":")),
        f"seed {cfg.seed}",
    ]
    offset = 0
    chunks = []
    for name, p in parameters(model):
        arr = p.detach().numpy().astype("<f8", copy=False).ravel()
        shape = ",".join(str(s) for s in p.shape)
        lines.append(f"param {name} {shape} {offset} {arr.size}")
        offset += arr.size
        chunks.append(arr.tobytes())
    lines.append(f"end {offset}")
    return ("\n".join(lines) + "\n").encode("utf-8") + b"".join(chunks)


def save_checkpoint(model: IPatchModel, path) -> None:
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(model))


def load_checkpoint_bytes(data: bytes) -> IPatchModel:
    buf = io.BytesIO(data)

    def line() -> str:
        raw = buf.readline()
        if not raw:
            raise ValueError("truncated checkpoint header")
        return raw.decode("utf-8").rstrip("\n")

    magic = line().split()
    if len(magic) != 2 or magic[0] != CHECKPOINT_MAGIC:
        raise ValueError("not an IPatch checkpoint")
    if int(magic[1]) != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {magic[1]}")
    key, _, payload = line().partition(" ")
    if key != "config":
        raise ValueError("checkpoint header is missing the config line")
    cfg = ModelConfig.from_dict(json.loads(payload))
    line()  # seed, duplicated in config
    manifest = []
    while True:
        parts = line().split()
        if parts[0] == "end":
            total = int(parts[1])
            break
        _, name, shape, offset, count = parts
        manifest.append((name, tuple(int(s) for s in shape.split(",") if s), int(offset), int(count)))
    blob = np.frombuffer(buf.read(), dtype="<f8")
    if blob.size != total:
        raise ValueError(f"checkpoint blob holds {blob.size} values, header says {total}")

    model = IPatchModel(cfg)
    params = dict(parameters(model))
    if [m[0] for m in manifest] != list(params):
        raise ValueError("checkpoint parameter manifest does not match the model layout")
    with torch.no_grad():
        for name, shape, offset, count in manifest:
            params[name].copy_(torch.from_numpy(blob[offset:offset + count].reshape(shape).copy()))
    model.set_dropout_seed(cfg.seed)
    return model


def load_checkpoint(path) -> IPatchModel:
    with open(path, "rb") as f:
        return load_checkpoint_bytes(f.read())
