"""Style-based synthesis network with per-level feature modulation.

The network grows a learned 4x4 constant through doubling levels; each level
applies a style-conditioned 3x3 convolution, per-pixel noise injection, and a
leaky rectifier. An external :class:`ModulationPyramid` can correct every
level's output: the pyramid supplies (mean, raw_std) pairs per level and the
block output becomes ``(features + mean) * (1 + raw_std)``, so an all-zero
pyramid reproduces the unmodulated pass exactly.

After pretraining the synthesis weights are frozen; only modulation inputs
steer generation. The latent code is pushed through a small mapping network
into per-layer styles.

Checkpoint name schema: ``synthesis.<state_dict key>`` (e.g.
``synthesis.levels.2.conv.weight``), with the generator configuration stored
in checkpoint metadata under ``generator.*`` keys.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from turbvis.checkpoint import Checkpoint, CheckpointIntegrityError, load_checkpoint, save_checkpoint
from turbvis.config import GeneratorConfig
from turbvis.imageio import RGB, Image
from turbvis.netutil import (
    batch_noise,
    init_params,
    keep_init,
    load_state_entries,
    state_entries,
    to_numpy,
    to_tensor,
    weight_checksum,
)
from turbvis.rng import RngStream

LRELU_SLOPE = 0.2


@dataclass
class ModulationPyramid:
    """Per-level (mean, raw_std) maps; level i has 2 * C_i channels at the
    level's resolution, concatenated along the channel axis."""

    levels: list[np.ndarray]

    def __len__(self) -> int:
        return len(self.levels)

    @staticmethod
    def zeros(cfg: GeneratorConfig) -> "ModulationPyramid":
        return ModulationPyramid([
            np.zeros((2 * cfg.channels(i), cfg.level_resolution(i), cfg.level_resolution(i)),
                     dtype=np.float32)
            for i in range(cfg.n_levels)
        ])

    def validate_against(self, cfg: GeneratorConfig) -> None:
        if len(self.levels) != cfg.n_levels:
            raise ValueError(
                f"pyramid has {len(self.levels)} levels, generator expects {cfg.n_levels}"
            )
        for i, level in enumerate(self.levels):
            r = cfg.level_resolution(i)
            want = (2 * cfg.channels(i), r, r)
            if tuple(level.shape) != want:
                raise ValueError(f"pyramid level {i} has shape {level.shape}, expected {want}")


@dataclass
class LatentCode:
    z: np.ndarray

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float32).reshape(-1)
        if not np.all(np.isfinite(self.z)):
            raise ValueError("latent code must be finite")


class MappingNetwork(nn.Module):
    def __init__(self, latent_dim: int, n_layers: int):
        super().__init__()
        self.layers = nn.ModuleList([nn.Linear(latent_dim, latent_dim) for _ in range(n_layers)])

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        w = z * torch.rsqrt(torch.mean(z ** 2, dim=1, keepdim=True) + 1e-8)
        for layer in self.layers:
            w = F.leaky_relu(layer(w), LRELU_SLOPE)
        return w


class SynthLayer(nn.Module):
    """One resolution level: (upsample) -> styled conv -> noise -> lrelu."""

    def __init__(self, level: int, in_channels: int, out_channels: int,
                 latent_dim: int, noise_init: float):
        super().__init__()
        self.level = level
        if level == 0:
            self.const = nn.Parameter(torch.randn(in_channels, 4, 4))
        self.style = nn.Linear(latent_dim, in_channels)
        keep_init(self.style.bias)
        with torch.no_grad():
            self.style.bias.fill_(1.0)
        self.conv = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.noise_strength = keep_init(nn.Parameter(torch.tensor(float(noise_init))))

    def forward(self, x: torch.Tensor, w: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
        if self.level > 0:
            x = F.interpolate(x, scale_factor=2, mode="nearest")
        scale = self.style(w)
        x = x * scale[:, :, None, None]
        x = self.conv(x)
        x = x + self.noise_strength * noise
        return F.leaky_relu(x, LRELU_SLOPE)


class Synthesis(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.mapping = MappingNetwork(cfg.latent_dim, cfg.mapping_layers)
        levels = []
        for i in range(cfg.n_levels):
            in_ch = cfg.channels(0) if i == 0 else cfg.channels(i - 1)
            levels.append(SynthLayer(i, in_ch, cfg.channels(i), cfg.latent_dim, cfg.noise_init))
        self.levels = nn.ModuleList(levels)
        self.torgb = nn.Conv2d(cfg.channels(cfg.n_levels - 1), 3, 1)

    def noise_shapes(self) -> list[tuple[int, int, int]]:
        return [(1, self.cfg.level_resolution(i), self.cfg.level_resolution(i))
                for i in range(self.cfg.n_levels)]

    def forward(self, z: torch.Tensor, noise: list[torch.Tensor],
                mods: list[torch.Tensor] | None = None) -> torch.Tensor:
        """Returns the raw (pre-clamp) RGB head output, shape (B, 3, R, R)."""
        if len(noise) != len(self.levels):
            raise ValueError(f"expected {len(self.levels)} noise planes, got {len(noise)}")
        if mods is not None and len(mods) != len(self.levels):
            raise ValueError(f"expected {len(self.levels)} modulation levels, got {len(mods)}")
        w = self.mapping(z)
        x = self.levels[0].const.unsqueeze(0).expand(z.shape[0], -1, -1, -1)
        for i, layer in enumerate(self.levels):
            x = layer(x, w, noise[i])
            if mods is not None:
                mean, raw_std = torch.chunk(mods[i], 2, dim=1)
                x = (x + mean) * (1.0 + raw_std)
        return self.torgb(x)


@dataclass
class SynthesisState:
    net: Synthesis
    config: GeneratorConfig
    frozen: bool = False

    def checksum(self) -> str:
        return weight_checksum(self.net)


def build_synthesis(cfg: GeneratorConfig, rng: RngStream) -> SynthesisState:
    net = Synthesis(cfg)
    init_params(net, rng.fork("synthesis"))
    net.eval()
    return SynthesisState(net=net, config=cfg, frozen=False)


def freeze(state: SynthesisState) -> SynthesisState:
    for p in state.net.parameters():
        p.requires_grad_(False)
    state.frozen = True
    return state


def synthesis_checkpoint(state: SynthesisState, **metadata: str) -> Checkpoint:
    meta = {
        "kind": "synthesis",
        "generator.resolution": str(state.config.resolution),
        "generator.base_channels": str(state.config.base_channels),
        "generator.max_channels": str(state.config.max_channels),
        "generator.latent_dim": str(state.config.latent_dim),
        "generator.mapping_layers": str(state.config.mapping_layers),
        "generator.noise_init": str(state.config.noise_init),
    }
    meta.update({k: str(v) for k, v in metadata.items()})
    return Checkpoint(entries=state_entries(state.net, "synthesis"), metadata=meta)


def save_pretrained(state: SynthesisState, path, **metadata: str) -> None:
    save_checkpoint(synthesis_checkpoint(state, **metadata), path)


def config_from_metadata(meta: dict[str, str]) -> GeneratorConfig:
    try:
        return GeneratorConfig(
            resolution=int(meta["generator.resolution"]),
            base_channels=int(meta["generator.base_channels"]),
            max_channels=int(meta["generator.max_channels"]),
            latent_dim=int(meta["generator.latent_dim"]),
            mapping_layers=int(meta["generator.mapping_layers"]),
            noise_init=float(meta["generator.noise_init"]),
        )
    except KeyError as exc:
        raise CheckpointIntegrityError(f"checkpoint metadata missing {exc}") from exc


def load_pretrained(path) -> SynthesisState:
    ckpt = load_checkpoint(path)
    if ckpt.metadata.get("kind") != "synthesis":
        raise CheckpointIntegrityError(f"{path}: not a synthesis checkpoint")
    cfg = config_from_metadata(ckpt.metadata)
    net = Synthesis(cfg)
    load_state_entries(net, ckpt, "synthesis")
    net.eval()
    return SynthesisState(net=net, config=cfg, frozen=False)


def _require_weights(state: SynthesisState) -> None:
    if state.net is None:
        raise RuntimeError("synthesis weights are not loaded")


def level_noise(state: SynthesisState, noise_rng: RngStream, batch: int = 1) -> list[torch.Tensor]:
    return batch_noise(noise_rng, state.net.noise_shapes(), batch)


def synthesize_raw(state: SynthesisState, z, noise_rng: RngStream,
                   mods: ModulationPyramid | None = None) -> np.ndarray:
    """Single-image forward pass; returns the pre-clamp RGB head output."""
    _require_weights(state)
    code = z if isinstance(z, LatentCode) else LatentCode(np.asarray(z))
    if code.z.shape[0] != state.config.latent_dim:
        raise ValueError(
            f"latent has dim {code.z.shape[0]}, generator expects {state.config.latent_dim}"
        )
    mod_t = None
    if mods is not None:
        mods.validate_against(state.config)
        mod_t = [to_tensor(level).unsqueeze(0) for level in mods.levels]
    noise = level_noise(state, noise_rng, batch=1)
    with torch.no_grad():
        raw = state.net(to_tensor(code.z).unsqueeze(0), noise, mod_t)
    return to_numpy(raw[0])


def raw_to_image(raw: np.ndarray) -> Image:
    """Affine map to [0, 1] plus clamp: the image-space output head."""
    return Image(np.clip(0.5 * raw + 0.5, 0.0, 1.0), RGB)


def generate(state: SynthesisState, z, noise_rng: RngStream) -> Image:
    return raw_to_image(synthesize_raw(state, z, noise_rng))


def generate_modulated(state: SynthesisState, z, mods: ModulationPyramid,
                       noise_rng: RngStream) -> Image:
    return raw_to_image(synthesize_raw(state, z, noise_rng, mods=mods))
