"""Thermal-turbulence projection: encoder to latent code, decoder to
modulation features.

The encoder applies a full-resolution feature layer and then ``n`` blocks of
2x2 average pooling followed by a 3x3 convolution, halving resolution each
time down to the 4x4 bottleneck. The bottleneck is flattened into the latent
code. The decoder runs coarse to fine: its level 0 is seeded from the
bottleneck feature, and each later level upsamples the previous one with a
learned 3x3 transposed convolution, applies a 3x3 convolution, and adds the
encoder feature at the matching resolution (U-Net skip). A zero-initialized
1x1 head per level emits the 2*C modulation channels, so the projection
starts at the exact identity modulation.

Checkpoint name schema: ``projection.<state_dict key>``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from turbvis.checkpoint import Checkpoint, CheckpointIntegrityError, load_checkpoint, save_checkpoint
from turbvis.config import GeneratorConfig, ProjectionConfig
from turbvis.generator import LRELU_SLOPE, LatentCode, ModulationPyramid
from turbvis.imageio import GRAYSCALE, Image
from turbvis.netutil import init_params, keep_init, load_state_entries, state_entries, to_numpy, to_tensor
from turbvis.rng import RngStream


@dataclass
class EncoderPyramid:
    """Multi-scale encoder features [F_0 ... F_n], F_i at resolution / 2**i."""

    features: list[np.ndarray]

    def __len__(self) -> int:
        return len(self.features)


class ProjectionNet(nn.Module):
    def __init__(self, cfg: ProjectionConfig, gen_cfg: GeneratorConfig):
        super().__init__()
        if cfg.resolution != gen_cfg.resolution:
            raise ValueError("projection and generator resolutions must match")
        if cfg.n_down + 1 != gen_cfg.n_levels:
            raise ValueError("projection depth does not match generator level count")
        self.cfg = cfg
        self.gen_cfg = gen_cfg
        n = cfg.n_down
        k = cfg.kernel_size
        pad = k // 2

        self.enc0 = nn.Conv2d(cfg.in_channels, cfg.enc_channels(0), k, padding=pad)
        self.encs = nn.ModuleList([
            nn.Conv2d(cfg.enc_channels(i - 1), cfg.enc_channels(i), k, padding=pad)
            for i in range(1, n + 1)
        ])
        self.latent = nn.Linear(cfg.enc_channels(n) * cfg.bottleneck ** 2, cfg.latent_dim)

        self.dec0 = nn.Conv2d(cfg.enc_channels(n), cfg.dec_channels(0), k, padding=pad)
        self.ups = nn.ModuleList([
            nn.ConvTranspose2d(cfg.dec_channels(j - 1), cfg.dec_channels(j), k,
                               stride=2, padding=pad, output_padding=1)
            for j in range(1, n + 1)
        ])
        self.decs = nn.ModuleList([
            nn.Conv2d(cfg.dec_channels(j), cfg.dec_channels(j), k, padding=pad)
            for j in range(1, n + 1)
        ])
        heads = []
        for j in range(n + 1):
            head = nn.Conv2d(cfg.dec_channels(j), 2 * gen_cfg.channels(j), 1)
            with torch.no_grad():
                head.weight.zero_()
                head.bias.zero_()
            keep_init(head.weight)
            keep_init(head.bias)
            heads.append(head)
        self.heads = nn.ModuleList(heads)

    def encode_t(self, x: torch.Tensor) -> tuple[list[torch.Tensor], torch.Tensor]:
        f = F.leaky_relu(self.enc0(x), LRELU_SLOPE)
        feats = [f]
        for conv in self.encs:
            f = F.leaky_relu(conv(F.avg_pool2d(f, 2)), LRELU_SLOPE)
            feats.append(f)
        z = self.latent(f.flatten(1))
        return feats, z

    def decode_t(self, feats: list[torch.Tensor]) -> list[torch.Tensor]:
        n = self.cfg.n_down
        if len(feats) != n + 1:
            raise ValueError(f"expected {n + 1} encoder features, got {len(feats)}")
        d = F.leaky_relu(self.dec0(feats[n]), LRELU_SLOPE)
        mods = [self.heads[0](d)]
        for j in range(1, n + 1):
            up = self.ups[j - 1](d)
            d = F.leaky_relu(self.decs[j - 1](up), LRELU_SLOPE) + feats[n - j]
            mods.append(self.heads[j](d))
        return mods

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        feats, z = self.encode_t(x)
        return z, self.decode_t(feats)


def build_projection(cfg: ProjectionConfig, gen_cfg: GeneratorConfig,
                     rng: RngStream) -> ProjectionNet:
    net = ProjectionNet(cfg, gen_cfg)
    init_params(net, rng.fork("projection"))
    return net


def _check_input(net: ProjectionNet, thermal: Image) -> torch.Tensor:
    cfg = net.cfg
    if thermal.color_space != GRAYSCALE or thermal.channels != cfg.in_channels:
        raise ValueError("projection input must be a 1-channel grayscale image")
    if thermal.height != cfg.resolution or thermal.width != cfg.resolution:
        raise ValueError(
            f"projection input must be {cfg.resolution}x{cfg.resolution}, "
            f"got {thermal.height}x{thermal.width}"
        )
    return to_tensor(thermal.array).unsqueeze(0)


def encode(net: ProjectionNet, thermal: Image) -> tuple[EncoderPyramid, LatentCode]:
    x = _check_input(net, thermal)
    with torch.no_grad():
        feats, z = net.encode_t(x)
    return EncoderPyramid([to_numpy(f[0]) for f in feats]), LatentCode(to_numpy(z[0]))


def decode(net: ProjectionNet, pyr: EncoderPyramid) -> ModulationPyramid:
    feats = [to_tensor(f).unsqueeze(0) for f in pyr.features]
    expect = len(net.encs) + 1
    if len(feats) != expect:
        raise ValueError(f"encoder pyramid has {len(feats)} levels, expected {expect}")
    with torch.no_grad():
        mods = net.decode_t(feats)
    return ModulationPyramid([to_numpy(m[0]) for m in mods])


def project(net: ProjectionNet, thermal: Image) -> tuple[LatentCode, ModulationPyramid]:
    x = _check_input(net, thermal)
    with torch.no_grad():
        z, mods = net(x)
    return LatentCode(to_numpy(z[0])), ModulationPyramid([to_numpy(m[0]) for m in mods])


def projection_checkpoint(net: ProjectionNet, **metadata: str) -> Checkpoint:
    cfg = net.cfg
    meta = {
        "kind": "projection",
        "projection.resolution": str(cfg.resolution),
        "projection.in_channels": str(cfg.in_channels),
        "projection.base_channels": str(cfg.base_channels),
        "projection.max_channels": str(cfg.max_channels),
        "projection.latent_dim": str(cfg.latent_dim),
        "projection.kernel_size": str(cfg.kernel_size),
    }
    meta.update({k: str(v) for k, v in metadata.items()})
    return Checkpoint(entries=state_entries(net, "projection"), metadata=meta)


def save_projection(net: ProjectionNet, path, **metadata: str) -> None:
    save_checkpoint(projection_checkpoint(net, **metadata), path)


def load_projection(path, gen_cfg: GeneratorConfig) -> ProjectionNet:
    ckpt = load_checkpoint(path)
    if ckpt.metadata.get("kind") != "projection":
        raise CheckpointIntegrityError(f"{path}: not a projection checkpoint")
    meta = ckpt.metadata
    try:
        cfg = ProjectionConfig(
            resolution=int(meta["projection.resolution"]),
            in_channels=int(meta["projection.in_channels"]),
            base_channels=int(meta["projection.base_channels"]),
            max_channels=int(meta["projection.max_channels"]),
            latent_dim=int(meta["projection.latent_dim"]),
            kernel_size=int(meta["projection.kernel_size"]),
        )
    except KeyError as exc:
        raise CheckpointIntegrityError(f"checkpoint metadata missing {exc}") from exc
    net = ProjectionNet(cfg, gen_cfg)
    load_state_entries(net, ckpt, "projection")
    return net
