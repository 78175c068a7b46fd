"""Pluggable feature/identity backbones.

Two roles share one convolutional trunk: the perceptual role exposes feature
maps tapped after every stage, the identity role a pooled embedding vector.
The repo ships a deterministic random-weight backbone (seeded, frozen) so the
perceptual/identity losses, LPIPS-style distance, Deg score, and verification
all run without restricted pretrained weights; externally supplied weights
load through the same checkpoint interface.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from turbvis.checkpoint import Checkpoint, CheckpointIntegrityError, load_checkpoint, save_checkpoint
from turbvis.config import BackboneConfig
from turbvis.generator import LRELU_SLOPE
from turbvis.imageio import Image
from turbvis.netutil import init_params, load_state_entries, state_entries, to_numpy, to_tensor
from turbvis.rng import RngStream

PERCEPTUAL = "perceptual"
IDENTITY = "identity"


class ConvBackbone(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        chans = [min(128, cfg.base_channels * 2 ** i) for i in range(cfg.n_stages)]
        convs = []
        in_ch = cfg.in_channels
        for c in chans:
            convs.append(nn.Conv2d(in_ch, c, 3, padding=1))
            in_ch = c
        self.convs = nn.ModuleList(convs)
        self.embed_head = nn.Linear(in_ch, cfg.embed_dim)

    def features_t(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        for i, conv in enumerate(self.convs):
            if i > 0:
                x = F.avg_pool2d(x, 2)
            x = F.leaky_relu(conv(x), LRELU_SLOPE)
            feats.append(x)
        return feats

    def embed_t(self, x: torch.Tensor) -> torch.Tensor:
        feats = self.features_t(x)
        pooled = feats[-1].mean(dim=(2, 3))
        return self.embed_head(pooled)


@dataclass
class EmbeddingBackbone:
    """A role-tagged backbone; deterministic per (config, seed)."""

    role: str
    net: ConvBackbone
    config: BackboneConfig

    @property
    def tap_names(self) -> list[str]:
        return [f"stage{i}" for i in range(self.config.n_stages)]

    @property
    def embed_dim(self) -> int:
        return self.config.embed_dim

    def _prepare(self, img) -> torch.Tensor:
        if isinstance(img, Image):
            arr = img.to_rgb().array if self.config.in_channels == 3 else img.array
        else:
            arr = np.asarray(img, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[0] != self.config.in_channels:
            raise ValueError(
                f"backbone expects ({self.config.in_channels}, H, W) input, got {arr.shape}"
            )
        return to_tensor(arr).unsqueeze(0)

    def features(self, img) -> list[np.ndarray]:
        with torch.no_grad():
            return [to_numpy(f[0]) for f in self.net.features_t(self._prepare(img))]

    def embed(self, img) -> np.ndarray:
        with torch.no_grad():
            return to_numpy(self.net.embed_t(self._prepare(img))[0])


def make_test_backbone(role: str, cfg: BackboneConfig | None = None) -> EmbeddingBackbone:
    """Random-weight backbone, fully determined by (role, config.seed)."""
    if role not in (PERCEPTUAL, IDENTITY):
        raise ValueError(f"unknown backbone role {role!r}")
    cfg = cfg or BackboneConfig()
    net = ConvBackbone(cfg)
    init_params(net, RngStream(cfg.seed, f"backbone/{role}"))
    for p in net.parameters():
        p.requires_grad_(False)
    net.eval()
    return EmbeddingBackbone(role=role, net=net, config=cfg)


def save_backbone(backbone: EmbeddingBackbone, path) -> None:
    cfg = backbone.config
    meta = {
        "kind": "backbone",
        "backbone.role": backbone.role,
        "backbone.in_channels": str(cfg.in_channels),
        "backbone.base_channels": str(cfg.base_channels),
        "backbone.n_stages": str(cfg.n_stages),
        "backbone.embed_dim": str(cfg.embed_dim),
        "backbone.seed": str(cfg.seed),
    }
    save_checkpoint(Checkpoint(entries=state_entries(backbone.net, "backbone"), metadata=meta), path)


def load_backbone(path) -> EmbeddingBackbone:
    ckpt = load_checkpoint(path)
    if ckpt.metadata.get("kind") != "backbone":
        raise CheckpointIntegrityError(f"{path}: not a backbone checkpoint")
    meta = ckpt.metadata
    try:
        cfg = BackboneConfig(
            in_channels=int(meta["backbone.in_channels"]),
            base_channels=int(meta["backbone.base_channels"]),
            n_stages=int(meta["backbone.n_stages"]),
            embed_dim=int(meta["backbone.embed_dim"]),
            seed=int(meta["backbone.seed"]),
        )
        role = meta["backbone.role"]
    except KeyError as exc:
        raise CheckpointIntegrityError(f"checkpoint metadata missing {exc}") from exc
    net = ConvBackbone(cfg)
    load_state_entries(net, ckpt, "backbone")
    for p in net.parameters():
        p.requires_grad_(False)
    net.eval()
    return EmbeddingBackbone(role=role, net=net, config=cfg)
