"""Training objective: adversarial + pixel + perceptual + identity terms.

The generator objective combines
``-lambda_adv * mean(softplus(D(Ihat)))`` (the literal form; the standard
non-saturating ``softplus(-D(Ihat))`` is selectable via ``adv_mode``) with
mean-absolute pixel, perceptual-feature, and identity-embedding differences
weighted by (lambda_adv, lambda_per, lambda_id) = (1, 10, 10) by default.
In both adversarial modes the reported total satisfies
``total = -lambda_adv * adv + pixel + lambda_per * perceptual + lambda_id * identity``.

The discriminator trains with softplus logistic losses plus an optional R1
gradient penalty (gamma/2 * E||grad D(real)||^2).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from turbvis.backbones import EmbeddingBackbone
from turbvis.config import GeneratorConfig, LossWeights
from turbvis.generator import LRELU_SLOPE
from turbvis.imageio import Image
from turbvis.netutil import init_params, to_tensor
from turbvis.rng import RngStream


@dataclass
class LossReport:
    """Scalar loss components; adv is the raw adversarial statistic whose
    contribution to the total is -lambda_adv * adv."""

    total: float
    adv: float
    pixel: float
    perceptual: float
    identity: float

    @staticmethod
    def combine(adv: float, pixel: float, perceptual: float, identity: float,
                w: LossWeights) -> "LossReport":
        total = -w.lambda_adv * adv + pixel + w.lambda_per * perceptual + w.lambda_id * identity
        return LossReport(total=total, adv=adv, pixel=pixel,
                          perceptual=perceptual, identity=identity)


class Discriminator(nn.Module):
    """Resolution-mirrored conv net scoring (B, 3, R, R) images."""

    def __init__(self, gen_cfg: GeneratorConfig):
        super().__init__()
        self.cfg = gen_cfg
        n = gen_cfg.n_levels
        chans = [gen_cfg.channels(i) for i in reversed(range(n))]  # fine -> coarse
        self.from_rgb = nn.Conv2d(3, chans[0], 1)
        self.blocks = nn.ModuleList([
            nn.Conv2d(chans[i], chans[min(i + 1, n - 1)], 3, padding=1)
            for i in range(n - 1)
        ])
        self.final_conv = nn.Conv2d(chans[-1], chans[-1], 3, padding=1)
        self.score = nn.Linear(chans[-1] * 16, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        r = self.cfg.resolution
        if x.ndim != 4 or x.shape[1:] != (3, r, r):
            raise ValueError(f"discriminator expects (B, 3, {r}, {r}), got {tuple(x.shape)}")
        h = F.leaky_relu(self.from_rgb(x), LRELU_SLOPE)
        for block in self.blocks:
            h = F.leaky_relu(block(h), LRELU_SLOPE)
            h = F.avg_pool2d(h, 2)
        h = F.leaky_relu(self.final_conv(h), LRELU_SLOPE)
        return self.score(h.flatten(1)).squeeze(1)


def build_discriminator(gen_cfg: GeneratorConfig, rng: RngStream) -> Discriminator:
    net = Discriminator(gen_cfg)
    init_params(net, rng.fork("discriminator"))
    return net


def _require(backbone, name: str):
    if backbone is None:
        raise RuntimeError(f"{name} backbone is not loaded")
    return backbone


def perceptual_distance_t(phi: EmbeddingBackbone, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Sum over tapped layers of the mean absolute feature difference."""
    fa = phi.net.features_t(a)
    fb = phi.net.features_t(b)
    return sum((x - y).abs().mean() for x, y in zip(fa, fb))


def identity_distance_t(eta: EmbeddingBackbone, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return (eta.net.embed_t(a) - eta.net.embed_t(b)).abs().mean()


def adversarial_raw_t(d_net, fake: torch.Tensor, mode: str = "literal") -> torch.Tensor:
    """Raw adversarial statistic; the objective adds -lambda_adv times this."""
    if mode == "literal":
        return F.softplus(d_net(fake)).mean()
    if mode == "standard":
        return -F.softplus(-d_net(fake)).mean()
    raise ValueError(f"unknown adv_mode {mode!r}")


def generator_loss_t(reference: torch.Tensor, generated: torch.Tensor, d_net,
                     phi: EmbeddingBackbone, eta: EmbeddingBackbone, w: LossWeights,
                     adv_mode: str = "literal") -> tuple[torch.Tensor, LossReport]:
    """Differentiable total plus a float report; batch tensors (B, 3, H, W)."""
    if reference.shape != generated.shape:
        raise ValueError(f"shape mismatch {tuple(reference.shape)} vs {tuple(generated.shape)}")
    _require(phi, "perceptual")
    _require(eta, "identity")
    adv = adversarial_raw_t(d_net, generated, adv_mode)
    pixel = (reference - generated).abs().mean()
    perceptual = perceptual_distance_t(phi, reference, generated)
    identity = identity_distance_t(eta, reference, generated)
    total = -w.lambda_adv * adv + pixel + w.lambda_per * perceptual + w.lambda_id * identity
    report = LossReport.combine(float(adv.detach()), float(pixel.detach()),
                                float(perceptual.detach()), float(identity.detach()), w)
    return total, report


def discriminator_loss_t(d_net, real: torch.Tensor, fake: torch.Tensor,
                         r1_gamma: float = 10.0) -> torch.Tensor:
    if real.shape[1:] != fake.shape[1:]:
        raise ValueError(f"shape mismatch {tuple(real.shape)} vs {tuple(fake.shape)}")
    loss = F.softplus(-d_net(real)).mean() + F.softplus(d_net(fake)).mean()
    if r1_gamma > 0:
        real_req = real.detach().requires_grad_(True)
        scores = d_net(real_req)
        (grads,) = torch.autograd.grad(scores.sum(), real_req, create_graph=True)
        r1 = grads.pow(2).sum(dim=(1, 2, 3)).mean()
        loss = loss + 0.5 * r1_gamma * r1
    return loss


# --- image-level wrappers (no grad), used by tests and evaluation ------------

def _img_pair(a: Image, b: Image) -> tuple[torch.Tensor, torch.Tensor]:
    if a.array.shape != b.array.shape:
        raise ValueError(f"shape mismatch {a.array.shape} vs {b.array.shape}")
    return to_tensor(a.array).unsqueeze(0), to_tensor(b.array).unsqueeze(0)


def generator_loss(reference: Image, generated: Image, d_net, phi: EmbeddingBackbone,
                   eta: EmbeddingBackbone, w: LossWeights | None = None,
                   adv_mode: str = "literal") -> LossReport:
    w = w or LossWeights()
    ta, tb = _img_pair(reference.to_rgb(), generated.to_rgb())
    with torch.no_grad():
        _, report = generator_loss_t(ta, tb, d_net, phi, eta, w, adv_mode)
    return report


def discriminator_loss(d_net, real: list[Image] | Image, fake: list[Image] | Image,
                       r1_gamma: float = 10.0) -> float:
    def stack(imgs) -> torch.Tensor:
        imgs = imgs if isinstance(imgs, list) else [imgs]
        return torch.stack([to_tensor(i.to_rgb().array) for i in imgs])

    return float(discriminator_loss_t(d_net, stack(real), stack(fake), r1_gamma))


def perceptual_distance(phi: EmbeddingBackbone, a: Image, b: Image) -> float:
    _require(phi, "perceptual")
    ta, tb = _img_pair(a.to_rgb(), b.to_rgb())
    with torch.no_grad():
        return float(perceptual_distance_t(phi, ta, tb))


def identity_distance(eta: EmbeddingBackbone, a: Image, b: Image) -> float:
    _require(eta, "identity")
    ta, tb = _img_pair(a.to_rgb(), b.to_rgb())
    with torch.no_grad():
        return float(identity_distance_t(eta, ta, tb))
