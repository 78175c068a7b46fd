"""Optimization loop: alternating discriminator/projection updates against a
frozen generator, plus unconditional pretraining of the toy generator.

Determinism contract: given (seed, config, dataset) the loss log is
bit-reproducible, and resuming from a saved training state continues the
exact trajectory. All randomness is drawn from labelled streams keyed by the
iteration number (``iter{n}/...``), never from stateful global RNGs, and the
optimizer keeps explicit first/second moments that serialize losslessly into
the checkpoint format. Training runs single-threaded torch for run-to-run
bit equality.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from turbvis.backbones import IDENTITY, PERCEPTUAL, EmbeddingBackbone, make_test_backbone
from turbvis.checkpoint import Checkpoint, CheckpointIntegrityError, load_checkpoint, save_checkpoint
from turbvis.config import ExperimentConfig, TrainConfig, config_hash
from turbvis.data import BatchStream, PairedDataset, VisibleStream
from turbvis.generator import (
    SynthesisState,
    build_synthesis,
    freeze,
    load_pretrained,
    save_pretrained,
)
from turbvis.netutil import batch_noise, to_numpy, to_tensor
from turbvis.objectives import (
    Discriminator,
    LossReport,
    build_discriminator,
    discriminator_loss_t,
    generator_loss_t,
)
from turbvis.projection import ProjectionNet, build_projection, save_projection
from turbvis.rng import RngStream, make_rng

LOG_HEADER = "iter,lr,total,adv,pixel,perceptual,identity"


class Adam:
    """Adam with explicit, checkpoint-serializable moments."""

    def __init__(self, params: dict[str, torch.nn.Parameter],
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: torch.zeros_like(p) for k, p in self.params.items()}
        self.v = {k: torch.zeros_like(p) for k, p in self.params.items()}
        self.step_count = 0

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    @torch.no_grad()
    def step(self, lr: float) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[k], self.v[k]
            m.mul_(self.beta1).add_(g, alpha=1.0 - self.beta1)
            v.mul_(self.beta2).addcmul_(g, g, value=1.0 - self.beta2)
            p.addcdiv_(m / bc1, (v / bc2).sqrt().add_(self.eps), value=-lr)

    def state_entries(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for k in self.params:
            out[f"{prefix}.m.{k}"] = to_numpy(self.m[k])
            out[f"{prefix}.v.{k}"] = to_numpy(self.v[k])
        return out

    def load_state_entries(self, ckpt: Checkpoint, prefix: str, step_count: int) -> None:
        for k in self.params:
            self.m[k] = to_tensor(ckpt.require(f"{prefix}.m.{k}")).reshape_as(self.m[k])
            self.v[k] = to_tensor(ckpt.require(f"{prefix}.v.{k}")).reshape_as(self.v[k])
        self.step_count = int(step_count)


def lr_schedule(iteration: int, cfg: TrainConfig) -> float:
    """Step schedule: lr0 before ``lr_halve_at`` iterations, then lr0/2."""
    if not 0 <= iteration < cfg.total_iters:
        raise ValueError(f"iteration {iteration} outside [0, {cfg.total_iters})")
    return cfg.lr0 if iteration < cfg.lr_halve_at else cfg.lr0 / 2.0


@dataclass
class TrainState:
    iteration: int
    projection: ProjectionNet
    discriminator: Discriminator
    generator: SynthesisState
    opt_proj: Adam
    opt_disc: Adam
    cfg: ExperimentConfig
    rng: RngStream
    phi: EmbeddingBackbone
    eta: EmbeddingBackbone


def _named_trainable(net: torch.nn.Module) -> dict[str, torch.nn.Parameter]:
    return {k: p for k, p in net.named_parameters() if p.requires_grad}


def build_train_state(cfg: ExperimentConfig, generator: SynthesisState,
                      phi: EmbeddingBackbone | None = None,
                      eta: EmbeddingBackbone | None = None) -> TrainState:
    if not generator.frozen:
        raise RuntimeError("generator must be frozen before training the projection")
    rng = make_rng(cfg.train.seed)
    projection = build_projection(cfg.projection, cfg.generator, rng.fork("init"))
    discriminator = build_discriminator(cfg.generator, rng.fork("init"))
    tc = cfg.train
    return TrainState(
        iteration=0,
        projection=projection,
        discriminator=discriminator,
        generator=generator,
        opt_proj=Adam(_named_trainable(projection), tc.beta1, tc.beta2, tc.eps),
        opt_disc=Adam(_named_trainable(discriminator), tc.beta1, tc.beta2, tc.eps),
        cfg=cfg,
        rng=rng,
        phi=phi or make_test_backbone(PERCEPTUAL, cfg.backbone),
        eta=eta or make_test_backbone(IDENTITY, cfg.backbone),
    )


def _affine01(raw: torch.Tensor) -> torch.Tensor:
    # image-space output head used by the losses; clamping happens only at
    # PNG emission so gradients stay alive everywhere
    return 0.5 * raw + 0.5


def train_step(state: TrainState, thermal: np.ndarray, visible: np.ndarray) -> LossReport:
    """One discriminator update then one projection update."""
    if not state.generator.frozen:
        raise RuntimeError("refusing to train against a non-frozen generator")
    cfg = state.cfg.train
    n = state.iteration
    lr = lr_schedule(n, cfg)
    gen = state.generator.net
    batch = thermal.shape[0]

    thermal_t = to_tensor(thermal)
    visible_t = to_tensor(visible)
    noise = batch_noise(state.rng.fork(f"iter{n}/noise"), gen.noise_shapes(), batch)

    # discriminator update; R1 is applied lazily every r1_every steps with
    # gamma scaled by the interval
    gamma = cfg.r1_gamma * cfg.r1_every if n % max(cfg.r1_every, 1) == 0 else 0.0
    with torch.no_grad():
        z, mods = state.projection(thermal_t)
        fake = _affine01(gen(z, noise, mods))
    d_loss = discriminator_loss_t(state.discriminator, visible_t, fake, gamma)
    state.opt_disc.zero_grad()
    d_loss.backward()
    state.opt_disc.step(lr)

    # projection update; discriminator weights are unhooked, generator frozen
    for p in state.discriminator.parameters():
        p.requires_grad_(False)
    z, mods = state.projection(thermal_t)
    fake = _affine01(gen(z, noise, mods))
    total, report = generator_loss_t(visible_t, fake, state.discriminator,
                                     state.phi, state.eta, state.cfg.loss, cfg.adv_mode)
    state.opt_proj.zero_grad()
    total.backward()
    if cfg.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(state.projection.parameters(), cfg.grad_clip)
    state.opt_proj.step(lr)
    for p in state.discriminator.parameters():
        p.requires_grad_(True)

    state.iteration += 1
    return report


def train_state_checkpoint(state: TrainState) -> Checkpoint:
    entries = {}
    entries.update({f"projection.{k}": to_numpy(v)
                    for k, v in state.projection.state_dict().items()})
    entries.update({f"discriminator.{k}": to_numpy(v)
                    for k, v in state.discriminator.state_dict().items()})
    entries.update(state.opt_proj.state_entries("opt_proj"))
    entries.update(state.opt_disc.state_entries("opt_disc"))
    meta = {
        "kind": "train_state",
        "iteration": str(state.iteration),
        "opt_proj.step": str(state.opt_proj.step_count),
        "opt_disc.step": str(state.opt_disc.step_count),
        "seed": str(state.cfg.train.seed),
        "config_hash": config_hash(state.cfg),
    }
    return Checkpoint(entries=entries, metadata=meta)


def restore_train_state(state: TrainState, path) -> TrainState:
    ckpt = load_checkpoint(path)
    if ckpt.metadata.get("kind") != "train_state":
        raise CheckpointIntegrityError(f"{path}: not a training state checkpoint")
    proj_state = {k: to_tensor(ckpt.require(f"projection.{k}"))
                  for k in state.projection.state_dict()}
    state.projection.load_state_dict(proj_state)
    disc_state = {k: to_tensor(ckpt.require(f"discriminator.{k}"))
                  for k in state.discriminator.state_dict()}
    state.discriminator.load_state_dict(disc_state)
    state.opt_proj.params = _named_trainable(state.projection)
    state.opt_disc.params = _named_trainable(state.discriminator)
    state.opt_proj.load_state_entries(ckpt, "opt_proj", ckpt.metadata["opt_proj.step"])
    state.opt_disc.load_state_entries(ckpt, "opt_disc", ckpt.metadata["opt_disc.step"])
    state.iteration = int(ckpt.metadata["iteration"])
    return state


def _format_log_line(iteration: int, lr: float, report: LossReport) -> str:
    vals = [report.total, report.adv, report.pixel, report.perceptual, report.identity]
    return f"{iteration},{lr:.9g}," + ",".join(f"{v:.9g}" for v in vals)


def train(cfg: ExperimentConfig, dataset: PairedDataset, generator_ckpt, out_dir,
          resume_from=None, phi: EmbeddingBackbone | None = None,
          eta: EmbeddingBackbone | None = None,
          color_adjust_visible: bool = False) -> dict[str, Path]:
    """Run the full loop; returns paths of the final checkpoints and log."""
    if not dataset.records:
        raise ValueError("dataset is empty")
    torch.set_num_threads(1)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    generator = freeze(load_pretrained(generator_ckpt))
    if generator.config.resolution != cfg.resolution:
        raise ValueError("generator checkpoint resolution does not match config")
    state = build_train_state(cfg, generator, phi=phi, eta=eta)
    if resume_from is not None:
        restore_train_state(state, resume_from)

    batches = BatchStream(dataset, cfg.degrade, cfg.train.batch_size,
                          state.rng.fork("data"),
                          color_adjust_visible=color_adjust_visible)
    log_path = out_dir / "train_log.csv"
    mode = "a" if (resume_from is not None and log_path.exists()) else "w"
    frozen_checksum = generator.checksum()
    started = time.monotonic()
    with open(log_path, mode) as log:
        if mode == "w":
            log.write(LOG_HEADER + "\n")
        for n in range(state.iteration, cfg.train.total_iters):
            thermal, visible = batches.batch(n)
            report = train_step(state, thermal, visible)
            log.write(_format_log_line(n + 1, lr_schedule(n, cfg.train), report) + "\n")
            if cfg.train.checkpoint_every and (n + 1) % cfg.train.checkpoint_every == 0:
                save_checkpoint(train_state_checkpoint(state),
                                out_dir / f"train_state_{n + 1:07d}.ckpt")
    if generator.checksum() != frozen_checksum:
        raise RuntimeError("frozen generator weights changed during training")

    state_path = out_dir / "train_state.ckpt"
    save_checkpoint(train_state_checkpoint(state), state_path)
    proj_path = out_dir / "projection.ckpt"
    save_projection(state.projection, proj_path, iteration=str(state.iteration),
                    config_hash=config_hash(cfg))
    return {
        "projection": proj_path,
        "train_state": state_path,
        "log": log_path,
        "seconds": time.monotonic() - started,
    }


def pretrain_generator(cfg: ExperimentConfig, dataset: PairedDataset, out_path,
                       color_adjust_visible: bool = False) -> Path:
    """Unconditional GAN pretraining of the synthesis network on visible
    images; the result is loadable by ``load_pretrained`` and then frozen."""
    if not dataset.records:
        raise ValueError("dataset is empty")
    torch.set_num_threads(1)
    pc = cfg.pretrain
    rng = make_rng(cfg.train.seed).fork("pretrain")
    gen_state = build_synthesis(cfg.generator, rng.fork("init"))
    gen = gen_state.net
    disc = build_discriminator(cfg.generator, rng.fork("init"))
    opt_g = Adam(_named_trainable(gen), cfg.train.beta1, cfg.train.beta2, cfg.train.eps)
    opt_d = Adam(_named_trainable(disc), cfg.train.beta1, cfg.train.beta2, cfg.train.eps)
    stream = VisibleStream(dataset, pc.batch_size, rng.fork("data"),
                           color_adjust_visible=color_adjust_visible)

    for n in range(pc.iters):
        real = to_tensor(stream.batch(n))
        z = to_tensor(rng.fork(f"iter{n}/z").normal(
            size=(pc.batch_size, cfg.generator.latent_dim)).astype(np.float32))
        noise = batch_noise(rng.fork(f"iter{n}/noise"), gen.noise_shapes(), pc.batch_size)

        gamma = pc.r1_gamma * pc.r1_every if n % max(pc.r1_every, 1) == 0 else 0.0
        with torch.no_grad():
            fake = _affine01(gen(z, noise))
        d_loss = discriminator_loss_t(disc, real, fake, gamma)
        opt_d.zero_grad()
        d_loss.backward()
        opt_d.step(pc.lr)

        for p in disc.parameters():
            p.requires_grad_(False)
        fake = _affine01(gen(z, noise))
        g_loss = torch.nn.functional.softplus(-disc(fake)).mean()
        opt_g.zero_grad()
        g_loss.backward()
        opt_g.step(pc.lr)
        for p in disc.parameters():
            p.requires_grad_(True)

    out_path = Path(out_path)
    save_pretrained(gen_state, out_path, pretrained="true", iterations=str(pc.iters),
                    config_hash=config_hash(cfg))
    return out_path
