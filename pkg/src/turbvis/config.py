"""Experiment configuration: dataclasses, presets, and the text config format.

Config files are flat ``section.key = value`` lines (``#`` comments allowed)
whose keys mirror the CLI override flags one-to-one. Every CLI run writes the
resolved config back out next to its outputs, and that snapshot is sufficient
to reproduce the run.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path


def _log2_int(n: int) -> int:
    k = int(n).bit_length() - 1
    if n <= 0 or (1 << k) != n:
        raise ValueError(f"{n} is not a positive power of two")
    return k


@dataclass
class GeneratorConfig:
    """Style-based synthesis network. Level i renders at 4 * 2**i pixels."""

    resolution: int = 64
    base_channels: int = 16
    max_channels: int = 128
    latent_dim: int = 512
    mapping_layers: int = 2
    noise_init: float = 0.1

    @property
    def n_levels(self) -> int:
        return _log2_int(self.resolution) - 1

    def channels(self, level: int) -> int:
        if not 0 <= level < self.n_levels:
            raise ValueError(f"level {level} out of range for {self.n_levels} levels")
        return min(self.max_channels, self.base_channels * 2 ** (self.n_levels - 1 - level))

    def level_resolution(self, level: int) -> int:
        return 4 * 2 ** level

    def validate(self) -> None:
        if self.resolution < 8:
            raise ValueError("generator resolution must be >= 8")
        _log2_int(self.resolution)


@dataclass
class ProjectionConfig:
    """Encoder-decoder that maps a thermal image to (latent, modulations)."""

    resolution: int = 64
    in_channels: int = 1
    base_channels: int = 16
    max_channels: int = 128
    latent_dim: int = 512
    kernel_size: int = 3

    @property
    def n_down(self) -> int:
        """Downsampling layer count; bottleneck is resolution / 2**n_down = 4."""
        return _log2_int(self.resolution) - 2

    @property
    def n_up(self) -> int:
        return self.n_down

    @property
    def bottleneck(self) -> int:
        return self.resolution // 2 ** self.n_down

    def enc_channels(self, i: int) -> int:
        """Channels of encoder feature i (i=0 full resolution, i=n_down bottleneck)."""
        return min(self.max_channels, self.base_channels * 2 ** i)

    def dec_channels(self, j: int) -> int:
        """Channels of decoder level j (j=0 bottleneck); mirrors the encoder."""
        return self.enc_channels(self.n_down - j)


@dataclass
class DegradeConfig:
    """Sampling ranges for the turbulence degradation operator."""

    kernel_size: int = 11
    sigma_min: float = 1.0
    sigma_max: float = 11.0
    anisotropic_prob: float = 0.5
    alpha_min: float = 41.0
    alpha_max: float = 51.0
    beta_min: float = 11.0
    beta_max: float = 21.0
    noise_max: float = 0.02

    def validate(self) -> None:
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ValueError("kernel_size must be odd and positive")
        for lo, hi, name in [
            (self.sigma_min, self.sigma_max, "sigma"),
            (self.alpha_min, self.alpha_max, "alpha"),
            (self.beta_min, self.beta_max, "beta"),
            (0.0, self.noise_max, "noise"),
        ]:
            if lo > hi:
                raise ValueError(f"inverted {name} range [{lo}, {hi}]")
        if self.sigma_min < 0 or self.alpha_min < 0 or self.beta_min <= 0:
            raise ValueError("sigma/alpha must be >= 0 and beta > 0")
        if not 0.0 <= self.anisotropic_prob <= 1.0:
            raise ValueError("anisotropic_prob must lie in [0, 1]")


@dataclass
class LossWeights:
    lambda_adv: float = 1.0
    lambda_per: float = 10.0
    lambda_id: float = 10.0

    def validate(self) -> None:
        if min(self.lambda_adv, self.lambda_per, self.lambda_id) < 0:
            raise ValueError("loss weights must be >= 0")


@dataclass
class TrainConfig:
    batch_size: int = 4
    lr0: float = 2e-3
    lr_halve_at: int = 140_000
    total_iters: int = 150_000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    r1_gamma: float = 10.0
    r1_every: int = 1  # lazy R1: applied every k-th step with gamma scaled by k
    adv_mode: str = "literal"  # "literal": -softplus(D(G)); "standard": softplus(-D(G))
    grad_clip: float = 0.0  # 0 disables
    checkpoint_every: int = 0  # 0: only final
    seed: int = 0

    def validate(self) -> None:
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if not 0 <= self.lr_halve_at <= self.total_iters:
            raise ValueError("lr_halve_at must lie within [0, total_iters]")
        if self.adv_mode not in ("literal", "standard"):
            raise ValueError(f"unknown adv_mode {self.adv_mode!r}")


@dataclass
class PretrainConfig:
    iters: int = 800
    batch_size: int = 8
    lr: float = 2e-3
    r1_gamma: float = 10.0
    r1_every: int = 1


@dataclass
class BackboneConfig:
    """Deterministic random-weight conv backbone used for phi/eta in tests."""

    in_channels: int = 3
    base_channels: int = 16
    n_stages: int = 3
    embed_dim: int = 128
    seed: int = 77


@dataclass
class ExperimentConfig:
    preset: str = "desk64"
    seed: int = 0
    resolution: int = 64
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    degrade: DegradeConfig = field(default_factory=DegradeConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)

    def validate(self) -> None:
        self.generator.validate()
        self.degrade.validate()
        self.loss.validate()
        self.train.validate()
        if self.generator.resolution != self.resolution or self.projection.resolution != self.resolution:
            raise ValueError("generator/projection resolutions must match the experiment resolution")


def desk64() -> ExperimentConfig:
    """CPU-scale 64x64 setup; degradation ranges scale with resolution."""
    s = 64 / 512  # paper ranges target 512-pixel faces
    return ExperimentConfig(
        preset="desk64",
        resolution=64,
        generator=GeneratorConfig(resolution=64, base_channels=16, max_channels=128),
        projection=ProjectionConfig(resolution=64, base_channels=16, max_channels=128),
        degrade=DegradeConfig(
            kernel_size=11,
            sigma_min=0.5,
            sigma_max=2.5,
            alpha_min=41.0 * s,
            alpha_max=51.0 * s,
            beta_min=11.0 * s + 1.0,
            beta_max=21.0 * s + 1.0,
            noise_max=0.02,
        ),
        train=TrainConfig(total_iters=2000, lr_halve_at=1800, checkpoint_every=0, r1_every=4),
        pretrain=PretrainConfig(iters=800, batch_size=8, r1_every=4),
    )


def paper512() -> ExperimentConfig:
    """Full-resolution configuration with the published constants."""
    return ExperimentConfig(
        preset="paper512",
        resolution=512,
        generator=GeneratorConfig(resolution=512, base_channels=32, max_channels=512),
        projection=ProjectionConfig(resolution=512, base_channels=32, max_channels=512),
        degrade=DegradeConfig(
            kernel_size=11,
            sigma_min=1.0,
            sigma_max=11.0,
            alpha_min=41.0,
            alpha_max=51.0,
            beta_min=11.0,
            beta_max=21.0,
        ),
        train=TrainConfig(
            batch_size=4,
            lr0=2e-3,
            lr_halve_at=140_000,
            total_iters=150_000,
            beta1=0.9,
            beta2=0.999,
            eps=1e-8,
        ),
        pretrain=PretrainConfig(iters=100_000, batch_size=8),
    )


PRESETS = {"desk64": desk64, "paper512": paper512}


def get_preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return PRESETS[name]()


# --- flat text serialization -------------------------------------------------

def _flatten(obj, prefix: str = "") -> dict[str, object]:
    out: dict[str, object] = {}
    for f in fields(obj):
        value = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if is_dataclass(value):
            out.update(_flatten(value, prefix=f"{key}."))
        else:
            out[key] = value
    return out


def to_text(cfg: ExperimentConfig) -> str:
    lines = [f"{k} = {v}" for k, v in _flatten(cfg).items()]
    return "\n".join(lines) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(to_text(cfg).encode("utf-8")).hexdigest()[:16]


def _coerce(raw: str, target_type: type):
    if target_type is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"cannot parse boolean from {raw!r}")
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    return raw


def apply_override(cfg: ExperimentConfig, key: str, raw_value: str) -> ExperimentConfig:
    """Set a dotted key such as ``train.batch_size`` from its text value."""
    parts = key.split(".")
    target = cfg
    chain = [cfg]
    for part in parts[:-1]:
        if not hasattr(target, part):
            raise KeyError(f"unknown config section {part!r} in {key!r}")
        target = getattr(target, part)
        chain.append(target)
    leaf = parts[-1]
    match = [f for f in fields(target) if f.name == leaf]
    if not match:
        raise KeyError(f"unknown config key {key!r}")
    value = _coerce(raw_value, match[0].type if isinstance(match[0].type, type)
                    else type(getattr(target, leaf)))
    updated = replace(target, **{leaf: value})
    # rebuild the chain immutably from the leaf outward
    for parent, part in zip(reversed(chain[:-1]), reversed(parts[:-1])):
        updated = replace(parent, **{part: updated})
    return updated


def from_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base if base is not None else ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        cfg = apply_override(cfg, key, raw)
    return cfg


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(to_text(cfg))


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    return from_text(Path(path).read_text(), base=base)
