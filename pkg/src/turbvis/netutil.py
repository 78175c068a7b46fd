"""Glue between numpy-side determinism and torch modules.

All network weights are drawn from :class:`~turbvis.rng.RngStream` forks
keyed by parameter name, so initialization is a pure function of (seed,
architecture) and never touches torch's global RNG.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch
from torch import nn

from turbvis.checkpoint import Checkpoint, CheckpointIntegrityError
from turbvis.rng import RngStream


def to_tensor(arr: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))


def to_numpy(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().astype(np.float32, copy=False)


def _fan_in(shape: tuple[int, ...]) -> int:
    if len(shape) <= 1:
        return max(1, shape[0] if shape else 1)
    return int(np.prod(shape[1:]))


def init_params(module: nn.Module, rng: RngStream) -> None:
    """He-style init, deterministic per parameter name.

    Weights ~ N(0, 1/fan_in); biases zero. Parameters whose data was filled
    by the module itself (zero-initialized heads, noise strengths, constants)
    are skipped when tagged with ``_turbvis_keep_init``.
    """
    for name, param in sorted(module.named_parameters(), key=lambda kv: kv[0]):
        if getattr(param, "_turbvis_keep_init", False):
            continue
        stream = rng.fork(f"param/{name}")
        if param.ndim <= 1:
            values = np.zeros(param.shape, dtype=np.float32)
        else:
            std = 1.0 / np.sqrt(_fan_in(tuple(param.shape)))
            values = stream.normal(size=tuple(param.shape)).astype(np.float32) * np.float32(std)
        with torch.no_grad():
            param.copy_(to_tensor(values))


def keep_init(param: nn.Parameter) -> nn.Parameter:
    """Mark a parameter so :func:`init_params` leaves it alone."""
    param._turbvis_keep_init = True
    return param


def state_entries(module: nn.Module, prefix: str) -> dict[str, np.ndarray]:
    return {f"{prefix}.{k}": to_numpy(v) for k, v in module.state_dict().items()}


def load_state_entries(module: nn.Module, ckpt: Checkpoint, prefix: str) -> None:
    """Load ``prefix.*`` entries into the module, validating names and shapes."""
    state = module.state_dict()
    loaded = {}
    for key, tensor in state.items():
        name = f"{prefix}.{key}"
        if name not in ckpt.entries:
            raise CheckpointIntegrityError(f"checkpoint is missing entry {name!r}")
        arr = ckpt.entries[name]
        if tuple(arr.shape) != tuple(tensor.shape):
            raise CheckpointIntegrityError(
                f"entry {name!r} has shape {arr.shape}, expected {tuple(tensor.shape)}"
            )
        loaded[key] = to_tensor(arr)
    module.load_state_dict(loaded)


def weight_checksum(module: nn.Module) -> str:
    """SHA-256 over all parameters+buffers in name order; bit-level identity."""
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode("utf-8"))
        digest.update(to_numpy(tensor).tobytes())
    return digest.hexdigest()


def batch_noise(rng: RngStream, shapes: list[tuple[int, ...]], batch: int) -> list[torch.Tensor]:
    """Per-sample, per-level standard-normal noise planes.

    Labels are ``sample{k}/level{i}`` under the given stream, so any slice of
    the batch can be regenerated independently.
    """
    levels = []
    for i, shape in enumerate(shapes):
        planes = [
            rng.fork(f"sample{k}/level{i}").normal(size=shape).astype(np.float32)
            for k in range(batch)
        ]
        levels.append(to_tensor(np.stack(planes)))
    return levels
