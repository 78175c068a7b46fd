"""Thermal-to-visible face reconstruction under atmospheric turbulence.

Pipeline pieces: a seeded turbulence degradation simulator, a style-based
generator whose frozen synthesis layers are steered by per-level feature
modulation, an encoder-decoder projection module that maps degraded thermal
inputs to a latent code plus modulation features, the composite training
objective, and an image-quality / face-verification evaluation harness.

Everything runs on CPU at desk scale (64x64) on procedurally generated
paired faces; the paper-faithful 512x512 configuration is available as the
``paper512`` preset.
"""

from turbvis.rng import RngStream, make_rng

__all__ = ["RngStream", "make_rng"]

__version__ = "0.1.0"
