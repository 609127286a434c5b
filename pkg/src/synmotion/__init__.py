"""Desk-scale speech+prompt motion synthesis engine.

Pipeline: procedurally generated corpora (datagen) -> per-body-part residual
VQ codecs (rvq) -> contrastive text-motion alignment space (align) -> latent
diffusion over summed codes (diffusion) -> separate-then-combine guided
sampling (compose) -> metric suite (evalmetrics). Checkpoints, presets and the
CLI live in persist/config/cli.
"""

__version__ = "0.1.0"
