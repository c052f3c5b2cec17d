"""Denoising masked autoencoder workbench for modulation constellation images.

Everything runs on the CPU from a small numpy-backed autodiff engine:
signal synthesis, constellation rendering, pretraining with a joint
reconstruction + patch-position objective, fine-tuning, and evaluation.
"""

__version__ = "0.1.0"
