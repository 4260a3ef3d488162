"""Desk-scale wearable-sensor modeling lab.

Synthetic minutely multi-channel corpora, masked-autoencoder pretraining on
a small from-scratch autodiff core, generative evaluation against classical
imputation baselines, daily-metric recovery, engineered circadian features,
linear probing with person-independent cross-validation, and exact linear
SHAP attribution. One CLI (`sensorlab`) drives the whole pipeline and every
stage is deterministic under a seed.
"""

__version__ = "0.1.0"

__all__ = [
    "autodiff",
    "channels",
    "curation",
    "features",
    "geneval",
    "interpret",
    "kernels",
    "masking",
    "metrics",
    "model",
    "optim",
    "pretrain",
    "probe",
    "recovery",
    "streamio",
    "synth",
]
