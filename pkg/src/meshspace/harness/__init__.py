"""Experiment plumbing: synthetic data, model assembly, training, metrics, CLI."""

from .config import RunConfig, full_scale
from .model import HandNet, build_model, load_checkpoint, save_checkpoint
