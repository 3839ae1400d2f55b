"""Cycle-approximate simulator of a stage-fused multi-lane HGNN accelerator."""

__version__ = "0.1.0"
