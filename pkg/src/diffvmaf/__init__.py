"""Differentiable VMAF with reverse-mode gradients and filter learning."""

__version__ = "0.1.0"
