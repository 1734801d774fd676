"""Editable radiance-field scenes: decomposition, two-stream training, editing."""

__version__ = "0.1.0"
