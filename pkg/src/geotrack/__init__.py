"""Category-agnostic 3D single-object tracking with a frozen transformer, adapters and geometry experts."""

__version__ = "0.1.0"
