"""Contact-aware QP control for stiffness-controlled planar arms."""

__version__ = "0.3.0"
