"""Multi-instance regression of well-level ATP from microscopy images."""

__version__ = "0.1.0"
