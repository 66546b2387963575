"""Dense depth estimation for posed equirectangular keyframe sequences."""

__version__ = "0.1.0"
