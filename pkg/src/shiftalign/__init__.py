"""Flow-aligned temporal feature shifting for video inpainting, at desk scale."""

__version__ = "0.1.0"
