"""Two-stage point-to-UV texture diffusion on procedural meshes."""

__version__ = "0.1.0"
