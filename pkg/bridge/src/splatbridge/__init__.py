"""Oracle-protocol bridge: serves diffusion-guided editing, noise
prediction, monocular depth, and perceptual distance over stdio."""

__version__ = "0.1.0"
