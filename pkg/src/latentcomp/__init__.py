"""Training-free latent image composition on pluggable diffusion backends."""

__version__ = "0.1.0"
