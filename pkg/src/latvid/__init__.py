"""Latent-space video inpainting inverse solver with toy generative priors."""

__version__ = "0.1.0"
