"""Spiked Wigner/Wishart matrix estimation under single-layer generative priors."""

__version__ = "0.1.0"
