"""Likelihood-free posterior simulation with conditional Wasserstein GANs."""
