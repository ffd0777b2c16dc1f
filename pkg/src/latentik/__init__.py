"""Full-body motion reconstruction from sparse trackers via latent-space optimization."""

__version__ = "0.1.0"
