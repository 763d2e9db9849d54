"""Latent-confounder recovery by low-rank matrix completion for treatment-effect estimation."""
