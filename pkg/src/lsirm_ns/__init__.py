"""Latent space item response modelling with Neyman-Scott item clustering.

Respondents and items are embedded in a shared two-dimensional map by MCMC
on the latent space item response model. Posterior draws are aligned by
Procrustes matching, and item positions are grouped by fitting a Thomas
cluster process with birth-death MCMC.
"""

__version__ = "0.1.0"
