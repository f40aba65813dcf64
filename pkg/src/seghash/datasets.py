"""Synthetic paired embeddings for desk-scale experiments."""

from __future__ import annotations

import numpy as np


def make_paired_embeddings(
    n_samples: int = 1000,
    dim: int = 128,
    n_clusters: int = 10,
    noise: float = 0.5,
    cluster_std: float = 1.0,
    center_scale: float = 1.0,
    random_state: int = 0,
):
    """Matched code/query embeddings around shared cluster centers.

    Each pair i draws a latent point ``center[cluster_i] + cluster_std * z_i``;
    the code and the query are that latent plus independent Gaussian noise of
    scale `noise`. With ``noise=0`` the two modalities are identical.

    Returns (code_X, query_X, cluster_labels).
    """
    if n_samples < 1 or dim < 1 or n_clusters < 1:
        raise ValueError("n_samples, dim and n_clusters must be positive")
    if noise < 0 or cluster_std < 0:
        raise ValueError("noise and cluster_std must be non-negative")
    rng = np.random.default_rng(random_state)
    centers = rng.standard_normal((n_clusters, dim)) * center_scale
    labels = rng.integers(0, n_clusters, size=n_samples)
    latent = centers[labels] + cluster_std * rng.standard_normal((n_samples, dim))
    code_X = latent + noise * rng.standard_normal((n_samples, dim))
    query_X = latent + noise * rng.standard_normal((n_samples, dim))
    return code_X, query_X, labels
