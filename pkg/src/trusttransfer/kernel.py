"""Low-rank projection kernel over task features.

``k(x, x') = exp(-(x - x')^T M (x - x'))`` with ``M = P diag(L) P^T`` where the
projection ``P`` is ``d x k``. Everything is computed in the projected
coordinates ``z = P^T x``, which gives the same value without forming ``M``.
"""
from __future__ import annotations

from typing import NamedTuple

import jax.numpy as jnp
import numpy as np


class ProjectionKernel(NamedTuple):
    projection: jnp.ndarray  # (d, k)
    lengthscales: jnp.ndarray  # (k,), diagonal of L

    @property
    def input_dim(self):
        return self.projection.shape[0]

    @property
    def latent_dim(self):
        return self.projection.shape[1]


def make_kernel(projection, lengthscales=None) -> ProjectionKernel:
    projection = jnp.asarray(projection, dtype=jnp.float64)
    if projection.ndim != 2:
        raise ValueError(f"projection must be a d x k matrix, got shape {projection.shape}")
    d, k = projection.shape
    if k > d:
        raise ValueError(f"latent dimension {k} exceeds feature dimension {d}")
    if lengthscales is None:
        lengthscales = jnp.ones(k)
    lengthscales = jnp.asarray(lengthscales, dtype=jnp.float64)
    if lengthscales.shape != (k,):
        raise ValueError(f"expected {k} lengthscales, got shape {lengthscales.shape}")
    if not np.all(np.asarray(lengthscales) > 0):
        raise ValueError("lengthscales must be strictly positive")
    return ProjectionKernel(projection, lengthscales)


def init_projection(rng: np.random.Generator, d: int, k: int) -> np.ndarray:
    """I.i.d. Gaussian entries with standard deviation 1/sqrt(d)."""
    return rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, k))


def project(kernel: ProjectionKernel, x):
    x = jnp.asarray(x)
    if x.shape[-1] != kernel.input_dim:
        raise ValueError(f"feature dimension {x.shape[-1]} does not match kernel input {kernel.input_dim}")
    return x @ kernel.projection


def latent_kernel(z1, z2, lengthscales):
    """Kernel between latent points; broadcasts over leading axes."""
    diff = z1 - z2
    return jnp.exp(-jnp.sum(lengthscales * diff * diff, axis=-1))


def evaluate(kernel: ProjectionKernel, x1, x2):
    return latent_kernel(project(kernel, x1), project(kernel, x2), kernel.lengthscales)


def gram(kernel: ProjectionKernel, points):
    z = project(kernel, jnp.atleast_2d(jnp.asarray(points)))
    return latent_kernel(z[:, None, :], z[None, :, :], kernel.lengthscales)


def metric_matrix(kernel: ProjectionKernel):
    """The full-rank-d metric ``M`` (for checks; never needed for evaluation)."""
    return kernel.projection @ jnp.diag(kernel.lengthscales) @ kernel.projection.T
