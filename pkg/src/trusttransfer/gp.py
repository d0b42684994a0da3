"""Online Gaussian-process trust model with a probit likelihood.

The belief over the latent trust function is kept in the natural
parameterization over a growing basis of latent task points::

    mu(x)  = m(x) + alpha^T k(x)
    var(x) = k(x, x) + k(x)^T C k(x)

Each observed outcome adds its task to the basis and applies the moment-matched
(KL-projected) probit update. Trust is the predictive success probability
``Phi(mu / sqrt(noise_sd^2 + var))``.

Three prior variants are supported: a constant mean, a linear mean in the raw
features, and pseudo-observations (a zero mean seeded with one success at
``zplus`` and one failure at ``zminus``, both in latent space).
"""
from __future__ import annotations

from typing import NamedTuple, Union

import jax
import jax.numpy as jnp
from jax.scipy.special import log_ndtr, ndtr
from jax.scipy.stats import norm

from .kernel import ProjectionKernel, latent_kernel, project

MIN_VARIANCE = 1e-12


class ConstantMean(NamedTuple):
    c0: jnp.ndarray


class LinearMean(NamedTuple):
    beta: jnp.ndarray  # (d,)


class PseudoMean(NamedTuple):
    zplus: jnp.ndarray  # (k,)
    zminus: jnp.ndarray  # (k,)


MeanSpec = Union[ConstantMean, LinearMean, PseudoMean]


class GPParams(NamedTuple):
    kernel: ProjectionKernel
    mean: MeanSpec
    noise_sd: jnp.ndarray


class GPTrustState(NamedTuple):
    basis: jnp.ndarray  # (n, k) latent points
    alpha: jnp.ndarray  # (n,)
    cmat: jnp.ndarray  # (n, n)

    @property
    def size(self):
        return self.alpha.shape[0]


class Observation(NamedTuple):
    features: jnp.ndarray
    outcome: float  # +1 success, -1 failure, soft labels in between
    time: int = 0


def _concrete(x):
    return not isinstance(x, jax.core.Tracer)


def check_observation(obs: Observation):
    if _concrete(obs.outcome) and not -1.0 <= float(obs.outcome) <= 1.0:
        raise ValueError(f"outcome must lie in [-1, 1], got {obs.outcome}")


def empty_state(latent_dim: int) -> GPTrustState:
    return GPTrustState(jnp.zeros((0, latent_dim)), jnp.zeros(0), jnp.zeros((0, 0)))


def mean_value(params: GPParams, x):
    mean = params.mean
    if isinstance(mean, LinearMean):
        x = jnp.asarray(x)
        if x.shape[-1] != mean.beta.shape[0]:
            raise ValueError(f"feature dimension {x.shape[-1]} does not match mean weights {mean.beta.shape[0]}")
        return x @ mean.beta
    if isinstance(mean, ConstantMean):
        return jnp.asarray(mean.c0, dtype=jnp.float64)
    return jnp.asarray(0.0)


def probit_coefficients(c, mu, var, noise_sd):
    """First and second derivatives of log E[Phi(c f / noise_sd)] w.r.t. the mean.

    ``f ~ N(mu, var)``. The ratio ``phi/Phi`` is taken in log space so it stays
    finite far into the lower tail.
    """
    s2 = noise_sd**2 + c**2 * var
    s = jnp.sqrt(s2)
    z = c * mu / s
    ratio = jnp.exp(norm.logpdf(z) - log_ndtr(z))
    g1 = c * ratio / s
    g2 = -(c**2) * ratio * (z + ratio) / s2
    return g1, g2


def latent_moments(params: GPParams, state: GPTrustState, z, m):
    """Posterior (mu, var, k-vector) of the latent function at latent point ``z``."""
    kvec = latent_kernel(state.basis, z, params.kernel.lengthscales)
    mu = m + state.alpha @ kvec
    var = 1.0 + kvec @ state.cmat @ kvec
    return mu, jnp.maximum(var, MIN_VARIANCE), kvec


class BayesTerms(NamedTuple):
    ck: jnp.ndarray  # C_{t-1} k_t
    direction: jnp.ndarray  # [C_{t-1} k_t; 1]
    g1: jnp.ndarray
    g2: jnp.ndarray


def bayes_terms(params: GPParams, state: GPTrustState, z, m, c) -> BayesTerms:
    mu, var, kvec = latent_moments(params, state, z, m)
    g1, g2 = probit_coefficients(c, mu, var, params.noise_sd)
    ck = state.cmat @ kvec
    return BayesTerms(ck, jnp.concatenate([ck, jnp.ones(1)]), g1, g2)


def extend_state(state: GPTrustState, z, terms: BayesTerms, alpha_extra=0.0) -> GPTrustState:
    """Append ``z`` to the basis and apply the natural-parameter update."""
    s = terms.direction
    alpha = jnp.concatenate([state.alpha, jnp.zeros(1)]) + terms.g1 * s + alpha_extra
    cmat = jnp.pad(state.cmat, ((0, 1), (0, 1))) + terms.g2 * jnp.outer(s, s)
    basis = jnp.concatenate([state.basis, jnp.reshape(z, (1, -1))], axis=0)
    return GPTrustState(basis, alpha, cmat)


def update_latent(params: GPParams, state: GPTrustState, z, m, c) -> GPTrustState:
    return extend_state(state, z, bayes_terms(params, state, z, m, c))


def init_state(params: GPParams) -> GPTrustState:
    if _concrete(params.noise_sd) and not float(params.noise_sd) > 0:
        raise ValueError(f"noise_sd must be positive, got {params.noise_sd}")
    state = empty_state(params.kernel.latent_dim)
    if isinstance(params.mean, PseudoMean):
        state = update_latent(params, state, params.mean.zplus, 0.0, 1.0)
        state = update_latent(params, state, params.mean.zminus, 0.0, -1.0)
    return state


def predict_latent(params: GPParams, state: GPTrustState, x):
    z = project(params.kernel, x)
    mu, var, _ = latent_moments(params, state, z, mean_value(params, x))
    return mu, var


def predict_trust(params: GPParams, state: GPTrustState, x):
    mu, var = predict_latent(params, state, x)
    return ndtr(mu / jnp.sqrt(params.noise_sd**2 + var))


def update(params: GPParams, state: GPTrustState, obs: Observation) -> GPTrustState:
    check_observation(obs)
    z = project(params.kernel, obs.features)
    return update_latent(params, state, z, mean_value(params, obs.features), obs.outcome)


def rollout(params: GPParams, state: GPTrustState, observations) -> list[GPTrustState]:
    states = [state]
    for obs in observations:
        states.append(update(params, states[-1], obs))
    return states
