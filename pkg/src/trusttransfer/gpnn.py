"""Hybrid GP-neural trust model.

The pseudo-observation GP update is kept intact except for the mean
coefficients, which receive an extra learned residual::

    alpha_t = alpha_{t-1} + g1 (C_{t-1} k_t + e_t) + u(alpha_{t-1}, C_{t-1} k_t, z_{t-1}, c_{t-1})

``u`` is a feed-forward tanh network. Its inputs are zero-padded to a fixed
basis capacity and its output is truncated to the current basis length.
"""
from __future__ import annotations

from typing import NamedTuple

import jax.numpy as jnp

from . import gp
from .kernel import project
from .neural import init_mlp, mlp_apply


class GPNNParams(NamedTuple):
    gp: gp.GPParams
    residual: tuple  # of neural.Dense

    @property
    def capacity(self):
        return self.residual[-1].weight.shape[0]


def init_residual(rng, latent_dim, capacity=4, hidden=20, zero_output=True):
    """Residual net with the output layer zeroed so training starts from the pure GP update."""
    n_in = 2 * capacity + latent_dim + 1
    return init_mlp(rng, (n_in, hidden, hidden, capacity), zero_last=zero_output)


def _pad(v, length):
    return jnp.pad(v, (0, length - v.shape[0]))


def residual_input(params: GPNNParams, state: gp.GPTrustState, z, c, ck):
    cap = params.capacity
    return jnp.concatenate([_pad(state.alpha, cap), _pad(ck, cap), z, jnp.reshape(jnp.asarray(c, dtype=jnp.float64), (1,))])


def _terms(params: GPNNParams, state, obs):
    n = state.size
    if n + 1 > params.capacity:
        raise ValueError(f"basis of size {n + 1} exceeds residual capacity {params.capacity}")
    gp.check_observation(obs)
    z = project(params.gp.kernel, obs.features)
    terms = gp.bayes_terms(params.gp, state, z, gp.mean_value(params.gp, obs.features), obs.outcome)
    u = mlp_apply(params.residual, residual_input(params, state, z, obs.outcome, terms.ck))[: n + 1]
    return z, terms, u


def init_state(params: GPNNParams) -> gp.GPTrustState:
    return gp.init_state(params.gp)


def gpnn_update(params: GPNNParams, state: gp.GPTrustState, obs) -> gp.GPTrustState:
    z, terms, u = _terms(params, state, obs)
    return gp.extend_state(state, z, terms, alpha_extra=u)


def rollout(params: GPNNParams, state, observations):
    states = [state]
    for obs in observations:
        states.append(gpnn_update(params, states[-1], obs))
    return states


def predict_trust(params: GPNNParams, state, x):
    return gp.predict_trust(params.gp, state, x)


class ComponentNorms(NamedTuple):
    eta_gp: float
    eta_nn: float
    relative: bool  # False when alpha_{t-1} = 0 and absolute norms are reported


def component_norms(params: GPNNParams, state, obs) -> ComponentNorms:
    """Size of the Bayes and residual terms relative to the previous mean coefficients."""
    _, terms, u = _terms(params, state, obs)
    bayes = float(jnp.linalg.norm(terms.g1 * terms.direction))
    resid = float(jnp.linalg.norm(u))
    scale = float(jnp.linalg.norm(state.alpha))
    if scale == 0.0:
        return ComponentNorms(bayes, resid, False)
    return ComponentNorms(bayes / scale, resid / scale, True)
