"""Recurrent neural trust model.

Tasks are mapped into a latent space by a small tanh network, outcomes by a
one-layer tanh embedding. A stack of GRU layers consumes ``[z; c_embed]`` after
each observation; the top layer's hidden state is the trust vector ``theta``
and trust in task ``x`` is ``sigmoid(theta . f_z(x))``.
"""
from __future__ import annotations

from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np


class Dense(NamedTuple):
    weight: jnp.ndarray  # (out, in)
    bias: jnp.ndarray  # (out,)


class GRULayer(NamedTuple):
    w_update: jnp.ndarray
    u_update: jnp.ndarray
    b_update: jnp.ndarray
    w_reset: jnp.ndarray
    u_reset: jnp.ndarray
    b_reset: jnp.ndarray
    w_cand: jnp.ndarray
    u_cand: jnp.ndarray
    b_cand: jnp.ndarray


class NeuralTrustModel(NamedTuple):
    task_net: tuple  # of Dense
    perf_net: tuple  # of Dense
    layers: tuple  # of GRULayer
    h0: tuple  # initial hidden state per layer


class NeuralTrustState(NamedTuple):
    hidden: tuple

    @property
    def theta(self):
        return self.hidden[-1]


def glorot(rng: np.random.Generator, fan_out, fan_in):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init_mlp(rng, sizes, zero_last=False) -> tuple:
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == len(sizes) - 2
        w = np.zeros((n_out, n_in)) if (last and zero_last) else glorot(rng, n_out, n_in)
        layers.append(Dense(w, np.zeros(n_out)))
    return tuple(layers)


def mlp_apply(layers, x, out_activation=None):
    """tanh on hidden layers; the last layer is linear unless told otherwise."""
    h = jnp.asarray(x)
    if h.shape[-1] != layers[0].weight.shape[1]:
        raise ValueError(f"input dimension {h.shape[-1]} does not match network input {layers[0].weight.shape[1]}")
    for i, layer in enumerate(layers):
        h = h @ layer.weight.T + layer.bias
        if i < len(layers) - 1:
            h = jnp.tanh(h)
    return out_activation(h) if out_activation is not None else h


def init_gru(rng, n_in, n_hidden) -> GRULayer:
    def pair():
        return glorot(rng, n_hidden, n_in), glorot(rng, n_hidden, n_hidden), np.zeros(n_hidden)

    return GRULayer(*pair(), *pair(), *pair())


def gru_step(layer: GRULayer, h_prev, inp):
    v = jax.nn.sigmoid(layer.w_update @ inp + layer.u_update @ h_prev + layer.b_update)
    r = jax.nn.sigmoid(layer.w_reset @ inp + layer.u_reset @ h_prev + layer.b_reset)
    cand = jnp.tanh(layer.w_cand @ inp + layer.u_cand @ (r * h_prev) + layer.b_cand)
    return (1.0 - v) * h_prev + v * cand


def init_model(rng, d, latent=30, task_hidden=15, perf_dim=5, n_layers=2) -> NeuralTrustModel:
    task_net = init_mlp(rng, (d, task_hidden, latent))
    perf_net = init_mlp(rng, (1, perf_dim))
    sizes = [latent + perf_dim] + [latent] * n_layers
    layers = tuple(init_gru(rng, n_in, n_h) for n_in, n_h in zip(sizes[:-1], sizes[1:]))
    h0 = tuple(np.zeros(latent) for _ in range(n_layers))
    return NeuralTrustModel(task_net, perf_net, layers, h0)


def project_task(model: NeuralTrustModel, x):
    return mlp_apply(model.task_net, x)


def project_performance(model: NeuralTrustModel, c):
    return mlp_apply(model.perf_net, jnp.reshape(jnp.asarray(c, dtype=jnp.float64), (1,)), jnp.tanh)


def init_state(model: NeuralTrustModel) -> NeuralTrustState:
    return NeuralTrustState(tuple(jnp.asarray(h) for h in model.h0))


def trust_step(model: NeuralTrustModel, state: NeuralTrustState, obs) -> NeuralTrustState:
    inp = jnp.concatenate([project_task(model, obs.features), project_performance(model, obs.outcome)])
    hidden = []
    for layer, h in zip(model.layers, state.hidden):
        inp = gru_step(layer, h, inp)
        hidden.append(inp)
    return NeuralTrustState(tuple(hidden))


def rollout(model: NeuralTrustModel, state: NeuralTrustState, observations) -> list[NeuralTrustState]:
    states = [state]
    for obs in observations:
        states.append(trust_step(model, states[-1], obs))
    return states


def predict_trust(model: NeuralTrustModel, state: NeuralTrustState, x):
    return jax.nn.sigmoid(state.theta @ project_task(model, x))
