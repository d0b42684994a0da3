"""Model registry: parameter sets, unpacking and batched trust predictions.

A parameter set is a flat ``dict[str, array]`` holding every trainable array in
unconstrained form (log noise, logit initial trust, ...). ``unpack`` turns it
into the model objects used by the per-model modules, and
``batch_predictions`` rolls out every participant and reads trust at each
target slot of a :class:`~trusttransfer.data.TrialBatch`.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import jax
import jax.numpy as jnp
import numpy as np

from . import baselines, gp, gpnn, neural
from .kernel import ProjectionKernel, init_projection

MODEL_NAMES = ("gp", "pmgp", "pogp", "rnn", "gpnn", "lg", "ct")
GP_FAMILY = ("gp", "pmgp", "pogp", "gpnn")


@dataclass(frozen=True)
class ModelSpec:
    name: str
    latent_dim: int = 3
    rnn_latent: int = 30
    task_hidden: int = 15
    perf_dim: int = 5
    rnn_layers: int = 2
    residual_hidden: int = 20
    capacity: int = 4
    learn_lengthscales: bool = False

    def __post_init__(self):
        if self.name not in MODEL_NAMES:
            raise ValueError(f"unknown model {self.name!r}; choose from {', '.join(MODEL_NAMES)}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _put_mlp(params, prefix, layers):
    for i, layer in enumerate(layers):
        params[f"{prefix}.{i}.weight"] = np.asarray(layer.weight)
        params[f"{prefix}.{i}.bias"] = np.asarray(layer.bias)


def _get_mlp(params, prefix):
    layers, i = [], 0
    while f"{prefix}.{i}.weight" in params:
        layers.append(neural.Dense(params[f"{prefix}.{i}.weight"], params[f"{prefix}.{i}.bias"]))
        i += 1
    return tuple(layers)


def init_params(spec: ModelSpec, d: int, seed=0) -> dict:
    rng = np.random.default_rng(seed)
    p: dict[str, np.ndarray] = {}
    name = spec.name
    if name in GP_FAMILY:
        p["projection"] = init_projection(rng, d, spec.latent_dim)
        if spec.learn_lengthscales:
            p["log_lengthscales"] = np.zeros(spec.latent_dim)
        p["log_noise"] = np.zeros(())
        if name == "gp":
            p["c0"] = np.zeros(())
        elif name == "pmgp":
            p["beta"] = np.zeros(d)
        else:
            p["zplus"] = rng.normal(0, 0.5, size=spec.latent_dim)
            p["zminus"] = rng.normal(0, 0.5, size=spec.latent_dim)
        if name == "gpnn":
            _put_mlp(p, "residual", gpnn.init_residual(rng, spec.latent_dim, spec.capacity, spec.residual_hidden))
    elif name == "rnn":
        model = neural.init_model(rng, d, spec.rnn_latent, spec.task_hidden, spec.perf_dim, spec.rnn_layers)
        _put_mlp(p, "task_net", model.task_net)
        _put_mlp(p, "perf_net", model.perf_net)
        for l, layer in enumerate(model.layers):
            for field, value in layer._asdict().items():
                p[f"gru.{l}.{field}"] = np.asarray(value)
        for l, h in enumerate(model.h0):
            p[f"h0.{l}"] = np.asarray(h)
    elif name == "lg":
        p["w"] = np.array([1.0, 0.0, 0.0])
        p["log_noise_var"] = np.zeros(())
        p["logit_tau0"] = np.zeros(())
    else:
        p["logit_tau0"] = np.zeros(())
    return p


def unpack(spec: ModelSpec, params):
    name = spec.name
    if name in GP_FAMILY:
        proj = params["projection"]
        ls = jnp.exp(params["log_lengthscales"]) if "log_lengthscales" in params else jnp.ones(proj.shape[1])
        kernel = ProjectionKernel(proj, ls)
        if name == "gp":
            mean = gp.ConstantMean(params["c0"])
        elif name == "pmgp":
            mean = gp.LinearMean(params["beta"])
        else:
            mean = gp.PseudoMean(params["zplus"], params["zminus"])
        gparams = gp.GPParams(kernel, mean, jnp.exp(params["log_noise"]))
        if name == "gpnn":
            return gpnn.GPNNParams(gparams, _get_mlp(params, "residual"))
        return gparams
    if name == "rnn":
        layers, l = [], 0
        while f"gru.{l}.w_update" in params:
            layers.append(neural.GRULayer(*(params[f"gru.{l}.{f}"] for f in neural.GRULayer._fields)))
            l += 1
        h0 = tuple(params[f"h0.{i}"] for i in range(len(layers)))
        return neural.NeuralTrustModel(_get_mlp(params, "task_net"), _get_mlp(params, "perf_net"), tuple(layers), h0)
    if name == "lg":
        return baselines.LGParams(params["w"], jnp.exp(params["log_noise_var"]), jax.nn.sigmoid(params["logit_tau0"]))
    return baselines.CTParams(jax.nn.sigmoid(params["logit_tau0"]))


_MODULES = {"gp": gp, "pmgp": gp, "pogp": gp, "gpnn": gpnn, "rnn": neural}


def initial_state(spec: ModelSpec, model):
    return _MODULES[spec.name].init_state(model)


def step(spec: ModelSpec, model, state, obs):
    """One Markovian trust update for the feature-aware models."""
    if spec.name == "gpnn":
        return gpnn.gpnn_update(model, state, obs)
    if spec.name == "rnn":
        return neural.trust_step(model, state, obs)
    return gp.update(model, state, obs)


def trust(spec: ModelSpec, model, state, x):
    return _MODULES[spec.name].predict_trust(model, state, x)


def participant_trust(spec: ModelSpec, model, obs_x, obs_c, tgt_x):
    """Trust at every target task after 0..S observations, shape (S + 1, Q)."""
    n_steps, n_targets = obs_x.shape[0], tgt_x.shape[0]
    if spec.name == "ct":
        return jnp.full((n_steps + 1, n_targets), baselines.ct_predict(model))
    if spec.name == "lg":
        taus = jnp.stack(baselines.lg_rollout(model, [obs_c[s] for s in range(n_steps)]))
        return jnp.broadcast_to(taus[:, None], (n_steps + 1, n_targets))
    state = initial_state(spec, model)
    rows = []
    for s in range(n_steps + 1):
        rows.append(jax.vmap(lambda x: trust(spec, model, state, x))(tgt_x))
        if s < n_steps:
            state = step(spec, model, state, gp.Observation(obs_x[s], obs_c[s], s))
    return jnp.stack(rows)


def batch_predictions(spec: ModelSpec, params, obs_x, obs_c, tgt_x, tgt_step):
    """Predicted trust for every target slot, shape (P, Q)."""
    model = unpack(spec, params)
    per = jax.vmap(lambda ox, oc, tx: participant_trust(spec, model, ox, oc, tx))(obs_x, obs_c, tgt_x)
    return jnp.take_along_axis(per, tgt_step[:, None, :], axis=1)[:, 0, :]
