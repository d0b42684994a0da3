"""End-to-end training: Bernoulli loss, Adam, early stopping, checkpoints and gradient checks.

Training is full-batch over all participants. Which targets count towards the
training and validation losses is controlled by per-slot weights, so every fold
of an experiment reuses the same array shapes (and the same compiled step).
"""
from __future__ import annotations

import functools
import io
import json
import logging
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np
from jax.flatten_util import ravel_pytree

from . import reference
from .data import TrialBatch
from .models import ModelSpec, batch_predictions, init_params

log = logging.getLogger(__name__)

ADAM_BETA1, ADAM_BETA2, ADAM_EPS = 0.9, 0.999, 1e-8
PRED_EPS = 1e-12
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    max_epochs: int = 500
    validation_fraction: float = 0.15
    patience: int = 20
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie strictly between 0 and 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")
        if self.learning_rate <= 0 or self.patience < 1:
            raise ValueError("learning_rate and patience must be positive")


def bernoulli_nll(predictions, targets):
    """Per-point cross-entropy with soft targets."""
    p = jnp.clip(predictions, PRED_EPS, 1 - PRED_EPS)
    return -(targets * jnp.log(p) + (1 - targets) * jnp.log1p(-p))


def loss(predictions, targets, weights=None):
    """Summed Bernoulli negative log-likelihood of soft targets."""
    predictions, targets = jnp.asarray(predictions), jnp.asarray(targets)
    if predictions.shape != targets.shape:
        raise ValueError(f"predictions {predictions.shape} and targets {targets.shape} differ in shape")
    terms = bernoulli_nll(predictions, targets)
    return jnp.sum(terms if weights is None else weights * terms)


def _batch_args(batch: TrialBatch):
    return (jnp.asarray(batch.obs_x), jnp.asarray(batch.obs_c), jnp.asarray(batch.tgt_x),
            jnp.asarray(batch.tgt_step), jnp.asarray(batch.tgt_y))


@functools.lru_cache(maxsize=None)
def _objective(spec: ModelSpec):
    def objective(params, obs_x, obs_c, tgt_x, tgt_step, tgt_y, weights):
        preds = batch_predictions(spec, params, obs_x, obs_c, tgt_x, tgt_step)
        return loss(preds, tgt_y, weights), preds

    return objective


@functools.lru_cache(maxsize=None)
def _value_and_grad(spec: ModelSpec):
    return jax.jit(jax.value_and_grad(_objective(spec), has_aux=True))


def predict(spec: ModelSpec, params, batch: TrialBatch) -> np.ndarray:
    fn = _objective(spec)
    weights = jnp.zeros(batch.tgt_y.shape)
    return np.asarray(jax.jit(fn)(params, *_batch_args(batch), weights)[1])


def gradient(spec: ModelSpec, params, batch: TrialBatch, weights=None) -> dict:
    """Reverse-mode gradient of the summed loss with respect to every parameter array."""
    if weights is None:
        weights = np.ones(batch.tgt_y.shape)
    (value, _), grads = _value_and_grad(spec)(params, *_batch_args(batch), jnp.asarray(weights))
    if not np.isfinite(float(value)):
        raise FloatingPointError(f"{spec.name}: loss evaluated to {float(value)}")
    for name, g in grads.items():
        if not np.all(np.isfinite(np.asarray(g))):
            raise FloatingPointError(f"{spec.name}: non-finite gradient in parameter block {name!r}")
    return {k: np.asarray(v) for k, v in grads.items()}


class AdamMoments(NamedTuple):
    first: dict
    second: dict


def adam_init(params) -> AdamMoments:
    zeros = jax.tree_util.tree_map(jnp.zeros_like, params)
    return AdamMoments(zeros, zeros)


def adam_step(params, grads, moments: AdamMoments, t, learning_rate):
    """One bias-corrected Adam step; ``t`` counts from 1."""
    first = jax.tree_util.tree_map(lambda m, g: ADAM_BETA1 * m + (1 - ADAM_BETA1) * g, moments.first, grads)
    second = jax.tree_util.tree_map(lambda v, g: ADAM_BETA2 * v + (1 - ADAM_BETA2) * g * g, moments.second, grads)
    c1 = 1 - ADAM_BETA1**t
    c2 = 1 - ADAM_BETA2**t
    new = jax.tree_util.tree_map(
        lambda p, m, v: p - learning_rate * (m / c1) / (jnp.sqrt(v / c2) + ADAM_EPS), params, first, second
    )
    return new, AdamMoments(first, second)


@functools.lru_cache(maxsize=None)
def _train_step(spec: ModelSpec):
    vg = jax.value_and_grad(_objective(spec), has_aux=True)

    @jax.jit
    def train_step(params, moments, t, lr, obs_x, obs_c, tgt_x, tgt_step, tgt_y, w_train, w_val):
        (value, preds), grads = vg(params, obs_x, obs_c, tgt_x, tgt_step, tgt_y, w_train)
        val = jnp.sum(w_val * bernoulli_nll(preds, tgt_y)) / jnp.maximum(jnp.sum(w_val), 1.0)
        finite = jnp.isfinite(value) & jnp.all(jnp.stack([jnp.all(jnp.isfinite(g)) for g in grads.values()]))
        new_params, new_moments = adam_step(params, grads, moments, t, lr)
        return value, val, finite, new_params, new_moments

    return train_step


def split_validation(participants, fraction, seed):
    """Shuffle participant indices and hold out ``round(fraction * n)`` of them."""
    participants = np.asarray(participants)
    n_val = int(round(fraction * len(participants)))
    if n_val < 1 or n_val >= len(participants):
        raise ValueError(
            f"validation split of {fraction} over {len(participants)} participants leaves an empty split"
        )
    order = np.random.default_rng([seed, 7]).permutation(len(participants))
    return np.sort(participants[order[n_val:]]), np.sort(participants[order[:n_val]])


@dataclass
class TrainResult:
    params: dict
    log: list  # one dict per epoch: epoch, train_loss, val_loss
    best_epoch: int
    spec: ModelSpec


def train(spec: ModelSpec, batch: TrialBatch, cfg: TrainConfig = TrainConfig(), participants=None,
          target_mask=None, init=None) -> TrainResult:
    """Fit shared parameters on the given participants and return the best-validation parameters.

    ``participants`` are row indices into ``batch`` available for training (all
    by default); ``target_mask`` (P, Q) marks target slots that may be used.
    """
    n = batch.n_participants
    participants = np.arange(n) if participants is None else np.asarray(participants)
    if len(participants) == 0:
        raise ValueError("no training participants")
    mask = np.ones(batch.tgt_y.shape) if target_mask is None else np.asarray(target_mask, dtype=np.float64)
    train_idx, val_idx = split_validation(participants, cfg.validation_fraction, cfg.seed)
    w_train = np.zeros_like(mask)
    w_val = np.zeros_like(mask)
    w_train[train_idx] = mask[train_idx]
    w_val[val_idx] = mask[val_idx]
    if w_val.sum() == 0:
        raise ValueError("validation split has no usable targets")
    n_train_targets = max(w_train.sum(), 1.0)

    params = init if init is not None else init_params(spec, batch.obs_x.shape[-1], cfg.seed)
    params = {k: jnp.asarray(v, dtype=jnp.float64) for k, v in params.items()}
    moments = adam_init(params)
    step = _train_step(spec)
    args = _batch_args(batch) + (jnp.asarray(w_train), jnp.asarray(w_val))

    best_val, best_params, best_epoch, wait = np.inf, params, 0, 0
    history = []
    for epoch in range(1, cfg.max_epochs + 1):
        value, val, finite, new_params, moments = step(params, moments, epoch, cfg.learning_rate, *args)
        if not bool(finite):
            raise FloatingPointError(f"{spec.name}: non-finite loss or gradient at epoch {epoch}")
        val = float(val)
        history.append({"epoch": epoch, "train_loss": float(value) / n_train_targets, "val_loss": val})
        if val < best_val:
            best_val, best_params, best_epoch, wait = val, params, epoch, 0
        else:
            wait += 1
            if wait >= cfg.patience:
                break
        params = new_params
    result = {k: np.asarray(v) for k, v in best_params.items()}
    if spec.name == "lg":
        result["log_noise_var"] = _lg_noise_mle(spec, result, batch, w_train)
    log.debug("%s: best epoch %d of %d, val %.4f", spec.name, best_epoch, len(history), best_val)
    return TrainResult(result, history, best_epoch, spec)


def _lg_noise_mle(spec, params, batch, weights):
    """Closed-form noise variance of the linear-Gaussian baseline (it does not enter the Bernoulli loss)."""
    preds = predict(spec, params, batch)
    resid2 = weights * (preds - batch.tgt_y) ** 2
    var = resid2.sum() / max(weights.sum(), 1.0)
    return np.asarray(np.log(max(var, 1e-8)))


def finite_difference_gradient(fn, params, step=1e-5, chunk=256, evaluator=None):
    """Central differences of ``fn`` w.r.t. every entry of a parameter dict.

    ``fn`` may return an array of loss terms; their differences are summed, which
    gives the derivative of the total while avoiding the cancellation error of
    differencing one large sum.
    """
    flat, unravel = ravel_pytree({k: jnp.asarray(v) for k, v in params.items()})
    f_flat = evaluator or jax.jit(jax.vmap(lambda v: fn(unravel(v))))
    n = flat.shape[0]
    out = np.empty(n)
    for start in range(0, n, chunk):
        idx = np.arange(start, min(start + chunk, n))
        eye = np.zeros((chunk, n))  # fixed shape: one compilation for every chunk
        eye[np.arange(len(idx)), idx] = step
        diff = np.asarray(f_flat(flat[None, :] + eye)) - np.asarray(f_flat(flat[None, :] - eye))
        diff = diff.reshape(chunk, -1).sum(axis=1)
        out[idx] = diff[: len(idx)] / (2 * step)
    return unravel(jnp.asarray(out))


@functools.lru_cache(maxsize=None)
def _term_evaluator(spec: ModelSpec, shapes: tuple):
    """Compiled batch of per-target loss terms as a function of flattened parameters."""
    _, unravel = ravel_pytree({k: jnp.zeros(s) for k, s in shapes})
    obj = _objective(spec)

    def terms(v, obs_x, obs_c, tgt_x, tgt_step, tgt_y, weights):
        preds = obj(unravel(v), obs_x, obs_c, tgt_x, tgt_step, tgt_y, weights)[1]
        return weights * bernoulli_nll(preds, tgt_y)

    return jax.jit(jax.vmap(terms, in_axes=(0,) + (None,) * 6))


def gradient_pair(spec: ModelSpec, batch: TrialBatch, seed=0, params=None, grad_fn=None, step=1e-5):
    """Analytic and central-difference gradients of the summed loss, as two parameter dicts."""
    if params is None:
        params = perturbed_params(spec, batch.obs_x.shape[-1], seed)
    params = {k: jnp.asarray(v, dtype=jnp.float64) for k, v in params.items()}
    weights = jnp.ones(batch.tgt_y.shape)
    analytic = (grad_fn or gradient)(spec, params, batch, weights)
    args = _batch_args(batch) + (weights,)
    shapes = tuple((k, tuple(v.shape)) for k, v in params.items())
    compiled = _term_evaluator(spec, shapes)
    numeric = finite_difference_gradient(None, params, step, evaluator=lambda vs: compiled(vs, *args))
    return ({k: np.asarray(v) for k, v in analytic.items()}, {k: np.asarray(v) for k, v in numeric.items()})


def relative_error(analytic, numeric, floor=1e-5):
    """Entrywise ``|a - n| / max(|a|, |n|, floor)``; ``floor`` keeps ~0 entries from amplifying round-off."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def gradcheck(spec: ModelSpec, batch: TrialBatch, seed=0, params=None, grad_fn=None, step=1e-5, floor=1e-5,
              recheck_above=1e-5):
    """Max relative error per parameter block between analytic and finite-difference gradients.

    Entries whose float64 difference disagrees by more than ``recheck_above``
    are re-measured (same step) on an extended-precision reference loss where
    one exists; pass ``recheck_above=None`` to skip that.
    """
    if params is None:
        params = perturbed_params(spec, batch.obs_x.shape[-1], seed)
    analytic, numeric = gradient_pair(spec, batch, seed, params, grad_fn, step)
    ref = reference.loss_for(spec, batch, np.ones(batch.tgt_y.shape))
    if ref is not None and recheck_above is not None:
        numeric, n = reference.recheck(analytic, numeric, params, ref, recheck_above, floor, step)
        log.debug("%s: %d entries re-measured in extended precision", spec.name, n)
    return {name: float(relative_error(analytic[name], numeric[name], floor).max()) if analytic[name].size else 0.0
            for name in analytic}


def perturbed_params(spec: ModelSpec, d, seed):
    """Initial parameters with every entry jittered, so no gradient block is trivially zero."""
    params = init_params(spec, d, seed)
    rng = np.random.default_rng([seed, 11])
    out = {}
    for name, value in params.items():
        scale = 0.05 if name == "w" else 0.3
        out[name] = value + rng.normal(0, scale, size=np.shape(value))
    return out


def save_checkpoint(path, spec: ModelSpec, params: dict, extra: dict | None = None):
    """Zip container: ``header.json`` plus one ``.npy`` member per parameter array.

    Member timestamps are fixed so identical inputs give identical bytes.
    """
    header = {
        "format": "trusttransfer-checkpoint",
        "version": CHECKPOINT_VERSION,
        "model": spec.to_dict(),
        "arrays": {k: list(np.shape(v)) for k, v in sorted(params.items())},
        "extra": extra or {},
    }
    path = Path(path)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr(zipfile.ZipInfo("header.json", date_time=(1980, 1, 1, 0, 0, 0)),
                    json.dumps(header, sort_keys=True, indent=1))
        for name in sorted(params):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(params[name], dtype=np.float64), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"arrays/{name}.npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())


class CheckpointError(ValueError):
    pass


def load_checkpoint(path, expected: ModelSpec | None = None, feature_dim: int | None = None):
    """Return ``(spec, params, extra)``; raises CheckpointError on corrupt or mismatched files."""
    try:
        with zipfile.ZipFile(path) as zf:
            header = json.loads(zf.read("header.json"))
            if header.get("format") != "trusttransfer-checkpoint":
                raise CheckpointError(f"{path}: not a trust model checkpoint")
            if header.get("version") != CHECKPOINT_VERSION:
                raise CheckpointError(f"{path}: checkpoint version {header.get('version')} unsupported")
            params = {}
            for name, shape in header["arrays"].items():
                arr = np.lib.format.read_array(io.BytesIO(zf.read(f"arrays/{name}.npy")), allow_pickle=False)
                if list(arr.shape) != shape:
                    raise CheckpointError(f"{path}: array {name!r} has shape {arr.shape}, header says {shape}")
                params[name] = arr
    except (zipfile.BadZipFile, KeyError, EOFError, OSError, json.JSONDecodeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from None
    spec = ModelSpec.from_dict(header["model"])
    if expected is not None:
        d = feature_dim if feature_dim is not None else _feature_dim(spec, params)
        reference = init_params(expected, d, 0)
        if set(reference) != set(params) or any(np.shape(reference[k]) != params[k].shape for k in reference):
            raise CheckpointError(
                f"{path}: parameters for {spec.name!r} do not match the shapes of model {expected.name!r}"
            )
    return spec, params, header.get("extra", {})


def _feature_dim(spec, params):
    if "projection" in params:
        return params["projection"].shape[0]
    if "task_net.0.weight" in params:
        return params["task_net.0.weight"].shape[1]
    return 1
