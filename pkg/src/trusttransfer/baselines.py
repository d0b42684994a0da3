"""Scalar trust baselines: linear-Gaussian updates (LG) and constant trust (CT).

Neither looks at task features; every task gets the same trust value.
"""
from __future__ import annotations

from typing import NamedTuple

import jax.numpy as jnp

TRUST_FLOOR = 1e-4
TRUST_CEIL = 1.0 - 1e-4


class LGParams(NamedTuple):
    w: jnp.ndarray  # weights on (tau_prev, c_prev, c_prev - c_prev2)
    noise_var: jnp.ndarray
    tau0: jnp.ndarray  # trust before any observation


class CTParams(NamedTuple):
    tau0: jnp.ndarray


def lg_update(p: LGParams, tau_prev, c_prev, c_prev2=None):
    if c_prev2 is None:
        c_prev2 = c_prev
    feats = jnp.stack([jnp.asarray(tau_prev, dtype=jnp.float64), jnp.asarray(c_prev, dtype=jnp.float64),
                       jnp.asarray(c_prev - c_prev2, dtype=jnp.float64)])
    return jnp.clip(jnp.asarray(p.w) @ feats, TRUST_FLOOR, TRUST_CEIL)


def lg_rollout(p: LGParams, outcomes) -> list:
    """Trust after 0, 1, ..., n observations; the first step has no earlier outcome."""
    taus = [jnp.clip(jnp.asarray(p.tau0, dtype=jnp.float64), TRUST_FLOOR, TRUST_CEIL)]
    prev = None
    for c in outcomes:
        taus.append(lg_update(p, taus[-1], c, c if prev is None else prev))
        prev = c
    return taus


def lg_nll(p: LGParams, tau_observed, tau_predicted):
    """Gaussian negative log density of the observed trust under the LG noise."""
    var = p.noise_var
    resid = tau_observed - tau_predicted
    return 0.5 * jnp.log(2 * jnp.pi * var) + 0.5 * resid**2 / var


def ct_predict(p: CTParams):
    return jnp.clip(jnp.asarray(p.tau0, dtype=jnp.float64), TRUST_FLOOR, TRUST_CEIL)
