"""Extended-precision reference losses for gradient checking.

The recurrent model's loss is re-coded here in numpy ``longdouble``,
independently of the JAX implementation. Near-saturated predictions make the
float64 loss wobble by many ulps, which swamps step-1e-5 central differences
for gradient entries around 1e-5; the reference resolves them.
"""
import numpy as np

LD = np.longdouble


def _sigm(x):
    return 1 / (1 + np.exp(-x))


def _mlp(params, prefix, x, out_tanh=False):
    i = 0
    while f"{prefix}.{i + 1}.weight" in params:
        x = np.tanh(params[f"{prefix}.{i}.weight"] @ x + params[f"{prefix}.{i}.bias"])
        i += 1
    x = params[f"{prefix}.{i}.weight"] @ x + params[f"{prefix}.{i}.bias"]
    return np.tanh(x) if out_tanh else x


def _gru(p, l, h, x):
    g = lambda name: p[f"gru.{l}.{name}"]
    v = _sigm(g("w_update") @ x + g("u_update") @ h + g("b_update"))
    r = _sigm(g("w_reset") @ x + g("u_reset") @ h + g("b_reset"))
    cand = np.tanh(g("w_cand") @ x + g("u_cand") @ (r * h) + g("b_cand"))
    return (1 - v) * h + v * cand


def rnn_loss(params, batch, weights):
    p = {k: np.asarray(v, dtype=LD) for k, v in params.items()}
    n_layers = sum(1 for k in p if k.startswith("h0."))
    total = LD(0)
    for i in range(batch.obs_x.shape[0]):
        hidden = [p[f"h0.{l}"] for l in range(n_layers)]
        thetas = [hidden[-1]]
        for s in range(batch.obs_x.shape[1]):
            x = np.concatenate([_mlp(p, "task_net", batch.obs_x[i, s].astype(LD)),
                                _mlp(p, "perf_net", np.array([batch.obs_c[i, s]], dtype=LD), out_tanh=True)])
            for l in range(n_layers):
                hidden[l] = _gru(p, l, hidden[l], x)
                x = hidden[l]
            thetas.append(hidden[-1])
        for q in range(batch.tgt_x.shape[1]):
            tau = _sigm(thetas[batch.tgt_step[i, q]] @ _mlp(p, "task_net", batch.tgt_x[i, q].astype(LD)))
            tau = min(max(tau, LD(1e-12)), 1 - LD(1e-12))
            y = LD(batch.tgt_y[i, q])
            total += LD(weights[i, q]) * -(y * np.log(tau) + (1 - y) * np.log1p(-tau))
    return total


def central_differences(loss, params, step=1e-5):
    """Gradient dict by central differences of ``loss(params)`` in extended precision."""
    out = {}
    for name, value in params.items():
        value = np.asarray(value, dtype=LD)
        grad = np.empty(value.shape)
        for idx in np.ndindex(value.shape):
            plus, minus = value.copy(), value.copy()
            plus[idx] += LD(step)
            minus[idx] -= LD(step)
            grad[idx] = float((loss({**params, name: plus}) - loss({**params, name: minus})) / (2 * LD(step)))
        out[name] = grad
    return out


def entry_difference(loss, params, name, idx, step=1e-5):
    """Central difference of ``loss`` for the single entry ``params[name][idx]``."""
    value = np.asarray(params[name], dtype=LD)
    plus, minus = value.copy(), value.copy()
    plus[idx] += LD(step)
    minus[idx] -= LD(step)
    return float((loss({**params, name: plus}) - loss({**params, name: minus})) / (2 * LD(step)))


def loss_for(spec, batch, weights):
    """Reference loss over parameter dicts for ``spec``, or None when there is none."""
    if spec.name == "rnn":
        return lambda params: rnn_loss(params, batch, weights)
    return None


def recheck(analytic, numeric, params, loss, recheck_above, floor=1e-5, step=1e-5):
    """Replace float64 differences whose relative error exceeds ``recheck_above`` by reference ones.

    Returns ``(numeric, n_rechecked)``.
    """
    out, rechecked = {}, 0
    for name, a in analytic.items():
        n = np.array(numeric[name], dtype=float)
        rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        for idx in zip(*np.nonzero(rel > recheck_above)):
            n[idx] = entry_difference(loss, params, name, idx, step)
            rechecked += 1
        out[name] = n
    return out, rechecked
