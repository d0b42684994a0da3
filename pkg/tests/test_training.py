import jax.numpy as jnp
import numpy as np
import pytest

from trusttransfer import reference
from trusttransfer.models import MODEL_NAMES, ModelSpec, init_params
from trusttransfer.training import (
    CheckpointError,
    TrainConfig,
    adam_init,
    adam_step,
    gradcheck,
    gradient,
    loss,
    perturbed_params,
    predict,
    save_checkpoint,
    load_checkpoint,
    split_validation,
    train,
)


def test_loss_examples():
    assert float(loss([1 - 1e-12], [1.0])) == pytest.approx(0.0, abs=1e-11)
    assert float(loss([0.5], [1.0])) == pytest.approx(np.log(2), abs=1e-15)
    taus = np.linspace(0.01, 0.99, 981)
    vals = [float(loss([t], [0.5])) for t in taus]
    assert taus[int(np.argmin(vals))] == pytest.approx(0.5)
    assert min(vals) == pytest.approx(np.log(2), abs=1e-12)


def test_loss_is_a_sum_and_checks_shapes():
    p, y = np.array([0.2, 0.7, 0.9]), np.array([0.1, 0.5, 0.99])
    ref = -np.sum(y * np.log(p) + (1 - y) * np.log(1 - p))
    assert float(loss(p, y)) == pytest.approx(ref, rel=1e-14)
    with pytest.raises(ValueError, match="shape"):
        loss(p, y[:2])


def test_adam_zero_gradient():
    params = {"p": jnp.array([1.0, -2.0])}
    moments = adam_init(params)
    moments = moments._replace(first={"p": jnp.array([0.5, 0.5])}, second={"p": jnp.array([0.25, 0.25])})
    _, m = adam_step(params, {"p": jnp.zeros(2)}, moments, 3, 0.1)
    np.testing.assert_allclose(m.first["p"], [0.45, 0.45])
    np.testing.assert_allclose(m.second["p"], [0.25 * 0.999] * 2)
    # with fresh (zero) moments a zero gradient leaves the parameters exactly unchanged
    new, _ = adam_step(params, {"p": jnp.zeros(2)}, adam_init(params), 1, 0.1)
    np.testing.assert_array_equal(new["p"], params["p"])


def test_adam_first_step_size():
    params = {"p": jnp.array([0.0, 0.0, 0.0])}
    g = jnp.array([3.0, -1e-3, 1e-9])
    new, _ = adam_step(params, {"p": g}, adam_init(params), 1, 0.01)
    expected = -0.01 * np.abs(g) / (np.abs(g) + 1e-8) * np.sign(g)
    np.testing.assert_allclose(new["p"], expected, rtol=1e-12)


def test_adam_quadratic():
    params, moments = {"p": jnp.array(1.0)}, adam_init({"p": jnp.array(1.0)})
    for t in range(1, 101):
        params, moments = adam_step(params, {"p": 2 * params["p"]}, moments, t, 0.1)
    assert abs(float(params["p"])) < 0.05


def test_gradient_of_unused_parameter_is_zero(small_batch):
    spec = ModelSpec("pogp")
    params = perturbed_params(spec, small_batch.obs_x.shape[-1], 0)
    params["unused"] = np.ones(3)
    grads = gradient(spec, params, small_batch)
    np.testing.assert_array_equal(grads["unused"], np.zeros(3))


@pytest.mark.parametrize("name", MODEL_NAMES)
def test_gradcheck_every_model(name, small_batch):
    batch = small_batch.subset(np.arange(3))
    errors = gradcheck(ModelSpec(name), batch, seed=1)
    assert max(errors.values()) < 1e-4, errors


def test_gradcheck_negative_control(small_batch):
    batch = small_batch.subset(np.arange(3))

    def corrupted(spec, params, batch, weights):
        g = gradient(spec, params, batch, weights)
        g["projection"] = g["projection"] * 1.01
        return g

    errors = gradcheck(ModelSpec("gp"), batch, seed=1, grad_fn=corrupted)
    assert errors["projection"] > 1e-3
    assert errors["log_noise"] < 1e-4


def test_reference_loss_agrees_with_model(small_batch):
    from trusttransfer.training import _batch_args, _objective
    spec = ModelSpec("rnn")
    batch = small_batch.subset(np.arange(3))
    params = perturbed_params(spec, batch.obs_x.shape[-1], 2)
    w = np.ones(batch.tgt_y.shape)
    ours = float(_objective(spec)({k: jnp.asarray(v) for k, v in params.items()}, *_batch_args(batch), jnp.asarray(w))[0])
    assert float(reference.rnn_loss(params, batch, w)) == pytest.approx(ours, rel=1e-12)


def test_split_validation():
    tr, va = split_validation(np.arange(20), 0.15, 0)
    assert len(va) == 3 and len(tr) == 17
    assert set(tr).isdisjoint(va) and set(tr) | set(va) == set(range(20))
    tr2, va2 = split_validation(np.arange(20), 0.15, 0)
    np.testing.assert_array_equal(va, va2)
    with pytest.raises(ValueError, match="empty"):
        split_validation(np.arange(3), 0.15, 0)


def test_config_validation():
    for bad in [dict(validation_fraction=0.0), dict(validation_fraction=1.0), dict(max_epochs=0), dict(learning_rate=0)]:
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_single_epoch_returns_initial_params(small_batch):
    spec = ModelSpec("gp")
    res = train(spec, small_batch, TrainConfig(max_epochs=1, seed=4))
    init = init_params(spec, small_batch.obs_x.shape[-1], 4)
    for k in init:
        np.testing.assert_array_equal(res.params[k], init[k])
    assert res.best_epoch == 1 and len(res.log) == 1


@pytest.mark.parametrize("name", MODEL_NAMES)
def test_loss_drops_early(name, small_batch):
    res = train(ModelSpec(name), small_batch, TrainConfig(max_epochs=6, patience=10, learning_rate=1e-2))
    losses = [r["train_loss"] for r in res.log]
    assert min(losses[1:6]) < losses[0]


def test_early_stopping_returns_best_validation(small_batch):
    spec = ModelSpec("pogp")
    cfg = TrainConfig(max_epochs=200, patience=5, learning_rate=0.05, seed=2)
    res = train(spec, small_batch, cfg)
    vals = [r["val_loss"] for r in res.log]
    assert res.best_epoch == int(np.argmin(vals)) + 1
    # the returned parameters reproduce the best validation loss
    _, val_rows = split_validation(np.arange(small_batch.n_participants), cfg.validation_fraction, cfg.seed)
    preds = predict(spec, res.params, small_batch)
    y = small_batch.tgt_y[val_rows]
    val = np.mean(-(y * np.log(preds[val_rows]) + (1 - y) * np.log1p(-preds[val_rows])))
    assert val == pytest.approx(min(vals), rel=1e-10)


def test_training_is_deterministic(small_batch):
    cfg = TrainConfig(max_epochs=15, seed=5)
    a = train(ModelSpec("gpnn"), small_batch, cfg)
    b = train(ModelSpec("gpnn"), small_batch, cfg)
    assert a.log == b.log
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])


def test_checkpoint_round_trip(tmp_path):
    spec = ModelSpec("rnn")
    params = perturbed_params(spec, 7, 0)
    save_checkpoint(tmp_path / "a.ckpt", spec, params, extra={"note": "x"})
    spec2, back, extra = load_checkpoint(tmp_path / "a.ckpt", expected=spec)
    assert spec2 == spec and extra == {"note": "x"}
    assert set(back) == set(params)
    for k in params:
        np.testing.assert_array_equal(back[k], params[k])
    save_checkpoint(tmp_path / "b.ckpt", spec, params, extra={"note": "x"})
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_checkpoint_errors(tmp_path):
    spec = ModelSpec("gp")
    save_checkpoint(tmp_path / "gp.ckpt", spec, init_params(spec, 5, 0))
    data = (tmp_path / "gp.ckpt").read_bytes()
    (tmp_path / "cut.ckpt").write_bytes(data[: len(data) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "cut.ckpt")
    with pytest.raises(CheckpointError, match="do not match"):
        load_checkpoint(tmp_path / "gp.ckpt", expected=ModelSpec("rnn"))
    (tmp_path / "junk.ckpt").write_bytes(b"not a zip")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "junk.ckpt")


def test_checkpoint_version_mismatch(tmp_path):
    import json
    import zipfile
    spec = ModelSpec("ct")
    save_checkpoint(tmp_path / "c.ckpt", spec, init_params(spec, 5, 0))
    with zipfile.ZipFile(tmp_path / "c.ckpt") as zf:
        members = {n: zf.read(n) for n in zf.namelist()}
    header = json.loads(members["header.json"])
    header["version"] = 99
    members["header.json"] = json.dumps(header).encode()
    with zipfile.ZipFile(tmp_path / "v.ckpt", "w") as zf:
        for n, b in members.items():
            zf.writestr(n, b)
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "v.ckpt")


def test_nonfinite_gradient_names_block(small_batch):
    spec = ModelSpec("gp")
    params = perturbed_params(spec, small_batch.obs_x.shape[-1], 0)
    params["c0"] = np.array(np.nan)
    with pytest.raises(FloatingPointError, match="gp"):
        gradient(spec, params, small_batch)
