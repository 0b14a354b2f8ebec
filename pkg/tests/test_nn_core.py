import numpy as np
import pytest

from hlwnet import nn_core as nn
from hlwnet.nn_core import (AdamState, ForwardMode, Mode, Sequential, adam_step, grad_check,
                            load_checkpoint, mse_loss, save_checkpoint, sigmoid_fn)

TRAIN_NO_DROP = ForwardMode(Mode.TRAIN, update_stats=False, disable_dropout=True)


def test_activations():
    assert sigmoid_fn(np.array([0.0]))[0] == 0.5
    assert np.all(np.isfinite(sigmoid_fn(np.array([-1e4, 1e4]))))
    chain = Sequential("r", [nn.relu(2)])
    out, _ = chain.forward({}, np.array([[-3.0, 3.0]]))
    assert out.tolist() == [[0.0, 3.0]]


def test_bn_eval_identity():
    chain = Sequential("n", [nn.bn(3)])
    p = chain.init_params(np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(4, 3))
    out, _ = chain.forward(p, x)
    np.testing.assert_allclose(out, x / np.sqrt(1 + nn.BN_EPS), rtol=1e-12)
    np.testing.assert_allclose(out, x, atol=1e-5 * np.abs(x).max())


def test_bn_train_statistics_and_running_update():
    chain = Sequential("n", [nn.bn(3)])
    p = chain.init_params(np.random.default_rng(0))
    p["n.0.gamma"][:] = [2.0, 0.5, 1.0]
    p["n.0.beta"][:] = [1.0, -1.0, 0.0]
    x = np.random.default_rng(2).normal(3.0, 4.0, size=(64, 3))
    out, _ = chain.forward(p, x, ForwardMode(Mode.TRAIN))
    np.testing.assert_allclose(out.mean(0), [1.0, -1.0, 0.0], atol=1e-6)
    var = x.var(0)
    np.testing.assert_allclose(out.var(0), np.array([4.0, 0.25, 1.0]) * var / (var + nn.BN_EPS),
                               rtol=1e-9)
    np.testing.assert_allclose(p["n.0.running_mean"], 0.1 * x.mean(0))
    np.testing.assert_allclose(p["n.0.running_var"], 0.9 + 0.1 * x.var(0, ddof=1))


def test_bn_batch_of_one_rejected():
    chain = Sequential("n", [nn.bn(2)])
    with pytest.raises(ValueError):
        chain.forward(chain.init_params(np.random.default_rng(0)), np.ones((1, 2)),
                      ForwardMode(Mode.TRAIN))


def test_dropout_expectation_and_eval_identity():
    chain = Sequential("d", [nn.dropout(50, 0.5)])
    x = np.ones((2000, 50))
    out, _ = chain.forward({}, x, ForwardMode(Mode.TRAIN, rng=np.random.default_rng(3)))
    assert set(np.unique(out)) <= {0.0, 2.0}
    assert out.mean() == pytest.approx(1.0, abs=0.01)
    assert np.array_equal(chain.forward({}, x)[0], x)


def test_dimension_checks():
    with pytest.raises(ValueError):
        Sequential("x", [nn.fc(3, 4), nn.fc(5, 2)])
    chain = Sequential("x", [nn.fc(3, 4)])
    with pytest.raises(ValueError):
        chain.forward(chain.init_params(np.random.default_rng(0)), np.ones((2, 5)))
    with pytest.raises(ValueError):
        nn.dropout(4, 1.0)


def test_mse_values():
    assert mse_loss([[0.2, 0.7]], [[0.2, 0.7]])[0] == 0.0
    loss, grad = mse_loss([[0.5, 0.5]], [[1.0, 0.0]])
    assert loss == 0.25
    np.testing.assert_allclose(grad, [[-0.5, 0.5]])
    with pytest.raises(ValueError):
        mse_loss(np.zeros((0, 2)), np.zeros((0, 2)))


def test_mse_gradient_finite_difference():
    rng = np.random.default_rng(4)
    pred, label = rng.random((5, 3)), rng.random((5, 3))
    _, grad = mse_loss(pred, label)
    num = np.zeros_like(pred)
    h = 1e-6
    for idx in np.ndindex(pred.shape):
        p, m = pred.copy(), pred.copy()
        p[idx] += h
        m[idx] -= h
        num[idx] = (mse_loss(p, label)[0] - mse_loss(m, label)[0]) / (2 * h)
    assert np.max(np.abs(num - grad)) / np.max(np.abs(grad)) < 1e-6


def test_adam_first_step_and_symmetry():
    params = {"a": np.array([0.0]), "b": np.array([1.0])}
    adam_step(params, {"a": np.array([1.0]), "b": np.array([-1.0])}, AdamState(lr=1e-3))
    assert params["a"][0] == pytest.approx(-1e-3, rel=1e-4)
    assert params["b"][0] - 1.0 == pytest.approx(1e-3, rel=1e-4)


def test_adam_zero_grad_no_move():
    params = {"w": np.array([0.3, -2.0])}
    state = AdamState()
    for _ in range(5):
        adam_step(params, {"w": np.zeros(2)}, state)
    assert params["w"].tolist() == [0.3, -2.0]


def test_grad_check_linear_and_fault():
    rng = np.random.default_rng(5)
    lin = Sequential("l", [nn.fc(4, 3)])
    p = lin.init_params(rng)
    x, y = rng.normal(size=(6, 4)), rng.normal(size=(6, 3))
    assert grad_check(lin, p, x, y) < 1e-8

    def corrupt(params, cache, dout):
        d, g = lin.backward(params, cache, dout)
        g["l.0.W"] = g["l.0.W"] * 1.1
        return d, g
    assert grad_check(lin, p, x, y, backward=corrupt) > 1e-2


def test_grad_check_per_layer_kind():
    rng = np.random.default_rng(6)
    chain = Sequential("s", [nn.fc(5, 6), nn.bn(6), nn.relu(6), nn.dropout(6, 0.5),
                             nn.fc(6, 2), nn.sigmoid(2)])
    p = chain.init_params(rng)
    x, y = rng.normal(size=(8, 5)), rng.random((8, 2))
    assert grad_check(chain, p, x, y) < 1e-6


def test_concat_backward_splits():
    chain = Sequential("c", [nn.LayerSpec(nn.LayerKind.CONCAT, 5, 5), nn.fc(5, 1)])
    p = chain.init_params(np.random.default_rng(0))
    a, b = np.ones((2, 2)), np.ones((2, 3))
    out, cache = chain.forward(p, (a, b), TRAIN_NO_DROP)
    (da, db), _ = chain.backward(p, cache, np.ones_like(out))
    assert da.shape == (2, 2) and db.shape == (2, 3)
    np.testing.assert_allclose(np.hstack([da[0], db[0]]), p["c.1.W"][:, 0])


def test_training_deterministic():
    def run():
        rng = np.random.default_rng(7)
        chain = Sequential("t", [nn.fc(3, 5), nn.bn(5), nn.relu(5), nn.dropout(5, 0.3),
                                 nn.fc(5, 1), nn.sigmoid(1)])
        p = chain.init_params(rng)
        st = AdamState()
        x, y = rng.random((16, 3)), rng.random((16, 1))
        losses = []
        for _ in range(20):
            out, cache = chain.forward(p, x, ForwardMode(Mode.TRAIN, rng=rng))
            loss, d = mse_loss(out, y)
            _, g = chain.backward(p, cache, d)
            adam_step(p, g, st)
            losses.append(loss)
        return losses, p
    (l1, p1), (l2, p2) = run(), run()
    assert l1 == l2 and all(np.array_equal(p1[k], p2[k]) for k in p1)


def test_checkpoint_round_trip(tmp_path):
    chain = Sequential("c", [nn.fc(3, 4), nn.bn(4)])
    p = chain.init_params(np.random.default_rng(8))
    p["c.1.running_var"][:] = [0.1, 1 / 3, 7e-300, 1e300]
    path = tmp_path / "ck.json"
    kw = dict(model_meta={"kind": "x"}, spec_chains={"c": chain.specs}, params=p,
              normalizer={"clip_max_db": 60.0}, train_config={"lr": 1e-3}, config_digest="abc")
    save_checkpoint(path, **kw)
    doc = load_checkpoint(path)
    assert doc["spec_chains"]["c"] == chain.specs
    assert all(doc["params"][k].tobytes() == p[k].tobytes() for k in p)
    save_checkpoint(tmp_path / "again.json", **{**kw, "params": doc["params"]})
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()


def test_checkpoint_rejects_foreign(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        load_checkpoint(path)
