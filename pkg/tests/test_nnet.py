import copy
import pickle
import struct

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import check_store, max_relative_error, numeric_grad
from psdrl.nnet import (
    DEFAULT_LR,
    GRU,
    MAGIC,
    MLP,
    NetSpec,
    ParamStore,
    adam_update,
    dense_backward,
    dense_forward,
    gru_step,
    load_arrays,
    mse_loss,
    save_arrays,
    sigmoid,
    squared_error,
)
from psdrl.numkernel import RandomStream


def gru_bptt_loss(gru, xs, h0, proj, backward=False):
    """Sum over steps of ``<proj_t, h_t>``; optionally backpropagates through all steps."""
    h, caches, loss = h0, [], 0.0
    for t in range(xs.shape[0]):
        h, cache = gru.step(xs[t], h)
        caches.append(cache)
        loss += float(np.sum(proj[t] * h))
    if backward:
        dh = np.zeros_like(h0)
        for t in reversed(range(xs.shape[0])):
            _, dh = gru.backward(caches[t], dh + proj[t])
    return loss


class TestDense:
    def test_zero_weights_tanh_gives_zero(self):
        y, _ = dense_forward(np.zeros((3, 2)), np.zeros(2), np.array([[1.0, -2.0, 5.0]]), "tanh")
        npt.assert_array_equal(y, 0.0)

    def test_identity_linear(self):
        y, _ = dense_forward(np.eye(2), np.zeros(2), np.array([[1.0, 2.0]]), "linear")
        npt.assert_array_equal(y, [[1.0, 2.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            dense_forward(np.zeros((3, 2)), np.zeros(2), np.ones((1, 4)), "tanh")

    @pytest.mark.parametrize("act", ["tanh", "sigmoid", "linear", "relu"])
    def test_backward_matches_finite_differences(self, act):
        rng = RandomStream(["tanh", "sigmoid", "linear", "relu"].index(act))
        W, b, x = rng.normal((3, 2)), rng.normal(2), rng.normal((4, 3))
        proj = rng.normal((4, 2))

        def loss():
            return float(np.sum(proj * dense_forward(W, b, x, act)[0]))

        _, cache = dense_forward(W, b, x, act)
        dW, db, dx = dense_backward(W, cache, act, proj)
        for analytic, wrt in ((dW, W), (db, b), (dx, x)):
            assert max_relative_error(analytic, numeric_grad(loss, wrt)) < 1e-6

    def test_sigmoid_matches_logistic(self):
        x = np.linspace(-30, 30, 61)
        npt.assert_allclose(sigmoid(x), 1.0 / (1.0 + np.exp(-x)), rtol=1e-12, atol=1e-15)


class TestNetSpec:
    def test_activation_count_checked(self):
        with pytest.raises(ValueError):
            NetSpec([2, 3, 1], ["tanh"])

    def test_unknown_activation(self):
        with pytest.raises(ValueError):
            NetSpec([2, 1], ["softplus"])


class TestMLP:
    def test_forward_is_deterministic_and_call_matches_forward(self):
        store = ParamStore()
        net = MLP(store, "m", NetSpec([4, 5, 3], ["relu", "linear"]), RandomStream(0))
        x = RandomStream(1).normal((6, 4))
        y1, _ = net.forward(x)
        npt.assert_array_equal(y1, net.forward(x)[0])
        npt.assert_array_equal(y1, net(x))

    def test_gradients(self):
        rng = RandomStream(2)
        store = ParamStore()
        net = MLP(store, "m", NetSpec([4, 6, 5, 2], ["tanh", "sigmoid", "linear"]), rng)
        x, target = rng.normal((7, 4)), rng.normal((7, 2))

        def fwd_bwd():
            y, caches = net.forward(x)
            loss, dy = squared_error(y, target)
            net.backward(caches, dy)
            return loss

        err = check_store(store, fwd_bwd, lambda: squared_error(net(x), target)[0])
        assert err < 1e-6

    def test_target_parameters_override(self):
        store = ParamStore()
        net = MLP(store, "m", NetSpec([2, 2], ["linear"]), RandomStream(3))
        frozen = store.snapshot()
        x = np.ones((1, 2))
        before = net(x)
        store.values["m/0/W"] += 1.0
        npt.assert_array_equal(net(x, frozen), before)
        assert not np.allclose(net(x), before)


class TestGRU:
    def test_zero_weights_halve_the_state(self):
        gru = GRU(ParamStore(), "g", 3, 4)
        v = np.array([[1.0, -2.0, 0.5, 4.0]])
        h_next, _ = gru_step(gru, np.ones((1, 3)), v)
        npt.assert_allclose(h_next, 0.5 * v, rtol=0, atol=1e-15)

    def test_zero_state_zero_weights(self):
        gru = GRU(ParamStore(), "g", 3, 4)
        h_next, _ = gru.step(np.ones((2, 3)), np.zeros((2, 4)))
        npt.assert_array_equal(h_next, 0.0)

    def test_matches_textbook_equations(self):
        rng = RandomStream(4)
        store = ParamStore()
        gru = GRU(store, "g", 2, 3, rng)
        store.values["g/b"][...] = rng.normal(9)
        x, h = rng.normal((1, 2)), rng.normal((1, 3))
        Wx, Uzr, Un, b = (store.values[f"g/{k}"] for k in ("Wx", "Uzr", "Un", "b"))
        logistic = lambda a: 1.0 / (1.0 + np.exp(-a))
        z = logistic(x @ Wx[:, 0:3] + h @ Uzr[:, 0:3] + b[0:3])
        r = logistic(x @ Wx[:, 3:6] + h @ Uzr[:, 3:6] + b[3:6])
        n = np.tanh(x @ Wx[:, 6:9] + (r * h) @ Un + b[6:9])
        npt.assert_allclose(gru.step(x, h)[0], (1 - z) * h + z * n, rtol=1e-13)

    def test_shape_mismatch(self):
        gru = GRU(ParamStore(), "g", 3, 4)
        with pytest.raises(ValueError):
            gru.step(np.ones((1, 2)), np.zeros((1, 4)))

    def test_four_step_bptt_matches_finite_differences(self):
        rng = RandomStream(5)
        store = ParamStore()
        gru = GRU(store, "g", 3, 4, rng)
        store.values["g/b"][...] = 0.3 * rng.normal(12)
        xs, h0, proj = rng.normal((4, 2, 3)), rng.normal((2, 4)), rng.normal((4, 2, 4))
        err = check_store(
            store,
            lambda: gru_bptt_loss(gru, xs, h0, proj, backward=True),
            lambda: gru_bptt_loss(gru, xs, h0, proj),
        )
        assert err < 1e-5

    def test_input_and_state_gradients(self):
        rng = RandomStream(6)
        gru = GRU(ParamStore(), "g", 3, 4, rng)
        x, h, proj = rng.normal((2, 3)), rng.normal((2, 4)), rng.normal((2, 4))
        _, cache = gru.step(x, h)
        dx, dh = gru.backward(cache, proj)
        f = lambda: float(np.sum(proj * gru.step(x, h)[0]))
        assert max_relative_error(dx, numeric_grad(f, x)) < 1e-6
        assert max_relative_error(dh, numeric_grad(f, h)) < 1e-6


class TestAdam:
    def test_default_learning_rate(self):
        assert DEFAULT_LR == 1e-4

    def test_zero_gradients_leave_fresh_values_unchanged(self):
        store = ParamStore()
        store.add("w", np.array([1.0, -2.0, 3.0]))
        adam_update(store)
        npt.assert_array_equal(store.values["w"], [1.0, -2.0, 3.0])

    def test_first_step_moves_by_learning_rate(self):
        store = ParamStore()
        store.add("w", np.array([0.5]))
        store.grads["w"][...] = 1.0
        adam_update(store, lr=1e-3)
        # m_hat = 1, v_hat = 1 after bias correction
        npt.assert_allclose(store.values["w"], 0.5 - 1e-3 / (1.0 + 1e-8), rtol=1e-15)
        assert store.step == 1
        npt.assert_array_equal(store.grads["w"], 0.0)

    def test_second_step_against_hand_recurrence(self):
        store = ParamStore()
        store.add("w", np.array([0.0]))
        for g in (2.0, -1.0):
            store.grads["w"][...] = g
            adam_update(store, lr=0.1)
        m = 0.9 * (0.1 * 2.0) + 0.1 * -1.0
        v = 0.999 * (0.001 * 4.0) + 0.001 * 1.0
        step2 = 0.1 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
        step1 = 0.1 * 2.0 / (2.0 + 1e-8)  # m_hat = 2, sqrt(v_hat) = 2
        npt.assert_allclose(store.values["w"], [-step1 - step2], rtol=1e-12)

    @pytest.mark.parametrize("clone", [copy.deepcopy, lambda s: pickle.loads(pickle.dumps(s))])
    def test_copied_store_still_trains(self, clone):
        store = ParamStore()
        store.add("a", np.array([1.0, 2.0]))
        store.add("b", np.array([[3.0]]))
        twin = clone(store)
        twin.grads["b"][...] = 1.0
        adam_update(twin, lr=0.5)
        assert twin.values["b"][0, 0] == pytest.approx(2.5)
        npt.assert_array_equal(twin.values["a"], [1.0, 2.0])
        npt.assert_array_equal(store.values["b"], [[3.0]])

    def test_store_shapes_stay_identical(self):
        store = ParamStore()
        MLP(store, "m", NetSpec([3, 4, 2], ["tanh", "linear"]), RandomStream(0))
        for name in store.names():
            shape = store.values[name].shape
            assert store.grads[name].shape == store.adam_m[name].shape == store.adam_v[name].shape == shape

    def test_reset_optimizer(self):
        store = ParamStore()
        store.add("w", np.ones(2))
        store.grads["w"][...] = 1.0
        adam_update(store)
        store.reset_optimizer()
        assert store.step == 0
        npt.assert_array_equal(store.adam_m["w"], 0.0)
        npt.assert_array_equal(store.adam_v["w"], 0.0)


class TestLosses:
    def test_equal_inputs_give_zero(self):
        loss, grad = mse_loss(np.ones((2, 3)), np.ones((2, 3)))
        assert loss == 0.0
        npt.assert_array_equal(grad, 0.0)

    def test_hand_example(self):
        loss, grad = mse_loss(np.array([1.0, 1.0]), np.array([0.0, 0.0]))
        assert loss == 1.0
        npt.assert_array_equal(grad, [1.0, 1.0])

    def test_gradient_matches_finite_differences(self):
        rng = RandomStream(7)
        pred, target = rng.normal((3, 4)), rng.normal((3, 4))
        _, grad = mse_loss(pred, target)
        numeric = numeric_grad(lambda: mse_loss(pred, target)[0], pred)
        npt.assert_allclose(grad, numeric, rtol=0, atol=1e-8)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mse_loss(np.ones(2), np.ones(3))

    def test_masked_rows_excluded(self):
        pred = np.array([[1.0, 0.0], [3.0, 3.0], [0.0, 2.0]])
        target = np.zeros((3, 2))
        loss, grad = squared_error(pred, target, np.array([True, False, True]))
        # (1 + 4) / 2 valid rows
        assert loss == 2.5
        npt.assert_array_equal(grad[1], 0.0)
        npt.assert_array_equal(grad[0], [1.0, 0.0])

    def test_all_masked(self):
        loss, grad = squared_error(np.ones((2, 2)), np.zeros((2, 2)), np.zeros(2, dtype=bool))
        assert loss == 0.0
        npt.assert_array_equal(grad, 0.0)


class TestSerialization:
    def test_roundtrip(self, tmp_path):
        arrays = {"a": np.arange(6.0).reshape(2, 3), "b/c": np.array([np.pi]), "empty": np.zeros(0)}
        save_arrays(tmp_path / "x.bin", arrays)
        back = load_arrays(tmp_path / "x.bin")
        assert list(back) == list(arrays)
        for k in arrays:
            npt.assert_array_equal(back[k], arrays[k])

    def test_byte_layout(self, tmp_path):
        save_arrays(tmp_path / "x.bin", {"w": np.array([[1.5, -2.0]])})
        raw = (tmp_path / "x.bin").read_bytes()
        expected = MAGIC + struct.pack("<II", 1, 1) + struct.pack("<I", 1) + b"w"
        expected += struct.pack("<I", 2) + struct.pack("<2Q", 1, 2) + struct.pack("<2d", 1.5, -2.0)
        assert raw == expected

    def test_rejects_bad_magic_and_version(self, tmp_path):
        path = tmp_path / "x.bin"
        path.write_bytes(b"NOTMAGIC" + struct.pack("<II", 1, 0))
        with pytest.raises(ValueError, match="magic"):
            load_arrays(path)
        path.write_bytes(MAGIC + struct.pack("<II", 9, 0))
        with pytest.raises(ValueError, match="version"):
            load_arrays(path)
        path.write_bytes(MAGIC + struct.pack("<II", 1, 0) + b"x")
        with pytest.raises(ValueError, match="trailing"):
            load_arrays(path)

    def test_store_roundtrip_includes_optimizer(self):
        store = ParamStore()
        MLP(store, "m", NetSpec([2, 3], ["tanh"]), RandomStream(0))
        for g in store.grads.values():
            g += 1.0
        adam_update(store)
        arrays = store.to_arrays("p")
        other = ParamStore()
        MLP(other, "m", NetSpec([2, 3], ["tanh"]), None)
        other.load_arrays(arrays, "p")
        assert other.step == 1
        for name in store.names():
            npt.assert_array_equal(other.values[name], store.values[name])
            npt.assert_array_equal(other.adam_v[name], store.adam_v[name])

    @given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=0, max_size=20))
    @settings(max_examples=30, deadline=None)
    def test_roundtrip_property(self, tmp_path_factory, values):
        path = tmp_path_factory.mktemp("ser") / "v.bin"
        save_arrays(path, {"v": np.array(values, dtype=np.float64)})
        npt.assert_array_equal(load_arrays(path)["v"], values)
