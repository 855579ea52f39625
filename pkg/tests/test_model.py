import numpy as np
import pytest

from speechgl.errors import InvalidConfigError, ShapeError, SpeechGLError
from speechgl.losses import LossParams
from speechgl.model import (
    AdamState,
    MaskNet,
    TrainConfig,
    TrainItem,
    adam_step,
    backward,
    evaluate_loss,
    features,
    forward,
    load_checkpoint,
    loss_and_grads,
    save_checkpoint,
    sigmoid,
    train,
)
from speechgl.spectral import StftConfig, Waveform, stft

from conftest import relerr

CFG = StftConfig(32, 16, 32)


def make_item(rng, n=200):
    s = rng.standard_normal(n) * np.hanning(n)
    d = 0.5 * rng.standard_normal(n)
    S, D = stft(Waveform(s, 8000), CFG), stft(Waveform(d, 8000), CFG)
    X = stft(Waveform(s + d, 8000), CFG)
    return TrainItem(X, S, D, Waveform(s, 8000))


def small_net(seed=0, hidden=(8,), activation="elu", context=2):
    return MaskNet.create(CFG.n_bins, context=context, hidden_sizes=hidden, activation=activation, seed=seed)


class TestFeatures:
    def test_zero_spectrogram(self):
        assert not np.any(features(np.zeros((4, 6)), 3))

    def test_single_frame_context(self, rng):
        X = rng.uniform(0, 5, (4, 6))
        np.testing.assert_array_equal(features(X, 1), np.log1p(X))

    def test_padding_order(self, rng):
        X = rng.uniform(0, 5, (4, 6))
        F = features(X, 3)
        assert F.shape == (4, 18)
        assert not np.any(F[0, :12])
        np.testing.assert_array_equal(F[0, 12:], np.log1p(X[0]))
        np.testing.assert_array_equal(F[2], np.log1p(X[:3]).ravel())

    def test_bad_context(self):
        with pytest.raises(InvalidConfigError):
            features(np.zeros((2, 2)), 0)


class TestForwardBackward:
    def test_output_in_open_unit_interval(self, rng):
        net = small_net()
        net.weights[-1] *= 1e4  # push the sigmoid into saturation
        mask, _ = forward(net, rng.standard_normal((50, net.input_dim)) * 10)
        assert mask.min() > 0.0 and mask.max() < 1.0

    def test_sigmoid_is_stable(self):
        z = np.array([-1000.0, -1.0, 0.0, 1.0, 1000.0])
        s = sigmoid(z)
        assert np.all(np.isfinite(s))
        np.testing.assert_allclose(s[1:4], 1 / (1 + np.exp(-z[1:4])))

    def test_zero_upstream_gradient(self, rng):
        net = small_net()
        mask, cache = forward(net, rng.standard_normal((5, net.input_dim)))
        assert all(not np.any(g) for g in backward(net, cache, np.zeros_like(mask)))

    def test_single_layer_hand_chain_rule(self):
        net = MaskNet(n_bins=2, context=1, hidden_sizes=(),
                      weights=[np.array([[0.5, -1.0], [2.0, 0.25]])], biases=[np.array([0.1, -0.2])])
        x = np.array([[1.0, -0.5]])
        g = np.array([[0.3, -0.7]])
        z = np.array([1.0 * 0.5 + -0.5 * 2.0 + 0.1, 1.0 * -1.0 + -0.5 * 0.25 - 0.2])
        s = 1 / (1 + np.exp(-z))
        mask, cache = forward(net, x)
        np.testing.assert_allclose(mask[0], s, rtol=1e-15)
        dW, db = backward(net, cache, g)
        delta = g[0] * s * (1 - s)
        np.testing.assert_allclose(dW, np.outer(x[0], delta), rtol=1e-14)
        np.testing.assert_allclose(db, delta, rtol=1e-14)

    @pytest.mark.parametrize("activation", ["elu", "relu"])
    def test_full_net_finite_differences(self, rng, activation):
        net = small_net(seed=3, hidden=(7, 5), activation=activation)
        net.fit_normalization([rng.standard_normal((20, net.input_dim))])
        x = rng.standard_normal((6, net.input_dim))
        g_up = rng.standard_normal((6, net.n_bins))

        def f(params):
            trial = net.copy()
            trial.set_params(params)
            return float(np.sum(forward(trial, x)[0] * g_up))

        _, cache = forward(net, x)
        analytic = backward(net, cache, g_up)
        params = net.params()
        for k, p in enumerate(params):
            fd = np.zeros_like(p)
            for idx in np.ndindex(p.shape):
                plus = [q.copy() for q in params]
                minus = [q.copy() for q in params]
                plus[k][idx] += 1e-6
                minus[k][idx] -= 1e-6
                fd[idx] = (f(plus) - f(minus)) / 2e-6
            assert relerr(analytic[k], fd) < 1e-4

    def test_shape_errors(self, rng):
        net = small_net()
        with pytest.raises(ShapeError):
            forward(net, np.zeros((3, net.input_dim + 1)))
        mask, cache = forward(net, np.zeros((3, net.input_dim)))
        with pytest.raises(ShapeError):
            backward(net, cache, np.zeros((4, net.n_bins)))

    def test_causality(self, rng):
        net = small_net(context=4, hidden=(16,))
        X = rng.uniform(0, 3, (12, CFG.n_bins))
        before = net.predict(X).values
        for l in range(11):
            Y = X.copy()
            Y[l + 1 :] = rng.uniform(0, 3, Y[l + 1 :].shape)
            after = net.predict(Y).values
            np.testing.assert_array_equal(after[: l + 1], before[: l + 1])


@pytest.mark.parametrize("kind", ["gl", "cl", "mse", "tmse", "sisdr"])
def test_end_to_end_gradients(kind, rng):
    item = make_item(rng)
    net = small_net(seed=5, hidden=(6,))
    net.fit_normalization([features(item.noisy_mag, net.context)])
    params_ = LossParams(gamma=2, alpha=1, mu=1.5, beta0=0.1)
    _, analytic = loss_and_grads(net, item, kind, params_)
    base = net.params()

    def value(params):
        trial = net.copy()
        trial.set_params(params)
        mask, _ = forward(trial, features(item.noisy_mag, trial.context))
        return evaluate_loss(kind, params_, item, mask).value

    # check a deterministic subset of coordinates in every parameter array
    for k, p in enumerate(base):
        idxs = list(np.ndindex(p.shape))
        pick = [idxs[i] for i in np.random.default_rng(k).choice(len(idxs), min(25, len(idxs)), replace=False)]
        num, ana = [], []
        for idx in pick:
            plus = [q.copy() for q in base]
            minus = [q.copy() for q in base]
            plus[k][idx] += 1e-6
            minus[k][idx] -= 1e-6
            num.append((value(plus) - value(minus)) / 2e-6)
            ana.append(analytic[k][idx])
        assert relerr(ana, num) < 1e-4, (kind, k)


class TestAdam:
    def cfg(self, lr=1e-3):
        return TrainConfig(learning_rate=lr)

    def test_zero_gradient_leaves_params(self, rng):
        p = [rng.standard_normal((3, 2)), rng.standard_normal(2)]
        new, state = adam_step(p, [np.zeros((3, 2)), np.zeros(2)], AdamState.zeros_like(p), self.cfg())
        for a, b in zip(new, p):
            np.testing.assert_array_equal(a, b)
        assert state.t == 1

    @pytest.mark.parametrize("g", [1e-4, 0.3, 250.0, -7.0])
    def test_first_step_is_learning_rate(self, g):
        p = [np.array([1.0])]
        new, _ = adam_step(p, [np.array([g])], AdamState.zeros_like(p), self.cfg(1e-3))
        assert abs(new[0][0] - 1.0) == pytest.approx(1e-3, rel=1e-3)
        assert np.sign(1.0 - new[0][0]) == np.sign(g)

    def test_two_step_hand_trace(self):
        lr, b1, b2, eps, g = 0.01, 0.9, 0.999, 1e-8, 0.5
        cfg = TrainConfig(learning_rate=lr, adam_beta1=b1, adam_beta2=b2, adam_eps=eps)
        theta = 2.0
        # step 1: m = 0.05, v = 0.00025; m_hat = 0.5, v_hat = 0.25
        theta1 = theta - lr * 0.5 / (0.5 + eps)
        # step 2: m = 0.095, v = 0.00049975; m_hat = 0.095/0.19, v_hat = 0.00049975/0.001999
        theta2 = theta1 - lr * (0.095 / 0.19) / (np.sqrt(0.00049975 / 0.001999) + eps)
        p = [np.array([theta])]
        state = AdamState.zeros_like(p)
        p, state = adam_step(p, [np.array([g])], state, cfg)
        assert p[0][0] == pytest.approx(theta1, rel=1e-14)
        np.testing.assert_allclose(state.m[0], 0.05)
        np.testing.assert_allclose(state.v[0], 0.00025)
        p, state = adam_step(p, [np.array([g])], state, cfg)
        assert p[0][0] == pytest.approx(theta2, rel=1e-14)
        assert state.t == 2


class TestTraining:
    def data(self, rng, n=3):
        return [make_item(rng) for _ in range(n)]

    def test_zero_learning_rate(self, rng):
        data = self.data(rng)
        net = small_net()
        res = train(net, data, TrainConfig(epochs=3, batch_size=2, learning_rate=0.0))
        for a, b in zip(res.net.params(), net.params()):
            np.testing.assert_array_equal(a, b)
        assert len(res.history) == 3
        assert res.history[0] == pytest.approx(res.history[1], rel=1e-12) == pytest.approx(res.history[2], rel=1e-12)

    def test_bit_reproducible(self, rng):
        data = self.data(rng)
        cfg = TrainConfig(epochs=4, batch_size=2, seed=7)
        a = train(small_net(seed=1), data, cfg)
        b = train(small_net(seed=1), data, cfg)
        assert a.history == b.history
        for x, y in zip(a.net.params(), b.net.params()):
            np.testing.assert_array_equal(x, y)

    def test_loss_decreases(self, rng):
        data = self.data(rng)
        res = train(small_net(hidden=(32,)), data, TrainConfig(epochs=40, batch_size=1, learning_rate=3e-3))
        assert all(np.isfinite(res.history))
        assert res.history[-1] < res.history[0]

    def test_does_not_mutate_input_net(self, rng):
        net = small_net()
        before = [p.copy() for p in net.params()]
        train(net, self.data(rng, 1), TrainConfig(epochs=2))
        for a, b in zip(net.params(), before):
            np.testing.assert_array_equal(a, b)

    def test_empty_dataset(self):
        with pytest.raises(SpeechGLError):
            train(small_net(), [], TrainConfig())

    def test_config_validation(self):
        with pytest.raises(InvalidConfigError):
            TrainConfig(batch_size=0)
        with pytest.raises(InvalidConfigError):
            TrainConfig(learning_rate=-1.0)
        with pytest.raises(InvalidConfigError):
            TrainConfig(loss="pesq")


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        net = small_net(hidden=(9, 4), activation="relu")
        net.fit_normalization([rng.standard_normal((30, net.input_dim))])
        path = tmp_path / "m.npz"
        save_checkpoint(net, path, metadata={"stft": CFG.to_dict()})
        back = load_checkpoint(path)
        assert back.config_dict() == net.config_dict()
        for a, b in zip(back.params(), net.params()):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(back.feature_mean, net.feature_mean)
        np.testing.assert_array_equal(back.feature_std, net.feature_std)
        X = rng.uniform(0, 2, (7, CFG.n_bins))
        np.testing.assert_array_equal(back.predict(X).values, net.predict(X).values)

    def test_corrupt_checkpoint(self, tmp_path):
        path = tmp_path / "bad.npz"
        path.write_bytes(b"nonsense")
        with pytest.raises(SpeechGLError):
            load_checkpoint(path)

    def test_wrong_version(self, tmp_path):
        path = tmp_path / "m.npz"
        save_checkpoint(small_net(), path)
        with np.load(path) as data:
            arrays = dict(data)
        arrays["format_version"] = np.array(99)
        np.savez(path, **arrays)
        with pytest.raises(SpeechGLError, match="version"):
            load_checkpoint(path)
