import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from speechgl.errors import DegenerateSignalError, InvalidConfigError, ShapeError
from speechgl.losses import (
    LossParams,
    complex_mse,
    db_to_amplitude,
    decompose_complex_mse,
    loss_components,
    loss_generalized,
    loss_mse_magnitude,
    loss_residual_noise_controlled,
    loss_si_sdr,
    loss_speech_distortion,
    loss_time_mse,
)
from speechgl.spectral import GainMask, StftConfig, Waveform, apply_mask, stft

from conftest import relerr

one = lambda v: np.array([[float(v)]])  # noqa: E731


def fd_grad(f, M, h=1e-6):
    g = np.zeros_like(M)
    for idx in np.ndindex(M.shape):
        Mp, Mm = M.copy(), M.copy()
        Mp[idx] += h
        Mm[idx] -= h
        g[idx] = (f(Mp) - f(Mm)) / (2 * h)
    return g


def assert_grad_close(analytic, numeric, tol=1e-5):
    assert analytic.size >= 100
    assert relerr(analytic, numeric) < tol
    scale = np.max(np.abs(numeric))
    assert np.all(np.abs(analytic - numeric) <= tol * scale)


def random_mask(rng, shape, avoid=None):
    M = rng.uniform(0.05, 0.95, shape)
    if avoid is not None:
        while np.any(near := np.abs(M - avoid) < 1e-3):
            M[near] = rng.uniform(0.05, 0.95, int(near.sum()))
    return M


class TestHandExamples:
    def test_speech_distortion(self):
        p = LossParams(gamma=2, alpha=1)
        assert loss_speech_distortion(one(2), one(0.5), p).value == pytest.approx(1.0)
        assert loss_speech_distortion(one(2), one(0.5), LossParams(gamma=3, alpha=1)).value == pytest.approx(1.0)
        assert loss_speech_distortion(one(2), one(0.5), LossParams(gamma=2, alpha=2)).value == pytest.approx(9.0)

    def test_unit_mask_no_distortion(self, rng):
        S = rng.uniform(0, 3, (5, 7))
        r = loss_speech_distortion(S, np.ones_like(S), LossParams())
        assert r.value == 0.0
        assert np.all(r.grad_mask <= 0)

    def test_residual(self):
        p = LossParams(gamma=2, alpha=1, beta0=0.1)
        assert loss_residual_noise_controlled(one(1), one(0.5), p).value == pytest.approx(0.24)

    def test_residual_at_target_is_zero(self, rng):
        D = rng.uniform(0, 3, (4, 6))
        p = LossParams(beta0=0.3)
        r = loss_residual_noise_controlled(D, np.full_like(D, 0.3), p)
        assert r.value == 0.0
        assert not np.any(r.grad_mask)  # zero subgradient at the kink

    def test_residual_without_target(self, rng):
        D, M = rng.uniform(0, 3, (4, 6)), rng.uniform(0, 1, (4, 6))
        p = LossParams(gamma=1.5, alpha=1.3, beta0=0.0)
        expected = np.mean((M * D) ** (1.5 * 1.3))
        assert loss_residual_noise_controlled(D, M, p).value == pytest.approx(expected, rel=1e-13)

    def test_generalized(self):
        p = LossParams(gamma=2, alpha=1, mu=1, beta0=0.1)
        assert loss_generalized(one(2), one(1), one(0.5), p).value == pytest.approx(1.24)

    def test_components(self, rng):
        S, D = rng.uniform(0, 2, (3, 4)), rng.uniform(0, 2, (3, 4))
        assert loss_components(S, D, np.ones_like(S), 2.5).value == pytest.approx(2.5 * np.mean(D**2))
        assert loss_components(S, D, np.zeros_like(S), 2.5).value == pytest.approx(np.mean(S**2))

    def test_mse_magnitude(self, rng):
        assert loss_mse_magnitude(one(1), one(2), one(0.25)).value == pytest.approx(0.25)
        S, X = rng.uniform(0, 1, (3, 4)), rng.uniform(1, 2, (3, 4))
        assert loss_mse_magnitude(S, X, np.zeros_like(S)).value == pytest.approx(np.mean(S**2))
        ideal = S / X  # below 1, so no clipping
        assert loss_mse_magnitude(S, X, ideal).value < 1e-30

    def test_ideal_mask_leaves_only_clipped_bins(self):
        S, X = np.array([[1.0, 3.0]]), np.array([[2.0, 2.0]])
        M = np.clip(S / X, 0, 1)
        assert loss_mse_magnitude(S, X, M).value == pytest.approx((3.0 - 2.0) ** 2 / 2)

    def test_mean_normalization(self, rng):
        S, D, M = rng.uniform(0, 2, (6, 9)), rng.uniform(0, 2, (6, 9)), rng.uniform(0, 1, (6, 9))
        p = LossParams(gamma=1.0, alpha=1.0, mu=2.0, beta0=0.1)
        total = np.sum((1 - M) * S) + 2.0 * np.sum(np.abs(M * D - 0.1 * D))
        assert loss_generalized(S, D, M, p).value == pytest.approx(total / M.size, rel=1e-13)


class TestReductions:
    def test_generalized_matches_components_exactly(self, rng):
        S, D, M = rng.uniform(0, 2, (8, 11)), rng.uniform(0, 2, (8, 11)), rng.uniform(0, 1, (8, 11))
        for mu in (0.0, 0.5, 1.0, 3.0):
            a = loss_generalized(S, D, M, LossParams(gamma=2, alpha=1, mu=mu, beta0=0.0))
            b = loss_components(S, D, M, mu)
            assert a.value == b.value
            np.testing.assert_array_equal(a.grad_mask, b.grad_mask)

    def test_zero_mu_is_speech_distortion(self, rng):
        S, D, M = rng.uniform(0, 2, (8, 11)), rng.uniform(0, 2, (8, 11)), rng.uniform(0, 1, (8, 11))
        p = LossParams(gamma=1.5, alpha=0.7, mu=0.0, beta0=0.2)
        a, b = loss_generalized(S, D, M, p), loss_speech_distortion(S, M, p)
        assert a.value == b.value
        np.testing.assert_array_equal(a.grad_mask, b.grad_mask)


GL_PARAMS = [
    LossParams(gamma=2, alpha=1, mu=1, beta0=0.1),
    LossParams(gamma=1, alpha=1, mu=2, beta0=db_to_amplitude(-20)),
    LossParams(gamma=3, alpha=0.5, mu=0.5, beta0=0.3),
    LossParams(gamma=2, alpha=2, mu=4, beta0=0.0),
]


class TestGradients:
    shape = (10, 12)

    @pytest.mark.parametrize("p", GL_PARAMS, ids=repr)
    def test_generalized(self, p, rng):
        S, D = rng.uniform(0.1, 2, self.shape), rng.uniform(0.1, 2, self.shape)
        M = random_mask(rng, self.shape, avoid=p.beta0)
        g = loss_generalized(S, D, M, p).grad_mask
        assert_grad_close(g, fd_grad(lambda m: loss_generalized(S, D, m, p).value, M))

    def test_components(self, rng):
        S, D = rng.uniform(0.1, 2, self.shape), rng.uniform(0.1, 2, self.shape)
        M = random_mask(rng, self.shape)
        g = loss_components(S, D, M, 1.7).grad_mask
        assert_grad_close(g, fd_grad(lambda m: loss_components(S, D, m, 1.7).value, M))

    def test_mse(self, rng):
        S, X = rng.uniform(0.1, 2, self.shape), rng.uniform(0.1, 2, self.shape)
        M = random_mask(rng, self.shape)
        g = loss_mse_magnitude(S, X, M).grad_mask
        assert_grad_close(g, fd_grad(lambda m: loss_mse_magnitude(S, X, m).value, M))

    @staticmethod
    def _time_setup(rng):
        cfg = StftConfig(32, 16, 32)
        n = 170
        clean = Waveform(rng.standard_normal(n), 8000)
        noisy = stft(Waveform(clean.samples + 0.7 * rng.standard_normal(n), 8000), cfg)
        M = random_mask(rng, noisy.shape)
        return clean, noisy, M

    def test_time_mse(self, rng):
        clean, X, M = self._time_setup(rng)

        def f(m):
            return loss_time_mse(clean, X.with_values(m * X.values), X).value

        g = loss_time_mse(clean, X.with_values(M * X.values), X).grad_mask
        assert_grad_close(g, fd_grad(f, M), tol=1e-6)

    def test_si_sdr(self, rng):
        clean, X, M = self._time_setup(rng)

        def f(m):
            return loss_si_sdr(clean, X.with_values(m * X.values), X).value

        g = loss_si_sdr(clean, X.with_values(M * X.values), X).grad_mask
        assert_grad_close(g, fd_grad(f, M))

    def test_gradients_are_finite_at_mask_edges(self, rng):
        S, D = rng.uniform(0, 2, (3, 3)), rng.uniform(0, 2, (3, 3))
        for p in GL_PARAMS + [LossParams(gamma=1, alpha=0.5, beta0=0.0)]:
            for m in (0.0, 1.0):
                assert np.isfinite(loss_generalized(S, D, np.full((3, 3), m), p).grad_mask).all()


def _grid_argmin(f):
    grid = np.linspace(0, 1, 2001)
    i = int(np.argmin([f(m) for m in grid]))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    return minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10}).x


class TestMinimizers:
    @pytest.mark.parametrize("s,d,mu", [(1.0, 1.0, 1.0), (2.0, 1.0, 1.0), (0.5, 1.5, 0.5), (3.0, 0.4, 4.0)])
    def test_components_minimizer_is_wiener(self, s, d, mu):
        xi = s**2 / d**2

        def f(m):
            return loss_components(one(s), one(d), one(m), mu).value

        assert _grid_argmin(f) == pytest.approx(xi / (xi + mu), abs=1e-6)

        def gl(m):
            return loss_generalized(one(s), one(d), one(m), LossParams(gamma=2, alpha=1, mu=mu, beta0=0.0)).value

        assert _grid_argmin(gl) == pytest.approx(xi / (xi + mu), abs=1e-6)

    @pytest.mark.parametrize("beta0", [0.0, 0.1, 0.5, 0.9])
    def test_residual_alone_is_minimized_at_target(self, beta0):
        p = LossParams(gamma=2, alpha=1, beta0=beta0)
        m = _grid_argmin(lambda m: loss_residual_noise_controlled(one(1.3), one(m), p).value)
        assert m == pytest.approx(beta0, abs=1e-6)


class TestTimeDomain:
    cfg = StftConfig(64, 32, 64)

    def clean(self, rng, n=640):
        x = np.zeros(n)
        x[64:-64] = rng.standard_normal(n - 128)  # silent edges, so the full signal is "interior"
        return Waveform(x, 8000)

    def test_round_trip_time_mse(self, rng):
        s = self.clean(rng)
        assert loss_time_mse(s, stft(s, self.cfg)).value < 1e-16

    def test_zero_estimate_time_mse(self, rng):
        s = self.clean(rng)
        X = stft(s, self.cfg)
        assert loss_time_mse(s, X.with_values(np.zeros_like(X.values))).value == pytest.approx(np.mean(s.samples**2))

    def test_scaled_copy_hits_cap(self, rng):
        s = self.clean(rng)
        X = stft(s, self.cfg)
        for c in (0.3, 1.0, 2.0):
            r = loss_si_sdr(s, X.with_values(c * X.values))
            assert r.value == -60.0
            assert not np.any(r.grad_mask)

    def test_orthogonal_error_gives_zero(self, rng):
        s = self.clean(rng)
        e = np.zeros(s.samples.size)
        e[64:-64] = rng.standard_normal(e.size - 128)
        e -= (e @ s.samples) / (s.samples @ s.samples) * s.samples
        e *= np.linalg.norm(s.samples) / np.linalg.norm(e)
        est = stft(Waveform(s.samples + e, 8000), self.cfg)
        assert loss_si_sdr(s, est).value == pytest.approx(0.0, abs=1e-9)

    def test_silent_reference_is_degenerate(self, rng):
        s = self.clean(rng)
        with pytest.raises(DegenerateSignalError):
            loss_si_sdr(Waveform(np.zeros(s.samples.size), 8000), stft(s, self.cfg))

    def test_length_mismatch(self, rng):
        s = self.clean(rng)
        X = stft(s, self.cfg)
        with pytest.raises(ShapeError):
            loss_time_mse(Waveform(np.zeros(s.samples.size + 1), 8000), X)


class TestDecomposition:
    def test_exact_identity(self, rng):
        S = rng.standard_normal((7, 9)) + 1j * rng.standard_normal((7, 9))
        D = rng.standard_normal((7, 9)) + 1j * rng.standard_normal((7, 9))
        M = rng.uniform(0, 1, (7, 9))
        assert sum(decompose_complex_mse(S, D, M)) == pytest.approx(complex_mse(S, D, M), rel=1e-10)

    def test_zero_mask(self, rng):
        S = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
        D = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
        dist, res, cross = decompose_complex_mse(S, D, np.zeros((3, 4)))
        assert dist == pytest.approx(np.sum(np.abs(S) ** 2))
        assert res == 0.0 and cross == 0.0

    def test_accepts_spectrogram_objects(self, rng):
        cfg = StftConfig(64, 32, 64)
        S = stft(Waveform(rng.standard_normal(300), 8000), cfg)
        D = stft(Waveform(rng.standard_normal(300), 8000), cfg)
        M = GainMask(rng.uniform(0, 1, S.shape))
        X = S.with_values(S.values + D.values)
        total = np.sum(np.abs(S.values - apply_mask(X, M).values) ** 2)
        assert sum(decompose_complex_mse(S, D, M)) == pytest.approx(total, rel=1e-10)


def test_shape_mismatch_everywhere():
    a, b = np.ones((2, 3)), np.ones((3, 2))
    with pytest.raises(ShapeError):
        loss_speech_distortion(a, b, LossParams())
    with pytest.raises(ShapeError):
        loss_residual_noise_controlled(a, b, LossParams())
    with pytest.raises(ShapeError):
        loss_components(a, a, b, 1.0)
    with pytest.raises(ShapeError):
        loss_mse_magnitude(a, b, a)
    with pytest.raises(ShapeError):
        decompose_complex_mse(a, a, b)


def test_param_validation_and_db():
    with pytest.raises(InvalidConfigError):
        LossParams(beta0=1.5)
    with pytest.raises(InvalidConfigError):
        LossParams(gamma=0.5)
    assert db_to_amplitude(-20) == pytest.approx(0.1)
    assert db_to_amplitude(-math.inf) == 0.0
    assert LossParams.from_db(beta0_db=-40).beta0 == pytest.approx(0.01)
