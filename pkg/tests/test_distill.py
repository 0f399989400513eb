import math
from dataclasses import replace

import numpy as np
import pytest

from burstlab.distill import (DistillConfig, StationaryGaussianPrior, TRACE_COLUMNS,
                              closed_form_vsd_gradient, compute_vsd_weight, generator_eps,
                              hf_vsd_update, make_schedule, noisify, one_step_denoise, prior_eps,
                              run_distillation, vsd_gradient)
from burstlab.errors import (DivergenceError, ParameterError, ShapeError, TimestepError,
                             WeightOverflowError)
from burstlab.spectral import RadialMask, fft2, lowband_zero_mask, make_mask, project

SCHED = make_schedule()


def symmetric_variance(rng, n, scale=0.05):
    v = rng.random((n, n)) * scale
    idx = (-np.arange(n)) % n
    v = 0.5 * (v + v[np.ix_(idx, idx)])
    return np.fft.fftshift(v)


def unitary_dft(n):
    f1 = np.fft.fft(np.eye(n), norm="ortho", axis=0)
    return np.kron(f1, f1)


class TestSchedule:
    def test_first_step(self):
        assert SCHED.alphas[1] == pytest.approx(math.sqrt(1 - 1e-4), abs=1e-15)
        assert SCHED.alphas[0] == 1.0

    def test_variance_preserving(self):
        assert np.max(np.abs(SCHED.alphas ** 2 + SCHED.betas ** 2 - 1)) < 1e-12
        assert np.all(np.diff(SCHED.alphas) <= 0)
        assert SCHED.alphas[-1] < SCHED.alphas[1]

    def test_product_oracle(self):
        b = np.linspace(1e-4, 0.02, 1000)
        assert SCHED.alphas[500] ** 2 == pytest.approx(math.prod(1 - b[:500]), rel=1e-12)

    def test_bad_range(self):
        with pytest.raises(ParameterError):
            make_schedule(beta_start=0.02, beta_end=0.01)


class TestForward:
    def test_noisify(self, rng):
        x, e = rng.random((4, 4)), rng.standard_normal((4, 4))
        assert np.array_equal(noisify(x, 0, e, SCHED), x + 0 * e)
        assert np.array_equal(noisify(x, 300, np.zeros((4, 4)), SCHED), SCHED.alphas[300] * x)
        with pytest.raises(ShapeError):
            noisify(x, 3, np.zeros((3, 3)), SCHED)

    def test_noise_variance(self, rng):
        t = 400
        x = rng.random(100000)
        z = noisify(x, t, rng.standard_normal(x.shape), SCHED)
        assert np.var(z - SCHED.alphas[t] * x) == pytest.approx(SCHED.betas[t] ** 2, rel=0.02)

    def test_one_step_denoise(self, rng):
        x, e = rng.random((4, 4)), rng.standard_normal((4, 4))
        z = noisify(x, SCHED.T, e, SCHED)
        assert np.max(np.abs(one_step_denoise(z, e, SCHED) - x)) < 1e-12
        assert np.all(one_step_denoise(np.zeros(3), np.zeros(3), SCHED) == 0)
        a, b = SCHED.alphas[SCHED.T], SCHED.betas[SCHED.T]
        assert one_step_denoise(np.array([0.3]), np.array([0.1]), SCHED)[0] == pytest.approx((0.3 - b * 0.1) / a)


class TestScores:
    def test_point_mass_prior(self, rng):
        mu, z = rng.random((6, 6)), rng.random((6, 6))
        p = StationaryGaussianPrior.point_mass(mu)
        t = 250
        assert np.allclose(prior_eps(p, z, t, SCHED), (z - SCHED.alphas[t] * mu) / SCHED.betas[t], atol=1e-14)

    def test_at_mean_is_zero(self, rng):
        p = StationaryGaussianPrior(rng.random((8, 8)), symmetric_variance(rng, 8))
        assert np.max(np.abs(prior_eps(p, SCHED.alphas[100] * p.mean, 100, SCHED))) < 1e-14

    @pytest.mark.parametrize("t", [20, 300, 900])
    def test_dense_covariance_oracle(self, rng, t):
        n = 8
        var = symmetric_variance(rng, n, scale=0.5)
        p = StationaryGaussianPrior(rng.random((n, n)), var)
        z = rng.standard_normal((n, n))
        f = unitary_dft(n)
        cov = np.real(f.conj().T @ np.diag(np.fft.ifftshift(var).ravel()) @ f)
        a, b = SCHED.alphas[t], SCHED.betas[t]
        expect = b * np.linalg.solve(a * a * cov + b * b * np.eye(n * n), (z - a * p.mean).ravel())
        assert np.max(np.abs(prior_eps(p, z, t, SCHED).ravel() - expect)) < 1e-9

    def test_asymmetric_variance_rejected(self):
        v = np.zeros((4, 4))
        v[0, 1] = 1.0
        with pytest.raises(ParameterError):
            StationaryGaussianPrior(np.zeros((4, 4)), v)

    def test_generator_round_trip(self, rng):
        x, e = rng.random((5, 5)), rng.standard_normal((5, 5))
        z = noisify(x, 500, e, SCHED)
        assert np.max(np.abs(generator_eps(x, z, 500, SCHED) - e)) < 1e-12
        assert np.all(generator_eps(x, SCHED.alphas[500] * x, 500, SCHED) == 0)
        p = StationaryGaussianPrior.point_mass(x)
        assert np.max(np.abs(generator_eps(x, z, 500, SCHED) - prior_eps(p, z, 500, SCHED))) < 1e-12

    def test_timestep_guard(self, rng):
        x = rng.random((3, 3))
        with pytest.raises(TimestepError):
            generator_eps(x, x, 0, SCHED)


class TestVsd:
    def test_matched_prior_zero(self, rng):
        x = rng.random((8, 8))
        p = StationaryGaussianPrior.point_mass(x)
        for t in (20, 500, 980):
            assert np.all(vsd_gradient(x, p, t, rng.standard_normal((8, 8)), SCHED) == 0)

    def test_omega_scaling(self, rng):
        x = rng.random((8, 8))
        p = StationaryGaussianPrior(x + 0.1, symmetric_variance(rng, 8))
        e = rng.standard_normal((8, 8))
        g1 = vsd_gradient(x, p, 300, e, SCHED)
        assert np.array_equal(vsd_gradient(x, p, 300, e, SCHED, omega=2.5), 2.5 * g1)

    def test_closed_form_scalar_quadrature(self):
        x, mu, var = 0.7, 0.2, 0.3
        p = StationaryGaussianPrior(np.array([[mu]]), np.array([[var]]))
        abar = 1.0
        total, count = 0.0, 0
        for t in range(1, 981):
            abar *= 1.0 - (1e-4 + (0.02 - 1e-4) * (t - 1) / 999)
            if t >= 20:
                a, b = math.sqrt(abar), math.sqrt(1 - abar)
                total += a * a * b * (x - mu) / (a * a * var + b * b)
                count += 1
        got = closed_form_vsd_gradient(np.array([[x]]), p, SCHED)[0, 0]
        assert abs(got - total / count) < 1e-6

    def test_closed_form_matched_and_linear(self, rng):
        x = rng.random((6, 6))
        assert np.all(closed_form_vsd_gradient(x, StationaryGaussianPrior.point_mass(x), SCHED) == 0)
        mu = rng.random((6, 6))
        p = StationaryGaussianPrior.point_mass(mu)
        g1 = closed_form_vsd_gradient(mu + 0.1 * (x - mu), p, SCHED)
        g3 = closed_form_vsd_gradient(mu + 0.3 * (x - mu), p, SCHED)
        assert np.allclose(3 * g1, g3, atol=1e-13)

    def test_hf_update(self, rng):
        x = rng.random((8, 8))
        p = StationaryGaussianPrior(rng.random((8, 8)), symmetric_variance(rng, 8))
        e = rng.standard_normal((8, 8))
        mask = make_mask(8, 8)
        g = vsd_gradient(x, p, 400, e, SCHED)
        u = hf_vsd_update(x, p, mask, 400, e, SCHED)
        assert np.max(np.abs(u - project(g, mask))) < 1e-12
        assert np.max(np.abs(np.abs(fft2(u)) - mask.values * np.abs(fft2(g)))) < 1e-10
        assert np.max(np.abs(hf_vsd_update(x, p, RadialMask(np.zeros((8, 8))), 400, e, SCHED))) < 1e-15
        assert np.allclose(hf_vsd_update(x, p, RadialMask(np.ones((8, 8))), 400, e, SCHED), g, atol=1e-14)

    def test_hf_dc_only_gradient(self, rng):
        x = rng.random((8, 8))
        p = StationaryGaussianPrior.point_mass(x + 0.05)
        e = rng.standard_normal((8, 8))
        g = vsd_gradient(x, p, 400, e, SCHED)
        u = hf_vsd_update(x, p, make_mask(8, 8), 400, e, SCHED)
        assert abs(fft2(u)[4, 4]) == pytest.approx(0.2 * abs(fft2(g)[4, 4]), rel=1e-12)

    def test_weight(self, rng):
        assert compute_vsd_weight(np.full((3, 3), 2.0), np.zeros((3, 3))) == 0.25
        with pytest.raises(WeightOverflowError):
            compute_vsd_weight(np.ones(4), np.ones(4))
        a, b = rng.random(10), rng.random(10)
        assert compute_vsd_weight(a, b) == pytest.approx(1 / np.mean((a - b) ** 2), rel=1e-14)


def make_problem(rng, n=16, shift=0.1):
    gt = 0.5 + 0.1 * rng.standard_normal((n, n, 3))
    y = gt + 0.01 * rng.standard_normal(gt.shape)
    prior = StationaryGaussianPrior(gt + shift, np.full((n, n), 0.01))
    return gt, y, prior


class TestRunDistillation:
    def test_config_validation(self):
        with pytest.raises(ParameterError):
            DistillConfig(mode="bogus")
        with pytest.raises(ParameterError):
            DistillConfig(t_min=500, t_max=100)
        with pytest.raises(ParameterError):
            DistillConfig(lam=-1)
        with pytest.raises(ParameterError):
            DistillConfig(tail_fraction=0)
        assert DistillConfig(mode="naive").mode == "naive_vsd"

    def test_mask_required(self, rng):
        gt, y, prior = make_problem(rng)
        with pytest.raises(ShapeError):
            run_distillation(y, prior, DistillConfig(steps=1))

    @pytest.mark.parametrize("mode", ["naive_vsd", "hf_vsd"])
    def test_one_step_matches_estimator(self, rng, mode):
        gt, y, prior = make_problem(rng)
        x0 = y + 0.02 * rng.standard_normal(y.shape)
        mask = make_mask(16, 16)
        cfg = DistillConfig(steps=1, lr=0.3, lam=0.7, mask=mask, mode=mode, seed=5)
        state = run_distillation(y, prior, cfg, init=x0)
        draw = np.random.Generator(np.random.Philox(5))
        t = int(draw.integers(cfg.t_min, cfg.t_max + 1))
        eps = draw.standard_normal(y.shape)
        if mode == "naive_vsd":
            reg = vsd_gradient(x0, prior, t, eps, SCHED)
        else:
            reg = hf_vsd_update(x0, prior, mask, t, eps, SCHED)
        data = project(project(x0 - y, mask, "low"), mask, "low")
        expect = x0 - 0.3 * (data + 0.7 * reg)
        assert np.max(np.abs(state.x_hat - expect)) < 1e-12

    def test_data_only_converges(self, rng):
        gt, y, prior = make_problem(rng)
        mask = lowband_zero_mask(16, 16, 3)
        cfg = DistillConfig(steps=60, lr=0.5, mask=mask, mode="data_only")
        state = run_distillation(y, prior, cfg, init=np.zeros_like(y))
        low = project(state.x_hat - y, mask, "low")
        assert np.sqrt(np.mean(low ** 2)) < 1e-6
        assert state.trace["lowband_err"][-1] < 1e-6

    def test_hf_low_band_equals_data_only(self, rng):
        gt, y, prior = make_problem(rng)
        mask = lowband_zero_mask(16, 16, 3)
        low = mask.values == 0
        tracks = {}
        for mode in ("hf_vsd", "data_only"):
            rec = []
            cfg = DistillConfig(steps=200, lr=0.2, mask=mask, mode=mode, seed=2)
            run_distillation(y, prior, cfg, init=y + 0.05, reference=gt,
                             callback=lambda k, s, rec=rec: rec.append(s[low]))
            tracks[mode] = np.array(rec)
        assert np.max(np.abs(tracks["hf_vsd"] - tracks["data_only"])) < 1e-10

    def test_lambda_zero_matches_data_only(self, rng):
        gt, y, prior = make_problem(rng)
        mask = make_mask(16, 16)
        base = run_distillation(y, prior, DistillConfig(steps=30, mask=mask, mode="data_only"), init=gt)
        for mode in ("naive_vsd", "hf_vsd"):
            st = run_distillation(y, prior, DistillConfig(steps=30, mask=mask, mode=mode, lam=0.0), init=gt)
            assert np.array_equal(st.x_hat, base.x_hat)

    def test_deterministic_and_trace(self, rng):
        gt, y, prior = make_problem(rng)
        cfg = DistillConfig(steps=25, mask=make_mask(16, 16), mode="naive", seed=3)
        a = run_distillation(y, prior, cfg)
        b = run_distillation(y, prior, cfg)
        assert np.array_equal(a.x_hat, b.x_hat) and a.rows() == b.rows()
        assert tuple(a.trace) == TRACE_COLUMNS
        assert all(len(v) == 25 for v in a.trace.values())
        assert a.trace["iter"] == list(range(1, 26))
        c = run_distillation(y, prior, replace(cfg, seed=4))
        assert not np.array_equal(a.x_hat, c.x_hat)

    def test_grayscale(self, rng):
        gt, y, prior = make_problem(rng)
        p1 = StationaryGaussianPrior(prior.mean[..., 0], prior.spectral_variance)
        st = run_distillation(y[..., 0], p1, DistillConfig(steps=5, mask=make_mask(16, 16)))
        assert st.x_hat.shape == (16, 16)

    def test_adaptive_omega(self, rng):
        gt, y, prior = make_problem(rng)
        st = run_distillation(y, prior, DistillConfig(steps=5, mask=make_mask(16, 16), omega="adaptive"))
        assert np.all(np.isfinite(st.x_hat))

    def test_divergence(self, rng):
        gt, y, prior = make_problem(rng)
        cfg = DistillConfig(steps=500, lr=10.0, mask=make_mask(16, 16), mode="data_only")
        with pytest.raises(DivergenceError) as info:
            run_distillation(y, prior, cfg, init=y + 1.0)
        assert info.value.trace is not None
        assert 0 < info.value.trace.iteration < 500
