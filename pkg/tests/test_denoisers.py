import math

import numpy as np
import pytest
from scipy import integrate

import mixdiff as md
from mixdiff.denoisers import (
    TrainConfig,
    apply_prompt_drop,
    sinusoidal_embedding,
    toy_loss_and_grads,
    train_toy_denoiser,
)
from mixdiff.errors import ShapeError, TrainingDiverged
from mixdiff.targets import Ar1Temporal, Diagonal, FullCov, GaussianSpec, Isotropic


class CountingStub:
    """Denoiser returning fixed tensors per condition; counts evaluations."""

    def __init__(self, uncond_value=0.0, cond_value=1.0):
        self.uncond_value = uncond_value
        self.cond_value = cond_value
        self.calls = 0
        self.dims = (1, 1, 2, 2)

    def predict_eps(self, s_t, t, cond=None):
        self.calls += 1
        value = self.uncond_value if cond is None else self.cond_value
        return s_t.with_data(np.full(s_t.shape, value))


class TestAnalyticGaussianEps:
    def test_degenerate_target_recovers_injected_noise(self, sched1000, rng):
        dims = (2, 1, 3, 3)
        mu = rng.standard_normal(int(np.prod(dims)))
        target = GaussianSpec(dims=dims, mean=mu, cov=Isotropic(0.0))
        eps = md.sample_standard_normal(dims, rng)
        s_t = md.forward_perturb(md.LatentVideo(mu.reshape(dims)), 350, eps, sched1000)
        eps_hat = md.analytic_gaussian_eps(s_t, 350, target, sched1000)
        assert np.allclose(eps_hat.data, eps.data, atol=1e-12)

    def test_standard_normal_target_closed_form(self, sched1000, rng):
        dims = (2, 2, 2, 2)
        target = md.standard_normal_target(dims)
        s_t = md.sample_standard_normal(dims, rng)
        for t in (1, 250, 1000):
            eps_hat = md.analytic_gaussian_eps(s_t, t, target, sched1000)
            expected = math.sqrt(1.0 - sched1000.alpha_bar_at(t)) * s_t.data
            assert np.allclose(eps_hat.data, expected, rtol=1e-13)

    def test_diagonal_shrinkage_matches_quadrature_oracle(self, sched1000):
        # scalar site with variance v and mean mu: the posterior mean is
        # integral s0 q(s0) N(s_t; sqrt(ab) s0, 1-ab) ds0 / normalizer
        t = 420
        ab = sched1000.alpha_bar_at(t)
        v, mu, s_obs = 2.7, 0.8, 1.9

        def weight(s0):
            return math.exp(
                -((s0 - mu) ** 2) / (2 * v)
                - (s_obs - math.sqrt(ab) * s0) ** 2 / (2 * (1 - ab))
            )

        num = integrate.quad(lambda s0: s0 * weight(s0), -40, 40, limit=200)[0]
        den = integrate.quad(weight, -40, 40, limit=200)[0]
        m_oracle = num / den

        dims = (1, 1, 1, 1)
        target = GaussianSpec(dims=dims, mean=np.array([mu]), cov=Diagonal(np.array([v])))
        s_t = md.LatentVideo(np.full(dims, s_obs))
        eps_hat = md.analytic_gaussian_eps(s_t, t, target, sched1000)
        m_impl = (s_obs - math.sqrt(1 - ab) * eps_hat.data[0, 0, 0, 0]) / math.sqrt(ab)
        assert abs(m_impl - m_oracle) < 1e-6

    def test_full_cov_matches_joint_conditioning_oracle(self, sched1000):
        # brute force: assemble the joint (s0, s_t) covariance explicitly and
        # condition via the textbook formula with np.linalg.inv
        gen = np.random.default_rng(3)
        dims = (1, 1, 2, 2)
        a = gen.normal(size=(4, 4))
        sigma = a @ a.T
        mu = gen.normal(size=4)
        target = GaussianSpec(dims=dims, mean=mu, cov=FullCov(sigma))
        t = 777
        ab = sched1000.alpha_bar_at(t)

        cov_tt = ab * sigma + (1 - ab) * np.eye(4)
        cov_0t = math.sqrt(ab) * sigma
        s_obs = gen.normal(size=4)
        m_oracle = mu + cov_0t @ np.linalg.inv(cov_tt) @ (s_obs - math.sqrt(ab) * mu)

        s_t = md.LatentVideo(s_obs.reshape(dims))
        eps_hat = md.analytic_gaussian_eps(s_t, t, target, sched1000)
        m_impl = (s_obs - math.sqrt(1 - ab) * eps_hat.data.ravel()) / math.sqrt(ab)
        assert np.allclose(m_impl, m_oracle, atol=1e-10)

    def test_ar1_matches_monte_carlo_regression_oracle(self, sched1000):
        # E[eps | s_t] is linear in s_t for Gaussian targets; estimate the
        # linear map from 1e6 paired draws and compare predictions
        dims = (3, 1, 2, 2)
        n_flat = int(np.prod(dims))
        target = GaussianSpec(dims=dims, mean=0.0, cov=Ar1Temporal(rho=0.8, variance=1.5))
        t = 500
        ab = sched1000.alpha_bar_at(t)
        rng = md.RngStream(5150, 0)
        n = 1_000_000
        s0 = target.sample_batch(rng, n).reshape(n, n_flat)
        eps = rng.standard_normal((n, n_flat))
        s_t = math.sqrt(ab) * s0 + math.sqrt(1 - ab) * eps
        coef, *_ = np.linalg.lstsq(s_t, eps, rcond=None)

        probe_rng = md.RngStream(6000, 0)
        probes = probe_rng.standard_normal((200, n_flat))
        oracle_pred = probes @ coef
        impl_pred = np.stack(
            [
                md.analytic_gaussian_eps(
                    md.LatentVideo(p.reshape(dims)), t, target, sched1000
                ).data.ravel()
                for p in probes
            ]
        )
        rms = math.sqrt(np.mean((impl_pred - oracle_pred) ** 2))
        assert rms < 0.02

    def test_t_zero_is_domain_error(self, sched1000, rng):
        target = md.standard_normal_target((1, 1, 2, 2))
        s_t = md.sample_standard_normal((1, 1, 2, 2), rng)
        with pytest.raises(ValueError):
            md.analytic_gaussian_eps(s_t, 0, target, sched1000)

    def test_shape_mismatch_rejected(self, sched1000, rng):
        target = md.standard_normal_target((2, 1, 2, 2))
        bad = md.sample_standard_normal((2, 2, 2, 2), rng)
        with pytest.raises(ShapeError):
            md.analytic_gaussian_eps(bad, 10, target, sched1000)

    def test_denoiser_class_matches_free_function_and_batches(self, sched1000, rng):
        frame_dims = (1, 2, 3, 3)
        target = GaussianSpec(
            dims=frame_dims,
            mean=rng.standard_normal(18),
            cov=Diagonal(np.linspace(0.1, 2.0, 18)),
        )
        den = md.AnalyticGaussianDenoiser(target, sched1000)
        batch = md.FrameBatch(rng.standard_normal((5, 2, 3, 3)))
        got = den.predict_eps(batch, 321)
        assert isinstance(got, md.FrameBatch)
        per_frame = np.stack(
            [
                md.analytic_gaussian_eps(
                    md.LatentVideo(batch.data[i : i + 1]), 321, target, sched1000
                ).data[0]
                for i in range(5)
            ]
        )
        assert np.allclose(got.data, per_frame, rtol=1e-14)

    def test_affine_superposition(self, sched1000, rng):
        dims = (3, 1, 2, 2)
        target = GaussianSpec(dims=dims, mean=1.0, cov=Ar1Temporal(rho=0.6))
        den = md.AnalyticGaussianDenoiser(target, sched1000)
        x = md.sample_standard_normal(dims, rng)
        y = md.sample_standard_normal(dims, rng)
        a = 0.3125  # exact binary fraction keeps the check sharp
        mix = md.LatentVideo(a * x.data + (1 - a) * y.data)
        lhs = den.predict_eps(mix, 600).data
        rhs = a * den.predict_eps(x, 600).data + (1 - a) * den.predict_eps(y, 600).data
        assert np.allclose(lhs, rhs, atol=1e-12)


class TestGuidedEps:
    def test_g_one_collapses_to_conditional(self, rng):
        stub = CountingStub()
        s = md.sample_standard_normal((1, 1, 2, 2), rng)
        out = md.guided_eps(stub, s, 5, 3, 1.0)
        assert stub.calls == 1
        assert np.all(out.data == 1.0)

    def test_g_zero_collapses_to_unconditional(self, rng):
        stub = CountingStub()
        s = md.sample_standard_normal((1, 1, 2, 2), rng)
        out = md.guided_eps(stub, s, 5, 3, 0.0)
        assert stub.calls == 1
        assert np.all(out.data == 0.0)

    def test_extrapolation_arithmetic(self, rng):
        stub = CountingStub(uncond_value=0.0, cond_value=1.0)
        s = md.sample_standard_normal((1, 1, 2, 2), rng)
        out = md.guided_eps(stub, s, 5, 3, 2.0)
        assert stub.calls == 2
        assert np.all(out.data == 2.0)

    def test_collapse_is_bit_exact_for_analytic_denoiser(self, sched1000, rng):
        target = md.standard_normal_target((2, 1, 2, 2))
        den = md.AnalyticGaussianDenoiser(target, sched1000)
        s = md.sample_standard_normal((2, 1, 2, 2), rng)
        direct = den.predict_eps(s, 100, 0)
        for g in (0.0, 1.0):
            guided = md.guided_eps(den, s, 100, 0, g)
            assert np.array_equal(guided.data, direct.data)


class TestToyDenoiser:
    def test_zero_steps_returns_initialization(self, sched1000):
        target = md.standard_normal_target((1, 1, 1, 1))
        res = train_toy_denoiser(
            target, sched1000, TrainConfig(steps=0), md.RngStream(11, 0)
        )
        fresh = md.ToyDenoiser.initialize((1, 1, 1, 1), 64, 0, md.RngStream(11, 0))
        for key in fresh.params:
            assert np.array_equal(res.denoiser.params[key], fresh.params[key])
        assert len(res.losses) == 0

    def test_gradients_match_central_finite_differences(self, sched1000):
        rng = md.RngStream(21, 0)
        den = md.ToyDenoiser.initialize((1, 1, 2, 2), 8, 2, rng, embed_dim=8)
        batch = 6
        rows = rng.standard_normal((batch, 4))
        t = np.array([1, 5, 10, 200, 600, 1000])
        cond = [0, 1, None, 1, None, 0]
        targets = rng.standard_normal((batch, 4))

        _, grads = toy_loss_and_grads(den, rows, t, cond, targets)
        step = 1e-5
        for key, grad in grads.items():
            flat = den.params[key].ravel()
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + step
                up, _ = toy_loss_and_grads(den, rows, t, cond, targets)
                flat[idx] = orig - step
                down, _ = toy_loss_and_grads(den, rows, t, cond, targets)
                flat[idx] = orig
                fd = (up - down) / (2 * step)
                an = grad.ravel()[idx]
                assert abs(an - fd) <= 1e-4 * max(abs(fd), abs(an), 1e-10), (
                    f"{key}[{idx}]: analytic {an} vs fd {fd}"
                )

    def test_prompt_drop_statistics(self):
        rng = md.RngStream(8080, 0)
        labels = [3] * 100_000
        dropped = apply_prompt_drop(labels, 0.3, rng)
        frac = sum(1 for lab in dropped if lab is None) / len(dropped)
        assert abs(frac - 0.3) < 0.005
        assert apply_prompt_drop([1, 2], 0.0, rng) == [1, 2]
        assert apply_prompt_drop([1, 2], 1.0, rng) == [None, None]

    def test_divergence_raises_with_step_index(self, sched1000):
        target = md.standard_normal_target((1, 1, 1, 1))
        with pytest.raises(TrainingDiverged) as err:
            train_toy_denoiser(
                target,
                sched1000,
                TrainConfig(steps=200, lr=1e200, warmup=1),
                md.RngStream(13, 0),
            )
        assert 0 <= err.value.step < 200

    def test_mmse_dominance_over_undertrained_toy(self, sched1000):
        dims = (1, 1, 1, 1)
        target = md.standard_normal_target(dims)
        res = train_toy_denoiser(
            target,
            sched1000,
            TrainConfig(steps=400, batch=64, lr=3e-3, warmup=50,
                        prompt_drop_prob=0.0, noise_offset=0.0),
            md.RngStream(17, 0),
        )
        analytic = md.AnalyticGaussianDenoiser(target, sched1000)
        rng = md.RngStream(18, 0)
        n = 10_000
        for t in (50, 300, 700, 1000):
            ab = sched1000.alpha_bar_at(t)
            s0 = target.sample_batch(rng, n).reshape(n, 1)
            eps = rng.standard_normal((n, 1))
            s_t = math.sqrt(ab) * s0 + math.sqrt(1 - ab) * eps
            toy_pred = res.denoiser.predict_rows(s_t, np.full(n, t), [None] * n)
            ana_pred = math.sqrt(1 - ab) * s_t  # MMSE closed form
            toy_mse = np.mean((toy_pred - eps) ** 2)
            ana_mse = np.mean((ana_pred - eps) ** 2)
            assert ana_mse <= toy_mse * 1.01

    def test_save_load_round_trip(self, tmp_path, rng):
        den = md.ToyDenoiser.initialize((2, 1, 2, 2), 10, 3, rng)
        den.save(tmp_path / "model")
        loaded = md.ToyDenoiser.load(tmp_path / "model")
        assert loaded.input_dims == den.input_dims
        assert loaded.num_classes == den.num_classes
        x = md.sample_standard_normal((2, 1, 2, 2), rng)
        a = den.predict_eps(x, 7, 1)
        # parameters pass through f32 storage
        for key in den.params:
            assert np.array_equal(
                loaded.params[key],
                den.params[key].astype(np.float32).astype(np.float64),
            )
        b = loaded.predict_eps(x, 7, 1)
        assert np.allclose(a.data, b.data, atol=1e-6)

    def test_embedding_shape_and_range(self):
        emb = sinusoidal_embedding(np.array([1, 500, 1000]), 16)
        assert emb.shape == (3, 16)
        assert np.all(np.abs(emb) <= 1.0)
        assert not np.allclose(emb[0], emb[1])


class TestOffsetNoise:
    def test_offset_is_shared_per_frame_channel(self):
        # correlation between two spatial positions of the same (frame,
        # channel) plane equals offset^2 / (1 + offset^2) under the recipe
        rng = md.RngStream(31, 0)
        offset = 0.5
        n = 200_000
        base = rng.standard_normal((n, 1, 1, 2, 2))
        o = rng.standard_normal((n, 1, 1, 1, 1))
        eps = base + offset * o
        flat = eps.reshape(n, 4)
        corr = np.corrcoef(flat[:, 0], flat[:, 3])[0, 1]
        expected = offset**2 / (1 + offset**2)
        assert abs(corr - expected) < 0.01
