import numpy as np
import pytest

from zapslab.operators import (
    BicubicDownsampleOperator,
    IdentityOperator,
    MatrixOperator,
    gaussian_blur_operator,
    random_mask_operator,
)
from zapslab.oracle import woodbury_both_forms
from zapslab.prior import gaussian_prior, tweedie_denoise
from zapslab.sampler import (
    GuidanceConfig,
    NoiseBank,
    apply_tweedie_jacobian,
    ddim_sigma,
    ddim_step,
    ddpm_jump_step,
    dps_guidance,
    jump_coefficients,
    mcg_step,
    pigdm_direction,
    pigdm_guidance,
    pocs_projection,
    run_reverse,
    zaps_guided_step,
)
from zapslab.schedule import (
    build_irregular_subschedule,
    build_linear_schedule,
    build_uniform_subschedule,
    schedule_from_betas,
)
from zapslab.wavelet import WaveletBasis

SHAPE = (1, 8, 8)


class TestTransitions:
    def test_contiguous_is_ancestral(self, schedule, rng):
        # eps-parameterized ancestral step with eps_hat = -sqrt(1 - abar) * score
        for t in rng.integers(2, 1001, size=10):
            t = int(t)
            x, s, z = rng.standard_normal((3, 6))
            x0_hat = tweedie_denoise(x, t, schedule, s)
            got = ddpm_jump_step(x, t, t - 1, schedule, x0_hat, z)
            eps = -np.sqrt(1 - schedule.alpha_bar(t)) * s
            want = (x - schedule.beta(t) / np.sqrt(1 - schedule.alpha_bar(t)) * eps) / np.sqrt(schedule.alpha(t))
            want += schedule.posterior_sigma(t) * z
            np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12)

    def test_no_jump(self, rng):
        # a vanishing beta makes abar_2 == abar_1 in floating point
        sch = schedule_from_betas([0.1, 1e-300])
        assert sch.alpha_bar(2) == sch.alpha_bar(1)
        x = rng.standard_normal(4)
        np.testing.assert_allclose(ddpm_jump_step(x, 2, 1, sch, x, np.zeros(4)), x, atol=1e-15)

    def test_jump_sigma_consecutive(self, schedule):
        _, _, sigma = jump_coefficients(schedule, 300, 299)
        assert sigma == pytest.approx(schedule.posterior_sigma(300), rel=1e-12)

    def test_ddim_eta_one_is_ddpm_sigma(self, schedule):
        for t, tp in ((300, 299), (900, 700), (34, 1)):
            assert ddim_sigma(schedule, t, tp, 1.0) == pytest.approx(jump_coefficients(schedule, t, tp)[2], rel=1e-12)

    def test_ddim_eta_zero_closed_form(self, rng):
        # for N(0, I): x0_hat = sqrt(ab) x and eps_hat = sqrt(1 - ab) x
        sch = build_linear_schedule(1000)
        sub = build_irregular_subschedule(1000, [4, 3, 2])
        prior = gaussian_prior(np.zeros(5), np.ones(5))
        cfg = GuidanceConfig(method="none", ddim_eta=0.0)
        x0, traj = run_reverse(sch, sub, prior, None, None, cfg, seed=3, record=True)
        factor = 1.0
        for i in reversed(range(sub.S)):
            ab, abp = sch.alpha_bar(sub.tau[i]), sch.alpha_bar(sub.previous(i))
            factor *= np.sqrt(abp * ab) + np.sqrt((1 - abp) * (1 - ab))
        np.testing.assert_allclose(x0, factor * traj.steps[0].x_t, rtol=1e-12)

    def test_ddim_deterministic(self, schedule):
        prior = gaussian_prior(np.full(SHAPE, 0.5), np.full(SHAPE, 0.1))
        A = gaussian_blur_operator(SHAPE, 3, 1.0)
        sub = build_irregular_subschedule(1000, [5, 3, 2])
        cfg = GuidanceConfig(method="dps", zeta=0.3, ddim_eta=0.0)
        y = np.full(SHAPE, 0.4)
        a, _ = run_reverse(schedule, sub, prior, A, y, cfg, seed=9)
        b, _ = run_reverse(schedule, sub, prior, A, y, cfg, seed=9)
        assert a.tobytes() == b.tobytes()

    def test_ddim_step_stochastic_part(self, schedule, rng):
        x, x0, eps, z = rng.standard_normal((4, 3))
        base = ddim_step(x, 400, 300, schedule, x0, eps, 0.5, np.zeros(3))
        noisy = ddim_step(x, 400, 300, schedule, x0, eps, 0.5, z)
        np.testing.assert_allclose(noisy - base, ddim_sigma(schedule, 400, 300, 0.5) * z, atol=1e-14)


class TestStationarity:
    def test_unit_gaussian_moments_per_step(self):
        # coordinates of a diagonal prior are independent chains
        n = 10_000
        sch = build_linear_schedule(1000)
        sub = build_uniform_subschedule(1000, 1000)
        prior = gaussian_prior(np.zeros(n), np.ones(n))
        _, traj = run_reverse(sch, sub, prior, None, None, GuidanceConfig(method="none"), seed=0, record=True)
        for rec in traj.steps[:-1]:  # the last step is noiseless by construction
            x = rec.x_prime
            assert abs(x.mean()) < 3 / np.sqrt(n)
            assert abs(x.var() - 1) < 3 * np.sqrt(2 / n)

    def test_jump_variance_deficit(self, schedule):
        # plugging in E[x0 | x_t] instead of a draw of x0 shrinks the variance
        # by c_x0^2 Var(x0 | x_t); for N(0, I) the output variance is
        # (c_x + c_x0 sqrt(abar))^2 + sigma^2
        n = 200_000
        prior = gaussian_prior(np.zeros(n), np.ones(n))
        t, tp = 134, 112
        c_x, c_x0, sigma = jump_coefficients(schedule, t, tp)
        predicted = (c_x + c_x0 * np.sqrt(schedule.alpha_bar(t))) ** 2 + sigma**2
        assert predicted < 0.99
        rng = np.random.default_rng(5)
        x = rng.standard_normal(n)
        x0_hat = tweedie_denoise(x, t, schedule, prior.score(x, t, schedule))
        out = ddpm_jump_step(x, t, tp, schedule, x0_hat, rng.standard_normal(n))
        assert abs(out.var() - predicted) < 3 * predicted * np.sqrt(2 / n)
        assert out.var() < 1 - 3 * np.sqrt(2 / n)

    def test_full_chain_matches_prior(self):
        n = 1000
        T = 200
        sch = build_linear_schedule(T, 1e-4, 0.1)
        sub = build_uniform_subschedule(T, T)
        mean, var = 0.3, 0.25
        prior = gaussian_prior(np.full(n, mean), np.full(n, var))
        x0, _ = run_reverse(sch, sub, prior, None, None, GuidanceConfig(method="none"), seed=1)
        assert abs(x0.mean() - mean) < 3 * np.sqrt(var / n)
        assert abs(x0.var() - var) < 3 * var * np.sqrt(2 / n)


class TestGuidance:
    def _setup(self, rng):
        A = gaussian_blur_operator(SHAPE, 3, 1.0)
        x_t, x_prime, x0_hat = rng.standard_normal((3,) + SHAPE)
        return A, x_t, x_prime, x0_hat

    def test_zero_zeta(self, schedule, rng):
        A, x_t, x_prime, x0_hat = self._setup(rng)
        y = rng.standard_normal(SHAPE)
        np.testing.assert_array_equal(dps_guidance(x_prime, x_t, x0_hat, A, y, 0.0, 10, schedule), x_prime)

    def test_zero_residual(self, schedule, rng, db4):
        A, x_t, x_prime, x0_hat = self._setup(rng)
        y = A.apply(x0_hat)
        np.testing.assert_allclose(dps_guidance(x_prime, x_t, x0_hat, A, y, 1.0, 10, schedule), x_prime)
        np.testing.assert_allclose(pigdm_guidance(x_prime, x_t, x0_hat, A, y, 1.0, 0.5, 0.05, 10, schedule),
                                   x_prime)
        D = np.full(SHAPE, 0.2)
        basis = WaveletBasis("db2", 1)
        np.testing.assert_allclose(zaps_guided_step(x_prime, x_t, x0_hat, A, y, 1.0, D, basis, schedule, 10),
                                   x_prime)

    def test_dps_identity_form(self, schedule, rng):
        A, x_t, x_prime, x0_hat = self._setup(rng)
        y = rng.standard_normal(SHAPE)
        t = 250
        got = dps_guidance(x_prime, x_t, x0_hat, A, y, 0.7, t, schedule)
        want = x_prime + 0.7 * A.adjoint(y - A.apply(x0_hat)) / np.sqrt(schedule.alpha_bar(t))
        np.testing.assert_allclose(got, want, atol=1e-14)

    def test_normalized_residual(self, schedule, rng):
        A, x_t, x_prime, x0_hat = self._setup(rng)
        y = rng.standard_normal(SHAPE)
        a = dps_guidance(x_prime, x_t, x0_hat, A, y, 1.0, 5, schedule, normalize_residual=True)
        b = dps_guidance(x_prime, x_t, x0_hat, A, 3 * y - 2 * A.apply(x0_hat), 1.0, 5, schedule,
                         normalize_residual=True)
        np.testing.assert_allclose(a, b, atol=1e-13)

    def test_wavelet_diag_exact(self, schedule, rng):
        basis = WaveletBasis("db4", 1)
        prior = gaussian_prior(np.full(SHAPE, 0.5), rng.uniform(0.05, 1, SHAPE), basis)
        v, x_t = rng.standard_normal((2,) + SHAPE)
        for t in (3, 300, 1000):
            D = prior.hessian_diagonal(t, schedule)
            a = apply_tweedie_jacobian(v, x_t, t, schedule, "wavelet_diag", prior, D, basis)
            b = apply_tweedie_jacobian(v, x_t, t, schedule, "exact_oracle", prior)
            np.testing.assert_allclose(a, b, atol=1e-10)

    def test_jacobian_mode_requirements(self, schedule):
        with pytest.raises(ValueError):
            apply_tweedie_jacobian(np.ones(SHAPE), np.ones(SHAPE), 5, schedule, "wavelet_diag")
        with pytest.raises(ValueError):
            apply_tweedie_jacobian(np.ones(SHAPE), np.ones(SHAPE), 5, schedule, "exact_oracle")
        with pytest.raises(ValueError):
            GuidanceConfig(jacobian_mode="full")

    def test_zaps_zero_diag_is_dps(self, schedule, rng, db4):
        A = gaussian_blur_operator((1, 16, 16), 3, 1.0)
        x_t, x_prime, x0_hat, y = rng.standard_normal((4, 1, 16, 16))
        got = zaps_guided_step(x_prime, x_t, x0_hat, A, y, 0.4, np.zeros((1, 16, 16)), db4, schedule, 77)
        np.testing.assert_allclose(got, dps_guidance(x_prime, x_t, x0_hat, A, y, 0.4, 77, schedule), atol=1e-13)

    def test_zaps_exact_diag_equals_exact_dps(self, schedule, rng, db4):
        shape = (1, 16, 16)
        prior = gaussian_prior(np.zeros(shape), rng.uniform(0.01, 1.0, shape), db4)
        A = random_mask_operator(shape, 0.4, 2)
        x_t, x_prime, y = rng.standard_normal((3,) + shape)
        t = 420
        x0_hat = tweedie_denoise(x_t, t, schedule, prior.score(x_t, t, schedule))
        D = prior.hessian_diagonal(t, schedule)
        a = zaps_guided_step(x_prime, x_t, x0_hat, A, y, 0.2, D, db4, schedule, t)
        b = dps_guidance(x_prime, x_t, x0_hat, A, y, 0.2, t, schedule, "exact_oracle", prior)
        np.testing.assert_allclose(a, b, atol=1e-10)


class TestPigdm:
    def test_identity_scaling(self, rng):
        res = rng.standard_normal(SHAPE)
        r_sq, sigma = 0.7, 0.3
        got = pigdm_direction(IdentityOperator(SHAPE), res, r_sq, sigma)
        np.testing.assert_allclose(got, res / (r_sq + sigma**2), rtol=1e-10)

    @pytest.mark.parametrize("eta", [1e-3, 1.0, 10.0])
    def test_dense_direct_form(self, rng, eta):
        M = rng.standard_normal((12, 20))
        res = rng.standard_normal(12)
        direct, woodbury = woodbury_both_forms(M, 1.0, np.sqrt(eta), res)
        np.testing.assert_allclose(woodbury, direct, rtol=1e-8)
        np.testing.assert_allclose(pigdm_direction(MatrixOperator(M), res, 1.0, np.sqrt(eta)), direct, rtol=1e-8)

    def test_noiseless_pinv(self, rng):
        A = random_mask_operator(SHAPE, 0.5, 4)
        res = rng.standard_normal(SHAPE)
        np.testing.assert_allclose(pigdm_direction(A, res, 2.0, 0.0), A.mask() * res / 2.0)

    def test_noiseless_needs_pinv(self, rng):
        with pytest.raises(ValueError):
            pigdm_direction(BicubicDownsampleOperator(SHAPE, 2), np.zeros((1, 4, 4)), 1.0, 0.0)

    def test_bad_r_sq(self):
        with pytest.raises(ValueError):
            pigdm_direction(IdentityOperator(SHAPE), np.ones(SHAPE), 0.0, 0.1)


class TestProjection:
    def test_full_mask_last_step(self, schedule, rng):
        y = rng.standard_normal(SHAPE)
        out = pocs_projection(rng.standard_normal(SHAPE), IdentityOperator(SHAPE), y, 0, schedule,
                              rng.standard_normal(SHAPE))
        np.testing.assert_allclose(out, y)

    def test_measured_and_unmeasured(self, schedule, rng):
        A = random_mask_operator(SHAPE, 0.5, 1)
        m = A.mask().astype(bool)
        x, y, eps = rng.standard_normal((3,) + SHAPE)
        out = pocs_projection(x, A, y, 100, schedule, eps)
        ab = schedule.alpha_bar(100)
        np.testing.assert_allclose(out[m], (np.sqrt(ab) * y + np.sqrt(1 - ab) * eps)[m])
        np.testing.assert_array_equal(out[~m], x[~m])
        np.testing.assert_allclose(pocs_projection(out, A, y, 100, schedule, eps), out)

    def test_mcg_zero_zeta_is_pocs(self, schedule, rng):
        A = random_mask_operator(SHAPE, 0.5, 1)
        x_t, x_prime, x0_hat, y, eps = rng.standard_normal((5,) + SHAPE)
        np.testing.assert_allclose(mcg_step(x_t, x_prime, x0_hat, A, y, 0.0, 50, 40, schedule, eps),
                                   pocs_projection(x_prime, A, y, 40, schedule, eps))

    def test_needs_mask_operator(self, schedule):
        with pytest.raises(ValueError):
            pocs_projection(np.zeros(SHAPE), gaussian_blur_operator(SHAPE, 3, 1.0), np.zeros(SHAPE), 1,
                            schedule, np.zeros(SHAPE))


class TestRunReverse:
    def _problem(self):
        prior = gaussian_prior(np.full(SHAPE, 0.5), np.full(SHAPE, 0.1))
        A = random_mask_operator(SHAPE, 0.5, 0)
        y = A.apply(np.full(SHAPE, 0.6))
        return prior, A, y

    @pytest.mark.parametrize("method", ["none", "pocs", "mcg", "dps", "pigdm"])
    def test_methods_run(self, schedule, method):
        prior, A, y = self._problem()
        sub = build_irregular_subschedule(1000, [3, 2, 1])
        x0, traj = run_reverse(schedule, sub, prior, A, y, GuidanceConfig(method=method, zeta=0.5), seed=2)
        assert traj.nfe == 6
        assert np.all(np.isfinite(x0))

    def test_seeded_identical(self, schedule):
        prior, A, y = self._problem()
        sub = build_irregular_subschedule(1000, [3, 2, 1])
        cfg = GuidanceConfig(method="dps", zeta=0.5)
        a, ta = run_reverse(schedule, sub, prior, A, y, cfg, seed=4, record=True)
        b, tb = run_reverse(schedule, sub, prior, A, y, cfg, seed=4, record=True)
        assert a.tobytes() == b.tobytes()
        for ra, rb in zip(ta.steps, tb.steps):
            np.testing.assert_array_equal(ra.x_t, rb.x_t)

    def test_explicit_bank(self, schedule):
        prior, A, y = self._problem()
        sub = build_irregular_subschedule(1000, [3, 2, 1])
        bank = NoiseBank.draw(4, sub.S, SHAPE)
        cfg = GuidanceConfig(method="dps", zeta=0.5)
        a, _ = run_reverse(schedule, sub, prior, A, y, cfg, seed=4)
        b, _ = run_reverse(schedule, sub, prior, A, y, cfg, noise=bank)
        np.testing.assert_array_equal(a, b)

    def test_divergence(self, schedule):
        prior, _, _ = self._problem()
        A = gaussian_blur_operator(SHAPE, 3, 1.0)
        y = np.full(SHAPE, 0.5)
        with pytest.raises(FloatingPointError, match="step"):
            with np.errstate(all="ignore"):
                run_reverse(schedule, build_irregular_subschedule(1000, [15, 10, 5]), prior, A, y,
                            GuidanceConfig(method="dps", zeta=1e12))

    def test_needs_operator(self, schedule):
        prior, _, _ = self._problem()
        with pytest.raises(ValueError):
            run_reverse(schedule, build_irregular_subschedule(1000, [2]), prior, None, None,
                        GuidanceConfig(method="dps"))

    def test_zeta_length(self, schedule):
        prior, A, y = self._problem()
        with pytest.raises(ValueError):
            run_reverse(schedule, build_irregular_subschedule(1000, [2, 2]), prior, A, y,
                        GuidanceConfig(method="dps", zeta=[1.0, 2.0, 3.0]))

    def test_trajectory_save(self, schedule, tmp_path):
        prior, A, y = self._problem()
        _, traj = run_reverse(schedule, build_irregular_subschedule(1000, [2, 1]), prior, A, y,
                              GuidanceConfig(method="dps"), record=True)
        traj.save(tmp_path / "traj")
        lines = (tmp_path / "traj" / "index.csv").read_text().splitlines()
        assert len(lines) == 4
        assert (tmp_path / "traj" / "x0_final.raw").exists()
