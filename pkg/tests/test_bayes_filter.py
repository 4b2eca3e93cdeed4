"""Particle filter tests: weight-ratio oracles, conjugate check, invariants."""

from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bramp.bayes_filter import (
    ParticleSet,
    default_jitter_std,
    effective_sample_size,
    init_particles,
    posterior_summary,
    propagate,
    resample_inverse_transform,
    reweight,
)
from bramp.dynamics import SystemModel, first_order_model, rk4_step


def constant_drift_model(sigma: float, box=((-10.0, 10.0),)) -> SystemModel:
    """1-D system with drift = theta: one RK4 step is exactly x + dt*theta.

    All four RK4 stages evaluate to theta, so the deterministic step mean is
    hand-computable and the transition kernel is a Gaussian in closed form.
    """

    def drift(state, u, theta):
        state = np.asarray(state, dtype=float)
        theta = np.asarray(theta, dtype=float)
        u = np.asarray(u, dtype=float)
        out = np.empty(np.broadcast(state[..., 0], theta[..., 0], u).shape + (1,))
        out[..., 0] = theta[..., 0]
        return out

    return SystemModel(
        name="constant_drift",
        drift=drift,
        dt=1.0,
        noise_std=np.full(1, float(sigma)),
        param_box=np.asarray(box, dtype=float),
        control_bounds=(-1.0, 1.0),
    )


class TestInitParticles:
    def test_equal_weights_1000(self, rng):
        box = np.array([[0.05, 0.30], [0.20, 1.00]])
        ps = init_particles(box, 1000, rng)
        assert ps.n_particles == 1000
        assert np.all(ps.weights == 0.001)
        assert np.all(ps.thetas >= box[:, 0]) and np.all(ps.thetas <= box[:, 1])

    def test_single_particle(self, rng):
        ps = init_particles(np.array([[0.0, 1.0]]), 1, rng)
        assert ps.n_particles == 1
        assert ps.weights[0] == 1.0

    def test_mean_matches_box_midpoint(self):
        # Monte Carlo oracle: per-dim mean of U[lo, hi] is the midpoint with
        # standard error (hi - lo) / sqrt(12 n).
        box = np.array([[-1.0, 3.0], [0.2, 0.4]])
        n = 100_000
        ps = init_particles(box, n, np.random.default_rng(2024))
        mids = box.mean(axis=1)
        ses = (box[:, 1] - box[:, 0]) / np.sqrt(12.0 * n)
        assert np.all(np.abs(ps.thetas.mean(axis=0) - mids) < 3.0 * ses)

    def test_invalid_box_rejected(self, rng):
        with pytest.raises(ValueError, match="bounds"):
            init_particles(np.array([[1.0, 0.0]]), 10, rng)

    def test_nonpositive_count_rejected(self, rng):
        with pytest.raises(ValueError, match="n_particles"):
            init_particles(np.array([[0.0, 1.0]]), 0, rng)


class TestParticleSetValidation:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sum"):
            ParticleSet(np.zeros((2, 1)), np.array([0.6, 0.6]), np.array([[-1.0, 1.0]]))

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError, match="nonnegative"):
            ParticleSet(np.zeros((2, 1)), np.array([1.5, -0.5]), np.array([[-1.0, 1.0]]))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            ParticleSet(np.zeros((3, 1)), np.array([0.5, 0.5]), np.array([[-1.0, 1.0]]))


class TestPropagate:
    def test_zero_jitter_is_identity(self, rng):
        ps = init_particles(np.array([[0.0, 1.0], [2.0, 3.0]]), 50, rng)
        out = propagate(ps, rng, jitter_std=0.0)
        assert np.array_equal(out.thetas, ps.thetas)
        assert np.array_equal(out.weights, ps.weights)

    def test_edge_particle_clipped_inside(self):
        box = np.array([[0.0, 1.0]])
        ps = ParticleSet(np.full((200, 1), 1.0), np.full(200, 1.0 / 200), box)
        out = propagate(ps, np.random.default_rng(3), jitter_std=50.0)
        assert np.all(out.thetas >= 0.0) and np.all(out.thetas <= 1.0)

    def test_empirical_jitter_std(self):
        # One particle repeatedly jittered, box wide enough that clipping
        # never triggers; sample std of a Gaussian has SE ~ sigma/sqrt(2n).
        box = np.array([[-100.0, 100.0]])
        n = 100_000
        ps = ParticleSet(np.zeros((n, 1)), np.full(n, 1.0 / n), box)
        jitter = 0.3
        out = propagate(ps, np.random.default_rng(11), jitter_std=jitter)
        se = jitter / np.sqrt(2.0 * n)
        assert abs(out.thetas.std()) == pytest.approx(jitter, abs=3.0 * se)

    def test_default_jitter_is_half_percent_of_width(self):
        box = np.array([[0.05, 0.30], [0.20, 1.00]])
        assert default_jitter_std(box) == pytest.approx([0.00125, 0.004], rel=1e-12)

    def test_negative_jitter_rejected(self, rng):
        ps = init_particles(np.array([[0.0, 1.0]]), 5, rng)
        with pytest.raises(ValueError, match="jitter"):
            propagate(ps, rng, jitter_std=-0.1)


class TestReweight:
    def test_identical_thetas_stay_uniform(self):
        model = constant_drift_model(0.1)
        ps = ParticleSet(np.full((4, 1), 0.3), np.full(4, 0.25), model.param_box)
        out, degenerate = reweight(ps, np.array([0.35]), np.array([0.0]), 0.0, model)
        assert not degenerate
        assert out.weights == pytest.approx([0.25] * 4, abs=1e-15)

    def test_underflowed_particle_gets_zero_weight(self):
        # Second particle's predicted mean sits 5000 sigma from the
        # observation, far past double-precision Gaussian support.
        model = constant_drift_model(0.01)
        ps = ParticleSet(np.array([[0.0], [50.0]]), np.array([0.5, 0.5]), model.param_box)
        out, degenerate = reweight(ps, np.array([0.0]), np.array([0.0]), 0.0, model)
        assert not degenerate
        assert out.weights[0] == 1.0
        assert out.weights[1] == 0.0

    def test_three_particle_weight_ratio_oracle(self):
        # Direct extended-precision evaluation of the likelihood-ratio weight
        # formula: step mean for the constant-drift system is x + theta, so
        # w_i = exp(-z_i^2 / 2 s^2) / sum_j exp(-z_j^2 / 2 s^2), z_i = y - theta_i.
        sigma = 0.5
        model = constant_drift_model(sigma)
        thetas = np.array([[-0.2], [0.0], [0.3]])
        ps = ParticleSet(thetas, np.full(3, 1.0 / 3.0), model.param_box)
        x_prev, x_new = np.array([1.0]), np.array([1.1])
        out, degenerate = reweight(ps, x_new, x_prev, 0.0, model)
        assert not degenerate
        with mpmath.workdps(50):
            s = mpmath.mpf(float(sigma))
            liks = [
                mpmath.e ** (-((mpmath.mpf("0.1") - mpmath.mpf(float(t))) ** 2) / (2 * s**2))
                for t in thetas[:, 0]
            ]
            total = sum(liks)
            want = [float(l / total) for l in liks]
        assert out.weights == pytest.approx(want, abs=1e-12)

    def test_all_underflow_falls_back_to_uniform_with_flag(self):
        # With log-space weights only a true -inf log-likelihood counts as
        # "numerically zero"; push the squared z-score past float overflow.
        model = constant_drift_model(0.01)
        ps = ParticleSet(np.array([[1e200], [2e200], [3e200]]), np.full(3, 1.0 / 3.0), model.param_box)
        out, degenerate = reweight(ps, np.array([0.0]), np.array([0.0]), 0.0, model)
        assert degenerate
        assert np.all(out.weights == 1.0 / 3.0)

    def test_deep_tail_observation_is_not_degenerate(self):
        # Raw densities underflow to zero here, but the log-space weights
        # still resolve the *relative* posterior instead of flagging.
        model = constant_drift_model(0.01)
        ps = ParticleSet(np.array([[40.0], [50.0]]), np.array([0.5, 0.5]), model.param_box)
        out, degenerate = reweight(ps, np.array([0.0]), np.array([0.0]), 0.0, model)
        assert not degenerate
        assert out.weights == pytest.approx([1.0, 0.0], abs=0.0)

    def test_multiplies_incoming_weights(self):
        # A particle carrying twice the prior weight keeps twice the
        # posterior weight when likelihoods are equal.
        model = constant_drift_model(0.2)
        thetas = np.array([[0.1], [-0.1]])  # symmetric about the observation
        ps = ParticleSet(thetas, np.array([2.0 / 3.0, 1.0 / 3.0]), model.param_box)
        out, _ = reweight(ps, np.array([0.0]), np.array([0.0]), 0.0, model)
        assert out.weights[0] == pytest.approx(2.0 * out.weights[1], rel=1e-12)

    def test_thetas_unchanged(self, rng):
        model = first_order_model()
        ps = init_particles(model.param_box, 20, rng)
        out, _ = reweight(ps, np.array([0.45]), np.array([0.5]), 0.1, model)
        assert np.array_equal(out.thetas, ps.thetas)


class TestResample:
    def test_point_mass_selects_that_particle(self):
        box = np.array([[-5.0, 5.0]])
        thetas = np.arange(6, dtype=float)[:, None]
        weights = np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        ps = ParticleSet(thetas, weights, box)
        out = resample_inverse_transform(ps, np.random.default_rng(0))
        assert np.all(out.thetas == 0.0)
        assert np.all(out.weights == 1.0 / 6.0)

    def test_outputs_are_multiset_of_inputs(self, rng):
        ps = init_particles(np.array([[0.0, 1.0], [0.0, 1.0]]), 64, rng)
        ps = ParticleSet(ps.thetas, np.random.default_rng(5).dirichlet(np.ones(64)), ps.box)
        out = resample_inverse_transform(ps, rng)
        in_rows = {tuple(row) for row in ps.thetas}
        assert all(tuple(row) in in_rows for row in out.thetas)

    def test_weighted_mean_preserved(self):
        # Monte Carlo oracle: the resampled mean is an n-draw average of the
        # weighted distribution, so it stays within 4 * weighted_std / sqrt(n).
        gen = np.random.default_rng(17)
        n = 4000
        box = np.array([[0.0, 1.0]])
        thetas = gen.random((n, 1))
        weights = gen.dirichlet(np.ones(n))
        ps = ParticleSet(thetas, weights, box)
        wmean = float(weights @ thetas[:, 0])
        wstd = float(np.sqrt(weights @ (thetas[:, 0] - wmean) ** 2))
        out = resample_inverse_transform(ps, gen)
        assert abs(float(out.thetas[:, 0].mean()) - wmean) < 4.0 * wstd / np.sqrt(n)

    def test_zero_weight_particles_never_drawn(self):
        box = np.array([[-5.0, 5.0]])
        thetas = np.array([[1.0], [2.0], [3.0], [4.0]])
        weights = np.array([0.5, 0.0, 0.5, 0.0])
        ps = ParticleSet(thetas, weights, box)
        out = resample_inverse_transform(ps, np.random.default_rng(9))
        assert set(out.thetas[:, 0]) <= {1.0, 3.0}


class TestEffectiveSampleSize:
    def test_uniform_weights_give_n(self, rng):
        ps = init_particles(np.array([[0.0, 1.0]]), 128, rng)
        assert effective_sample_size(ps) == pytest.approx(128.0, rel=1e-12)

    def test_point_mass_gives_one(self):
        ps = ParticleSet(np.zeros((3, 1)), np.array([1.0, 0.0, 0.0]), np.array([[-1.0, 1.0]]))
        assert effective_sample_size(ps) == 1.0


def brute_force_quantile(values, weights, p):
    """Exact-rational sorted scan: smallest value whose cumulative weight
    (normalized) reaches p."""
    order = np.argsort(values, kind="stable")
    total = sum(Fraction(float(w)) for w in weights)
    target = Fraction(float(p)) * total
    cum = Fraction(0)
    for i in order:
        cum += Fraction(float(weights[i]))
        if cum >= target:
            return float(values[i])
    return float(values[order[-1]])


class TestPosteriorSummary:
    def test_single_particle(self):
        ps = ParticleSet(np.array([[0.7, -2.0]]), np.array([1.0]), np.array([[0.0, 1.0], [-3.0, 0.0]]))
        mean, quantile = posterior_summary(ps)
        assert np.array_equal(mean, [0.7, -2.0])
        for p in (0.0, 0.3, 0.5, 1.0):
            assert quantile(0, p) == 0.7
            assert quantile(1, p) == -2.0

    def test_equal_weight_median_rule(self):
        thetas = np.array([[1.0], [2.0], [3.0], [4.0]])
        ps = ParticleSet(thetas, np.full(4, 0.25), np.array([[0.0, 5.0]]))
        _, quantile = posterior_summary(ps)
        assert quantile(0, 0.5) == 2.0
        assert quantile(0, 0.25) == 1.0
        assert quantile(0, 0.26) == 2.0
        assert quantile(0, 1.0) == 4.0

    def test_weighted_mean(self):
        ps = ParticleSet(np.array([[0.0], [10.0]]), np.array([0.9, 0.1]), np.array([[0.0, 10.0]]))
        mean, _ = posterior_summary(ps)
        assert mean[0] == pytest.approx(1.0, rel=1e-15)

    def test_quantile_matches_brute_force_scan(self):
        gen = np.random.default_rng(23)
        for _ in range(200):
            n = int(gen.integers(1, 40))
            values = gen.normal(size=n)
            weights = gen.dirichlet(np.ones(n))
            ps = ParticleSet(values[:, None], weights, np.array([[-10.0, 10.0]]))
            _, quantile = posterior_summary(ps)
            p = float(gen.uniform(0.01, 0.99))
            # skip knife-edge cases where float round-off in the cumulative
            # sum could legitimately flip the comparison
            cums = np.cumsum(weights[np.argsort(values, kind="stable")])
            if np.min(np.abs(cums - p)) < 1e-9:
                continue
            assert quantile(0, p) == brute_force_quantile(values, weights, p)

    def test_quantile_rejects_bad_arguments(self):
        ps = ParticleSet(np.array([[0.5]]), np.array([1.0]), np.array([[0.0, 1.0]]))
        _, quantile = posterior_summary(ps)
        with pytest.raises(ValueError, match="quantile level"):
            quantile(0, 1.5)
        with pytest.raises(ValueError, match="dimension"):
            quantile(3, 0.5)


class TestConjugatePosterior:
    def test_matches_closed_form_gaussian_update(self):
        # Linear-Gaussian setup: x_new = x + theta + w, w ~ N(0, sigma^2),
        # theta ~ N(mu0, tau0^2).  The exact posterior is Gaussian with
        #   precision = 1/tau0^2 + 1/sigma^2,
        #   mean = (mu0/tau0^2 + y/sigma^2) / precision,  y = x_new - x.
        # Importance-weighting prior particles by the likelihood estimates it
        # with standard error ~ post_std / sqrt(ESS).
        mu0, tau0, sigma = 0.5, 0.4, 0.25
        x_prev, y = 1.0, 0.9
        precision = 1.0 / tau0**2 + 1.0 / sigma**2
        post_mean = (mu0 / tau0**2 + y / sigma**2) / precision
        post_std = np.sqrt(1.0 / precision)

        model = constant_drift_model(sigma, box=((mu0 - 8 * tau0, mu0 + 8 * tau0),))
        gen = np.random.default_rng(41)
        n = 200_000
        thetas = mu0 + tau0 * gen.standard_normal((n, 1))
        ps = ParticleSet(thetas, np.full(n, 1.0 / n), model.param_box)
        out, degenerate = reweight(ps, np.array([x_prev + y]), np.array([x_prev]), 0.0, model)
        assert not degenerate

        ess = effective_sample_size(out)
        mean, _ = posterior_summary(out)
        assert abs(mean[0] - post_mean) < 3.0 * post_std / np.sqrt(ess)

        # resampling adds an independent n-draw averaging error on top
        res = resample_inverse_transform(out, gen)
        se_total = post_std * np.sqrt(1.0 / ess + 1.0 / n)
        assert abs(float(res.thetas[:, 0].mean()) - post_mean) < 3.0 * se_total


class TestDeterminism:
    def test_pipeline_reproducible_from_seed(self):
        model = first_order_model()

        def run(seed):
            gen = np.random.default_rng(seed)
            ps = init_particles(model.param_box, 64, gen)
            ps = propagate(ps, gen)
            x_prev = np.array([0.8])
            x_new = rk4_step(model, x_prev, 0.3, np.array([1.1])) + 0.004
            ps, _ = reweight(ps, x_new, x_prev, 0.3, model)
            return resample_inverse_transform(ps, gen)

        a, b = run(99), run(99)
        assert np.array_equal(a.thetas, b.thetas)
        assert np.array_equal(a.weights, b.weights)


class TestPosteriorContraction:
    def test_identifiable_system_concentrates(self):
        # Short-horizon version of the consistency experiment: persistently
        # exciting input on the scalar lag system shrinks the posterior std
        # well below the prior's.
        model = first_order_model()
        theta_true = np.array([1.2])
        gen = np.random.default_rng(7)
        ps = init_particles(model.param_box, 300, gen)
        prior_std = (model.param_box[0, 1] - model.param_box[0, 0]) / np.sqrt(12.0)
        x = np.array([0.4])
        for k in range(150):
            u = 2.0 * np.sin(0.3 * k)
            x_new = rk4_step(model, x, u, theta_true) + model.noise_std * gen.standard_normal(1)
            ps = propagate(ps, gen)
            ps, _ = reweight(ps, x_new, x, u, model)
            ps = resample_inverse_transform(ps, gen)
            x = x_new
        post_std = float(np.sqrt(np.average((ps.thetas[:, 0] - ps.weights @ ps.thetas) ** 2, weights=ps.weights)))
        assert post_std < 0.2 * prior_std


@st.composite
def particle_inputs(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    n = draw(st.integers(1, 50))
    return seed, n


class TestWeightInvariants:
    @given(particle_inputs())
    @settings(max_examples=60, deadline=None)
    def test_weights_valid_after_every_stage(self, args):
        seed, n = args
        model = first_order_model()
        gen = np.random.default_rng(seed)
        ps = init_particles(model.param_box, n, gen)
        # start from a non-uniform weighting to exercise the general path
        ps = ParticleSet(ps.thetas, gen.dirichlet(np.ones(n)), ps.box)
        x_prev = np.array([0.6])
        u = float(gen.uniform(-1.0, 1.0))
        x_new = rk4_step(model, x_prev, u, np.array([1.0])) + 0.01 * gen.standard_normal(1)

        for stage in (
            propagate(ps, gen),
            reweight(ps, x_new, x_prev, u, model)[0],
            resample_inverse_transform(ps, gen),
        ):
            assert np.all(stage.weights >= 0.0)
            assert abs(float(stage.weights.sum()) - 1.0) <= 1e-12
            assert np.all(stage.thetas >= stage.box[:, 0])
            assert np.all(stage.thetas <= stage.box[:, 1])
