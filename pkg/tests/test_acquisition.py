import numpy as np
import pytest

from deup.acquisition import (
    AcquisitionContext,
    AcquisitionSpec,
    BoxDomain,
    argmax_acquisition,
    expected_improvement,
    score,
    score_batch,
    ucb,
)
from deup.core import Acquisition, Dataset, Feature, RngStream
from deup.estimator import deup_fixed_train
from deup.models import Learner, gp_fit


def fit_1d_gp(fn=lambda x: np.sin(6 * x), n=8):
    X = np.linspace(0, 1, n)[:, None]
    d = Dataset.from_arrays(X, fn(X[:, 0]))
    return gp_fit(d, {"noise_variance": 0.0, "n_restarts": 4}, RngStream(0, "fit")), d


class TestExpectedImprovement:
    def test_degenerate_no_improvement(self):
        assert expected_improvement(0.0, 0.0, best=1.0, xi=0.0) == 0.0
        assert expected_improvement(1.0, 0.0, best=1.0, xi=0.1) == 0.0

    def test_degenerate_positive_improvement(self):
        assert expected_improvement(2.0, 0.0, best=1.0, xi=0.0) == 1.0

    def test_at_the_mean_closed_form(self):
        # mean == best, sigma = 1, xi = 0: EI = phi(0) = 1/sqrt(2*pi)
        assert abs(expected_improvement(0.0, 1.0, 0.0, 0.0) - 1.0 / np.sqrt(2 * np.pi)) < 1e-12

    def test_matches_monte_carlo(self):
        gen = np.random.default_rng(0)
        for trial in range(10):
            mean = gen.uniform(-2, 2)
            sigma = gen.uniform(0.2, 2.0)
            best = gen.uniform(-2, 2)
            xi = gen.uniform(0, 0.2)
            draws = mean + sigma * gen.standard_normal(10**6)
            vals = np.maximum(draws - best - xi, 0.0)
            mc = vals.mean()
            se = vals.std(ddof=1) / 1e3
            assert abs(expected_improvement(mean, sigma**2, best, xi) - mc) <= 3 * se

    def test_nonnegative_and_increasing_in_sigma(self):
        sigmas = np.linspace(0.01, 3, 50)
        vals = expected_improvement(np.zeros(50), sigmas**2, best=1.0, xi=0.0)
        assert np.all(vals >= 0)
        assert np.all(np.diff(vals) > 0)

    def test_translation_invariance(self):
        a = expected_improvement(1.3, 0.8, best=2.0, xi=0.05)
        b = expected_improvement(1.3 + 7.0, 0.8, best=9.0, xi=0.05)
        assert abs(a - b) < 1e-12


class TestUcb:
    def test_arithmetic(self):
        assert ucb(1.0, 4.0, 2.0) == 5.0

    def test_zero_variance_returns_mean(self):
        assert ucb(0.7, 0.0, 5.0) == 0.7

    def test_monotone_in_beta(self):
        betas = np.linspace(0.5, 5, 20)
        vals = [ucb(0.0, 2.0, b) for b in betas]
        assert np.all(np.diff(vals) > 0)


class TestScore:
    def test_ei_at_incumbent_is_tiny(self):
        gp, d = fit_1d_gp()
        best = float(np.max(d.targets()))
        x_best = d.inputs()[int(np.argmax(d.targets()))]
        spec = AcquisitionSpec(Acquisition.EI)
        val = score(spec, x_best, AcquisitionContext(best=best, predictor=gp))
        assert val <= 1e-6

    def test_deup_ucb_reduces_to_mean_when_eu_zero(self):
        gp, d = fit_1d_gp()
        train = Dataset.from_arrays(d.inputs(), d.targets())
        oos = Dataset.from_arrays(np.array([[0.31], [0.77]]), np.array([np.sin(6 * 0.31), np.sin(6 * 0.77)]))
        model = deup_fixed_train(
            train, oos, Learner("gp", {"noise_variance": 0.0, "n_restarts": 4}),
            (Feature.LOG_VARIANCE,), RngStream(0, "deup"),
        )
        x = d.inputs()[3]
        spec = AcquisitionSpec(Acquisition.DEUP_UCB, beta=2.0)
        val = score(spec, x, AcquisitionContext(best=0.0, model=model))
        eu = model.epistemic(x)
        mean = model.predict_mean_batch(x[None, :])[0]
        assert abs(val - (mean + 2.0 * np.sqrt(eu))) < 1e-12
        if eu == 0.0:
            assert val == mean

    def test_deup_ei_is_direct_substitution(self):
        gp, d = fit_1d_gp()
        oos = Dataset.from_arrays(np.array([[0.11], [0.52]]), np.sin(6 * np.array([0.11, 0.52])))
        model = deup_fixed_train(
            d, oos, Learner("gp", {"noise_variance": 0.0, "n_restarts": 4}),
            (Feature.LOG_VARIANCE,), RngStream(0, "deup"),
        )
        x = np.array([0.42])
        spec = AcquisitionSpec(Acquisition.DEUP_EI, xi=0.01)
        best = 0.5
        val = score(spec, x, AcquisitionContext(best=best, model=model))
        direct = expected_improvement(
            model.predict_mean_batch(x[None, :])[0], model.epistemic(x), best, 0.01
        )
        assert abs(val - direct) < 1e-12

    def test_missing_context_rejected(self):
        spec = AcquisitionSpec(Acquisition.EI)
        with pytest.raises(ValueError):
            score(spec, np.array([0.0]), AcquisitionContext(best=0.0))

    def test_random_scores_are_uniform_draws(self):
        spec = AcquisitionSpec(Acquisition.RANDOM)
        gen = np.random.default_rng(4)
        vals = score_batch(spec, np.zeros((100, 1)), AcquisitionContext(gen=gen))
        assert np.all((0 <= vals) & (vals <= 1))
        assert len(np.unique(vals)) == 100
        with pytest.raises(ValueError):
            score(spec, np.array([0.0]), AcquisitionContext())


class TestArgmax:
    def test_random_mode_uniform_and_reproducible(self):
        domain = BoxDomain(np.array([-1.0, 0.0]), np.array([1.0, 4.0]))
        spec = AcquisitionSpec(Acquisition.RANDOM)
        a = argmax_acquisition(spec, domain, AcquisitionContext(), RngStream(5, "acq"))
        b = argmax_acquisition(spec, domain, AcquisitionContext(), RngStream(5, "acq"))
        np.testing.assert_array_equal(a, b)
        assert domain.contains(a)

    def test_finds_interior_peak(self):
        # Sharp noiseless GP peak: EI argmax should land within 1e-2 of it.
        def bump(x):
            return np.exp(-((x - 0.62) ** 2) / 0.005)

        gp, d = fit_1d_gp(fn=bump, n=14)
        domain = BoxDomain(np.array([0.0]), np.array([1.0]))
        spec = AcquisitionSpec(Acquisition.EI, xi=0.0, n_candidates=512, n_refine=3)
        best = float(np.max(d.targets())) - 0.05
        x = argmax_acquisition(spec, domain, AcquisitionContext(best=best, predictor=gp), RngStream(0, "acq"))

        grid = np.linspace(0, 1, 10_001)[:, None]
        mean, var = gp.predict_batch(grid)
        ei = expected_improvement(mean, var, best, 0.0)
        x_grid = grid[int(np.argmax(ei)), 0]
        assert abs(x[0] - x_grid) < 1e-2

    def test_never_worse_than_best_raw_candidate(self):
        gp, _ = fit_1d_gp()
        domain = BoxDomain(np.array([0.0]), np.array([1.0]))
        spec = AcquisitionSpec(Acquisition.UCB, n_candidates=64, n_refine=2)
        ctx = AcquisitionContext(best=0.0, predictor=gp)
        rng = RngStream(3, "acq")
        x = argmax_acquisition(spec, domain, ctx, rng)
        cands = domain.sample(rng.generator(), spec.n_candidates)
        raw_best = float(np.max(score_batch(spec, cands, ctx)))
        assert score(spec, x, ctx) >= raw_best - 1e-12

    def test_stays_inside_domain_property(self):
        gen = np.random.default_rng(9)
        gp, _ = fit_1d_gp()
        domain = BoxDomain(np.array([0.2]), np.array([0.8]))
        for trial in range(10):
            spec = AcquisitionSpec(
                Acquisition.EI, n_candidates=int(gen.integers(4, 64)), n_refine=2
            )
            x = argmax_acquisition(
                spec, domain, AcquisitionContext(best=0.5, predictor=gp), RngStream(trial, "acq")
            )
            assert domain.contains(x)

    def test_invalid_domain_rejected(self):
        with pytest.raises(ValueError):
            BoxDomain(np.array([1.0]), np.array([1.0]))
