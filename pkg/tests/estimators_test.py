import math
from unittest import TestCase

import numpy as np

from arcsim.ensemble import EnsembleRunner
from arcsim.estimators import (EnsembleStatistic, InvalidEnsemble, fit_loglog_slope,
                               fit_exponential_rate, integrated_autocorrelation_time,
                               batch_variance_factor, minibatch_variance_by_enumeration,
                               minibatch_variance_by_identity, check_minibatch_variance,
                               check_coupling_gap_bound, check_moment_bound, check_ou_moments,
                               check_one_step_bound)
from arcsim.model import DistributionSpec, DistributionKind, InitialLaw
from arcsim.potentials import PotentialModel, generate_dataset
from arcsim.sde import DriverSpec
from arcsim.streams import seeded


def _setup(n=16):
    model = PotentialModel.quadratic(2, 2.0, 1.0)
    data = generate_dataset(DistributionSpec(DistributionKind.Sphere, 2), n, 0)
    return model, data


class EnsembleStatisticTest(TestCase):

    def test_pointwise_statistics(self):
        samples = np.array([[1.0, 2.0, 3.0, 4.0], [0.0, 0.0, 0.0, 4.0]])
        stat = EnsembleStatistic.from_samples([0.0, 1.0], samples, label="demo")
        np.testing.assert_allclose(stat.mean, [2.5, 1.0])
        np.testing.assert_allclose(stat.variance, [5.0 / 3.0, 4.0])
        np.testing.assert_allclose(stat.stderr, np.sqrt(stat.variance / 4))
        np.testing.assert_allclose(stat.ci, 1.96 * stat.stderr)
        self.assertEqual(stat.final_mean, 1.0)
        self.assertEqual(stat.n, 4)

    def test_single_member(self):
        stat = EnsembleStatistic.from_samples([0.0], [[3.0]])
        self.assertEqual(stat.final_mean, 3.0)
        self.assertEqual(stat.final_stderr, 0.0)

    def test_empty_ensemble(self):
        with self.assertRaises(InvalidEnsemble):
            EnsembleStatistic.from_samples([0.0], np.empty((1, 0)))

    def test_dict_roundtrip(self):
        stat = EnsembleStatistic.from_samples([0.0, 1.0], [[1.0, 2.0], [3.0, 5.0]], "x", 0.5)
        again = EnsembleStatistic.from_dict(stat.to_dict())
        np.testing.assert_array_equal(again.mean, stat.mean)
        self.assertEqual(again.sweep_value, 0.5)


class SlopeFitTest(TestCase):

    def test_power_law(self):
        xs = np.array([1.0, 2.0, 4.0, 8.0])
        fit = fit_loglog_slope(xs, 3.0 * xs ** -2.0)
        self.assertAlmostEqual(fit.slope, -2.0, places=12)
        self.assertAlmostEqual(fit.intercept, math.log(3.0), places=12)
        self.assertAlmostEqual(fit.r_squared, 1.0, places=12)
        self.assertEqual(fit.points, 4)

    def test_exponential_rate(self):
        ts = np.linspace(0.0, 3.0, 7)
        fit = fit_exponential_rate(ts, 2.0 * np.exp(-0.7 * ts))
        self.assertAlmostEqual(fit.slope, -0.7, places=12)

    def test_invalid_fits(self):
        with self.assertRaises(InvalidEnsemble):
            fit_loglog_slope([1.0, 2.0], [1.0, 2.0])
        with self.assertRaises(InvalidEnsemble):
            fit_loglog_slope([1.0, 2.0, 3.0], [1.0, 0.0, 2.0])
        with self.assertRaises(InvalidEnsemble):
            fit_loglog_slope([1.0, 2.0, 3.0], [1.0, 2.0])
        with self.assertRaises(InvalidEnsemble):
            fit_exponential_rate([0.0, 1.0, 2.0], [1.0, -1.0, 1.0])


class AutocorrelationTest(TestCase):

    def test_independent_samples(self):
        series = seeded(1).standard_normal(20000)
        self.assertLess(integrated_autocorrelation_time(series), 1.5)

    def test_correlated_samples(self):
        noise = seeded(2).standard_normal(20000)
        series = np.empty_like(noise)
        series[0] = noise[0]
        for k in range(1, noise.size):
            series[k] = 0.9 * series[k - 1] + noise[k]
        self.assertGreater(integrated_autocorrelation_time(series), 5.0)

    def test_units(self):
        series = seeded(3).standard_normal(1000)
        self.assertAlmostEqual(integrated_autocorrelation_time(series, dt=0.5),
                               0.5 * integrated_autocorrelation_time(series))

    def test_sum_stops_at_first_negative_lag(self):
        noise = seeded(6).standard_normal(2000)
        series = np.empty_like(noise)
        series[0] = noise[0]
        for k in range(1, noise.size):
            series[k] = 0.5 * series[k - 1] + noise[k]
        centred = series - series.mean()
        rho = np.array([np.dot(centred[:centred.size - k], centred[k:]) for k in range(centred.size)])
        rho /= rho[0]
        cut = int(np.flatnonzero(rho < 0)[0])
        self.assertAlmostEqual(integrated_autocorrelation_time(series), 1.0 + 2.0 * np.sum(rho[1:cut]),
                               places=8)
        self.assertEqual(integrated_autocorrelation_time([1.0, -1.0, 1.0, -1.0]), 1.0)

    def test_constant_series(self):
        self.assertEqual(integrated_autocorrelation_time(np.ones(10)), 0.0)
        with self.assertRaises(InvalidEnsemble):
            integrated_autocorrelation_time([1.0])


class MiniBatchVarianceTest(TestCase):

    def test_factor(self):
        self.assertEqual(batch_variance_factor(8, 8), 0.0)
        self.assertEqual(batch_variance_factor(8, 1), 1.0)
        self.assertAlmostEqual(batch_variance_factor(8, 2), 6.0 / 14.0)

    def test_enumeration_matches_identity(self):
        gradients = seeded(4).standard_normal((8, 3))
        for size in range(1, 9):
            exact = minibatch_variance_by_enumeration(gradients, size, chunk=7)
            identity = minibatch_variance_by_identity(gradients, size)
            self.assertAlmostEqual(exact, identity, delta=1e-12 * max(1.0, exact))

    def test_variance_report(self):
        model, data = _setup(8)
        for size in (1, 3, 8):
            report = check_minibatch_variance(model, data, [1.0, -2.0], size)
            self.assertTrue(report.passed)
            self.assertTrue(report["variance-identity"].passed)
            self.assertTrue(report["variance-bound"].passed)

    def test_batch_size_out_of_range(self):
        model, data = _setup(8)
        with self.assertRaises(ValueError):
            check_minibatch_variance(model, data, [1.0, -2.0], 9)


class CouplingGapTest(TestCase):

    def test_gap_within_bound(self):
        rng = seeded(5)
        x = rng.standard_normal((1000, 2))
        y = x + 0.3 * rng.standard_normal((1000, 2))
        h_x = 0.5 * np.sum(x * x, axis=1)
        h_y = 0.5 * np.sum(y * y, axis=1)
        check = check_coupling_gap_bound(h_x, h_y, x, y, c1=1.0, c2=0.0)
        self.assertTrue(check.passed)
        self.assertGreaterEqual(check.margin, 0.0)

    def test_violation(self):
        x = np.ones((100, 2))
        y = np.zeros((100, 2))
        check = check_coupling_gap_bound(x[:, 0], y[:, 0], x, y, c1=0.0, c2=0.0, name="gap")
        self.assertFalse(check.passed)
        self.assertEqual(check.name, "gap")
        self.assertAlmostEqual(check.margin, -1.0)


class MomentTest(TestCase):

    def test_continuous_moment_bound(self):
        model, data = _setup()
        driver = DriverSpec.continuous(model, data, 1.0, 0.01)
        for p in (2, 4):
            check = check_moment_bound(driver, p, [0.5, 1.0, 2.0], 500, InitialLaw.point(3.0, 0.0),
                                       EnsembleRunner(0, "moments", block_size=128))
            self.assertTrue(check.passed, check.message())
            self.assertEqual(check.name, f"moment-bound-p{p}")

    def test_discretized_flat_tail(self):
        model, data = _setup()
        driver = DriverSpec.discretized(model, data, 1.0, 0.05)
        check = check_moment_bound(driver, 2, [1.0, 2.0, 3.0, 4.0], 2000, InitialLaw.point(0.0, 0.0))
        self.assertEqual(check.name, "moment-flat-tail-p2")
        self.assertTrue(check.passed, check.message())

    def test_times_on_the_grid(self):
        model, data = _setup()
        driver = DriverSpec.discretized(model, data, 1.0, 0.05)
        with self.assertRaises(InvalidEnsemble):
            check_moment_bound(driver, 2, [0.125, 1.0], 10, InitialLaw.point(0.0, 0.0))
        with self.assertRaises(InvalidEnsemble):
            check_moment_bound(driver, 2, [1.0, 0.5], 10, InitialLaw.point(0.0, 0.0))

    def test_ou_moments(self):
        model, data = _setup()
        driver = DriverSpec.discretized(model, data, 1.0, 0.05)
        check = check_ou_moments(driver, 20, 2000, InitialLaw((1.0, -1.0), 0.5))
        self.assertTrue(check.passed, check.message())

    def test_ou_moments_need_full_gradient_quadratic(self):
        model, data = _setup()
        with self.assertRaises(InvalidEnsemble):
            check_ou_moments(DriverSpec.sgld(model, data, 1.0, 0.05, 4), 5, 10,
                             InitialLaw.point(0.0, 0.0))
        cosine = PotentialModel.cosine_quadratic(2, 2.0, 0.5, 1.0)
        with self.assertRaises(InvalidEnsemble):
            check_ou_moments(DriverSpec.discretized(cosine, data, 1.0, 0.05), 5, 10,
                             InitialLaw.point(0.0, 0.0))

    def test_one_step_bound(self):
        model, data = _setup()
        driver = DriverSpec.sgld(model, data, 1.0, 0.05, 4)
        check = check_one_step_bound(driver, 0.525, 1000, InitialLaw.point(1.0, 1.0))
        self.assertTrue(check.passed, check.message())
        self.assertLess(check.detail["left"], check.detail["right"])

    def test_one_step_bound_needs_a_step_size(self):
        model, data = _setup()
        with self.assertRaises(InvalidEnsemble):
            check_one_step_bound(DriverSpec.continuous(model, data, 1.0, 0.01), 0.5, 10,
                                 InitialLaw.point(0.0, 0.0))
        with self.assertRaises(InvalidEnsemble):
            check_one_step_bound(DriverSpec.discretized(model, data, 1.0, 0.05), -1.0, 10,
                                 InitialLaw.point(0.0, 0.0))
