from unittest import TestCase

import numpy as np

from arcsim.eberle import EberleCalibration
from arcsim.experiments import (InvalidExperiment, BurnInTooShort, run_contraction, run_eta_sweep,
                                run_batch_sweep, run_n_sweep, run_eps_convergence, run_gibbs_gap,
                                step_size_ceiling, batch_noise_factor)
from arcsim.model import DistributionSpec, DistributionKind, InitialLaw
from arcsim.potentials import PotentialModel, generate_dataset
from arcsim.records import ExperimentRecord
from arcsim.sde import DriverSpec

SPHERE = DistributionSpec(DistributionKind.Sphere, 2)


class ExperimentTestCase(TestCase):

    @classmethod
    def setUpClass(cls):
        cls.cal = EberleCalibration.calibrate(1.0, 1.0, 2.0, 1.0, 2, grid_points=512)
        cls.model = PotentialModel.quadratic(2, 2.0, 1.0)
        cls.data = generate_dataset(SPHERE, 8, 0)


class ContractionTest(ExperimentTestCase):

    def test_coincident_start_stays_together(self):
        start = InitialLaw.point(1.0, 0.0)
        record = run_contraction(self.model, self.data, self.cal, start, start, horizon=0.2,
                                 ensemble=16, dt=0.01, record_points=10)
        arc = record.series("arc")[0]
        np.testing.assert_array_equal(arc.mean, 0.0)
        self.assertTrue(record.passed)

    def test_bound_holds(self):
        record = run_contraction(self.model, self.data, self.cal, InitialLaw.point(1.0, 0.0),
                                 InitialLaw.point(-1.0, 0.0), horizon=0.5, ensemble=256,
                                 dt=0.01, record_points=50, seed=3, block_size=64)
        self.assertTrue(record.verdict["contraction-bound"].passed,
                        list(record.verdict.messages()))
        self.assertEqual(record.derived["c"], self.cal.c)
        self.assertAlmostEqual(record.derived["epsilon"], 1e-3 * self.cal.R2)
        arc = record.series("arc")[0]
        self.assertEqual(arc.n, 256)
        self.assertEqual(len(arc.times), 51)
        self.assertLess(arc.final_mean, arc.mean[0])

    def test_mismatched_drivers(self):
        start = InitialLaw.point(1.0, 0.0)
        with self.assertRaises(InvalidExperiment):
            run_contraction(self.model, self.data, self.cal, start, start, horizon=0.1, ensemble=4,
                            x_driver=DriverSpec.continuous(self.model, self.data, 1.0, 0.01),
                            y_driver=DriverSpec.discretized(self.model, self.data, 1.0, 0.01))

    def test_default_horizon_is_infeasible(self):
        start = InitialLaw.point(1.0, 0.0)
        with self.assertRaises(InvalidExperiment):
            run_contraction(self.model, self.data, self.cal, start, start, ensemble=4)

    def test_record_replays_from_json(self):
        start = InitialLaw.point(1.0, 0.0)
        record = run_contraction(self.model, self.data, self.cal, start, InitialLaw.point(0.0, 1.0),
                                 horizon=0.1, ensemble=8, dt=0.01, record_points=5)
        again = ExperimentRecord.from_json(record.to_json())
        self.assertEqual(again.to_json(), record.to_json())
        self.assertNotIn("wall_time", record.to_json())


class EtaSweepTest(ExperimentTestCase):

    def _run(self, etas, t_final=0.0, **kwargs):
        return run_eta_sweep(self.model, self.data, self.cal, t_final, etas, 8,
                             InitialLaw.point(1.0, 0.0), **kwargs)

    def test_ceiling(self):
        self.assertEqual(step_size_ceiling(self.model), 0.25)

    def test_invalid_eta_lists(self):
        with self.assertRaises(InvalidExperiment):
            self._run([0.1, 0.1, 0.01])
        with self.assertRaises(InvalidExperiment):
            self._run([0.1, 0.05])
        with self.assertRaises(InvalidExperiment):
            self._run([0.5, 0.05])
        with self.assertRaises(InvalidExperiment):
            self._run([0.2, 0.03, 0.02], t_final=0.6)
        with self.assertRaises(InvalidExperiment):
            self._run([0.1, 0.05, 0.01], t_final=0.125)

    def test_zero_time_has_no_error(self):
        record = self._run([0.01, 0.1, 0.05])
        self.assertEqual(record.sweep_values, [0.1, 0.05, 0.01])
        self.assertTrue(record.passed, list(record.verdict.messages()))
        for statistic in record.series("rho2"):
            self.assertEqual(statistic.final_mean, 0.0)

    def test_short_run(self):
        record = self._run([0.1, 0.05, 0.01], t_final=0.2, substeps=2)
        self.assertEqual(len(record.series("rho2")), 3)
        self.assertEqual(len(record.series("loss-gap")), 3)
        self.assertEqual(record.derived["eta_ceiling"], 0.25)
        for eta in ("0.1", "0.05", "0.01"):
            self.assertTrue(record.verdict[f"coupling-gap-bound-eta={eta}"].passed)

    def test_reference_is_shared_across_step_sizes(self):
        record = self._run([0.1, 0.05, 0.01], t_final=0.2, substeps=2)
        self.assertAlmostEqual(record.derived["reference_dt"], 0.005)
        first, *others = record.series("reference-loss")
        for statistic in others:
            np.testing.assert_array_equal(statistic.mean, first.mean)
            np.testing.assert_array_equal(statistic.variance, first.variance)


class BatchSweepTest(ExperimentTestCase):

    def test_noise_factor(self):
        self.assertEqual(batch_noise_factor(8, 8), 0.0)
        self.assertEqual(batch_noise_factor(8, 1), 1.0)

    def test_full_batch_required(self):
        with self.assertRaises(InvalidExperiment):
            run_batch_sweep(self.model, self.data, self.cal, 0.5, [1, 2, 4], 0.1, 8,
                            InitialLaw.point(1.0, 0.0))
        with self.assertRaises(InvalidExperiment):
            run_batch_sweep(self.model, self.data, self.cal, 0.5, [1, 8, 16], 0.1, 8,
                            InitialLaw.point(1.0, 0.0))
        with self.assertRaises(InvalidExperiment):
            run_batch_sweep(self.model, self.data, self.cal, 0.55, [1, 8], 0.1, 8,
                            InitialLaw.point(1.0, 0.0))

    def test_full_batch_control(self):
        record = run_batch_sweep(self.model, self.data, self.cal, 0.5, [8, 1, 4, 2], 0.1, 64,
                                 InitialLaw.point(1.0, 0.0), seed=2)
        self.assertEqual(record.sweep_values, [1, 2, 4, 8])
        control = record.verdict["full-batch-control"]
        self.assertTrue(control.passed)
        self.assertEqual(control.margin, 0.0)
        self.assertEqual(record.series("rho2")[-1].final_mean, 0.0)
        self.assertGreater(record.series("rho2")[0].final_mean, 0.0)


class NSweepTest(ExperimentTestCase):

    def test_invalid_sweeps(self):
        model = PotentialModel.cosine_quadratic(2, 2.0, 0.0, 1.0)
        with self.assertRaises(InvalidExperiment):
            run_n_sweep(model, SPHERE, self.cal, 0.1, [4, 16], 5, 8, InitialLaw.point(0.0, 0.0))
        with self.assertRaises(InvalidExperiment):
            run_n_sweep(model, SPHERE, self.cal, 0.1, [4, 8], 20, 8, InitialLaw.point(0.0, 0.0))

    def test_data_free_loss_has_no_gap(self):
        model = PotentialModel.cosine_quadratic(2, 2.0, 0.0, 1.0)
        record = run_n_sweep(model, SPHERE, self.cal, 0.1, [16, 4], 20, 8,
                             InitialLaw.point(1.0, 0.0), dt=0.05, population_size=64)
        self.assertEqual(record.sweep_values, [4, 16])
        self.assertTrue(record.passed, list(record.verdict.messages()))
        for statistic in record.measured:
            self.assertEqual(statistic.n, 20)
            self.assertLess(abs(statistic.final_mean), 1e-12)


class EpsilonConvergenceTest(ExperimentTestCase):

    def test_invalid_epsilon_lists(self):
        start = InitialLaw.point(1.0, 0.0)
        for epsilons in ([0.1, 0.05, 0.02, 0.01], [0.4, 0.2, 0.1], [0.04, 0.08, 0.02, 0.16]):
            with self.assertRaises(InvalidExperiment):
                run_eps_convergence(self.model, self.data, self.cal, epsilons, 0.1, 8, start, start)

    def test_short_run(self):
        record = run_eps_convergence(self.model, self.data, self.cal, [0.1, 0.2, 0.4, 0.8], 0.2, 32,
                                     InitialLaw.point(1.0, 0.0), InitialLaw.point(-1.0, 0.0))
        self.assertEqual(record.sweep_values, [0.8, 0.4, 0.2, 0.1])
        self.assertTrue(record.verdict["synchronous-occupation-zero"].passed)
        self.assertEqual(len(record.series("occupation")), 4)
        self.assertEqual(len(record.series("rho2")), 4)
        self.assertEqual(len(record.derived["rho2_differences"]), 3)
        for statistic in record.series("occupation"):
            self.assertGreaterEqual(statistic.final_mean, 0.0)

    def test_occupation_shrinks_with_epsilon(self):
        record = run_eps_convergence(self.model, self.data, self.cal, [0.1, 0.2, 0.4, 0.8], 0.2, 32,
                                     InitialLaw.point(1.0, 0.0), InitialLaw.point(-1.0, 0.0))
        decrease = record.verdict["occupation-non-increasing"]
        self.assertTrue(decrease.passed, decrease.message())
        occupation = [statistic.final_mean for statistic in record.series("occupation")]
        self.assertGreater(occupation[0], 0.0)
        self.assertLess(occupation[-1], occupation[0])

    def test_marginal_law_is_preserved(self):
        cal = EberleCalibration.calibrate(1.0, 1.0, 2.0, 1.0, 1, grid_points=256)
        model = PotentialModel.quadratic(1, 2.0, 1.0)
        data = generate_dataset(DistributionSpec(DistributionKind.Sphere, 1), 8, 0)
        epsilons = [0.08, 0.04, 0.02, 0.01]
        record = run_eps_convergence(model, data, cal, epsilons, 0.2, 2000,
                                     InitialLaw.point(1.0), InitialLaw.point(-1.0), seed=4)
        for epsilon in epsilons:
            check = record.verdict[f"marginal-epsilon={epsilon:g}"]
            self.assertTrue(check.passed, check.message())


class GibbsGapTest(TestCase):

    @classmethod
    def setUpClass(cls):
        cls.cal = EberleCalibration.calibrate(1.0, 1.0, 2.0, 1.0, 1, grid_points=256)
        cls.model = PotentialModel.quadratic(1, 2.0, 0.0)
        cls.data = generate_dataset(DistributionSpec(DistributionKind.Point, 1), 4, 0)

    def _run(self, burn_in, **kwargs):
        options = dict(horizon=20.0, ensemble=16, dt=0.01, burn_in_check=False)
        options.update(kwargs)
        return run_gibbs_gap(self.model, self.data, self.cal, [0.1, 0.3, 1.0], burn_in,
                             x0=InitialLaw.point(0.0), **options)

    def test_gap_is_linear_in_delta(self):
        record = self._run(25.0)
        self.assertTrue(record.passed, list(record.verdict.messages()))
        self.assertEqual(record.sweep_values, [0.0, 0.1, 0.3, 1.0])
        self.assertEqual(record.measured[0].final_mean, 0.0)
        for statistic, delta in zip(record.measured[1:], (0.1, 0.3, 1.0)):
            self.assertAlmostEqual(abs(statistic.final_mean), delta, delta=1e-6)
        self.assertAlmostEqual(record.fit.slope, 1.0, places=4)
        self.assertLess(record.derived["autocorrelation_time"], 5.0)

    def test_short_burn_in_is_detected(self):
        with self.assertRaises(BurnInTooShort):
            self._run(0.5)

    def test_burn_in_below_five_over_c(self):
        with self.assertRaises(InvalidExperiment):
            self._run(10.0, burn_in_check=True)

    def test_observable(self):
        with self.assertRaises(InvalidExperiment):
            self._run(25.0, observable="variance")

    def test_delta_span(self):
        with self.assertRaises(InvalidExperiment):
            run_gibbs_gap(self.model, self.data, self.cal, [0.5, 1.0], 25.0, 1.0, 4,
                          InitialLaw.point(0.0), burn_in_check=False)
