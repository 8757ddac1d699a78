import math
import os
import tempfile
from unittest import TestCase

import numpy as np
from scipy.integrate import trapezoid, cumulative_trapezoid

from arcsim.eberle import (EberleCalibration, InvalidCalibrationInput, DegenerateCalibration,
                           lyapunov_constants, region_radii, choose_kappa, q_of_kappa,
                           q_by_maximization, phi, Phi, zeta_xi, contraction_rate, rho2,
                           smoothness_to_rho_constant, check_smoothness_to_rho,
                           check_lyapunov_drift, verify_calibration)
from arcsim.model import DistributionSpec, DistributionKind
from arcsim.potentials import PotentialModel, generate_dataset
from arcsim.streams import seeded


class ConstantsTest(TestCase):
    """Closed form pieces of the calibration"""

    def test_lyapunov_constants(self):
        constants = lyapunov_constants(4, m=1.0, b=1.0, beta=1.0, d=2)
        self.assertEqual(constants.lam, 2.0)
        self.assertAlmostEqual(constants.L, math.sqrt(2.0 * (4.0 + 1.0)))
        self.assertAlmostEqual(constants.C, 2.0 * 100.0)

    def test_lyapunov_order_below_two(self):
        with self.assertRaises(InvalidCalibrationInput):
            lyapunov_constants(1.5, 1.0, 1.0, 1.0, 2)

    def test_region_radii(self):
        r1, r2 = region_radii(7.0, 1.0)
        self.assertAlmostEqual(r1, math.sqrt(24.0))
        self.assertAlmostEqual(r2, math.sqrt(108.0))

    def test_kappa_without_inner_region(self):
        self.assertEqual(choose_kappa(2.0, 1.0, 7.0, 0.0), 0.5)

    def test_kappa_is_capped(self):
        self.assertEqual(choose_kappa(1e-6, 1.0, 1e-3, 0.1), 0.5)
        self.assertLess(choose_kappa(2.0, 1.0, 7.0, math.sqrt(24.0)), 1e-6)

    def test_q_closed_form_matches_maximization(self):
        for kappa in (0.5, 0.2, 0.01, 1e-6):
            self.assertAlmostEqual(q_by_maximization(kappa), q_of_kappa(kappa), delta=1e-4)

    def test_q_domain(self):
        with self.assertRaises(InvalidCalibrationInput):
            q_of_kappa(1.0)
        with self.assertRaises(InvalidCalibrationInput):
            q_of_kappa(0.0)

    def test_phi_and_Phi(self):
        self.assertEqual(phi(0.0, 2.0, 1.0, 1.0), 1.0)
        # with M = 0 phi is exp(-2Qr) and Phi has a closed form
        self.assertAlmostEqual(Phi(1.5, 0.0, 1.0, 0.5), 1.0 - math.exp(-1.5), places=10)
        with self.assertRaises(InvalidCalibrationInput):
            phi(-1.0, 2.0, 1.0, 1.0)

    def test_xi_clamped_without_inner_region(self):
        with self.assertLogs("arcsim.eberle", level="WARNING"):
            zeta, xi = zeta_xi(0.0, 2.0, 1.0, 1.0, 1.0, points=64, xi_cap=1e6)
        self.assertEqual(xi, 1e6)
        self.assertGreater(zeta, 0.0)


class PhiTest(TestCase):

    def test_Phi_matches_trapezoid_sum(self):
        M, beta, Q = 2.0, 1.0, 0.8
        for r in (0.3, 1.0, 2.5):
            s = np.linspace(0.0, r, 200001)
            expected = trapezoid(phi(s, M, beta, Q), s)
            self.assertAlmostEqual(Phi(r, M, beta, Q), expected, delta=1e-9)


class ZetaXiTest(TestCase):

    def test_nested_riemann_sum(self):
        r1, r2, M, beta, Q = 1.0, 3.0, 2.0, 1.0, 0.5
        s = np.linspace(0.0, r2, 30001)
        values = phi(s, M, beta, Q)
        ratio = cumulative_trapezoid(values, s, initial=0.0) / values
        inverse = cumulative_trapezoid(ratio, s, initial=0.0)
        zeta, xi = zeta_xi(r1, r2, M, beta, Q)
        self.assertAlmostEqual(1.0 / zeta, inverse[-1], delta=1e-6 * inverse[-1])
        self.assertAlmostEqual(1.0 / xi, inverse[10000], delta=1e-6 * inverse[10000])

    def test_flat_phi(self):
        # phi = 1 gives Phi(r) = r and 1/zeta = R2^2 / 2
        zeta, xi = zeta_xi(1.0, 2.0, 0.0, 1.0, 0.0)
        self.assertAlmostEqual(zeta, 2.0 / 2.0 ** 2, places=10)
        self.assertAlmostEqual(xi, 2.0, places=10)

    def test_equal_radii(self):
        zeta, xi = zeta_xi(2.0, 2.0, 2.0, 1.0, 0.5)
        self.assertEqual(zeta, xi)


class CalibrationTest(TestCase):
    """The shipped calibration (m, b, M, beta, d) = (1, 1, 2, 1, 2)"""

    @classmethod
    def setUpClass(cls):
        cls.cal = EberleCalibration.calibrate(1.0, 1.0, 2.0, 1.0, 2)

    def test_constants(self):
        cal = self.cal
        self.assertEqual(cal.lam, 1.0)
        self.assertAlmostEqual(cal.C, 7.0)
        self.assertAlmostEqual(cal.R1, math.sqrt(24.0))
        self.assertAlmostEqual(cal.R2, math.sqrt(108.0))
        self.assertAlmostEqual(cal.Q, q_of_kappa(cal.kappa))
        self.assertFalse(cal.xi_clamped)
        for name in ("lam", "C", "R1", "R2", "kappa", "Q", "zeta", "xi", "c"):
            value = getattr(cal, name)
            self.assertTrue(math.isfinite(value) and value > 0, f"{name} = {value}")

    def test_rate(self):
        cal = self.cal
        self.assertEqual(cal.c, contraction_rate(cal))
        self.assertLessEqual(cal.c, cal.lam / 2.0)
        self.assertLessEqual(cal.c, cal.zeta / cal.beta)

    def test_g_bounds(self):
        r = np.linspace(0.0, self.cal.R2, 200)
        g = self.cal.g(r)
        self.assertAlmostEqual(float(g[0]), 1.0)
        self.assertTrue(np.all(g >= 0.5 - 1e-9))
        self.assertTrue(np.all(np.diff(g) <= 1e-12))

    def test_f_shape(self):
        cal = self.cal
        r = np.linspace(0.0, cal.R2, 500)
        f = cal.f(r)
        self.assertAlmostEqual(cal.f(0.0), 0.0, places=14)
        self.assertEqual(cal.f(-2.0), -2.0)
        self.assertTrue(np.all(np.diff(f) > -1e-12))
        self.assertTrue(np.all(f <= r + 1e-12))
        self.assertTrue(np.all(f >= cal.Phi(r) / 2.0 - 1e-9))
        self.assertEqual(cal.f(cal.R2 + 5.0), cal.f(cal.R2))

    def test_f_table_matches_quadrature(self):
        cal = self.cal
        radii = np.concatenate([[cal.R1, cal.R2], seeded(8).uniform(0.0, cal.R2 + 1.0, 100)])
        for r in radii:
            self.assertAlmostEqual(cal.f(r), cal.f_by_quadrature(r), delta=1e-7 * max(1.0, r),
                                   msg=f"r = {r}")

    def test_f_derivatives(self):
        cal = self.cal
        self.assertAlmostEqual(cal.f_prime(0.0), 1.0)
        self.assertEqual(cal.f_prime(-1.0), 1.0)
        self.assertEqual(cal.f_prime(cal.R2 + 1.0), 0.0)
        r, step = 3.0, 1e-5
        numeric = (cal.f(r + step) - cal.f(r - step)) / (2 * step)
        self.assertAlmostEqual(numeric, cal.f_prime(r), delta=1e-6)

    def test_rho2(self):
        cal = self.cal
        x = np.array([[1.0, 0.0], [0.5, -2.0]])
        y = np.array([[-1.0, 0.0], [0.5, -2.0]])
        values = cal.rho2(x, y)
        self.assertEqual(values.shape, (2,))
        self.assertAlmostEqual(values[1], 0.0, places=12)
        expected = cal.f(2.0) * (1.0 + 2.0 * cal.kappa * 2.0)
        self.assertAlmostEqual(values[0], expected, places=12)
        np.testing.assert_allclose(values, rho2(y, x, cal), rtol=1e-14)

    def test_rho2_dimension_mismatch(self):
        with self.assertRaises(InvalidCalibrationInput):
            self.cal.rho2([1.0, 0.0], [1.0, 0.0, 0.0])

    def test_negative_distance(self):
        with self.assertRaises(InvalidCalibrationInput):
            self.cal.g(-1.0)

    def test_admits(self):
        self.assertTrue(self.cal.admits(PotentialModel.quadratic(2, 2.0, 1.0)))
        self.assertFalse(self.cal.admits(PotentialModel.quadratic(2, 3.0, 1.0)))
        self.assertFalse(self.cal.admits(PotentialModel.quadratic(3, 2.0, 1.0)))

    def test_json_replay(self):
        cal = self.cal
        with tempfile.TemporaryDirectory() as directory:
            filename = os.path.join(directory, "calibration.json")
            cal.write(filename)
            loaded = EberleCalibration.load(filename)
        self.assertEqual(loaded.c, cal.c)
        self.assertEqual(loaded.to_json(), cal.to_json())
        r = np.linspace(0.0, cal.R2, 37)
        np.testing.assert_array_equal(loaded.f(r), cal.f(r))

    def test_smoothness_to_rho(self):
        check = check_smoothness_to_rho(self.cal, A=2.0, M=2.0, probes=2000, rng=seeded(1))
        self.assertTrue(check.passed)
        self.assertGreater(smoothness_to_rho_constant(self.cal, 2.0, 2.0), 1.0)

    def test_lyapunov_drift(self):
        model = PotentialModel.quadratic(2, 2.0, 1.0)
        data = generate_dataset(DistributionSpec(DistributionKind.Sphere, 2), 32, 3)
        for p in (2, 4):
            self.assertTrue(check_lyapunov_drift(model, data, p, 1.0, 2000, seeded(p)).passed)

    def test_verify_calibration(self):
        report = verify_calibration(self.cal, probes=2000, rng=seeded(7))
        self.assertTrue(report.passed, [message for message in report.messages()])
        names = [check.name for check in report]
        for name in ("kappa-inequality", "f-chain", "f-second-derivative",
                     "f-second-derivative-finite-differences"):
            self.assertIn(name, names)
        self.assertTrue(any(name.startswith("generator-outside-S1") for name in names))


class InvalidCalibrationTest(TestCase):

    def test_non_positive_constants(self):
        with self.assertRaises(InvalidCalibrationInput):
            EberleCalibration.calibrate(0.0, 1.0, 2.0, 1.0, 2)
        with self.assertRaises(InvalidCalibrationInput):
            EberleCalibration.calibrate(1.0, 1.0, 2.0, -1.0, 2)
        with self.assertRaises(InvalidCalibrationInput):
            EberleCalibration.calibrate(1.0, 1.0, 2.0, 1.0, 0)

    def test_degenerate_radius(self):
        cal = EberleCalibration.calibrate(1.0, 1.0, 2.0, 1.0, 1, grid_points=64)
        object.__setattr__(cal, "R2", 0.0)
        with self.assertRaises(DegenerateCalibration):
            smoothness_to_rho_constant(cal, 1.0, 1.0)
