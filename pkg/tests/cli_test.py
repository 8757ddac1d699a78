import io
import os
import json
import tempfile
from unittest import TestCase, mock
from contextlib import redirect_stdout

import numpy as np

from arcsim.cli import main, load_model
from arcsim.config import (RunConfig, parse_config, parse_overrides, OUTPUT_ROOT_VARIABLE,
                           DEFAULT_OUTPUT_ROOT)
from arcsim.model import Family
from arcsim.potentials import Dataset
from arcsim.schema import InvalidConfig


class ConfigTest(TestCase):

    def test_defaults(self):
        config = parse_config("")
        self.assertEqual(config, RunConfig())
        self.assertEqual(config.experiment.epsilons, (0.08, 0.04, 0.02, 0.01))
        self.assertEqual(config.threads, 1)

    def test_values_are_typed(self):
        config = parse_config("[run]\ndump_trajectories = yes\n"
                              "[experiment]\netas = 0.1, 0.01\nensemble = 50\n"
                              "[calibration]\nM = 3.5\nm = 0.5\n")
        self.assertTrue(config.run.dump_trajectories)
        self.assertEqual(config.experiment.etas, (0.1, 0.01))
        self.assertEqual(config.experiment.ensemble, 50)
        self.assertEqual((config.calibration.m, config.calibration.M), (0.5, 3.5))

    def test_misspelled_key(self):
        with self.assertRaises(InvalidConfig) as context:
            parse_config("[experiment]\nensembel = 10\n")
        self.assertIn("experiment.ensemble", str(context.exception))

    def test_unknown_section(self):
        with self.assertRaises(InvalidConfig) as context:
            parse_config("[experimnt]\nensemble = 10\n")
        self.assertIn("[experiment]", str(context.exception))

    def test_type_mismatch(self):
        with self.assertRaises(InvalidConfig):
            parse_config("[experiment]\nensemble = many\n")
        with self.assertRaises(InvalidConfig):
            parse_config("[run]\ndump_trajectories = maybe\n")

    def test_overrides_win(self):
        overrides = parse_overrides(["experiment.ensemble=20", "run.seed=5"])
        config = parse_config("[experiment]\nensemble = 10\nhorizon = 3.0\n", overrides)
        self.assertEqual(config.experiment.ensemble, 20)
        self.assertEqual(config.experiment.horizon, 3.0)
        self.assertEqual(config.run.seed, 5)

    def test_malformed_override(self):
        with self.assertRaises(InvalidConfig):
            parse_overrides(["seed=5"])
        with self.assertRaises(InvalidConfig):
            parse_overrides(["run.seed"])

    def test_echo_reads_back(self):
        config = parse_config("[experiment]\nensemble = 10\nx0 = 0.5, -0.25\n",
                              {"potential": {"a": "0.5"}})
        self.assertEqual(parse_config(config.to_kv()), config)
        self.assertIn("ensemble = 10", config.to_kv())
        self.assertIn("a = 0.5", config.to_kv())

    def test_threads(self):
        self.assertEqual(parse_config("[run]\nthreads = 3\n").threads, 3)
        self.assertGreaterEqual(parse_config("[run]\nthreads = auto\n").threads, 1)
        with self.assertRaises(InvalidConfig):
            parse_config("[run]\nthreads = 0\n").threads
        with self.assertRaises(InvalidConfig):
            parse_config("[run]\nthreads = many\n").threads

    def test_output_root(self):
        with mock.patch.dict(os.environ, {OUTPUT_ROOT_VARIABLE: "/tmp/elsewhere"}):
            self.assertEqual(parse_config("").output_dir, "/tmp/elsewhere")
            self.assertEqual(parse_config("[run]\noutput_dir = here\n").output_dir, "here")
        with mock.patch.dict(os.environ, {}, clear=True):
            self.assertEqual(parse_config("").output_dir, DEFAULT_OUTPUT_ROOT)


class LoadModelTest(TestCase):

    def test_generated_dataset(self):
        config = parse_config("[potential]\nfamily = cosine-quadratic\nm0 = 2.0\na = 0.5\n"
                              "[dataset]\nn = 12\nradius = 2.0\n")
        model, data = load_model(config)
        self.assertIs(model.family, Family.CosineQuadratic)
        self.assertEqual(model.support_radius, 2.0)
        self.assertEqual(data.n, 12)
        _, same = load_model(config)
        np.testing.assert_array_equal(same.samples, data.samples)

    def test_dataset_file(self):
        with tempfile.TemporaryDirectory() as directory:
            filename = os.path.join(directory, "data.csv")
            Dataset([[3.0, 4.0], [0.0, 1.0]]).write(filename)
            model, data = load_model(parse_config(f"[dataset]\nfile = {filename}\n"))
        self.assertEqual(data.n, 2)
        self.assertEqual(model.support_radius, 5.0)

    def test_unknown_family(self):
        with self.assertRaises(InvalidConfig):
            load_model(parse_config("[potential]\nfamily = quartic\n"))
        with self.assertRaises(InvalidConfig):
            load_model(parse_config("[dataset]\nkind = cube\n"))


class MainTest(TestCase):
    """End to end runs of the command line entry point"""

    EXPECTED_SIMULATE = "simulated 1 arc pairs to t=0: mean final distance 2"

    EXPECTED_SIMULATE_HEADER = "t,x_1,x_2,y_1,y_2,distance,h_eps,occupation_integrand"

    SMALL = ["--set", "calibration.grid_points=256"]

    def _main(self, *argv):
        output = io.StringIO()
        with redirect_stdout(output):
            status = main(list(argv))
        return status, output.getvalue()

    def test_simulate(self):
        with tempfile.TemporaryDirectory() as directory:
            status, output = self._main("simulate", "--out", directory,
                                        "--set", "simulate.horizon=0", *self.SMALL)
            with open(os.path.join(directory, "curves", "simulate.csv")) as file:
                lines = file.read().splitlines()
            self.assertTrue(os.path.exists(os.path.join(directory, "config-echo.kv")))
            self.assertTrue(os.path.exists(os.path.join(directory, "calibration.json")))

        self.assertEqual(status, 0)
        self.assertEqual(output.strip(), MainTest.EXPECTED_SIMULATE)
        self.assertEqual(len(lines), 2)
        self.assertEqual(lines[0], MainTest.EXPECTED_SIMULATE_HEADER)

    def test_dump_trajectories(self):
        with tempfile.TemporaryDirectory() as directory:
            status, _ = self._main("simulate", "--out", directory, "--dump-trajectories",
                                   "--set", "simulate.ensemble=3", "--set", "simulate.horizon=0.05",
                                   *self.SMALL)
            curves = sorted(os.listdir(os.path.join(directory, "curves")))
        self.assertEqual(status, 0)
        self.assertEqual(curves, ["simulate-1.csv", "simulate-2.csv", "simulate.csv"])

    def test_calibrate(self):
        with tempfile.TemporaryDirectory() as directory:
            status, output = self._main("calibrate", "--out", directory,
                                        "--set", "calibration.probes=500")
            with open(os.path.join(directory, "calibration.json")) as file:
                constants = json.load(file)["constants"]
            with open(os.path.join(directory, "records", "calibration-verify.json")) as file:
                verdict = json.load(file)["verdict"]

        self.assertEqual(status, 0, output)
        self.assertTrue(output.startswith("c = "))
        self.assertTrue(verdict["passed"])
        for name in ("lam", "C", "R2", "kappa", "zeta", "c"):
            self.assertGreater(constants[name], 0.0)

    def test_sweep_is_reproducible_across_threads(self):
        arguments = ["sweep", "contraction", "--seed", "11", "--set", "experiment.horizon=0.1",
                     "--set", "experiment.ensemble=16", "--set", "experiment.record_points=5",
                     "--set", "run.block_size=4", *self.SMALL]
        contents = []
        with tempfile.TemporaryDirectory() as directory:
            for threads in ("1", "2"):
                out = os.path.join(directory, threads)
                status, _ = self._main(*arguments, "--out", out, "--threads", threads)
                self.assertEqual(status, 0)
                with open(os.path.join(out, "records", "contraction.json")) as file:
                    record = file.read()
                with open(os.path.join(out, "curves", "contraction.csv")) as file:
                    curve = file.read()
                contents.append((record, curve))
        self.assertEqual(contents[0], contents[1])

    def test_invalid_key(self):
        with tempfile.TemporaryDirectory() as directory:
            status, output = self._main("simulate", "--out", directory, "--set", "run.sed=1")
        self.assertEqual(status, 2)
        self.assertEqual(output, "")

    def test_missing_sweep_values(self):
        with tempfile.TemporaryDirectory() as directory:
            status, _ = self._main("sweep", "eta", "--out", directory,
                                   "--set", "experiment.etas=", "--set", "dataset.n=8", *self.SMALL)
        self.assertEqual(status, 2)

    def test_sweep_needs_experiment(self):
        with redirect_stdout(io.StringIO()), mock.patch("sys.stderr", io.StringIO()):
            with self.assertRaises(SystemExit):
                main(["sweep"])
