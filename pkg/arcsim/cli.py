import os
import sys
import logging
import argparse
from typing import List, Optional, Tuple

import numpy as np

from arcsim.config import RunConfig, load_config, parse_overrides
from arcsim.schema import require, InvalidConfig
from arcsim.model import DistributionSpec, DistributionKind, Family, InitialLaw
from arcsim.potentials import PotentialModel, Dataset, generate_dataset, certify_constants
from arcsim.eberle import EberleCalibration, verify_calibration
from arcsim.sde import DriverSpec, CouplingSpec, simulate_pair
from arcsim.streams import Streams, generator
from arcsim.ensemble import EnsembleRunner
from arcsim.estimators import (check_moment_bound, check_ou_moments, check_one_step_bound,
                               check_minibatch_variance)
from arcsim.records import ExperimentRecord
from arcsim.report import CheckResult, Report
from arcsim import experiments

logger = logging.getLogger("arcsim")

SWEEPS = ("contraction", "eta", "batch", "n", "eps", "gibbs")


def distribution_spec(config: RunConfig) -> DistributionSpec:
    section = config.dataset
    try:
        kind = DistributionKind(section.kind)
    except ValueError:
        raise InvalidConfig(f"dataset.kind must be one of "
                            f"{[kind.value for kind in DistributionKind]}, got {section.kind!r}")
    return DistributionSpec(kind, config.potential.dimension, section.radius, section.sigma,
                            section.location)


def load_model(config: RunConfig) -> Tuple[PotentialModel, Dataset]:
    """The configured potential together with its dataset"""
    spec = distribution_spec(config)
    if config.dataset.file:
        data = Dataset.from_csv(config.dataset.file)
        radius = data.support_radius
    else:
        data = generate_dataset(spec, config.dataset.n,
                                generator(config.run.seed, "dataset", 0, "data"))
        radius = spec.support_radius

    section = config.potential
    try:
        family = Family(section.family)
    except ValueError:
        raise InvalidConfig(f"potential.family must be one of "
                            f"{[family.value for family in Family]}, got {section.family!r}")
    if family is Family.Quadratic:
        model = PotentialModel.quadratic(section.dimension, section.m0, radius)
    else:
        model = PotentialModel.cosine_quadratic(section.dimension, section.m0, section.a, radius)
    logger.info("%s potential: m=%g b=%g M=%g A=%g on %d samples", family.value,
                model.m, model.b, model.M, model.A, data.n)
    return model, data


def load_calibration(config: RunConfig) -> EberleCalibration:
    section = config.calibration
    return EberleCalibration.calibrate(section.m, section.b, section.M, section.beta, section.d,
                                       grid_points=section.grid_points, tol=section.tolerance)


def _epsilon(value: float) -> Optional[float]:
    return value if value > 0 else None


def _driver(config: RunConfig, model: PotentialModel, data: Dataset, beta: float) -> DriverSpec:
    section = config.simulate
    if section.driver == "continuous-langevin":
        return DriverSpec.continuous(model, data, beta, section.dt)
    if section.driver == "discretized-langevin":
        return DriverSpec.discretized(model, data, beta, section.eta)
    if section.driver == "sgld":
        return DriverSpec.sgld(model, data, beta, section.eta, section.batch_size or data.n)
    raise InvalidConfig(f"simulate.driver must be continuous-langevin, discretized-langevin "
                        f"or sgld, got {section.driver!r}")


def _coupling(config: RunConfig, cal: EberleCalibration) -> CouplingSpec:
    section = config.simulate
    if section.coupling == "arc":
        epsilon = _epsilon(section.epsilon) or experiments.EPSILON_FRACTION * cal.R2
        return CouplingSpec.arc(epsilon)
    if section.coupling == "synchronous":
        return CouplingSpec.synchronous()
    if section.coupling == "reflection":
        return CouplingSpec.reflection()
    raise InvalidConfig(f"simulate.coupling must be arc, synchronous or reflection, "
                        f"got {section.coupling!r}")


class Outputs:
    """The fixed output directory layout"""

    def __init__(self, root: str):
        self.root = root
        self.records = os.path.join(root, "records")
        self.curves = os.path.join(root, "curves")
        for directory in (self.root, self.records, self.curves):
            os.makedirs(directory, exist_ok=True)
        self.summary: List[str] = []

    def path(self, *parts: str) -> str:
        return os.path.join(self.root, *parts)

    def report(self, name: str, report: Report):
        record = ExperimentRecord(name, {}, [], [], None, report)
        record.write(os.path.join(self.records, f"{name}.json"))
        self.summary.append(f"{report.title}: {'PASS' if report.passed else 'FAIL'}")
        self.summary.extend(f"  {message}" for message in report.messages())

    def record(self, record: ExperimentRecord):
        record.write(os.path.join(self.records, f"{record.experiment_id}.json"))
        record.write_csv(os.path.join(self.curves, f"{record.experiment_id}.csv"))
        self.summary.extend(record.summary())

    def write_summary(self):
        with open(self.path("summary.txt"), 'w', encoding='utf-8') as file:
            file.write("\n".join(self.summary) + "\n")


def run_calibrate(config: RunConfig, outputs: Outputs) -> bool:
    cal = load_calibration(config)
    cal.write(outputs.path("calibration.json"))
    report = verify_calibration(cal, probes=config.calibration.probes,
                                rng=generator(config.run.seed, "calibrate", 0, "probe"))
    outputs.summary.append(f"c = {cal.c:.6g} (lambda {cal.lam:.6g}, C {cal.C:.6g}, R1 {cal.R1:.6g}, "
                           f"R2 {cal.R2:.6g}, kappa {cal.kappa:.6g}, zeta {cal.zeta:.6g})")
    outputs.report("calibration-verify", report)
    return report.passed


def run_simulate(config: RunConfig, outputs: Outputs) -> bool:
    section = config.simulate
    model, data = load_model(config)
    cal = load_calibration(config)
    cal.write(outputs.path("calibration.json"))
    driver = _driver(config, model, data, cal.beta)
    if section.ensemble < 1:
        raise InvalidConfig(f"simulate.ensemble must be positive, got {section.ensemble}")
    x0 = np.tile(np.asarray(section.x0, dtype=float), (section.ensemble, 1))
    y0 = np.tile(np.asarray(section.y0, dtype=float), (section.ensemble, 1))
    pair = simulate_pair(x0, y0, driver, driver,
                         _coupling(config, cal), section.horizon, section.dt,
                         Streams.for_block(config.run.seed, "simulate", 0),
                         record_stride=section.record_stride)
    pair.write(os.path.join(outputs.curves, "simulate.csv"))
    if config.run.dump_trajectories:
        for member in range(1, pair.size):
            pair.write(os.path.join(outputs.curves, f"simulate-{member}.csv"), member)
    outputs.summary.append(f"simulated {pair.size} {pair.coupling.mode.value} pairs to t={section.horizon:g}: "
                           f"mean final distance {float(pair.distance[-1].mean()):.6g}")
    return True


def _variance_report(config: RunConfig, model: PotentialModel, spec: DistributionSpec) -> Report:
    """Mini-batch variance identity and bound for every n and B up to the cap"""
    section = config.verify
    report = Report("mini-batch variance")
    probes = generator(config.run.seed, "verify/variance", 0, "probe")
    for n in range(2, section.variance_max_n + 1):
        data = generate_dataset(spec, n, generator(config.run.seed, "verify/variance", n, "data"))
        points = probes.uniform(-5.0, 5.0, size=(section.variance_points, model.dimension))
        for size in range(1, n + 1):
            checks = Report("")
            for w in points:
                checks.extend(check_minibatch_variance(model, data, w, size))
            worst = min(checks, key=lambda check: check.margin)
            report.add(CheckResult(f"variance-n{n}-B{size}", checks.passed, worst.margin,
                                   detail={"worst": worst.name}))
    return report


def run_verify(config: RunConfig, outputs: Outputs) -> bool:
    section = config.verify
    model, data = load_model(config)
    spec = distribution_spec(config)
    beta = config.calibration.beta
    seed, threads, block_size = config.run.seed, config.threads, config.run.block_size
    x0 = InitialLaw(config.experiment.x0, config.experiment.initial_scale)

    def runner(name: str) -> EnsembleRunner:
        return EnsembleRunner(seed, f"verify/{name}", threads, block_size)

    report = Report("estimator checks")
    report.extend(certify_constants(model, section.certificate_probes,
                                    generator(seed, "verify/certificates", 0, "probe")))
    continuous = DriverSpec.continuous(model, data, beta, section.dt)
    discretized = DriverSpec.discretized(model, data, beta, section.eta)
    for driver in (continuous, discretized):
        for p in (2, 4):
            check = check_moment_bound(driver, p, section.times, section.ensemble, x0,
                                       runner(f"moments/{driver.kind.value}/{p}"))
            check.name = f"{check.name}-{driver.kind.value}"
            report.add(check)
    if model.family is Family.Quadratic:
        report.add(check_ou_moments(discretized, section.ou_steps, section.ensemble, x0,
                                    runner("ou-moments")))
    else:
        logger.info("skipping closed form moments: the %s family has none", model.family.value)
    sgld = DriverSpec.sgld(model, data, beta, section.eta, min(section.batch_size, data.n))
    report.add(check_one_step_bound(sgld, section.one_step_t, section.ensemble, x0,
                                    runner("one-step")))
    outputs.report("verify", report)

    variance = _variance_report(config, model, spec)
    outputs.report("minibatch-variance", variance)
    return report.passed and variance.passed


def run_sweep(config: RunConfig, outputs: Outputs, sweep: str) -> bool:
    section = config.experiment
    model, data = load_model(config)
    cal = load_calibration(config)
    cal.write(outputs.path("calibration.json"))
    x0 = InitialLaw(section.x0, section.initial_scale)
    y0 = InitialLaw(section.y0, section.initial_scale)
    common = {"seed": config.run.seed, "threads": config.threads,
              "block_size": config.run.block_size}
    epsilon = _epsilon(section.epsilon)

    if sweep == "contraction":
        record = experiments.run_contraction(model, data, cal, x0, y0, section.horizon,
                                             section.ensemble, section.dt, section.record_points,
                                             epsilon, **common)
    elif sweep == "eta":
        require(section, "experiment", "etas")
        population = None
        if not config.dataset.file:
            population = generate_dataset(distribution_spec(config), section.population_size,
                                          generator(config.run.seed, "dataset", 0, "population"))
        record = experiments.run_eta_sweep(model, data, cal, section.t_final, section.etas,
                                           section.ensemble, x0, epsilon, section.substeps,
                                           population, **common)
    elif sweep == "batch":
        require(section, "experiment", "batch_sizes")
        record = experiments.run_batch_sweep(model, data, cal, section.t_final, section.batch_sizes,
                                             section.eta, section.ensemble, x0, epsilon, **common)
    elif sweep == "n":
        require(section, "experiment", "ns")
        record = experiments.run_n_sweep(model, distribution_spec(config), cal, section.t_final,
                                         section.ns, section.replicas, section.ensemble, x0,
                                         section.dt, section.population_size, **common)
    elif sweep == "eps":
        require(section, "experiment", "epsilons")
        record = experiments.run_eps_convergence(model, data, cal, section.epsilons, section.horizon,
                                                 section.ensemble, x0, y0, section.dt, **common)
    else:
        require(section, "experiment", "deltas")
        burn_in = section.burn_in if section.burn_in > 0 else None
        record = experiments.run_gibbs_gap(model, data, cal, section.deltas, burn_in, section.horizon,
                                           section.ensemble, x0, section.dt, section.observable,
                                           section.record_every, section.burn_in_check, **common)
    outputs.record(record)
    return record.passed


def setup_parser():
    parser = argparse.ArgumentParser(prog="arcsim",
                                     description="Simulate and verify approximate reflection "
                                                 "couplings of Langevin dynamics")

    parser.add_argument('command', choices=("calibrate", "simulate", "verify", "sweep"),
                        help='Action to perform')
    parser.add_argument('experiment', nargs='?', choices=SWEEPS,
                        help='Experiment to run, required by sweep')

    parser.add_argument('--config', default=None,
                        help='Sectioned key-value config file')
    parser.add_argument('--seed', type=int,
                        help='Master seed every random stream is derived from')
    parser.add_argument('--out', default=None,
                        help='Output directory (default $ARCSIM_OUTPUT_ROOT or ./arcsim-output)')
    parser.add_argument('--threads', default=None,
                        help='Worker threads for ensemble blocks, a count or auto')
    parser.add_argument('--dump-trajectories', action='store_true',
                        help='Write one trajectory CSV per simulated pair')
    parser.add_argument('--set', action='append', default=[], metavar='SECTION.KEY=VALUE',
                        help='Override a single config value, may be repeated')

    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('--verbose', action='store_true',
                           help='Log debugging output')
    verbosity.add_argument('--quiet', action='store_true',
                           help='Only log warnings and errors')

    return parser


def _overrides(args) -> dict:
    overrides = parse_overrides(args.set)
    flags = {"seed": args.seed, "output_dir": args.out, "threads": args.threads,
             "dump_trajectories": "true" if args.dump_trajectories else None}
    for key, value in flags.items():
        if value is not None:
            overrides.setdefault("run", {})[key] = str(value)
    return overrides


def main(argv: Optional[List[str]] = None) -> int:
    parser = setup_parser()

    args = parser.parse_args(argv)
    if args.command == "sweep" and args.experiment is None:
        parser.error(f"sweep needs an experiment, one of {', '.join(SWEEPS)}")

    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        config = load_config(args.config, _overrides(args))
        outputs = Outputs(config.output_dir)
        config.write(outputs.path("config-echo.kv"))

        if args.command == "calibrate":
            passed = run_calibrate(config, outputs)
        elif args.command == "simulate":
            passed = run_simulate(config, outputs)
        elif args.command == "verify":
            passed = run_verify(config, outputs)
        else:
            passed = run_sweep(config, outputs, args.experiment)
        outputs.write_summary()
    except (ValueError, OSError) as error:
        logger.error("%s", error)
        return 2

    for line in outputs.summary:
        print(line)
    if not passed:
        logger.error("at least one check failed, see %s", outputs.path("summary.txt"))
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
