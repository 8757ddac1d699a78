"""
The six headline experiments. Each one simulates coupled or independent
Langevin ensembles, measures the quantity a generalization or contraction
bound controls, fits its scaling and returns an ExperimentRecord with a
verdict.

Sweeps run every swept value on the same random streams so that
differences between sweep values come from the swept parameter alone.
"""
import time
import logging
from typing import Sequence, Optional, List, Dict, Any

import numpy as np

from arcsim.model import DistributionSpec, InitialLaw
from arcsim.potentials import (PotentialModel, Dataset, generate_dataset,
                               empirical_loss, population_loss, empirical_grad)
from arcsim.eberle import EberleCalibration
from arcsim.sde import DriverSpec, CouplingSpec, simulate, simulate_pair
from arcsim.estimators import (EnsembleStatistic, SlopeFit, ALLOWANCE,
                               fit_loglog_slope, fit_exponential_rate,
                               check_coupling_gap_bound, integrated_autocorrelation_time,
                               batch_variance_factor)
from arcsim.ensemble import EnsembleRunner, BLOCK_SIZE
from arcsim.records import ExperimentRecord
from arcsim.report import CheckResult, Report
from arcsim import streams as rng_streams

logger = logging.getLogger(__name__)

# beyond this many grid steps a run is a configuration mistake, not an experiment
MAX_STEPS = 10 ** 8
# epsilon defaults to this fraction of R2
EPSILON_FRACTION = 1e-3
FINAL_ONLY = 10 ** 9
# generalization gaps below this are rounding, the loss does not depend on the data
NUMERICAL_ZERO = 1e-12


class InvalidExperiment(ValueError):
    pass


class BurnInTooShort(InvalidExperiment):
    pass


def _runner(experiment_id: str, seed: int, threads: int, block_size: int) -> EnsembleRunner:
    return EnsembleRunner(seed, experiment_id, threads, block_size)


def _check_steps(horizon: float, dt: float, what: str):
    if horizon < 0:
        raise InvalidExperiment(f"{what} must be non-negative, got {horizon}")
    if dt <= 0:
        raise InvalidExperiment(f"grid step must be positive, got {dt}")
    if horizon / dt > MAX_STEPS:
        raise InvalidExperiment(
            f"{what} {horizon:.3g} needs {horizon / dt:.3g} grid steps; set it explicitly")


def _default_epsilon(cal: EberleCalibration, epsilon: Optional[float]) -> float:
    return EPSILON_FRACTION * cal.R2 if epsilon is None else epsilon


def _distinct(values: Sequence[float], what: str) -> List[float]:
    values = [float(value) for value in values]
    if len(set(values)) != len(values):
        raise InvalidExperiment(f"{what} contains repeated entries: {values}")
    return values


def _spans(values: Sequence[float], ratio: float, what: str):
    if min(values) <= 0 or max(values) / min(values) < ratio * (1 - 1e-12):
        raise InvalidExperiment(f"{what} must span a factor of {ratio:.3g}, got {sorted(values)}")


def _pairwise_decrease(name: str, values: Sequence[float], errors: Sequence[float],
                       sweep: Sequence[float]) -> CheckResult:
    """values[i + 1] <= values[i] + ALLOWANCE * combined standard error"""
    slacks, allowances = [], []
    for i in range(len(values) - 1):
        allowance = ALLOWANCE * float(np.hypot(errors[i], errors[i + 1]))
        slacks.append(values[i] - values[i + 1])
        allowances.append(allowance)
    if not slacks:
        return CheckResult(name, True, 0.0)
    worst = int(np.argmin(np.asarray(slacks) + np.asarray(allowances)))
    passed = all(slack + allowance >= 0 for slack, allowance in zip(slacks, allowances))
    return CheckResult(name, passed, slacks[worst], ci=allowances[worst],
                       witness=None if passed else {"from": sweep[worst], "to": sweep[worst + 1]})


def _zero_control(name: str, statistic: EnsembleStatistic) -> CheckResult:
    allowance = ALLOWANCE * statistic.final_stderr
    value = abs(statistic.final_mean)
    return CheckResult(name, value <= allowance, -value, ci=allowance)


def _slope_check(name: str, fit: Optional[SlopeFit], low: float, high: float,
                 reason: str = "") -> CheckResult:
    if fit is None:
        return CheckResult(name, False, float("-inf"), detail={"reason": reason or "no fit"})
    margin = min(fit.slope - low, high - fit.slope)
    return CheckResult(name, low <= fit.slope <= high, margin,
                       detail={"slope": fit.slope, "band": [low, high]})


def _finish(record: ExperimentRecord, started: float) -> ExperimentRecord:
    record.wall_time = time.perf_counter() - started
    logger.info("%s finished in %.1fs: %s", record.experiment_id, record.wall_time,
                "pass" if record.passed else "FAIL")
    return record


def _continuous(model, data, cal, dt) -> DriverSpec:
    return DriverSpec.continuous(model, data, cal.beta, dt)


def _warn_unadmitted(cal: EberleCalibration, model: PotentialModel):
    if not cal.admits(model):
        logger.warning("calibration (m=%g, b=%g, M=%g) does not cover the %s potential "
                       "(m=%g, b=%g, M=%g); its bound is not guaranteed",
                       cal.m, cal.b, cal.M, model.family.value, model.m, model.b, model.M)


def _law_config(law: InitialLaw) -> Dict[str, Any]:
    return {"location": list(law.location), "scale": law.scale}


def run_contraction(model: PotentialModel, data: Dataset, cal: EberleCalibration,
                    x0: InitialLaw, y0: InitialLaw, horizon: Optional[float] = None,
                    ensemble: int = 10000, dt: float = 0.01, record_points: int = 50,
                    epsilon: Optional[float] = None, x_driver: Optional[DriverSpec] = None,
                    y_driver: Optional[DriverSpec] = None, seed: int = 0, threads: int = 1,
                    block_size: int = BLOCK_SIZE) -> ExperimentRecord:
    """E rho2(X_t, Y_t) along an ARC pair of identical drivers against
    e^{-ct} E rho2(X_0, Y_0), with a synchronous pair on the same noise
    as a baseline."""
    started = time.perf_counter()
    x_driver = x_driver or _continuous(model, data, cal, dt)
    y_driver = y_driver or x_driver
    if (x_driver.kind, x_driver.model, x_driver.dataset, x_driver.refresh_period) != \
            (y_driver.kind, y_driver.model, y_driver.dataset, y_driver.refresh_period):
        raise InvalidExperiment("contraction needs identical drivers for X and Y")
    _warn_unadmitted(cal, x_driver.model)
    horizon = 5.0 / cal.c if horizon is None else horizon
    _check_steps(horizon, dt, "horizon")
    epsilon = _default_epsilon(cal, epsilon)
    steps = int(round(horizon / dt))
    stride = max(1, steps // max(1, record_points))
    runner = _runner("contraction", seed, threads, block_size)

    def job(block, count, streams):
        x_start = x0.sample(count, streams.init)
        y_start = y0.sample(count, streams.init)
        arc = simulate_pair(x_start, y_start, x_driver, y_driver, CouplingSpec.arc(epsilon),
                            horizon, dt, streams, record_stride=stride)
        synchronous = simulate_pair(x_start, y_start, x_driver, y_driver, CouplingSpec.synchronous(),
                                    horizon, dt, runner.streams(block), record_stride=stride)
        return (arc.times, cal.rho2(arc.x_path, arc.y_path),
                cal.rho2(synchronous.x_path, synchronous.y_path))

    blocks = runner.map(job, ensemble, label="contraction")
    times = blocks[0][0]
    arc = EnsembleStatistic.from_samples(times, np.concatenate([b[1] for b in blocks], axis=1), "arc")
    synchronous = EnsembleStatistic.from_samples(
        times, np.concatenate([b[2] for b in blocks], axis=1), "synchronous")

    bound = np.exp(-cal.c * times) * arc.mean[0]
    slack = bound + ALLOWANCE * arc.stderr - arc.mean
    violations = int(np.count_nonzero(slack < 0))
    worst = int(np.argmin(slack))
    verdict = Report("contraction")
    verdict.add(CheckResult("contraction-bound", violations == 0, float(bound[worst] - arc.mean[worst]),
                            ci=float(ALLOWANCE * arc.stderr[worst]),
                            detail={"violations": violations, "bound": bound.tolist()}))

    derived: Dict[str, Any] = {"c": cal.c, "epsilon": epsilon, "initial_rho2": float(arc.mean[0])}
    fit = None
    for statistic, name in ((arc, "arc"), (synchronous, "synchronous")):
        positive = statistic.mean > 0
        if np.count_nonzero(positive) >= 3:
            rate_fit = fit_exponential_rate(times[positive], statistic.mean[positive])
            derived[f"{name}_decay_rate"] = -rate_fit.slope
            derived[f"{name}_decay_rate_stderr"] = rate_fit.stderr
            if name == "arc":
                fit = rate_fit
                derived["arc_rate_at_least_c"] = bool(-rate_fit.slope + ALLOWANCE * rate_fit.stderr >= cal.c)

    config = {"horizon": horizon, "dt": dt, "ensemble": ensemble, "epsilon": epsilon,
              "record_points": record_points, "x0": _law_config(x0), "y0": _law_config(y0),
              "seed": seed, "block_size": block_size}
    record = ExperimentRecord("contraction", config, [], [arc, synchronous], fit, verdict, derived)
    return _finish(record, started)


def step_size_ceiling(model: PotentialModel) -> float:
    """Largest admissible step size, min(1, 1/(2M))"""
    return min(1.0, 1.0 / (2.0 * model.M)) if model.M > 0 else 1.0


def _multiple(value: float, step: float) -> bool:
    ratio = value / step
    return abs(ratio - round(ratio)) <= 1e-9 * max(1.0, ratio)


def _coupled_finals(runner: EnsembleRunner, ensemble: int, x0: InitialLaw, y0: InitialLaw,
                    x_driver: DriverSpec, y_driver: DriverSpec, coupling: CouplingSpec,
                    horizon: float, dt: float, brownian_step: Optional[float] = None,
                    label: str = ""):
    def job(block, count, streams):
        pair = simulate_pair(x0.sample(count, streams.init), y0.sample(count, streams.init),
                             x_driver, y_driver, coupling, horizon, dt, streams,
                             record_stride=FINAL_ONLY, brownian_step=brownian_step)
        return pair.x_path[-1], pair.y_path[-1], pair.occupation[-1]

    blocks = runner.map(job, ensemble, label=label)
    return tuple(np.concatenate([block[k] for block in blocks]) for k in range(3))


def _loss_gap(model, reference: Dataset, x, y, label: str, sweep_value: float):
    return EnsembleStatistic.from_samples(
        [0.0], empirical_loss(model, x, reference) - empirical_loss(model, y, reference),
        label, sweep_value)


def run_eta_sweep(model: PotentialModel, data: Dataset, cal: EberleCalibration, t_final: float,
                  etas: Sequence[float], ensemble: int, x0: InitialLaw,
                  epsilon: Optional[float] = None, substeps: int = 8,
                  population: Optional[Dataset] = None, seed: int = 0, threads: int = 1,
                  block_size: int = BLOCK_SIZE) -> ExperimentRecord:
    """Continuous Langevin against its eta-discretization, both started at
    x0 and ARC coupled on one Brownian path per member."""
    started = time.perf_counter()
    etas = sorted(_distinct(etas, "eta list"), reverse=True)
    _spans(etas, 10.0, "eta list")
    ceiling = step_size_ceiling(model)
    if max(etas) > ceiling:
        raise InvalidExperiment(f"step sizes must not exceed {ceiling:.4g}, got {max(etas)}")
    if substeps < 1:
        raise InvalidExperiment("substeps must be positive")
    for eta in etas:
        if not _multiple(t_final, eta):
            raise InvalidExperiment(f"t_final {t_final} is not a multiple of eta {eta}")
        if not _multiple(eta, min(etas)):
            raise InvalidExperiment(f"eta {eta} is not a multiple of the smallest eta {min(etas)}")
    _check_steps(t_final, min(etas) / substeps, "t_final")
    _warn_unadmitted(cal, model)
    epsilon = _default_epsilon(cal, epsilon)
    reference = population or data
    resolution = min(etas) / substeps
    runner = _runner("eta-sweep", seed, threads, block_size)

    # one continuous reference for every eta: same grid, same Brownian path
    x_driver = DriverSpec.continuous(model, data, cal.beta, resolution)
    rho, gaps, references = [], [], []
    verdict = Report("eta sweep")
    for eta in etas:
        y_driver = DriverSpec.discretized(model, data, cal.beta, eta)
        x, y, _ = _coupled_finals(runner, ensemble, x0, x0, x_driver, y_driver,
                                  CouplingSpec.arc(epsilon), t_final, resolution, resolution,
                                  label=f"eta={eta:g}")
        rho.append(EnsembleStatistic.from_samples([t_final], cal.rho2(x, y), "rho2", eta))
        gaps.append(_loss_gap(model, reference, x, y, "loss-gap", eta))
        references.append(EnsembleStatistic.from_samples(
            [t_final], empirical_loss(model, x, reference), "reference-loss", eta))
        verdict.add(check_coupling_gap_bound(empirical_loss(model, x, reference),
                                             empirical_loss(model, y, reference), x, y,
                                             model.M, model.A, f"coupling-gap-bound-eta={eta:g}"))

    errors = np.array([statistic.final_mean for statistic in rho])
    stderrs = np.array([statistic.final_stderr for statistic in rho])
    envelope_constant = errors[0] / np.sqrt(etas[0])
    envelope = envelope_constant * np.sqrt(etas)
    slack = envelope + ALLOWANCE * stderrs - errors
    worst = int(np.argmin(slack))
    verdict.add(CheckResult("sqrt-eta-envelope", bool(np.all(slack >= 0)),
                            float(envelope[worst] - errors[worst]), ci=float(ALLOWANCE * stderrs[worst]),
                            detail={"K": float(envelope_constant)}))

    fit = None
    if np.all(errors > 0):
        fit = fit_loglog_slope(etas, errors)
        verdict.add(_slope_check("eta-slope", fit, 0.45, np.inf))
    elif np.all(errors == 0):
        verdict.add(CheckResult("eta-slope", True, 0.0, detail={"reason": "all errors vanish"}))
    else:
        verdict.add(_slope_check("eta-slope", None, 0.45, np.inf, "some errors vanish"))

    config = {"t_final": t_final, "etas": etas, "ensemble": ensemble, "epsilon": epsilon,
              "substeps": substeps, "x0": _law_config(x0), "seed": seed, "block_size": block_size}
    derived = {"eta_ceiling": ceiling, "envelope_constant": float(envelope_constant),
               "reference_dt": resolution,
               "loss_gaps": [abs(gap.final_mean) for gap in gaps]}
    record = ExperimentRecord("eta-sweep", config, etas, rho + gaps + references, fit, verdict, derived)
    return _finish(record, started)


def batch_noise_factor(n: int, size: int) -> float:
    """sqrt((n - B) / (B (n - 1)))

    >>> batch_noise_factor(64, 64)
    0.0
    """
    return float(np.sqrt(batch_variance_factor(n, size)))


def run_batch_sweep(model: PotentialModel, data: Dataset, cal: EberleCalibration, t_final: float,
                    batch_sizes: Sequence[int], eta: float, ensemble: int, x0: InitialLaw,
                    epsilon: Optional[float] = None, seed: int = 0, threads: int = 1,
                    block_size: int = BLOCK_SIZE) -> ExperimentRecord:
    """SGLD with batch size B against full-gradient discretized Langevin,
    ARC coupled, for every B."""
    started = time.perf_counter()
    n = data.n
    sizes = sorted(int(size) for size in _distinct(batch_sizes, "batch list"))
    if n not in sizes:
        raise InvalidExperiment(f"batch list must include the full batch n={n}")
    if sizes[0] < 1 or sizes[-1] > n:
        raise InvalidExperiment(f"batch sizes must lie in [1, {n}]")
    if not _multiple(t_final, eta):
        raise InvalidExperiment(f"t_final {t_final} is not a multiple of eta {eta}")
    _check_steps(t_final, eta, "t_final")
    _warn_unadmitted(cal, model)
    epsilon = _default_epsilon(cal, epsilon)
    runner = _runner("batch-sweep", seed, threads, block_size)
    y_driver = DriverSpec.discretized(model, data, cal.beta, eta)

    rho, gaps = [], []
    verdict = Report("batch sweep")
    for size in sizes:
        x_driver = DriverSpec.sgld(model, data, cal.beta, eta, size)
        x, y, _ = _coupled_finals(runner, ensemble, x0, x0, x_driver, y_driver,
                                  CouplingSpec.arc(epsilon), t_final, eta, label=f"B={size}")
        rho.append(EnsembleStatistic.from_samples([t_final], cal.rho2(x, y), "rho2", size))
        gaps.append(_loss_gap(model, data, x, y, "loss-gap", size))
        verdict.add(check_coupling_gap_bound(empirical_loss(model, x, data),
                                             empirical_loss(model, y, data), x, y,
                                             model.M, model.A, f"coupling-gap-bound-B={size}"))

    errors = [statistic.final_mean for statistic in rho]
    stderrs = [statistic.final_stderr for statistic in rho]
    verdict.add(_zero_control("full-batch-control", rho[-1]))
    verdict.add(_pairwise_decrease("error-non-increasing-in-B", errors, stderrs, sizes))

    baseline = errors[-1]
    factors, residuals = [], []
    for size, error, stderr in zip(sizes[:-1], errors[:-1], stderrs[:-1]):
        residual = error - baseline
        if residual > ALLOWANCE * stderr:
            factors.append(batch_noise_factor(n, size))
            residuals.append(residual)
    fit = fit_loglog_slope(factors, residuals) if len(factors) >= 3 else None
    verdict.add(_slope_check("residual-slope", fit, 0.8, 1.2,
                             f"only {len(factors)} batch sizes rise above the floor"))

    config = {"t_final": t_final, "batch_sizes": sizes, "eta": eta, "ensemble": ensemble,
              "epsilon": epsilon, "x0": _law_config(x0), "seed": seed, "block_size": block_size}
    derived = {"n": n, "noise_factors": [batch_noise_factor(n, size) for size in sizes],
               "loss_gaps": [abs(gap.final_mean) for gap in gaps]}
    record = ExperimentRecord("batch-sweep", config, sizes, rho + gaps, fit, verdict, derived)
    return _finish(record, started)


def run_n_sweep(model: PotentialModel, spec: DistributionSpec, cal: EberleCalibration,
                t_final: float, sizes: Sequence[int], replicas: int, ensemble: int,
                x0: InitialLaw, dt: float = 0.01, population_size: int = 4096, seed: int = 0,
                threads: int = 1, block_size: int = BLOCK_SIZE) -> ExperimentRecord:
    """Generalization gap E L(X_T) - E L_n(X_T) of continuous Langevin
    along L_n, averaged over freshly drawn datasets."""
    started = time.perf_counter()
    sizes = sorted(int(size) for size in _distinct(sizes, "n list"))
    _spans(sizes, np.sqrt(10.0), "n list")
    if replicas < 20:
        raise InvalidExperiment(f"the n sweep needs at least 20 dataset replicas, got {replicas}")
    _check_steps(t_final, dt, "t_final")
    _warn_unadmitted(cal, model)
    population = generate_dataset(spec, population_size,
                                  rng_streams.generator(seed, "n-sweep", 0, "population"))

    measured, means, stderrs = [], [], []
    for n in sizes:
        gaps = []
        for replica in range(replicas):
            data = generate_dataset(spec, n, rng_streams.generator(seed, f"n-sweep/n={n}", replica, "data"))
            driver = DriverSpec.continuous(model, data, cal.beta, dt)
            runner = _runner(f"n-sweep/replica={replica}", seed, threads, block_size)

            def job(block, count, streams):
                return simulate(x0.sample(count, streams.init), driver, t_final, dt, streams,
                                record_stride=FINAL_ONLY).final

            final = np.concatenate(runner.map(job, ensemble, label=f"n={n} replica {replica}"))
            gaps.append(float(np.mean(population_loss(model, final, population)
                                      - empirical_loss(model, final, data))))
        statistic = EnsembleStatistic.from_samples([t_final], gaps, "generalization-gap", n)
        measured.append(statistic)
        means.append(abs(statistic.final_mean))
        stderrs.append(statistic.final_stderr)

    verdict = Report("n sweep")
    fit = None
    if all(mean <= NUMERICAL_ZERO for mean in means):
        for name in ("gap-non-increasing-in-n", "n-slope"):
            verdict.add(CheckResult(name, True, 0.0, detail={"reason": "gap vanishes identically"}))
    elif all(mean > 0 for mean in means):
        verdict.add(_pairwise_decrease("gap-non-increasing-in-n", means, stderrs, sizes))
        fit = fit_loglog_slope(sizes, means)
        verdict.add(_slope_check("n-slope", fit, -np.inf, -0.5))
    else:
        verdict.add(_pairwise_decrease("gap-non-increasing-in-n", means, stderrs, sizes))
        verdict.add(_slope_check("n-slope", None, -np.inf, -0.5, "some gaps vanish"))

    config = {"t_final": t_final, "sizes": sizes, "replicas": replicas, "ensemble": ensemble,
              "dt": dt, "population_size": population_size, "x0": _law_config(x0),
              "distribution": {"kind": spec.kind.value, "dimension": spec.dimension,
                               "radius": spec.radius, "sigma": spec.sigma,
                               "location": list(spec.location)},
              "seed": seed, "block_size": block_size}
    record = ExperimentRecord("n-sweep", config, sizes, measured, fit, verdict,
                              {"target_slope": -1.0})
    return _finish(record, started)


def _check_geometric(epsilons: Sequence[float]) -> List[float]:
    epsilons = _distinct(epsilons, "epsilon list")
    if len(epsilons) < 4:
        raise InvalidExperiment(f"the epsilon list needs at least 4 values, got {len(epsilons)}")
    if min(epsilons) <= 0:
        raise InvalidExperiment("epsilons must be positive")
    steps = np.diff(epsilons)
    if not (np.all(steps < 0) or np.all(steps > 0)):
        raise InvalidExperiment(f"epsilon list must be monotone, got {epsilons}")
    ratios = np.asarray(epsilons[1:]) / np.asarray(epsilons[:-1])
    if np.max(np.abs(ratios / ratios[0] - 1.0)) > 1e-6:
        raise InvalidExperiment(f"epsilon list must be geometric, got {epsilons}")
    return sorted(epsilons, reverse=True)


def _marginal_check(name: str, sample: np.ndarray, reference: np.ndarray) -> CheckResult:
    """Means and covariance entries of two independent ensembles agree
    within ALLOWANCE combined standard errors"""
    slacks = []
    mean_gap = np.abs(sample.mean(axis=0) - reference.mean(axis=0))
    mean_se = np.sqrt(sample.var(axis=0, ddof=1) / len(sample) + reference.var(axis=0, ddof=1) / len(reference))
    slacks.append(ALLOWANCE * mean_se - mean_gap)

    def products(values):
        centred = values - values.mean(axis=0)
        return centred[:, :, None] * centred[:, None, :]

    sample_products, reference_products = products(sample), products(reference)
    covariance_gap = np.abs(sample_products.mean(axis=0) - reference_products.mean(axis=0))
    covariance_se = np.sqrt(sample_products.var(axis=0, ddof=1) / len(sample)
                            + reference_products.var(axis=0, ddof=1) / len(reference))
    slacks.append((ALLOWANCE * covariance_se - covariance_gap).ravel())
    slack = np.concatenate([np.ravel(values) for values in slacks])
    return CheckResult(name, bool(np.all(slack >= 0)), float(np.min(slack)))


def run_eps_convergence(model: PotentialModel, data: Dataset, cal: EberleCalibration,
                        epsilons: Sequence[float], horizon: float, ensemble: int,
                        x0: InitialLaw, y0: InitialLaw, dt: float = 0.01, seed: int = 0,
                        threads: int = 1, block_size: int = BLOCK_SIZE) -> ExperimentRecord:
    """ARC pairs of identical drivers for a decreasing epsilon sequence on
    common random numbers: occupation time, Cauchy drift of E rho2 and the
    marginal law of Y against an independent reference."""
    started = time.perf_counter()
    epsilons = _check_geometric(epsilons)
    _check_steps(horizon, dt, "horizon")
    driver = _continuous(model, data, cal, dt)
    runner = _runner("eps-convergence", seed, threads, block_size)

    def reference_job(block, count, streams):
        return simulate(y0.sample(count, streams.init), driver, horizon, dt, streams,
                        record_stride=FINAL_ONLY).final

    reference = np.concatenate(runner.map(reference_job, ensemble, noise_purpose="reference",
                                          label="reference"))

    occupation, rho_samples, measured = [], [], []
    verdict = Report("epsilon convergence")
    for epsilon in epsilons:
        x, y, occupied = _coupled_finals(runner, ensemble, x0, y0, driver, driver,
                                         CouplingSpec.arc(epsilon), horizon, dt,
                                         label=f"epsilon={epsilon:g}")
        occupation.append(EnsembleStatistic.from_samples([horizon], occupied, "occupation", epsilon))
        rho_samples.append(cal.rho2(x, y))
        measured.append(EnsembleStatistic.from_samples([horizon], rho_samples[-1], "rho2", epsilon))
        verdict.add(_marginal_check(f"marginal-epsilon={epsilon:g}", y, reference))

    _, _, synchronous = _coupled_finals(runner, ensemble, x0, y0, driver, driver,
                                        CouplingSpec.synchronous(), horizon, dt, label="synchronous")
    verdict.add(CheckResult("synchronous-occupation-zero", bool(np.all(synchronous == 0)),
                            -float(np.max(np.abs(synchronous)))))
    verdict.add(_pairwise_decrease("occupation-non-increasing",
                                   [stat.final_mean for stat in occupation],
                                   [stat.final_stderr for stat in occupation], epsilons))

    differences = [EnsembleStatistic.from_samples([horizon], rho_samples[k] - rho_samples[k + 1])
                   for k in range(len(epsilons) - 1)]
    verdict.add(_pairwise_decrease("rho2-differences-shrink",
                                   [abs(stat.final_mean) for stat in differences],
                                   [stat.final_stderr for stat in differences], epsilons[:-1]))

    config = {"epsilons": epsilons, "horizon": horizon, "ensemble": ensemble, "dt": dt,
              "x0": _law_config(x0), "y0": _law_config(y0), "seed": seed, "block_size": block_size}
    derived = {"rho2_differences": [abs(stat.final_mean) for stat in differences]}
    record = ExperimentRecord("eps-convergence", config, epsilons, occupation + measured, None,
                              verdict, derived)
    return _finish(record, started)


OBSERVABLES = ("mean", "loss")


def run_gibbs_gap(model: PotentialModel, data: Dataset, cal: EberleCalibration,
                  deltas: Sequence[float], burn_in: Optional[float], horizon: float, ensemble: int,
                  x0: InitialLaw, dt: float = 0.01, observable: str = "mean",
                  record_every: int = 10, burn_in_check: bool = True, seed: int = 0,
                  threads: int = 1, block_size: int = BLOCK_SIZE) -> ExperimentRecord:
    """Difference of the time averages of an observable under the Gibbs
    measures of F and of G = F with its data shifted by delta e_1.

    Both chains run on the same noise. delta = 0 is added as a control.
    """
    started = time.perf_counter()
    if observable not in OBSERVABLES:
        raise InvalidExperiment(f"observable must be one of {OBSERVABLES}, got {observable!r}")
    deltas = sorted(_distinct(deltas, "delta list"))
    _spans(deltas, 10.0, "delta list")
    burn_in = 5.0 / cal.c if burn_in is None else burn_in
    if burn_in_check and burn_in < 5.0 / cal.c:
        raise InvalidExperiment(f"burn-in {burn_in:g} is shorter than 5/c = {5.0 / cal.c:.4g}")
    _check_steps(burn_in + horizon, dt, "burn-in plus horizon")
    if record_every < 1:
        raise InvalidExperiment("record_every must be positive")
    runner = _runner("gibbs-gap", seed, threads, block_size)
    driver_f = _continuous(model, data, cal, dt)

    def observe(path):
        if observable == "mean":
            return path[..., 0]
        return np.stack([empirical_loss(model, states, data) for states in path])

    measured, rhs, taus = [], [], []
    verdict = Report("gibbs gap")
    for delta in [0.0] + deltas:
        offset = np.zeros(model.dimension)
        offset[0] = delta
        model_g = model.with_support_radius(model.support_radius + delta)
        data_g = data.shifted(offset)
        driver_g = DriverSpec.continuous(model_g, data_g, cal.beta, dt)
        coupling = CouplingSpec.synchronous()

        def job(block, count, streams):
            start = x0.sample(count, streams.init)
            warm = simulate_pair(start, start, driver_f, driver_g, coupling, burn_in, dt, streams,
                                 record_stride=FINAL_ONLY)
            run = simulate_pair(warm.x_path[-1], warm.y_path[-1], driver_f, driver_g, coupling,
                                horizon, dt, streams, record_stride=record_every)
            series_x = observe(run.x_path)
            series_y = observe(run.y_path)
            gradient_gap = np.stack([
                np.sum((empirical_grad(model, states, data) - empirical_grad(model_g, states, data_g)) ** 2,
                       axis=-1) for states in run.y_path])
            return (series_x.mean(axis=0) - series_y.mean(axis=0), gradient_gap.mean(axis=0),
                    series_x[:, :4])

        blocks = runner.map(job, ensemble, label=f"delta={delta:g}")
        gap = EnsembleStatistic.from_samples([horizon], np.concatenate([b[0] for b in blocks]),
                                             "gibbs-gap", delta)
        measured.append(gap)
        rhs.append(float(np.sqrt(np.mean(np.concatenate([b[1] for b in blocks])))))
        chains = np.concatenate([b[2] for b in blocks], axis=1)
        taus.extend(integrated_autocorrelation_time(chains[:, k], dt * record_every)
                    for k in range(chains.shape[1]))

    tau = max(taus)
    if tau > burn_in / 5.0:
        raise BurnInTooShort(f"autocorrelation time {tau:.3g} exceeds burn-in/5 = {burn_in / 5.0:.3g}")

    verdict.add(_zero_control("identical-measures-control", measured[0]))
    gaps = [abs(statistic.final_mean) for statistic in measured[1:]]
    fit = None
    if all(gap > 0 for gap in gaps):
        fit = fit_loglog_slope(deltas, gaps)
    verdict.add(_slope_check("delta-slope", fit, 0.7, 1.3, "some gaps vanish"))
    ratios = [gap / right for gap, right in zip(gaps, rhs[1:]) if right > 0]

    config = {"deltas": deltas, "burn_in": burn_in, "horizon": horizon, "ensemble": ensemble,
              "dt": dt, "observable": observable, "record_every": record_every,
              "burn_in_check": burn_in_check, "x0": _law_config(x0), "seed": seed,
              "block_size": block_size}
    derived = {"gradient_gap_l2": rhs, "proportionality": max(ratios) if ratios else None,
               "autocorrelation_time": tau, "five_over_c": 5.0 / cal.c}
    record = ExperimentRecord("gibbs-gap", config, [0.0] + deltas, measured, fit, verdict, derived)
    return _finish(record, started)
