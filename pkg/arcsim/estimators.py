"""
Monte Carlo statistics, slope fits and direct numerical checks of the
moment and variance bounds the generalization analysis relies on.

Inequality checks against Monte Carlo estimates pass when they hold up
to ALLOWANCE standard errors.
"""
import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence, Dict, Any, List

import numpy as np
from scipy import stats
from scipy.special import comb

from arcsim.model import DriverKind, Family, InitialLaw
from arcsim.potentials import (PotentialModel, Dataset, InvalidPotentialInput,
                               empirical_grad, minibatch_grad)
from arcsim.report import CheckResult, Report, jsonable
from arcsim.sde import DriverSpec, simulate
from arcsim.ensemble import EnsembleRunner
from arcsim.eberle import lyapunov_constants

logger = logging.getLogger(__name__)

ALLOWANCE = 3.0
CI_QUANTILE = 1.96
ENUMERATION_CAP = 10 ** 6


class InvalidEnsemble(ValueError):
    pass


@dataclass
class EnsembleStatistic:
    """Pointwise-in-time mean, sample variance and 95% CI half width"""
    times: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    ci: np.ndarray
    n: int
    label: str = ""
    sweep_value: Optional[float] = None

    @classmethod
    def from_samples(cls, times, samples, label: str = "", sweep_value: Optional[float] = None):
        """`samples` has the ensemble on its last axis and time on the first.

        >>> stat = EnsembleStatistic.from_samples([0.0], [[0.0, 2.0]])
        >>> float(stat.mean[0]), float(stat.variance[0])
        (1.0, 2.0)
        """
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        n = samples.shape[-1]
        if n == 0:
            raise InvalidEnsemble("ensemble is empty")
        mean = samples.mean(axis=-1)
        variance = samples.var(axis=-1, ddof=1) if n > 1 else np.zeros_like(mean)
        ci = CI_QUANTILE * np.sqrt(variance / n)
        return cls(np.atleast_1d(np.asarray(times, dtype=float)), mean, variance, ci, n,
                   label, sweep_value)

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(self.variance / self.n)

    @property
    def final_mean(self) -> float:
        return float(self.mean[-1])

    @property
    def final_stderr(self) -> float:
        return float(self.stderr[-1])

    def to_dict(self) -> Dict[str, Any]:
        return jsonable({"label": self.label, "sweep_value": self.sweep_value,
                         "n": self.n, "times": self.times, "mean": self.mean,
                         "variance": self.variance, "ci": self.ci})

    @classmethod
    def from_dict(cls, data: Dict[str, Any]):
        return cls(np.asarray(data["times"], dtype=float), np.asarray(data["mean"], dtype=float),
                   np.asarray(data["variance"], dtype=float), np.asarray(data["ci"], dtype=float),
                   int(data["n"]), data.get("label", ""), data.get("sweep_value"))


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    stderr: float
    r_squared: float
    points: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return jsonable({"slope": self.slope, "intercept": self.intercept,
                         "stderr": self.stderr, "r_squared": self.r_squared,
                         "points": self.points})

    @classmethod
    def from_dict(cls, data: Dict[str, Any]):
        return cls(**{key: float(value) if key != "points" else int(value)
                      for key, value in data.items()})


def mc_expectation(functional: Callable, trajectories: Iterable) -> EnsembleStatistic:
    """Mean of `functional(trajectory)` over an ensemble split into
    trajectory blocks; the functional returns (times, members) values."""
    trajectories = list(trajectories)
    if not trajectories:
        raise InvalidEnsemble("ensemble is empty")
    values = np.concatenate([np.atleast_2d(functional(trajectory)) for trajectory in trajectories],
                            axis=-1)
    return EnsembleStatistic.from_samples(trajectories[0].times, values)


def _regression(xs: np.ndarray, ys: np.ndarray) -> SlopeFit:
    result = stats.linregress(xs, ys)
    return SlopeFit(float(result.slope), float(result.intercept), float(result.stderr),
                    float(result.rvalue ** 2), len(xs))


def fit_loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> SlopeFit:
    """Least squares line through (log x, log y).

    >>> round(fit_loglog_slope([1.0, 4.0, 16.0], [1.0, 2.0, 4.0]).slope, 12)
    0.5
    """
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise InvalidEnsemble("slope fit needs two equally long sequences")
    if len(xs) < 3:
        raise InvalidEnsemble(f"slope fit needs at least 3 points, got {len(xs)}")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise InvalidEnsemble("slope fit needs positive values")
    return _regression(np.log(xs), np.log(ys))


def fit_exponential_rate(ts: Sequence[float], ys: Sequence[float]) -> SlopeFit:
    """Least squares line through (t, log y); the decay rate is -slope"""
    ts, ys = np.asarray(ts, dtype=float), np.asarray(ys, dtype=float)
    if len(ts) < 3:
        raise InvalidEnsemble(f"rate fit needs at least 3 points, got {len(ts)}")
    if np.any(ys <= 0):
        raise InvalidEnsemble("rate fit needs positive values")
    return _regression(ts, np.log(ys))


def integrated_autocorrelation_time(series: Sequence[float], dt: float = 1.0) -> float:
    """Integrated autocorrelation time in units of dt.

    1 + 2 sum of the autocorrelations at lags 1, 2, ..., stopping before
    the first lag whose autocorrelation is negative.

    >>> integrated_autocorrelation_time([1.0, -1.0, 1.0, -1.0])
    1.0
    """
    x = np.asarray(series, dtype=float)
    if x.size < 2:
        raise InvalidEnsemble("autocorrelation needs at least two samples")
    centred = x - x.mean()
    padded = np.fft.rfft(centred, n=2 * x.size)
    autocovariance = np.fft.irfft(np.abs(padded) ** 2)[: x.size]
    if autocovariance[0] <= 0:
        return 0.0
    rho = autocovariance / autocovariance[0]
    negative = np.flatnonzero(rho < 0)
    cut = negative[0] if negative.size else x.size
    return float((1.0 + 2.0 * np.sum(rho[1:cut])) * dt)


def _upper_check(name: str, values: np.ndarray, bound: np.ndarray, stderr: np.ndarray,
                 times: np.ndarray, detail: Optional[Dict[str, Any]] = None) -> CheckResult:
    """values <= bound + ALLOWANCE * stderr at every time"""
    slack = bound + ALLOWANCE * stderr - values
    worst = int(np.argmin(slack))
    passed = bool(np.all(slack >= 0))
    detail = dict(detail or {})
    detail.update({"times": times, "estimate": values, "bound": bound})
    return CheckResult(name, passed, float(bound[worst] - values[worst]),
                       ci=float(ALLOWANCE * stderr[worst]),
                       witness=None if passed else {"t": times[worst]},
                       detail=jsonable(detail))


def _runner(runner: Optional[EnsembleRunner], name: str) -> EnsembleRunner:
    return runner if runner is not None else EnsembleRunner(0, name)


def _check_times(times: Sequence[float], period: float) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0 or np.any(times < 0) or np.any(np.diff(times) <= 0):
        raise InvalidEnsemble("times must be a non-empty increasing sequence of non-negative reals")
    ratios = times / period
    if np.any(np.abs(ratios - np.round(ratios)) > 1e-9 * np.maximum(1.0, ratios)):
        raise InvalidEnsemble(f"times must be multiples of the driver step {period}")
    return times


def _states_at(driver: DriverSpec, x0: InitialLaw, times: np.ndarray, ensemble: int,
               runner: EnsembleRunner) -> List[np.ndarray]:
    """Ensemble states at each time, as a list of (N, d) arrays"""
    dt = driver.refresh_period

    def job(block, count, streams):
        x = x0.sample(count, streams.init)
        states, now = [], 0.0
        for t in times:
            x = simulate(x, driver, t - now, dt, streams, record_stride=10 ** 9).final
            now = t
            states.append(x)
        return states

    blocks = runner.map(job, ensemble, label=f"{driver.kind.value} moments")
    return [np.concatenate([block[k] for block in blocks]) for k in range(len(times))]


def check_moment_bound(driver: DriverSpec, p: float, times: Sequence[float], ensemble: int,
                       x0: InitialLaw, runner: Optional[EnsembleRunner] = None) -> CheckResult:
    """E|Y_t|^p against its Lyapunov bound.

    Continuous drivers are held to e^{-lambda t} E|Y_0|^p + (C/lambda)(1 - e^{-lambda t})
    at every time. Discretized drivers must show no growth over the
    second half of the horizon.
    """
    runner = _runner(runner, "moment-bound")
    times = _check_times(times, driver.refresh_period)
    model = driver.model
    constants = lyapunov_constants(p, model.m, model.b, driver.beta, model.dimension)
    states = _states_at(driver, x0, np.concatenate([[0.0], times]), ensemble, runner)
    initial = np.linalg.norm(states.pop(0), axis=1) ** p
    moments = np.stack([np.linalg.norm(state, axis=1) ** p for state in states])
    statistic = EnsembleStatistic.from_samples(times, moments)

    if driver.kind is DriverKind.ContinuousLangevin:
        decay = np.exp(-constants.lam * times)
        bound = decay * initial.mean() + constants.C / constants.lam * (1.0 - decay)
        return _upper_check(f"moment-bound-p{p:g}", statistic.mean, bound, statistic.stderr,
                            times, {"lambda": constants.lam, "C": constants.C})

    late = times >= times[-1] / 2.0
    if np.count_nonzero(late) < 2:
        raise InvalidEnsemble("the flat tail check needs two times in the second half of the horizon")
    fit = stats.linregress(times[late], statistic.mean[late])
    span = times[late][-1] - times[late][0]
    growth = float(fit.slope * span)
    allowance = float(ALLOWANCE * np.max(statistic.stderr[late]))
    return CheckResult(f"moment-flat-tail-p{p:g}", growth <= allowance, -growth, ci=allowance,
                       detail=jsonable({"times": times, "estimate": statistic.mean,
                                        "sup": float(np.max(statistic.mean)),
                                        "stationary_bound": constants.C / constants.lam}))


def check_ou_moments(driver: DriverSpec, steps: int, ensemble: int, x0: InitialLaw,
                     runner: Optional[EnsembleRunner] = None) -> CheckResult:
    """Mean and variance of a full-gradient quadratic driver after `steps`
    refreshes against the exact recursion of its Euler scheme,
    mu' = a mu + h m0 zbar and v' = a^2 v + 2h/beta with a = 1 - h m0."""
    if driver.model.family is not Family.Quadratic or driver.kind is DriverKind.SGLD:
        raise InvalidEnsemble("closed form moments need a full-gradient quadratic driver")
    runner = _runner(runner, "ou-moments")
    h = driver.refresh_period
    m0 = driver.model.m0
    centre = driver.dataset.samples.mean(axis=0)
    a = 1.0 - h * m0
    mean = np.asarray(x0.location, dtype=float)
    variance = np.full_like(mean, x0.scale ** 2)
    for _ in range(steps):
        mean = a * mean + h * m0 * centre
        variance = a * a * variance + 2.0 * h / driver.beta

    final = _states_at(driver, x0, np.array([steps * h]), ensemble, runner)[0]
    sample_mean = final.mean(axis=0)
    deviations = (final - sample_mean) ** 2
    sample_variance = final.var(axis=0, ddof=1)
    mean_se = np.sqrt(sample_variance / ensemble)
    variance_se = np.sqrt(deviations.var(axis=0, ddof=1) / ensemble)
    mean_slack = ALLOWANCE * mean_se - np.abs(sample_mean - mean)
    variance_slack = ALLOWANCE * variance_se - np.abs(sample_variance - variance)
    margin = float(min(mean_slack.min(), variance_slack.min()))
    return CheckResult("ou-moments", margin >= 0, margin,
                       detail=jsonable({"exact_mean": mean, "exact_variance": variance,
                                        "mean": sample_mean, "variance": sample_variance}))


def check_one_step_bound(driver: DriverSpec, t: float, ensemble: int, x0: InitialLaw,
                         runner: Optional[EnsembleRunner] = None) -> CheckResult:
    """E|Y_t - Y_{floor(t/eta) eta}|^2 against
    eta^2 E(M|Y_{k eta}| + |grad H_k(0)|)^2 + 2 d eta / beta."""
    if driver.kind is DriverKind.ContinuousLangevin:
        raise InvalidEnsemble("the one step bound concerns discretized drivers")
    if t < 0:
        raise InvalidEnsemble(f"t must be non-negative, got {t}")
    runner = _runner(runner, "one-step-bound")
    eta, model, data = driver.eta, driver.model, driver.dataset
    k = int(np.floor(t / eta + 1e-12))
    elapsed = max(0.0, t - k * eta)

    def job(block, count, streams):
        start = x0.sample(count, streams.init)
        y_k = simulate(start, driver, k * eta, eta, streams, record_stride=10 ** 9).final
        batches = driver.draw_batches(count, streams.batch)
        zero = np.zeros_like(y_k)
        if batches is None:
            drift = empirical_grad(model, y_k, data)
            at_zero = empirical_grad(model, zero, data)
        else:
            drift = minibatch_grad(model, y_k, data, batches)
            at_zero = minibatch_grad(model, zero, data, batches)
        noise = np.sqrt(elapsed) * streams.noise.standard_normal(y_k.shape)
        displacement = -elapsed * drift + driver.noise_scale * noise
        left = np.sum(displacement ** 2, axis=1)
        right = (eta ** 2 * (model.M * np.linalg.norm(y_k, axis=1) + np.linalg.norm(at_zero, axis=1)) ** 2
                 + 2.0 * model.dimension * eta / driver.beta)
        return left, right

    blocks = runner.map(job, ensemble, label="one step bound")
    left = np.concatenate([block[0] for block in blocks])
    right = np.concatenate([block[1] for block in blocks])
    slack = EnsembleStatistic.from_samples([t], right - left)
    margin = slack.final_mean
    allowance = ALLOWANCE * slack.final_stderr
    return CheckResult("one-step-bound", margin + allowance >= 0, margin, ci=allowance,
                       detail={"t": t, "left": float(left.mean()), "right": float(right.mean())})


def batch_variance_factor(n: int, size: int) -> float:
    """(n - B) / (B (n - 1)), zero for a full batch"""
    if size == n:
        return 0.0
    return (n - size) / (size * (n - 1))


def minibatch_variance_by_enumeration(gradients: np.ndarray, size: int,
                                      chunk: int = 65536) -> float:
    """Mean of |batch mean - full mean|^2 over all subsets of the given size"""
    n = gradients.shape[0]
    full = gradients.mean(axis=0)
    subsets = itertools.combinations(range(n), size)
    total, count = 0.0, 0
    while True:
        indices = np.array(list(itertools.islice(subsets, chunk)), dtype=np.intp)
        if indices.size == 0:
            break
        deviation = gradients[indices].mean(axis=1) - full
        total += float(np.sum(deviation ** 2))
        count += indices.shape[0]
    return total / count


def minibatch_variance_by_identity(gradients: np.ndarray, size: int) -> float:
    """(n - B) / (B (n - 1)) times the population variance of the gradients"""
    n = gradients.shape[0]
    full = gradients.mean(axis=0)
    spread = float(np.mean(np.sum((gradients - full) ** 2, axis=1)))
    return batch_variance_factor(n, size) * spread


def check_minibatch_variance(model: PotentialModel, data: Dataset, w, size: int) -> Report:
    """Exact mini-batch gradient variance at w against
    4 (n - B) / (B (n - 1)) (M|w| + A)^2."""
    n = data.n
    if not 1 <= size <= n:
        raise InvalidPotentialInput(f"batch size {size} must lie in [1, {n}]")
    w = np.asarray(w, dtype=float)
    gradients = model.grad(w, data.samples)
    identity = minibatch_variance_by_identity(gradients, size)
    report = Report(f"mini-batch variance n={n} B={size}")

    exact = identity
    if comb(n, size, exact=True) <= ENUMERATION_CAP:
        exact = minibatch_variance_by_enumeration(gradients, size)
        difference = abs(exact - identity)
        tolerance = 1e-12 * max(1.0, abs(exact))
        report.add(CheckResult("variance-identity", difference <= tolerance, tolerance - difference,
                               detail={"enumeration": exact, "identity": identity}))

    bound = 4.0 * batch_variance_factor(n, size) * (model.M * float(np.linalg.norm(w)) + model.A) ** 2
    tolerance = 1e-12 * max(1.0, bound)
    report.add(CheckResult("variance-bound", exact <= bound + tolerance, bound - exact,
                           detail={"exact": exact, "bound": bound}))
    return report


def check_coupling_gap_bound(h_x: np.ndarray, h_y: np.ndarray, x: np.ndarray, y: np.ndarray,
                             c1: float, c2: float, name: str = "coupling-gap-bound") -> CheckResult:
    """|E H(X) - E H(Y)| <= E[(c1/2 |X| + c1/2 |Y| + c2) |X - Y|] for a
    coupled sample and an observable with |grad H(x)| <= c1 |x| + c2"""
    gap = EnsembleStatistic.from_samples([0.0], np.asarray(h_x) - np.asarray(h_y))
    weights = (c1 / 2.0 * np.linalg.norm(x, axis=-1) + c1 / 2.0 * np.linalg.norm(y, axis=-1) + c2) \
        * np.linalg.norm(np.asarray(x) - np.asarray(y), axis=-1)
    bound = EnsembleStatistic.from_samples([0.0], weights)
    margin = bound.final_mean - abs(gap.final_mean)
    allowance = ALLOWANCE * float(np.hypot(gap.final_stderr, bound.final_stderr))
    return CheckResult(name, margin + allowance >= 0, margin, ci=allowance,
                       detail={"gap": abs(gap.final_mean), "bound": bound.final_mean})
