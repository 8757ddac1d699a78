"""
Euler-Maruyama time stepping for the Langevin family and for coupled
pairs of them.

A driver is one of

    continuous-langevin   dX = -grad L_n(X) dt + sqrt(2/beta) dW, drift refreshed every em_substep
    discretized-langevin  the same with the drift frozen on [k eta, (k+1) eta)
    sgld                  the drift is a fresh mini-batch gradient on each [k eta, (k+1) eta)

Pairs share a single Brownian increment per grid step. Y receives it
unchanged (synchronous), mirrored across the separation direction
(reflection, until the pair coalesces) or mirrored with strength
h_eps(|X - Y|) (arc).

States carry a leading ensemble axis: an ensemble of N pairs in
dimension d is an (N, d) array per process.
"""
import csv
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np

from arcsim.model import DriverKind, CouplingMode, CutoffShape, MiniBatchIndex
from arcsim.potentials import (PotentialModel, Dataset, empirical_grad,
                               minibatch_grad, sample_minibatches)
from arcsim.streams import Streams

logger = logging.getLogger(__name__)

COALESCENCE_THRESHOLD = 1e-9


class InvalidDriver(ValueError):
    pass


class GridIncompatible(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DriverSpec:
    kind: DriverKind
    model: PotentialModel
    dataset: Dataset
    beta: float
    eta: Optional[float] = None
    em_substep: Optional[float] = None
    batch_size: Optional[int] = None

    def __post_init__(self):
        if self.beta <= 0:
            raise InvalidDriver(f"beta must be positive, got {self.beta}")
        if self.dataset.dimension != self.model.dimension:
            raise InvalidDriver("dataset and potential dimensions differ")
        if self.kind is DriverKind.ContinuousLangevin:
            if self.em_substep is None or self.em_substep <= 0:
                raise InvalidDriver("continuous Langevin needs a positive em_substep")
        elif self.eta is None or self.eta <= 0:
            raise InvalidDriver(f"{self.kind.value} needs a positive step size eta")
        if self.kind is DriverKind.SGLD:
            if self.batch_size is None:
                raise InvalidDriver("sgld needs a batch size")
            if not 1 <= self.batch_size <= self.dataset.n:
                raise InvalidDriver(f"batch size {self.batch_size} must lie in [1, {self.dataset.n}]")

    @classmethod
    def continuous(cls, model, dataset, beta, em_substep):
        return cls(DriverKind.ContinuousLangevin, model, dataset, beta, em_substep=em_substep)

    @classmethod
    def discretized(cls, model, dataset, beta, eta):
        return cls(DriverKind.DiscretizedLangevin, model, dataset, beta, eta=eta)

    @classmethod
    def sgld(cls, model, dataset, beta, eta, batch_size):
        return cls(DriverKind.SGLD, model, dataset, beta, eta=eta, batch_size=batch_size)

    @property
    def refresh_period(self) -> float:
        """Time between drift evaluations"""
        if self.kind is DriverKind.ContinuousLangevin:
            return self.em_substep
        return self.eta

    @property
    def noise_scale(self) -> float:
        return float(np.sqrt(2.0 / self.beta))

    def gradient(self, states: np.ndarray, batches=None) -> np.ndarray:
        if self.kind is DriverKind.SGLD:
            if batches is None:
                raise InvalidDriver("sgld drift needs a mini-batch")
            return minibatch_grad(self.model, states, self.dataset, batches)
        return empirical_grad(self.model, states, self.dataset)

    def draw_batches(self, count: int, rng: np.random.Generator) -> Optional[np.ndarray]:
        if self.kind is not DriverKind.SGLD:
            return None
        return sample_minibatches(self.dataset.n, self.batch_size, count, rng)


@dataclass(frozen=True)
class CouplingSpec:
    mode: CouplingMode
    epsilon: Optional[float] = None
    shape: CutoffShape = CutoffShape.Smoothstep

    def __post_init__(self):
        if self.mode is CouplingMode.ARC and (self.epsilon is None or self.epsilon <= 0):
            raise InvalidDriver("arc coupling needs a positive epsilon")
        if self.mode is CouplingMode.Reflection:
            object.__setattr__(self, "shape", CutoffShape.Hard)

    @classmethod
    def arc(cls, epsilon: float):
        return cls(CouplingMode.ARC, epsilon)

    @classmethod
    def synchronous(cls):
        return cls(CouplingMode.Synchronous)

    @classmethod
    def reflection(cls):
        return cls(CouplingMode.Reflection)


def _scalar_or_array(value: np.ndarray):
    return float(value) if np.ndim(value) == 0 else value


def h_eps(a, eps: float):
    """Cubic smoothstep cutoff: 0 for |a| <= eps, 1 for |a| >= 2 eps.

    >>> h_eps(1.0, 1.0), h_eps(1.5, 1.0), h_eps(2.0, 1.0)
    (0.0, 0.5, 1.0)
    """
    if eps <= 0:
        raise InvalidDriver(f"epsilon must be positive, got {eps}")
    u = np.clip((np.abs(np.asarray(a, dtype=float)) - eps) / eps, 0.0, 1.0)
    return _scalar_or_array(u * u * (3.0 - 2.0 * u))


def h_eps_prime(a, eps: float):
    """Derivative of h_eps, 6u(1-u)/eps with the sign of a"""
    if eps <= 0:
        raise InvalidDriver(f"epsilon must be positive, got {eps}")
    a = np.asarray(a, dtype=float)
    u = np.clip((np.abs(a) - eps) / eps, 0.0, 1.0)
    return _scalar_or_array(np.sign(a) * 6.0 * u * (1.0 - u) / eps)


def _mirror(z: np.ndarray, dW: np.ndarray, strength: np.ndarray) -> np.ndarray:
    distance = np.linalg.norm(z, axis=-1, keepdims=True)
    e = z / np.where(distance > 0, distance, 1.0)
    parallel = np.sum(e * dW, axis=-1, keepdims=True)
    return dW - 2.0 * np.asarray(strength)[..., None] * parallel * e


def reflected_increment(z, dW, eps: float) -> np.ndarray:
    """dW - 2 h_eps(|z|) <e, dW> e with e = z / |z|.

    >>> reflected_increment([3.0], [0.5], 1.0)
    array([-0.5])
    >>> reflected_increment([0.5], [0.5], 1.0)
    array([0.5])
    """
    z, dW = np.asarray(z, dtype=float), np.asarray(dW, dtype=float)
    h = np.asarray(h_eps(np.linalg.norm(z, axis=-1), eps))
    return _mirror(z, dW, h)


def step_sgld(state, driver: DriverSpec, batch: Union[MiniBatchIndex, np.ndarray, None], dW) -> np.ndarray:
    """One SGLD step, dW ~ N(0, eta I)"""
    if driver.kind is not DriverKind.SGLD:
        raise InvalidDriver(f"step_sgld needs an sgld driver, got {driver.kind.value}")
    if batch is None:
        raise InvalidDriver("step_sgld needs a mini-batch")
    state = np.asarray(state, dtype=float)
    return state - driver.eta * driver.gradient(state, batch) + driver.noise_scale * np.asarray(dW)


@dataclass
class StepDiagnostics:
    h: np.ndarray
    occupation_integrand: np.ndarray


def _coupling_strength(coupling: CouplingSpec, distance: np.ndarray,
                       coalesced: Optional[np.ndarray]) -> np.ndarray:
    if coupling.mode is CouplingMode.Synchronous:
        return np.zeros_like(distance)
    if coupling.mode is CouplingMode.Reflection:
        return np.where(coalesced, 0.0, 1.0)
    return np.asarray(h_eps(distance, coupling.epsilon))


def _check_pair(x_driver: DriverSpec, y_driver: DriverSpec):
    if x_driver.beta != y_driver.beta:
        raise InvalidDriver(f"drivers disagree on beta: {x_driver.beta} and {y_driver.beta}")
    if x_driver.model.dimension != y_driver.model.dimension:
        raise InvalidDriver("drivers act in different dimensions")


def step_coupled(x, y, x_driver: DriverSpec, y_driver: DriverSpec, coupling: CouplingSpec,
                 rng: np.random.Generator, dt: Optional[float] = None,
                 batch_rng: Optional[np.random.Generator] = None,
                 coalescence_threshold: float = COALESCENCE_THRESHOLD
                 ) -> Tuple[np.ndarray, np.ndarray, StepDiagnostics]:
    """One coupled Euler-Maruyama step with drifts and coupling evaluated
    at the current states. `dt` defaults to the shorter refresh period."""
    _check_pair(x_driver, y_driver)
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise InvalidDriver(f"state shapes differ: {x.shape} and {y.shape}")
    if dt is None:
        dt = min(x_driver.refresh_period, y_driver.refresh_period)
    batch_rng = batch_rng if batch_rng is not None else rng
    count = 1 if x.ndim == 1 else x.shape[0]

    x_batches = x_driver.draw_batches(count, batch_rng)
    y_batches = y_driver.draw_batches(count, batch_rng)
    if x.ndim == 1:
        x_batches = None if x_batches is None else x_batches[0]
        y_batches = None if y_batches is None else y_batches[0]

    dW = np.sqrt(dt) * rng.standard_normal(x.shape)
    z = x - y
    distance = np.linalg.norm(z, axis=-1)
    strength = _coupling_strength(coupling, distance, distance <= coalescence_threshold)
    x_next = x - dt * x_driver.gradient(x, x_batches) + x_driver.noise_scale * dW
    y_next = y - dt * y_driver.gradient(y, y_batches) + y_driver.noise_scale * _mirror(z, dW, strength)
    return x_next, y_next, StepDiagnostics(strength, (1.0 - strength) * strength ** 2)


def _steps_per(period: float, dt: float, what: str) -> int:
    if dt <= 0:
        raise GridIncompatible(f"grid step must be positive, got {dt}")
    count = int(round(period / dt))
    if count < 1 or abs(count * dt - period) > 1e-9 * max(period, dt):
        raise GridIncompatible(f"grid step {dt} does not divide the {what} {period}")
    return count


def _step_count(horizon: float, dt: float) -> int:
    if horizon < 0:
        raise GridIncompatible(f"horizon must be non-negative, got {horizon}")
    if horizon == 0:
        return 0
    return _steps_per(horizon, dt, "horizon")


class _DriftClock:
    """Holds a driver's frozen drift and refreshes it on schedule"""

    def __init__(self, driver: DriverSpec, dt: float, batch_rng: np.random.Generator):
        self.driver = driver
        self.every = _steps_per(driver.refresh_period, dt, f"{driver.kind.value} refresh period")
        self.rng = batch_rng
        self.value = None

    def drift(self, step: int, states: np.ndarray) -> np.ndarray:
        if step % self.every == 0:
            batches = self.driver.draw_batches(states.shape[0], self.rng)
            self.value = self.driver.gradient(states, batches)
        return self.value


class _Brownian:
    """Grid increments built from a finer Brownian resolution, so grids
    that share a resolution see the same path"""

    def __init__(self, rng: np.random.Generator, dt: float, resolution: Optional[float]):
        self.rng = rng
        self.resolution = dt if resolution is None else resolution
        self.pieces = _steps_per(dt, self.resolution, "grid step")

    def increment(self, shape) -> np.ndarray:
        normals = self.rng.standard_normal((self.pieces, *shape))
        return np.sqrt(self.resolution) * normals.sum(axis=0)


def _record_steps(steps: int, stride: int) -> np.ndarray:
    if stride < 1:
        raise ValueError("record stride must be positive")
    recorded = list(range(0, steps + 1, stride))
    if recorded[-1] != steps:
        recorded.append(steps)
    return np.asarray(recorded)


def _as_ensemble(state, dimension: int) -> np.ndarray:
    state = np.array(state, dtype=float, ndmin=2)
    if state.shape[-1] != dimension:
        raise InvalidDriver(f"initial state has dimension {state.shape[-1]}, expected {dimension}")
    return state


def _as_streams(streams) -> Streams:
    if isinstance(streams, Streams):
        return streams
    return Streams.from_seed(int(streams))


@dataclass
class Trajectory:
    """Recorded path of a single process, path shape (times, N, d)"""
    times: np.ndarray
    path: np.ndarray
    stream_ids: Tuple[str, ...] = ()

    @property
    def final(self) -> np.ndarray:
        return self.path[-1]


@dataclass
class CoupledTrajectory:
    """Recorded path of an ensemble of coupled pairs.

    Per-member arrays have shape (times, N) and state arrays (times, N, d).
    `occupation` is the running integral of (1 - h)h^2 over the whole
    grid, not only the recorded times.
    """
    times: np.ndarray
    x_path: np.ndarray
    y_path: np.ndarray
    distance: np.ndarray
    h: np.ndarray
    occupation_integrand: np.ndarray
    occupation: np.ndarray
    coalesced: np.ndarray
    coupling: CouplingSpec
    coalescence_threshold: float = COALESCENCE_THRESHOLD
    stream_ids: Tuple[str, ...] = field(default=())

    @property
    def size(self) -> int:
        return self.x_path.shape[1]

    def to_csv(self, output, member: int = 0):
        """One row per recorded time of a single pair"""
        d = self.x_path.shape[2]
        writer = csv.writer(output, lineterminator="\n")
        writer.writerow(["t", *(f"x_{i + 1}" for i in range(d)), *(f"y_{i + 1}" for i in range(d)),
                         "distance", "h_eps", "occupation_integrand"])
        for k, t in enumerate(self.times):
            values = [t, *self.x_path[k, member], *self.y_path[k, member], self.distance[k, member],
                      self.h[k, member], self.occupation_integrand[k, member]]
            writer.writerow([format(float(value), ".17e") for value in values])

    def write(self, filename: str, member: int = 0):
        with open(filename, 'w', newline='') as file:
            self.to_csv(file, member)


def simulate(x0, driver: DriverSpec, horizon: float, dt: float, streams,
             record_stride: int = 1, brownian_step: Optional[float] = None) -> Trajectory:
    """Simulate one driver on a grid of step dt"""
    streams = _as_streams(streams)
    x = _as_ensemble(x0, driver.model.dimension).copy()
    steps = _step_count(horizon, dt)
    clock = _DriftClock(driver, dt, streams.batch)
    brownian = _Brownian(streams.noise, dt, brownian_step)
    recorded = _record_steps(steps, record_stride)
    path = np.empty((len(recorded), *x.shape))
    path[0] = x
    slot = 1
    for step in range(steps):
        drift = clock.drift(step, x)
        x = x - dt * drift + driver.noise_scale * brownian.increment(x.shape)
        if slot < len(recorded) and recorded[slot] == step + 1:
            path[slot] = x
            slot += 1
    return Trajectory(recorded * dt, path, streams.ids)


def simulate_pair(x0, y0, x_driver: DriverSpec, y_driver: DriverSpec, coupling: CouplingSpec,
                  horizon: float, dt: float, streams, record_stride: int = 1,
                  brownian_step: Optional[float] = None,
                  coalescence_threshold: float = COALESCENCE_THRESHOLD) -> CoupledTrajectory:
    """Simulate an ensemble of coupled pairs on a grid of step dt.

    Each driver's refresh period must be a multiple of dt; sgld batches are
    redrawn at every refresh from the batch streams, which are separate
    from the noise stream so that changing the coupling leaves the batch
    sequence untouched.
    """
    _check_pair(x_driver, y_driver)
    streams = _as_streams(streams)
    d = x_driver.model.dimension
    x = _as_ensemble(x0, d)
    y = _as_ensemble(y0, d)
    x, y = np.broadcast_arrays(x, y)
    x, y = x.copy(), y.copy()
    count = x.shape[0]

    steps = _step_count(horizon, dt)
    x_clock = _DriftClock(x_driver, dt, streams.batch)
    y_clock = _DriftClock(y_driver, dt, streams.batch_y)
    brownian = _Brownian(streams.noise, dt, brownian_step)
    recorded = _record_steps(steps, record_stride)

    rows = len(recorded)
    x_path = np.empty((rows, count, d))
    y_path = np.empty((rows, count, d))
    distance_path = np.empty((rows, count))
    h_path = np.empty((rows, count))
    integrand_path = np.empty((rows, count))
    occupation_path = np.empty((rows, count))

    occupation = np.zeros(count)
    distance = np.linalg.norm(x - y, axis=1)
    coalesced = distance <= coalescence_threshold
    strength = _coupling_strength(coupling, distance, coalesced)

    def record(slot):
        x_path[slot] = x
        y_path[slot] = y
        distance_path[slot] = distance
        h_path[slot] = strength
        integrand_path[slot] = (1.0 - strength) * strength ** 2
        occupation_path[slot] = occupation

    record(0)
    slot = 1
    x_noise, y_noise = x_driver.noise_scale, y_driver.noise_scale
    for step in range(steps):
        x_drift = x_clock.drift(step, x)
        y_drift = y_clock.drift(step, y)
        dW = brownian.increment(x.shape)
        occupation = occupation + (1.0 - strength) * strength ** 2 * dt
        y_increment = dW if coupling.mode is CouplingMode.Synchronous else _mirror(x - y, dW, strength)
        x = x - dt * x_drift + x_noise * dW
        y = y - dt * y_drift + y_noise * y_increment

        distance = np.linalg.norm(x - y, axis=1)
        if coupling.mode is CouplingMode.Reflection:
            coalesced |= distance <= coalescence_threshold
        strength = _coupling_strength(coupling, distance, coalesced)
        if slot < rows and recorded[slot] == step + 1:
            record(slot)
            slot += 1

    logger.debug("simulated %d %s pairs over %d steps", count, coupling.mode.value, steps)
    return CoupledTrajectory(times=recorded * dt, x_path=x_path, y_path=y_path,
                             distance=distance_path, h=h_path,
                             occupation_integrand=integrand_path,
                             occupation=occupation_path, coalesced=coalesced,
                             coupling=coupling, coalescence_threshold=coalescence_threshold,
                             stream_ids=streams.ids)
