"""
The Eberle calibration: constants, the one dimensional functions
phi, Phi, g and f, and the semimetric

    rho2(x, y) = f(|x - y|) (1 + kappa Vbar(x) + kappa Vbar(y)),   Vbar(x) = 1 + |x|^2

whose expectation along an approximately reflection coupled pair decays
at rate c = min(zeta/beta, lambda/2, 2 C lambda kappa).

Nested integrals are computed by tabulating Phi on a grid of [0, R2]
with adaptive Simpson quadrature and integrating cubic Hermite
interpolants whose node derivatives are known in closed form.
"""
import json
import math
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple, List, Dict, Any

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from arcsim.potentials import (PotentialModel, Dataset, empirical_grad,
                               catalog_for_calibration)
from arcsim.quadrature import (integrate_adaptive_simpson,
                               cumulative_adaptive_simpson)
from arcsim.report import CheckResult, Report
from arcsim.streams import seeded

logger = logging.getLogger(__name__)

GRID_POINTS = 4096
QUADRATURE_TOLERANCE = 1e-10
XI_CAP = 1e12
CHECK_GRID_POINTS = 1000


class InvalidCalibrationInput(ValueError):
    pass


class DegenerateCalibration(ValueError):
    pass


@dataclass(frozen=True)
class LyapunovConstants:
    lam: float
    C: float
    L: float


def lyapunov_constants(p: float, m: float, b: float, beta: float, d: int) -> LyapunovConstants:
    """Drift constants of V_p(x) = |x|^p for the Langevin generator.

    >>> constants = lyapunov_constants(2, m=1.0, b=1.0, beta=1.0, d=2)
    >>> constants.lam, round(constants.L ** 2, 12), round(constants.C, 12)
    (1.0, 6.0, 6.0)
    """
    if p < 2:
        raise InvalidCalibrationInput(f"Lyapunov order p must be at least 2, got {p}")
    if m <= 0 or beta <= 0 or b < 0:
        raise InvalidCalibrationInput("m and beta must be positive and b non-negative")
    L = math.sqrt((2.0 / m) * ((d + p - 2) / beta + b))
    lam = m * p / 2.0
    return LyapunovConstants(lam=lam, C=lam * L ** p, L=L)


def region_radii(C: float, lam: float) -> Tuple[float, float]:
    """Diameters of S1 = {Vbar(x) + Vbar(y) <= 2C/lam} and
    S2 = {Vbar(x) + Vbar(y) <= 4C(1 + 1/lam)}.

    >>> region_radii(1.0, 1.0) == (0.0, math.sqrt(12))
    True
    """
    if C <= 0 or lam <= 0:
        raise InvalidCalibrationInput("C and lambda must be positive")
    r1 = math.sqrt(2.0 * max(0.0, 2.0 * C / lam - 2.0))
    r2 = math.sqrt(2.0 * max(0.0, 4.0 * C * (1.0 + 1.0 / lam) - 2.0))
    return r1, r2


def choose_kappa(M: float, beta: float, C: float, r1: float) -> float:
    if r1 < 0:
        raise InvalidCalibrationInput("R1 must be non-negative")
    if r1 == 0:
        return 0.5
    growth = math.expm1(2.0 * r1) - 2.0 * r1
    if growth <= 0:
        return 0.5
    return min(0.5, 2.0 / (C * beta * growth) * math.exp(-M * beta * r1 * r1 / 8.0))


def q_of_kappa(kappa: float) -> float:
    """
    >>> q_of_kappa(0.5)
    1.0
    >>> round(q_of_kappa(0.2), 12)
    0.8
    """
    if not 0 < kappa < 1:
        raise InvalidCalibrationInput(f"kappa must lie in (0, 1), got {kappa}")
    return 2.0 * math.sqrt(kappa - kappa * kappa)


def q_by_maximization(kappa: float, points: int = 200001) -> float:
    """sup over |x| of 2|x| / max(1 + |x|^2, 1/kappa) on a radial grid"""
    if not 0 < kappa < 1:
        raise InvalidCalibrationInput(f"kappa must lie in (0, 1), got {kappa}")
    peak = math.sqrt(1.0 / kappa - 1.0)
    r = np.linspace(0.0, 2.0 * peak + 1.0, points)
    return float(np.max(2.0 * r / np.maximum(1.0 + r * r, 1.0 / kappa)))


def phi(r, M: float, beta: float, Q: float):
    """phi(r) = exp(-(M beta / 8) r^2 - 2 Q r)"""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise InvalidCalibrationInput("phi is defined for r >= 0")
    value = np.exp(-M * beta * r * r / 8.0 - 2.0 * Q * r)
    return float(value) if value.ndim == 0 else value


def _phi_scalar(M: float, beta: float, Q: float):
    a = M * beta / 8.0
    return lambda s: math.exp(-a * s * s - 2.0 * Q * s)


def Phi(r: float, M: float, beta: float, Q: float, tol: float = QUADRATURE_TOLERANCE) -> float:
    """Phi(r) = integral of phi over [0, r]"""
    if r < 0:
        raise InvalidCalibrationInput("Phi is defined for r >= 0")
    value, _ = integrate_adaptive_simpson(_phi_scalar(M, beta, Q), 0.0, r, tol)
    return value


def _grid(r1: float, r2: float, points: int) -> np.ndarray:
    """Grid of [0, R2] that has R1 as a node"""
    if r1 <= 0 or r1 >= r2:
        return np.linspace(0.0, r2, points)
    inner = max(2, int(round(points * r1 / r2)))
    outer = max(2, points - inner + 1)
    return np.concatenate([np.linspace(0.0, r1, inner),
                           np.linspace(r1, r2, outer)[1:]])


@dataclass(frozen=True)
class _PhiTable:
    grid: np.ndarray
    Phi: np.ndarray
    ratio: np.ndarray
    ratio_slope: np.ndarray


def _tabulate(r1, r2, M, beta, Q, points, tol) -> _PhiTable:
    grid = _grid(r1, r2, points)
    Phi_grid = cumulative_adaptive_simpson(_phi_scalar(M, beta, Q), grid, tol)
    phi_grid = np.exp(-M * beta * grid * grid / 8.0 - 2.0 * Q * grid)
    ratio = Phi_grid / phi_grid
    # d/ds Phi/phi = 1 + Phi (M beta s / 4 + 2Q) / phi
    slope = 1.0 + ratio * (M * beta * grid / 4.0 + 2.0 * Q)
    return _PhiTable(grid, Phi_grid, ratio, slope)


def _integral_of_ratio(table: _PhiTable):
    return CubicHermiteSpline(table.grid, table.ratio, table.ratio_slope).antiderivative()


def zeta_xi(r1: float, r2: float, M: float, beta: float, Q: float,
            points: int = GRID_POINTS, tol: float = QUADRATURE_TOLERANCE,
            xi_cap: float = XI_CAP) -> Tuple[float, float]:
    """1/zeta and 1/xi are the integrals of Phi/phi over [0, R2] and [0, R1].

    With R1 = 0 the second integral is empty and xi is clamped to `xi_cap`.
    """
    if r2 <= 0:
        raise InvalidCalibrationInput("R2 must be positive")
    if not 0 <= r1 <= r2:
        raise InvalidCalibrationInput("expected 0 <= R1 <= R2")
    J = _integral_of_ratio(_tabulate(r1, r2, M, beta, Q, points, tol))
    zeta = 1.0 / float(J(r2))
    if r1 == 0:
        logger.warning("R1 = 0, clamping xi to %g", xi_cap)
        return zeta, xi_cap
    return zeta, min(1.0 / float(J(r1)), xi_cap)


@dataclass(frozen=True, eq=False)
class EberleCalibration:
    """All constants and tabulated functions derived from (m, b, M, beta, d).

    Build with `EberleCalibration.calibrate` or `calibrate`; reload a saved
    calibration with `from_json`.
    """
    m: float
    b: float
    M: float
    beta: float
    d: int
    lam: float
    C: float
    R1: float
    R2: float
    kappa: float
    Q: float
    zeta: float
    xi: float
    xi_clamped: bool
    c: float
    quadrature_tolerance: float
    grid: np.ndarray = field(repr=False)
    Phi_grid: np.ndarray = field(repr=False)
    ratio_grid: np.ndarray = field(repr=False)
    ratio_slope_grid: np.ndarray = field(repr=False)
    f_grid: np.ndarray = field(repr=False)
    f_prime_grid: np.ndarray = field(repr=False)
    _J: Any = field(init=False, repr=False)
    _Phi: Any = field(init=False, repr=False)
    _f: Any = field(init=False, repr=False)

    def __post_init__(self):
        table = _PhiTable(self.grid, self.Phi_grid, self.ratio_grid, self.ratio_slope_grid)
        object.__setattr__(self, "_J", _integral_of_ratio(table))
        phi_grid = np.exp(-self.M * self.beta * self.grid ** 2 / 8.0 - 2.0 * self.Q * self.grid)
        object.__setattr__(self, "_Phi", CubicHermiteSpline(self.grid, self.Phi_grid, phi_grid))
        object.__setattr__(self, "_f", CubicHermiteSpline(self.grid, self.f_grid, self.f_prime_grid))

    @classmethod
    def calibrate(cls, m: float, b: float, M: float, beta: float, d: int,
                  grid_points: int = GRID_POINTS, tol: float = QUADRATURE_TOLERANCE,
                  xi_cap: float = XI_CAP):
        if min(m, b, M, beta) <= 0:
            raise InvalidCalibrationInput(
                f"m, b, M and beta must be positive, got {(m, b, M, beta)}")
        if d < 1:
            raise InvalidCalibrationInput(f"dimension must be positive, got {d}")
        if grid_points < 8:
            raise InvalidCalibrationInput("the tabulation grid needs at least 8 points")

        base = lyapunov_constants(2, m, b, beta, d)
        lam = base.lam
        C = base.C + lam
        r1, r2 = region_radii(C, lam)
        kappa = choose_kappa(M, beta, C, r1)
        Q = q_of_kappa(kappa)

        table = _tabulate(r1, r2, M, beta, Q, grid_points, tol)
        J = _integral_of_ratio(table)
        zeta = 1.0 / float(J(r2))
        xi_clamped = r1 == 0
        if xi_clamped:
            logger.warning("R1 = 0, clamping xi to %g", xi_cap)
            xi = xi_cap
        else:
            xi = min(1.0 / float(J(r1)), xi_cap)

        grid = table.grid
        phi_grid = np.exp(-M * beta * grid ** 2 / 8.0 - 2.0 * Q * grid)
        g = 1.0 - zeta / 4.0 * J(grid) - xi / 4.0 * J(np.minimum(grid, r1))
        f_prime = phi_grid * g

        # f'' jumps at R1, so each side of R1 gets its own f' interpolant
        decay = M * beta * grid / 4.0 + 2.0 * Q
        left_g_slope = -zeta / 4.0 * table.ratio - xi / 4.0 * table.ratio * (grid <= r1)
        right_g_slope = -zeta / 4.0 * table.ratio - xi / 4.0 * table.ratio * (grid < r1)
        f_grid = np.zeros_like(grid)
        split = int(np.searchsorted(grid, r1)) if not xi_clamped else 0
        offset = 0.0
        for start, stop, g_slope in ((0, split, left_g_slope), (split, len(grid) - 1, right_g_slope)):
            if stop <= start:
                continue
            nodes = slice(start, stop + 1)
            second = -decay[nodes] * f_prime[nodes] + phi_grid[nodes] * g_slope[nodes]
            integral = CubicHermiteSpline(grid[nodes], f_prime[nodes], second).antiderivative()
            f_grid[nodes] = offset + integral(grid[nodes]) - integral(grid[start])
            offset = f_grid[stop]

        c = min(zeta / beta, lam / 2.0, 2.0 * C * lam * kappa)
        logger.info("calibrated m=%g b=%g M=%g beta=%g d=%d: kappa=%.4g zeta=%.4g c=%.4g",
                    m, b, M, beta, d, kappa, zeta, c)
        return cls(m=float(m), b=float(b), M=float(M), beta=float(beta), d=int(d),
                   lam=lam, C=C, R1=r1, R2=r2, kappa=kappa, Q=Q, zeta=zeta, xi=xi,
                   xi_clamped=xi_clamped, c=c, quadrature_tolerance=tol,
                   grid=grid, Phi_grid=table.Phi, ratio_grid=table.ratio,
                   ratio_slope_grid=table.ratio_slope, f_grid=f_grid,
                   f_prime_grid=f_prime)

    def _radius(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if np.any(r < 0):
            raise InvalidCalibrationInput("expected non-negative distances")
        return r

    def phi(self, r):
        return phi(r, self.M, self.beta, self.Q)

    def Phi(self, r):
        """Tabulated Phi on [0, R2]"""
        r = self._radius(r)
        return self._Phi(np.minimum(r, self.R2))

    def J(self, r):
        """Integral of Phi/phi over [0, min(r, R2)]"""
        r = self._radius(r)
        return self._J(np.minimum(r, self.R2))

    def g(self, r):
        r = self._radius(r)
        return (1.0 - self.zeta / 4.0 * self._J(np.minimum(r, self.R2))
                - self.xi / 4.0 * self._J(np.minimum(r, self.R1)))

    def f(self, r):
        """f(r) from the table; f(r) = r for r <= 0 and f(R2) beyond R2"""
        r = np.asarray(r, dtype=float)
        value = np.where(r <= 0, r, self._f(np.clip(r, 0.0, self.R2)))
        return float(value) if value.ndim == 0 else value

    def f_prime(self, r):
        r = np.asarray(r, dtype=float)
        inside = np.clip(r, 0.0, self.R2)
        value = np.where(r < 0, 1.0, np.where(r > self.R2, 0.0, self.phi(inside) * self.g(inside)))
        return float(value) if value.ndim == 0 else value

    def f_second(self, r):
        """Analytic f'' = phi' g + phi g' away from R1 and R2"""
        r = np.asarray(r, dtype=float)
        inside = np.clip(r, 0.0, self.R2)
        phi_r = self.phi(inside)
        ratio = self.Phi(inside) / phi_r
        g_slope = (-self.zeta / 4.0 * ratio * (inside < self.R2)
                   - self.xi / 4.0 * ratio * (inside < self.R1))
        decay = self.M * self.beta * inside / 4.0 + 2.0 * self.Q
        value = -decay * phi_r * self.g(inside) + phi_r * g_slope
        value = np.where((r < 0) | (r > self.R2), 0.0, value)
        return float(value) if value.ndim == 0 else value

    def f_by_quadrature(self, r: float, tol: float = QUADRATURE_TOLERANCE) -> float:
        """f(r) by adaptive quadrature of phi g, independent of the f table"""
        if r < 0:
            return r
        value, _ = integrate_adaptive_simpson(
            lambda s: float(self.phi(s) * self.g(s)), 0.0, min(r, self.R2), tol)
        return value

    def U(self, x, y):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        return 1.0 + self.kappa * (1.0 + np.sum(x * x, axis=-1)) + self.kappa * (1.0 + np.sum(y * y, axis=-1))

    def rho2(self, x, y):
        """rho2 over the last axis; leading axes broadcast"""
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        if x.shape[-1:] != y.shape[-1:]:
            raise InvalidCalibrationInput(f"dimension mismatch: {x.shape} and {y.shape}")
        distance = np.linalg.norm(x - y, axis=-1)
        return self.f(distance) * self.U(x, y)

    def admits(self, model: PotentialModel) -> bool:
        """Whether the potential's certificates are covered by these constants"""
        return (model.m >= self.m and model.b <= self.b and model.M <= self.M
                and model.dimension == self.d)

    def to_dict(self) -> Dict[str, Any]:
        constants = {name: getattr(self, name) for name in
                     ("m", "b", "M", "beta", "d", "lam", "C", "R1", "R2", "kappa",
                      "Q", "zeta", "xi", "xi_clamped", "c", "quadrature_tolerance")}
        tables = {name: getattr(self, name).tolist() for name in
                  ("grid", "Phi_grid", "ratio_grid", "ratio_slope_grid", "f_grid", "f_prime_grid")}
        return {"constants": constants, "tables": tables}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def write(self, filename: str):
        with open(filename, 'w') as file:
            file.write(self.to_json())

    @classmethod
    def from_json(cls, text: str):
        data = json.loads(text)
        tables = {name: np.asarray(values, dtype=float) for name, values in data["tables"].items()}
        return cls(**data["constants"], **tables)

    @classmethod
    def load(cls, filename: str):
        with open(filename, 'r') as file:
            return cls.from_json(file.read())


calibrate = EberleCalibration.calibrate


def rho2(x, y, cal: EberleCalibration):
    return cal.rho2(x, y)


def contraction_rate(cal: EberleCalibration) -> float:
    return min(cal.zeta / cal.beta, cal.lam / 2.0, 2.0 * cal.C * cal.lam * cal.kappa)


def smoothness_to_rho_constant(cal: EberleCalibration, A: float, M: float) -> float:
    """K with (M/2 |x| + M/2 |y| + A) |x - y| <= K rho2(x, y)"""
    if cal.R2 <= 0:
        raise DegenerateCalibration("R2 = 0, the rho2 comparison constant is undefined")
    return (2.0 * math.exp(M * cal.beta * cal.R2 ** 2 / 8.0 + 2.0 * cal.R2)
            * max(1.0, 1.0 / cal.R2) * max(A + M / 2.0, (A / 2.0 + M) / cal.kappa))


def check_smoothness_to_rho(cal: EberleCalibration, A: float, M: float, probes: int,
                            rng: np.random.Generator, box: float = 5.0) -> CheckResult:
    K = smoothness_to_rho_constant(cal, A, M)
    x = rng.uniform(-box, box, (probes, cal.d))
    y = rng.uniform(-box, box, (probes, cal.d))
    left = (M / 2.0 * np.linalg.norm(x, axis=1) + M / 2.0 * np.linalg.norm(y, axis=1) + A) \
        * np.linalg.norm(x - y, axis=1)
    margins = K * cal.rho2(x, y) - left
    worst = int(np.argmin(margins))
    passed = bool(margins[worst] >= 0)
    return CheckResult("smoothness-to-rho", passed, float(margins[worst]),
                       witness=None if passed else {"x": x[worst], "y": y[worst]},
                       detail={"K": K, "probes": probes})


def _generator_on_vbar(model: PotentialModel, data: Dataset, x: np.ndarray, beta: float) -> np.ndarray:
    """Langevin generator applied to Vbar(x) = 1 + |x|^2"""
    gradient = empirical_grad(model, x, data)
    return -2.0 * np.sum(gradient * x, axis=-1) + 2.0 * model.dimension / beta


def check_lyapunov_drift(model: PotentialModel, data: Dataset, p: float, beta: float,
                         probes: int, rng: np.random.Generator, box: float = 10.0) -> CheckResult:
    """L V_p <= C(p) - lambda(p) V_p at random points, V_p(x) = |x|^p"""
    constants = lyapunov_constants(p, model.m, model.b, beta, model.dimension)
    x = rng.uniform(-box, box, (probes, model.dimension))
    norm = np.linalg.norm(x, axis=1)
    gradient = empirical_grad(model, x, data)
    generator = (-p * norm ** (p - 2) * np.sum(gradient * x, axis=1)
                 + p * (model.dimension + p - 2) * norm ** (p - 2) / beta)
    margins = constants.C - constants.lam * norm ** p - generator
    margins += 1e-9 * (1.0 + np.abs(generator))
    worst = int(np.argmin(margins))
    passed = bool(margins[worst] >= 0)
    return CheckResult(f"lyapunov-drift-p{p:g}-{model.family.value}", passed, float(margins[worst]),
                       witness=None if passed else {"x": x[worst]},
                       detail={"lambda": constants.lam, "C": constants.C})


def _check_kappa(cal: EberleCalibration) -> CheckResult:
    left = 1.0 / (2.0 * cal.C * cal.beta * cal.kappa)
    if cal.R1 == 0:
        return CheckResult("kappa-inequality", True, left, detail={"integral": 0.0})
    phi_scalar = _phi_scalar(cal.M, cal.beta, cal.Q)
    inner_tol = 1e-13

    def ratio(s):
        return Phi(s, cal.M, cal.beta, cal.Q, inner_tol) / phi_scalar(s)

    scale = max(1.0, float(cal.J(cal.R1)))
    integral, _ = integrate_adaptive_simpson(ratio, 0.0, cal.R1, 1e-10 * scale)
    margin = left - integral
    return CheckResult("kappa-inequality", margin >= -1e-8 * abs(left), margin,
                       detail={"left": left, "integral": integral})


def _check_chain(cal: EberleCalibration, r: np.ndarray, Phi_r: np.ndarray,
                 f_r: np.ndarray) -> CheckResult:
    bottom = r * cal.phi(cal.R2)
    steps = np.stack([Phi_r - bottom, 2 * f_r - Phi_r, 2 * Phi_r - 2 * f_r, 2 * r - 2 * Phi_r])
    tolerance = 1e-8 * np.maximum(1.0, r)
    worst_step, worst = np.unravel_index(np.argmin(steps + tolerance), steps.shape)
    margin = float(steps[worst_step, worst])
    passed = bool(np.all(steps + tolerance >= 0))
    return CheckResult("f-chain", passed, margin,
                       witness=None if passed else {"r": r[worst], "step": int(worst_step)},
                       detail={"points": len(r)})


def _check_second_derivative(cal: EberleCalibration, r: np.ndarray, Phi_r: np.ndarray,
                             f_r: np.ndarray) -> List[CheckResult]:
    keep = (np.abs(r - cal.R1) > 1e-9 * cal.R2) & (np.abs(r - cal.R2) > 1e-9 * cal.R2)
    r, Phi_r, f_r = r[keep], Phi_r[keep], f_r[keep]
    phi_r = cal.phi(r)
    g_r = cal.g(r)
    f_prime = phi_r * g_r
    ratio = Phi_r / phi_r
    inside_r2 = (r > 0) & (r < cal.R2)
    inside_r1 = (r > 0) & (r < cal.R1)
    decay = cal.M * cal.beta * r / 4.0 + 2.0 * cal.Q
    second = (-decay * f_prime - cal.zeta / 4.0 * ratio * phi_r * (r < cal.R2)
              - cal.xi / 4.0 * ratio * phi_r * (r < cal.R1))
    bound = -decay * f_prime - cal.zeta / 4.0 * f_r * inside_r2 - cal.xi / 4.0 * f_r * inside_r1
    margins = bound - second
    tolerance = 1e-8 * (1.0 + np.abs(bound))
    worst = int(np.argmin(margins + tolerance))
    inequality = CheckResult("f-second-derivative", bool(np.all(margins + tolerance >= 0)),
                             float(margins[worst]),
                             detail={"points": int(len(r))})

    # analytic f'' against central differences of f'
    probes = np.linspace(0.0, cal.R2, 102)[1:-1]
    probes = probes[np.abs(probes - cal.R1) > 1e-3 * cal.R2]
    step = 1e-5 * cal.R2
    differences = (cal.f_prime(probes + step) - cal.f_prime(probes - step)) / (2 * step)
    analytic = cal.f_second(probes)
    error = np.abs(differences - analytic) / np.maximum(1.0, np.abs(analytic))
    agreement = CheckResult("f-second-derivative-finite-differences",
                            bool(np.max(error) <= 1e-4), float(1e-4 - np.max(error)),
                            detail={"points": int(len(probes))})
    return [inequality, agreement]


def _check_generator(cal: EberleCalibration, catalog, probes: int,
                     rng: np.random.Generator) -> List[CheckResult]:
    x = rng.uniform(-cal.R2, cal.R2, (probes, cal.d))
    y = rng.uniform(-cal.R2, cal.R2, (probes, cal.d))
    total = 2.0 + np.sum(x * x, axis=1) + np.sum(y * y, axis=1)
    outside_s1 = total > 2.0 * cal.C / cal.lam
    outside_s2 = total > 4.0 * cal.C * (1.0 + 1.0 / cal.lam)
    results = []
    for F, data_F in catalog:
        for G, data_G in catalog:
            name = f"{F.family.value}/{G.family.value}"
            drift = (_generator_on_vbar(F, data_F, x, cal.beta)
                     + _generator_on_vbar(G, data_G, y, cal.beta))
            u = 1.0 + cal.kappa * total
            s1 = -drift[outside_s1]
            s2 = (-cal.lam / 2.0 * min(1.0, 4.0 * cal.C * cal.kappa) * u - cal.kappa * drift)[outside_s2]
            for label, margins, mask, strict in (("S1", s1, outside_s1, True),
                                                 ("S2", s2, outside_s2, False)):
                skipped = int(probes - np.count_nonzero(mask))
                if margins.size == 0:
                    results.append(CheckResult(f"generator-outside-{label}-{name}", True, 0.0,
                                               detail={"skipped": skipped, "evaluated": 0}))
                    continue
                worst = int(np.argmin(margins))
                passed = bool(margins[worst] > 0) if strict else bool(margins[worst] >= 0)
                results.append(CheckResult(
                    f"generator-outside-{label}-{name}", passed, float(margins[worst]),
                    witness=None if passed else {"x": x[mask][worst], "y": y[mask][worst]},
                    detail={"skipped": skipped, "evaluated": int(margins.size)}))
    return results


def verify_calibration(cal: EberleCalibration, catalog: Optional[List[Tuple[PotentialModel, Dataset]]] = None,
                       probes: int = 10000, rng: Optional[np.random.Generator] = None) -> Report:
    """Numerical checks of the inequalities the calibration is built on.

    Covers the kappa inequality, the chain r phi(R2) <= Phi <= 2f <= 2 Phi <= 2r,
    the second derivative bound on f, the Langevin generator bounds outside
    S1 and S2 for every catalog potential the calibration admits, and the
    Lyapunov drift of those potentials.
    """
    rng = rng if rng is not None else seeded(0)
    report = Report(f"calibration m={cal.m:g} b={cal.b:g} M={cal.M:g} beta={cal.beta:g} d={cal.d}")
    report.add(_check_kappa(cal))
    q_error = abs(q_by_maximization(cal.kappa) - cal.Q)
    report.add(CheckResult("q-closed-form", q_error <= 1e-6, 1e-6 - q_error))

    r = np.linspace(0.0, cal.R2, CHECK_GRID_POINTS)
    Phi_r = cumulative_adaptive_simpson(_phi_scalar(cal.M, cal.beta, cal.Q), r, cal.quadrature_tolerance)
    f_r = cumulative_adaptive_simpson(lambda s: float(cal.phi(s) * cal.g(s)), r,
                                      cal.quadrature_tolerance)
    report.add(_check_chain(cal, r, Phi_r, f_r))
    for check in _check_second_derivative(cal, r, Phi_r, f_r):
        report.add(check)

    if catalog is None:
        catalog = catalog_for_calibration(cal)
    admitted = [(model, data) for model, data in catalog if cal.admits(model)]
    for model, _ in catalog:
        if not cal.admits(model):
            logger.warning("skipping %s potential, its certificates exceed the calibration",
                           model.family.value)
    for check in _check_generator(cal, admitted, probes, rng):
        report.add(check)
    for model, data in admitted:
        for p in (2, 4):
            report.add(check_lyapunov_drift(model, data, p, cal.beta, probes, rng))
    return report
