"""
Per-sample losses, empirical and mini-batch gradients, dataset generation
and the structural constants (m, b, M, A) every potential is certified
with.

Two families are supported:

    cosine-quadratic   l(w; z) = (m0/2)|w|^2 + a (1 + cos<w, z>)
    quadratic          l(w; z) = (m0/2)|w - z|^2

All evaluations broadcast over leading axes: `w` may be a single point of
shape (d,) or an ensemble of shape (N, d).
"""
import csv
import logging
from dataclasses import dataclass
from typing import Optional, Tuple, List, Union, Sequence

import numpy as np

from arcsim.model import (Family, DistributionKind, DistributionSpec,
                          MiniBatchIndex)
from arcsim.report import CheckResult, Report
from arcsim.streams import seeded

logger = logging.getLogger(__name__)

# keeps certified dissipativity offsets strictly positive
DISSIPATIVITY_FLOOR = 1e-12


class InvalidPotentialInput(ValueError):
    pass


@dataclass(eq=True, frozen=True)
class PotentialModel:
    """A loss family with its parameters and certified constants.

    `support_radius` is sup |z| over the data the certificates hold for.
    The constants promise, for every w, w' and every z in that support,

        <grad l(w; z), w> >= m|w|^2 - b
        |grad l(w; z) - grad l(w'; z)| <= M |w - w'|
        |grad l(0; z)| <= A
    """
    family: Family
    dimension: int
    parameters: Tuple[float, ...]
    support_radius: float
    m: float
    b: float
    M: float
    A: float

    @classmethod
    def cosine_quadratic(cls, dimension: int, m0: float, a: float,
                         support_radius: float):
        _check_family_inputs(dimension, m0, support_radius)
        if a < 0:
            raise InvalidPotentialInput("cosine amplitude a must be non-negative")
        if a > 0 and m0 == 0:
            raise InvalidPotentialInput("a cosine term needs m0 > 0 to stay dissipative")
        # -a|z||w| >= -(m0/2)|w|^2 - a^2|z|^2/(2 m0)
        b = max(a * a * support_radius ** 2 / (2 * m0) if a > 0 else 0.0, DISSIPATIVITY_FLOOR)
        return cls(Family.CosineQuadratic, dimension, (float(m0), float(a)),
                   float(support_radius), m=m0 / 2, b=b,
                   M=m0 + a * support_radius ** 2, A=0.0)

    @classmethod
    def quadratic(cls, dimension: int, m0: float, support_radius: float):
        _check_family_inputs(dimension, m0, support_radius)
        if support_radius == 0:
            m, b = m0, DISSIPATIVITY_FLOOR
        else:
            m, b = m0 / 2, m0 * support_radius ** 2 / 2
        return cls(Family.Quadratic, dimension, (float(m0),), float(support_radius),
                   m=m, b=b, M=m0, A=m0 * support_radius)

    @property
    def m0(self) -> float:
        return self.parameters[0]

    @property
    def a(self) -> float:
        return self.parameters[1] if self.family is Family.CosineQuadratic else 0.0

    def with_support_radius(self, radius: float) -> "PotentialModel":
        """Same family and parameters, certificates recomputed for a wider support"""
        if self.family is Family.CosineQuadratic:
            return PotentialModel.cosine_quadratic(self.dimension, self.m0, self.a, radius)
        return PotentialModel.quadratic(self.dimension, self.m0, radius)

    def loss(self, w, z) -> np.ndarray:
        w, z = np.asarray(w, dtype=float), np.asarray(z, dtype=float)
        if self.family is Family.CosineQuadratic:
            return (0.5 * self.m0 * np.sum(w * w, axis=-1)
                    + self.a * (1.0 + np.cos(np.sum(w * z, axis=-1))))
        diff = w - z
        return 0.5 * self.m0 * np.sum(diff * diff, axis=-1)

    def grad(self, w, z) -> np.ndarray:
        w, z = np.asarray(w, dtype=float), np.asarray(z, dtype=float)
        if self.family is Family.CosineQuadratic:
            inner = np.sum(w * z, axis=-1)
            return self.m0 * w - self.a * np.sin(inner)[..., None] * z
        return self.m0 * (w - z)


def _check_family_inputs(dimension: int, m0: float, support_radius: float):
    if dimension < 1:
        raise InvalidPotentialInput(f"dimension must be positive, got {dimension}")
    if m0 < 0:
        raise InvalidPotentialInput(f"m0 must be non-negative, got {m0}")
    if not np.isfinite(support_radius):
        raise InvalidPotentialInput(
            "certificates need a bounded support, got an unbounded distribution")
    if support_radius < 0:
        raise InvalidPotentialInput("support radius must be non-negative")


class Dataset:
    """A finite sample z_1 ... z_n, held as an (n, d) array"""

    def __init__(self, samples, spec: Optional[DistributionSpec] = None,
                 seed: Optional[int] = None):
        samples = np.array(samples, dtype=float, ndmin=2)
        if samples.shape[0] == 0:
            raise InvalidPotentialInput("dataset is empty")
        self._samples = samples
        self._samples.setflags(write=False)
        self.spec = spec
        self.seed = seed

    @property
    def samples(self) -> np.ndarray:
        return self._samples

    @property
    def n(self) -> int:
        return self._samples.shape[0]

    @property
    def dimension(self) -> int:
        return self._samples.shape[1]

    @property
    def support_radius(self) -> float:
        """Largest sample norm"""
        return float(np.max(np.linalg.norm(self._samples, axis=1)))

    def shifted(self, offset) -> "Dataset":
        return Dataset(self._samples + np.asarray(offset, dtype=float), spec=None,
                       seed=self.seed)

    @classmethod
    def from_csv(cls, filename: str):
        """Load samples written by `write`, one sample per row"""
        with open(filename, 'r') as file:
            reader = csv.reader(file)
            header = next(reader)
            rows = [[float(value) for value in row] for row in reader if row]
        if any(len(row) != len(header) for row in rows):
            raise InvalidPotentialInput(f"{filename}: ragged sample rows")
        return cls(rows)

    def to_csv(self, output):
        writer = csv.writer(output, lineterminator="\n")
        writer.writerow([f"z_{i + 1}" for i in range(self.dimension)])
        for row in self._samples:
            writer.writerow([format(value, ".17e") for value in row])

    def write(self, filename: str):
        with open(filename, 'w', newline='') as file:
            self.to_csv(file)

    def write_binary(self, filename: str):
        """Flat little-endian float64 samples behind an `n,dim` header line"""
        with open(filename, 'wb') as file:
            file.write(f"{self.n},{self.dimension}\n".encode("ascii"))
            file.write(self._samples.astype("<f8").tobytes())

    @classmethod
    def read_binary(cls, filename: str):
        with open(filename, 'rb') as file:
            n, dim = (int(value) for value in file.readline().decode("ascii").split(","))
            samples = np.frombuffer(file.read(), dtype="<f8")
        if samples.size != n * dim:
            raise InvalidPotentialInput(f"{filename}: expected {n * dim} values, found {samples.size}")
        return cls(samples.reshape(n, dim))


BatchLike = Union[MiniBatchIndex, np.ndarray, Sequence[int]]


def _check_point(model: PotentialModel, w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape[-1:] != (model.dimension,):
        raise InvalidPotentialInput(
            f"expected points of dimension {model.dimension}, got shape {w.shape}")
    return w


def _check_data(model: PotentialModel, data: Dataset):
    if data.dimension != model.dimension:
        raise InvalidPotentialInput(
            f"dataset dimension {data.dimension} does not match model dimension {model.dimension}")


def eval_loss(model: PotentialModel, w, z) -> np.ndarray:
    """Per-sample loss.

    >>> model = PotentialModel.cosine_quadratic(2, m0=2.0, a=0.0, support_radius=1.0)
    >>> float(eval_loss(model, [1.0, 0.0], [0.0, 1.0]))
    1.0
    """
    w = _check_point(model, w)
    z = _check_point(model, z)
    return model.loss(w, z)


def grad_loss(model: PotentialModel, w, z) -> np.ndarray:
    w = _check_point(model, w)
    z = _check_point(model, z)
    return model.grad(w, z)


def empirical_loss(model: PotentialModel, w, data: Dataset) -> np.ndarray:
    """L_n(w) = (1/n) sum_i l(w; z_i), batched over leading axes of w"""
    w = _check_point(model, w)
    _check_data(model, data)
    return np.mean(model.loss(w[..., None, :], data.samples), axis=-1)


# population losses are Monte Carlo averages over a fresh sample
population_loss = empirical_loss


def empirical_grad(model: PotentialModel, w, data: Dataset) -> np.ndarray:
    """grad L_n(w) = (1/n) sum_i grad l(w; z_i)

    >>> model = PotentialModel.quadratic(1, m0=1.0, support_radius=1.0)
    >>> data = Dataset([[1.0], [-1.0], [2.0]])
    >>> empirical_grad(model, [0.0], data)
    array([-0.66666667])
    """
    w = _check_point(model, w)
    _check_data(model, data)
    return np.mean(model.grad(w[..., None, :], data.samples), axis=-2)


def _as_indices(batch: BatchLike, n: int) -> np.ndarray:
    if isinstance(batch, MiniBatchIndex):
        indices = np.asarray(batch.indices, dtype=np.intp)
    else:
        indices = np.asarray(batch, dtype=np.intp)
    if indices.size == 0 or indices.shape[-1] == 0:
        raise InvalidPotentialInput("mini-batch is empty")
    if indices.min() < 0 or indices.max() >= n:
        raise InvalidPotentialInput(f"mini-batch index out of range [0, {n})")
    return indices


def minibatch_grad(model: PotentialModel, w, data: Dataset, batch: BatchLike) -> np.ndarray:
    """(1/B) sum_{i in batch} grad l(w; z_i).

    `batch` is one index set of shape (B,) or one per ensemble member,
    shape (N, B) against `w` of shape (N, d). The full index set gives
    exactly the empirical gradient.
    """
    w = _check_point(model, w)
    _check_data(model, data)
    indices = _as_indices(batch, data.n)
    return np.mean(model.grad(w[..., None, :], data.samples[indices]), axis=-2)


def sample_minibatches(n: int, size: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """`count` independent uniform subsets of size `size` from [0, n),
    each sorted, as a (count, size) array"""
    if n < 1:
        raise InvalidPotentialInput("cannot sample from an empty dataset")
    if size < 1 or size > n:
        raise InvalidPotentialInput(f"batch size {size} must lie in [1, {n}]")
    if size == n:
        return np.broadcast_to(np.arange(n), (count, n)).copy()
    keys = rng.random((count, n))
    chosen = np.argpartition(keys, size - 1, axis=1)[:, :size]
    return np.sort(chosen, axis=1)


def sample_minibatch(n: int, size: int, rng: np.random.Generator) -> MiniBatchIndex:
    return MiniBatchIndex(tuple(int(i) for i in sample_minibatches(n, size, 1, rng)[0]))


def generate_dataset(spec: DistributionSpec, n: int, seed: Union[int, np.random.Generator]) -> Dataset:
    """Draw n samples from a distribution spec. Integer seeds are
    reproducible across runs and platforms."""
    if n < 1:
        raise InvalidPotentialInput(f"dataset size must be positive, got {n}")
    if spec.dimension < 1:
        raise InvalidPotentialInput("distribution dimension must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else seeded(seed)
    d = spec.dimension

    if spec.kind is DistributionKind.Sphere:
        directions = rng.standard_normal((n, d))
        norms = np.linalg.norm(directions, axis=1, keepdims=True)
        samples = spec.radius * directions / norms
    elif spec.kind is DistributionKind.Gaussian:
        samples = spec.sigma * rng.standard_normal((n, d))
    elif spec.kind is DistributionKind.TruncatedGaussian:
        if spec.radius <= 0:
            raise InvalidPotentialInput("truncation radius must be positive")
        accepted: List[np.ndarray] = []
        total = 0
        while total < n:
            draws = spec.sigma * rng.standard_normal((2 * n, d))
            draws = draws[np.linalg.norm(draws, axis=1) <= spec.radius]
            accepted.append(draws)
            total += draws.shape[0]
        samples = np.concatenate(accepted)[:n]
    elif spec.kind is DistributionKind.Point:
        if spec.location and len(spec.location) != d:
            raise InvalidPotentialInput("point location does not match dimension")
        samples = np.broadcast_to(spec.atom, (n, d)).copy()
    else:
        raise InvalidPotentialInput(f"unsupported distribution {spec.kind}")

    return Dataset(samples, spec=spec, seed=seed if isinstance(seed, int) else None)


def _ball_samples(count: int, dimension: int, radius: float,
                  rng: np.random.Generator) -> np.ndarray:
    """Points of the closed ball, half of them on its boundary"""
    directions = rng.standard_normal((count, dimension))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    scale = rng.random(count) ** (1.0 / dimension)
    scale[: count // 2] = 1.0
    return radius * directions * scale[:, None]


def certify_constants(model: PotentialModel, probes: int, rng: np.random.Generator,
                      box: float = 10.0) -> Report:
    """Randomized falsification of the certified constants.

    Probes w uniformly in [-box, box]^d, a partner w' at log-uniform
    distances from w (so local and global Lipschitz ratios are both
    exercised), and z in the support ball. Each constant gets one check
    whose margin is the worst slack seen; a violated check carries the
    probe that broke it.
    """
    if probes < 1:
        raise InvalidPotentialInput("at least one probe is required")
    d = model.dimension
    w = rng.uniform(-box, box, (probes, d))
    directions = rng.standard_normal((probes, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    distances = 10.0 ** rng.uniform(-3.0, np.log10(2 * box), probes)
    w_other = w + distances[:, None] * directions
    z = _ball_samples(probes, d, model.support_radius, rng)

    grad_w = model.grad(w, z)
    grad_other = model.grad(w_other, z)
    grad_zero = model.grad(np.zeros_like(w), z)
    losses = model.loss(w, z)

    inner = np.sum(grad_w * w, axis=1)
    sq_norm = np.sum(w * w, axis=1)
    dissipative = inner - (model.m * sq_norm - model.b)
    step = np.linalg.norm(w - w_other, axis=1)
    gradient_step = np.linalg.norm(grad_w - grad_other, axis=1)
    smooth = model.M * step - gradient_step
    at_zero = model.A - np.linalg.norm(grad_zero, axis=1)

    def tolerance(*scales):
        return 1e-9 * (1.0 + sum(np.abs(scale) for scale in scales))

    report = Report(f"certificates of {model.family.value} potential")
    candidates = [
        ("dissipativity", dissipative, tolerance(inner, model.m * sq_norm)),
        ("smoothness", smooth, tolerance(model.M * step, gradient_step)),
        ("gradient-at-zero", at_zero, tolerance(model.A)),
        ("non-negative-loss", losses, tolerance(losses)),
    ]
    for name, margins, tol in candidates:
        worst = int(np.argmin(margins + tol))
        passed = bool(np.all(margins + tol >= 0))
        witness = None
        if not passed:
            witness = {"w": w[worst], "w_other": w_other[worst], "z": z[worst],
                       "margin": margins[worst]}
            logger.warning("certificate %s violated at w=%s", name, w[worst])
        report.add(CheckResult(name, passed, float(margins[worst]), witness=witness,
                               detail={"probes": probes}))
    return report


def catalog_for_calibration(cal, seed: int = 0, n: int = 16) -> List[Tuple[PotentialModel, Dataset]]:
    """Catalog potentials whose certificates fit inside the constants
    (m, b, M, d) of a calibration, each with a dataset they were
    certified for."""
    d = cal.d
    entries = []
    origin = DistributionSpec(DistributionKind.Point, d)
    if cal.m <= cal.M:
        entries.append((PotentialModel.quadratic(d, cal.m, 0.0),
                        generate_dataset(origin, n, seed)))
    if cal.M >= 2 * cal.m:
        radius = float(np.sqrt(cal.b / cal.m))
        sphere = DistributionSpec(DistributionKind.Sphere, d, radius=radius)
        entries.append((PotentialModel.quadratic(d, 2 * cal.m, radius),
                        generate_dataset(sphere, n, seed)))
    amplitude = min(cal.M - 2 * cal.m, 2 * np.sqrt(cal.m * cal.b))
    if amplitude > 0:
        sphere = DistributionSpec(DistributionKind.Sphere, d, radius=1.0)
        entries.append((PotentialModel.cosine_quadratic(d, 2 * cal.m, amplitude, 1.0),
                        generate_dataset(sphere, n, seed)))
    logger.debug("catalog for calibration: %s",
                 [model.family.value for model, _ in entries])
    return entries
