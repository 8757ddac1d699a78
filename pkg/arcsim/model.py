"""Value types shared across the simulation modules."""
from enum import Enum
from dataclasses import dataclass
from typing import Tuple, Optional

import numpy as np


class Family(Enum):
    CosineQuadratic = "cosine-quadratic"
    Quadratic = "quadratic"


class DistributionKind(Enum):
    Sphere = "sphere"
    Gaussian = "gaussian"
    TruncatedGaussian = "truncated-gaussian"
    Point = "point"


class DriverKind(Enum):
    ContinuousLangevin = "continuous-langevin"
    DiscretizedLangevin = "discretized-langevin"
    SGLD = "sgld"


class CouplingMode(Enum):
    Synchronous = "synchronous"
    Reflection = "reflection"
    ARC = "arc"


class CutoffShape(Enum):
    Smoothstep = "smoothstep"
    Hard = "hard"


@dataclass(eq=True, frozen=True)
class DistributionSpec:
    """Law the dataset samples are drawn from.

    `radius` is the sphere radius or the truncation radius, `sigma` the
    Gaussian scale and `location` the atom of a point mass (empty means the
    origin).
    """
    kind: DistributionKind
    dimension: int
    radius: float = 1.0
    sigma: float = 1.0
    location: Tuple[float, ...] = ()

    @property
    def support_radius(self) -> float:
        """sup ||z|| over the support, infinite for an untruncated Gaussian"""
        if self.kind is DistributionKind.Sphere:
            return self.radius
        if self.kind is DistributionKind.TruncatedGaussian:
            return self.radius
        if self.kind is DistributionKind.Point:
            return float(np.linalg.norm(self.atom))
        return float("inf")

    @property
    def atom(self) -> np.ndarray:
        if not self.location:
            return np.zeros(self.dimension)
        return np.asarray(self.location, dtype=float)


@dataclass(eq=True, frozen=True)
class MiniBatchIndex:
    """A uniformly drawn subset of distinct sample indices, stored sorted
    and 0-based."""
    indices: Tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.indices)


@dataclass(eq=True, frozen=True)
class InitialLaw:
    """Law of an initial state: a point mass or an isotropic Gaussian
    centred on `location`."""
    location: Tuple[float, ...]
    scale: float = 0.0

    @property
    def dimension(self) -> int:
        return len(self.location)

    def sample(self, count: int, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        centre = np.broadcast_to(np.asarray(self.location, dtype=float),
                                 (count, self.dimension)).copy()
        if self.scale == 0.0:
            return centre
        return centre + self.scale * rng.standard_normal((count, self.dimension))

    @classmethod
    def point(cls, *location: float):
        return cls(tuple(float(value) for value in location))
