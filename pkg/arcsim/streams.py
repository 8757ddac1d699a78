"""
Counter-based random streams.

Every stream is a Philox generator keyed by the master seed, a hash of
the experiment identifier, an ensemble block index and a purpose. Two
streams with different keys never overlap and any stream can be rebuilt
in isolation, so results do not depend on how blocks are scheduled.
"""
import hashlib
from dataclasses import dataclass
from typing import Tuple

import numpy as np

PURPOSES = ("noise", "batch", "batch-y", "init", "reference", "data",
            "population", "probe")


def experiment_key(experiment_id: str) -> Tuple[int, ...]:
    """Four 32-bit words of a stable hash of the experiment identifier.

    >>> experiment_key("contraction") == experiment_key("contraction")
    True
    >>> len(experiment_key("eta"))
    4
    """
    digest = hashlib.blake2b(experiment_id.encode("utf-8"), digest_size=16).digest()
    return tuple(int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4))


def stream_id(master_seed: int, experiment_id: str, index: int, purpose: str) -> str:
    """Printable identifier of a stream, recorded alongside trajectories"""
    return f"{master_seed}:{experiment_id}:{index}:{purpose}"


def generator(master_seed: int, experiment_id: str, index: int,
              purpose: str) -> np.random.Generator:
    if purpose not in PURPOSES:
        raise ValueError(f"Unknown stream purpose {purpose!r}, expected one of {PURPOSES}")
    if master_seed < 0 or index < 0:
        raise ValueError("Seeds and stream indices must be non-negative")
    sequence = np.random.SeedSequence(
        entropy=master_seed,
        spawn_key=(*experiment_key(experiment_id), index, PURPOSES.index(purpose)))
    return np.random.Generator(np.random.Philox(sequence))


def seeded(seed: int) -> np.random.Generator:
    """A standalone generator for a single seed (datasets, probes)"""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


@dataclass
class Streams:
    """The generators used by one ensemble block.

    `noise` drives the Brownian increments, `batch` the mini-batches of
    the first process and `batch_y` those of the second; `init` draws
    initial states.
    """
    noise: np.random.Generator
    batch: np.random.Generator
    batch_y: np.random.Generator
    init: np.random.Generator
    ids: Tuple[str, ...] = ()

    @classmethod
    def for_block(cls, master_seed: int, experiment_id: str, block: int,
                  noise_purpose: str = "noise"):
        """Streams of a block. `noise_purpose="reference"` gives a noise
        stream independent of the default one for reference ensembles."""
        purposes = (noise_purpose, "batch", "batch-y", "init")
        gens = [generator(master_seed, experiment_id, block, purpose)
                for purpose in purposes]
        ids = tuple(stream_id(master_seed, experiment_id, block, purpose)
                    for purpose in purposes)
        return cls(*gens, ids=ids)

    @classmethod
    def from_seed(cls, seed: int, experiment_id: str = "default"):
        return cls.for_block(seed, experiment_id, 0)
