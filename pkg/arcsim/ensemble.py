"""
Block-parallel execution of Monte Carlo ensembles.

An ensemble of N members is cut into fixed size blocks. Each block owns
the random streams keyed by its index, so the numbers a member sees
depend only on the seed, the experiment and the block size, never on the
number of worker threads. Block results are returned in block order.
"""
import logging
import threading
from datetime import datetime, timezone
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Tuple, TypeVar, Optional

from arcsim.streams import Streams

logger = logging.getLogger(__name__)

Result = TypeVar("Result")

BLOCK_SIZE = 1024


class ProgressThread(threading.Thread):
    """
    Thread used to log how far a long ensemble run has come while the
    worker pool is busy.
    """
    # time in seconds until a warning should be made about long running times
    LONG_DURATION = 60
    # warning message for long durations
    WARNING_MESSAGE = ("Ensemble run is taking a while. Reduce experiment.ensemble "
                       "or raise run.threads for quicker turnaround.")
    # time in seconds between progress messages
    PROGRESS_STEP = 10

    def __init__(self, event: threading.Event, label: str, total: int):
        super().__init__(daemon=True)
        self.start_time = datetime.now(timezone.utc)
        self.stopped = event
        self.label = label
        self.total = total
        self.completed = 0
        self.warned = False
        self._lock = threading.Lock()

    def advance(self):
        with self._lock:
            self.completed += 1

    def run(self):
        while not self.stopped.wait(ProgressThread.PROGRESS_STEP):
            seconds_running = (datetime.now(timezone.utc) - self.start_time).seconds
            logger.info("%s: %d/%d blocks after %d mins %d seconds", self.label,
                        self.completed, self.total, seconds_running // 60, seconds_running % 60)

            if seconds_running > ProgressThread.LONG_DURATION and not self.warned:
                logger.warning(ProgressThread.WARNING_MESSAGE)
                self.warned = True


class EnsembleRunner:
    """Runs jobs over the blocks of an ensemble.

    A job is called as job(block_index, member_count, streams) and its
    results are collected in block order.
    """

    def __init__(self, seed: int, experiment_id: str, threads: int = 1,
                 block_size: int = BLOCK_SIZE):
        if threads < 1:
            raise ValueError(f"thread count must be positive, got {threads}")
        if block_size < 1:
            raise ValueError(f"block size must be positive, got {block_size}")
        self.seed = seed
        self.experiment_id = experiment_id
        self.threads = threads
        self.block_size = block_size

    def derive(self, suffix: str) -> "EnsembleRunner":
        """A runner with streams independent of this one's"""
        return EnsembleRunner(self.seed, f"{self.experiment_id}/{suffix}",
                              self.threads, self.block_size)

    def blocks(self, size: int) -> List[Tuple[int, int]]:
        """(block index, member count) pairs covering `size` members

        >>> EnsembleRunner(0, "doc", block_size=4).blocks(10)
        [(0, 4), (1, 4), (2, 2)]
        """
        if size < 1:
            raise ValueError("an ensemble needs at least one member")
        return [(index, min(self.block_size, size - start))
                for index, start in enumerate(range(0, size, self.block_size))]

    def streams(self, block: int, noise_purpose: str = "noise") -> Streams:
        return Streams.for_block(self.seed, self.experiment_id, block, noise_purpose)

    def map(self, job: Callable[[int, int, Streams], Result], size: int,
            noise_purpose: str = "noise", label: Optional[str] = None) -> List[Result]:
        blocks = self.blocks(size)
        stop = threading.Event()
        progress = ProgressThread(stop, label or self.experiment_id, len(blocks))
        progress.start()

        def run(block: Tuple[int, int]) -> Result:
            index, count = block
            result = job(index, count, self.streams(index, noise_purpose))
            progress.advance()
            return result

        try:
            if self.threads == 1 or len(blocks) == 1:
                return [run(block) for block in blocks]
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                return list(pool.map(run, blocks))
        finally:
            stop.set()
