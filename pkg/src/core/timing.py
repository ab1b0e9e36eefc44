"""Wall-clock phase accounting for training iterations."""

import time
from collections import defaultdict
from contextlib import contextmanager
from typing import Dict, Iterator, Optional


class PhaseTimer:
    """Accumulates non-overlapping phase durations in milliseconds."""

    def __init__(self):
        self._totals: Dict[str, float] = defaultdict(float)

    @contextmanager
    def phase(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self._totals[name] += (time.perf_counter() - start) * 1e3

    def add(self, name: str, ms: float) -> None:
        self._totals[name] += ms

    def snapshot(self) -> Dict[str, float]:
        return dict(self._totals)

    def reset(self) -> None:
        self._totals.clear()


@contextmanager
def maybe_phase(timer: Optional[PhaseTimer], name: str) -> Iterator[None]:
    """Time ``name`` when a timer is supplied, otherwise do nothing."""
    if timer is None:
        yield
        return
    with timer.phase(name):
        yield
