"""Per-rank inbox with tag matching."""

import threading
import time
from typing import Dict, Optional, Tuple

from .errors import CollectiveAbortedError, CollectiveMismatchError, CommTimeoutError
from .frames import Frame, FrameKind

Tag = Tuple[int, int, int]


class Mailbox:
    """
    Holds frames that arrived for one rank until a receive claims them.

    Frames are matched on ``(src, seq, step)``, so collectives in flight at
    the same time complete independently of arrival order.
    """

    def __init__(self, rank: int):
        self.rank = rank
        self._frames: Dict[Tag, Frame] = {}
        self._cond = threading.Condition()
        self._abort: Optional[Tuple[int, str]] = None

    def deliver(self, frame: Frame) -> None:
        with self._cond:
            if frame.kind is FrameKind.ABORT:
                if self._abort is None:
                    self._abort = (frame.src, frame.text())
            else:
                self._frames[frame.tag] = frame
            self._cond.notify_all()

    def abort(self, origin: int, reason: str) -> None:
        with self._cond:
            if self._abort is None:
                self._abort = (origin, reason)
            self._cond.notify_all()

    @property
    def aborted(self) -> Optional[Tuple[int, str]]:
        return self._abort

    def receive(self, src: int, seq: int, step: int, kind: FrameKind,
                timeout: Optional[float] = None) -> Frame:
        """Block until the matching frame arrives; checks its kind."""
        tag = (src, seq, step)
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            while tag not in self._frames:
                if self._abort is not None:
                    raise CollectiveAbortedError(*self._abort)
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    raise CommTimeoutError(
                        f"rank {self.rank} timed out waiting for {kind.name} "
                        f"seq={seq} step={step} from rank {src}"
                    )
                self._cond.wait(remaining)
            frame = self._frames.pop(tag)
        if frame.kind is not kind:
            raise CollectiveMismatchError(
                f"rank {self.rank} expected {kind.name} at seq={seq} from rank {src}, "
                f"got {frame.kind.name}"
            )
        return frame

    def pending(self) -> int:
        with self._cond:
            return len(self._frames)
