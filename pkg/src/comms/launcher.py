"""Start SPMD rank functions on in-process threads or over TCP."""

import threading
from typing import Any, Callable, List, Optional, Tuple

from ..core.logging_config import get_logger
from .context import RankContext
from .errors import CollectiveAbortedError
from .transport import InProcessFabric, LinkModel, TcpTransport

logger = get_logger(__name__)

RankFn = Callable[[RankContext], Any]


def make_inprocess_world(
    world_size: int,
    comm_workers: int = 1,
    compute_threads: int = 1,
    link: Optional[LinkModel] = None,
    timeout_s: Optional[float] = 120.0,
    debug: bool = False,
) -> List[RankContext]:
    """One ``RankContext`` per rank, all sharing an in-process fabric."""
    fabric = InProcessFabric(world_size, link)
    return [
        RankContext(r, world_size, fabric.endpoint(r), comm_workers=comm_workers,
                    compute_threads=compute_threads, timeout_s=timeout_s, debug=debug)
        for r in range(world_size)
    ]


def launch_inprocess(world_size: int, fn: RankFn, **ctx_kwargs: Any) -> List[Any]:
    """
    Run ``fn(ctx)`` on one thread per rank and return results by rank.

    If any rank fails, the first root-cause exception is re-raised after all
    threads finish; aborts observed on other ranks are secondary.
    """
    contexts = make_inprocess_world(world_size, **ctx_kwargs)
    results: List[Any] = [None] * world_size
    errors: List[Optional[BaseException]] = [None] * world_size

    def run(ctx: RankContext) -> None:
        try:
            results[ctx.rank] = fn(ctx)
        except BaseException as e:  # re-raised on the launching thread
            errors[ctx.rank] = e
            ctx.abort(f"rank {ctx.rank} failed: {e}")

    threads = [threading.Thread(target=run, args=(ctx,), name=f"rank{ctx.rank}")
               for ctx in contexts]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for ctx in contexts:
        ctx.close()

    failures = [e for e in errors if e is not None]
    if failures:
        primary = [e for e in failures if not isinstance(e, CollectiveAbortedError)]
        raise (primary or failures)[0]
    return results


def connect_tcp(
    rank: int,
    world_size: int,
    rendezvous: Tuple[str, int],
    comm_workers: int = 1,
    compute_threads: int = 1,
    timeout_s: Optional[float] = 120.0,
    debug: bool = False,
) -> RankContext:
    """Join a TCP world as ``rank`` and return its context."""
    transport = TcpTransport(rank, world_size, rendezvous,
                             connect_timeout_s=timeout_s or 60.0).connect()
    logger.info("rank joined tcp world", rank=rank, world_size=world_size,
                rendezvous=f"{rendezvous[0]}:{rendezvous[1]}")
    return RankContext(rank, world_size, transport, comm_workers=comm_workers,
                       compute_threads=compute_threads, timeout_s=timeout_s, debug=debug)
