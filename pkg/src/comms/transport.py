"""
Transports move frames between ranks and drop them into mailboxes.

``InProcessFabric`` connects ranks that are threads of one process.
``TcpTransport`` connects one process per rank over a full mesh of stream
sockets, with rank 0 acting as the rendezvous point.
"""

import json
import socket
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from tenacity import Retrying, retry_if_exception_type, stop_after_delay, wait_fixed

from ..core.logging_config import LoggerMixin
from .errors import CommError
from .frames import HEADER_SIZE, Frame, FrameKind, decode_header, decode_payload, encode_frame
from .mailbox import Mailbox


@dataclass
class LinkModel:
    """Simulated point-to-point link: fixed latency plus a bandwidth term."""
    latency_us: float = 0.0
    bandwidth_gbps: float = 0.0

    @property
    def enabled(self) -> bool:
        return self.latency_us > 0 or self.bandwidth_gbps > 0

    def transfer_s(self, nbytes: int) -> float:
        t = self.latency_us * 1e-6
        if self.bandwidth_gbps > 0:
            t += nbytes * 8 / (self.bandwidth_gbps * 1e9)
        return t


class Transport(ABC):
    """Sends frames to peers; received frames land in ``mailbox``."""

    def __init__(self, rank: int, world_size: int, mailbox: Mailbox):
        self.rank = rank
        self.world_size = world_size
        self.mailbox = mailbox

    @abstractmethod
    def send(self, frame: Frame) -> None:
        ...

    def close(self) -> None:
        pass


class InProcessFabric:
    """Mailboxes and simulated links for ranks living in one process."""

    def __init__(self, world_size: int, link: Optional[LinkModel] = None):
        self.world_size = world_size
        self.link = link or LinkModel()
        self.mailboxes = [Mailbox(r) for r in range(world_size)]
        self._ready_at = np.zeros((world_size, world_size))
        self._link_lock = threading.Lock()

    def endpoint(self, rank: int) -> "InProcessTransport":
        return InProcessTransport(self, rank)

    def _reserve(self, src: int, dst: int, nbytes: int) -> float:
        """Book the link and return when the message has fully arrived."""
        with self._link_lock:
            start = max(time.perf_counter(), self._ready_at[src, dst])
            done = start + self.link.transfer_s(nbytes)
            self._ready_at[src, dst] = done
        return done

    def transmit(self, frame: Frame) -> None:
        if isinstance(frame.payload, np.ndarray):
            frame.payload = frame.payload.copy()
        if self.link.enabled and frame.kind.carries_data:
            delay = self._reserve(frame.src, frame.dst, frame.nbytes) - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
        self.mailboxes[frame.dst].deliver(frame)


class InProcessTransport(Transport):
    def __init__(self, fabric: InProcessFabric, rank: int):
        super().__init__(rank, fabric.world_size, fabric.mailboxes[rank])
        self.fabric = fabric

    def send(self, frame: Frame) -> None:
        self.fabric.transmit(frame)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray(n)
    view = memoryview(buf)
    got = 0
    while got < n:
        k = sock.recv_into(view[got:], n - got)
        if k == 0:
            raise ConnectionError("peer closed the connection")
        got += k
    return bytes(buf)


def _read_frame(sock: socket.socket) -> Frame:
    seq, kind, src, dst, step, length = decode_header(_recv_exact(sock, HEADER_SIZE))
    payload = decode_payload(kind, _recv_exact(sock, length) if length else b"")
    return Frame(seq, kind, src, dst, step, payload)


def _control(src: int, dst: int, body: dict) -> Frame:
    return Frame(0, FrameKind.CONTROL, src, dst, 0, json.dumps(body).encode("utf-8"))


class TcpTransport(Transport, LoggerMixin):
    """Full mesh of stream sockets, built through a rank-0 rendezvous."""

    def __init__(
        self,
        rank: int,
        world_size: int,
        rendezvous: Tuple[str, int],
        connect_timeout_s: float = 60.0,
    ):
        super().__init__(rank, world_size, Mailbox(rank))
        self.rendezvous = rendezvous
        self.connect_timeout_s = connect_timeout_s
        self._socks: Dict[int, socket.socket] = {}
        self._send_locks: Dict[int, threading.Lock] = {}
        self._threads: List[threading.Thread] = []
        self._closing = threading.Event()
        self._listener: Optional[socket.socket] = None

    def _connect(self, host: str, port: int) -> socket.socket:
        for attempt in Retrying(
            stop=stop_after_delay(self.connect_timeout_s),
            wait=wait_fixed(0.1),
            retry=retry_if_exception_type(OSError),
            reraise=True,
        ):
            with attempt:
                sock = socket.create_connection((host, port), timeout=self.connect_timeout_s)
        sock.settimeout(None)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return sock

    def _listen(self, host: str, port: int) -> socket.socket:
        lsock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        lsock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        lsock.bind((host, port))
        lsock.listen(self.world_size)
        lsock.settimeout(self.connect_timeout_s)
        return lsock

    def _accept_peer(self) -> Tuple[int, socket.socket, dict]:
        sock, _ = self._listener.accept()
        sock.settimeout(None)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        hello = json.loads(_read_frame(sock).text())
        return int(hello["rank"]), sock, hello

    def connect(self) -> "TcpTransport":
        """Run the rendezvous and build connections to every peer."""
        host, port = self.rendezvous
        R, r = self.world_size, self.rank
        if R == 1:
            return self
        try:
            if r == 0:
                self._listener = self._listen(host, port)
                table = {0: [host, port]}
                for _ in range(R - 1):
                    peer, sock, hello = self._accept_peer()
                    self._socks[peer] = sock
                    table[peer] = [hello["host"], hello["port"]]
                for peer, sock in self._socks.items():
                    sock.sendall(encode_frame(_control(0, peer, {"table": table})))
            else:
                self._listener = self._listen(host, 0)
                my_port = self._listener.getsockname()[1]
                root = self._connect(host, port)
                root.sendall(encode_frame(_control(r, 0, {"rank": r, "host": host, "port": my_port})))
                table = {int(k): v for k, v in json.loads(_read_frame(root).text())["table"].items()}
                self._socks[0] = root
                for peer in range(1, r):
                    sock = self._connect(*table[peer])
                    sock.sendall(encode_frame(_control(r, peer, {"rank": r})))
                    self._socks[peer] = sock
                for _ in range(R - 1 - r):
                    peer, sock, _ = self._accept_peer()
                    self._socks[peer] = sock
        except OSError as e:
            raise CommError(f"rank {r} failed to join rendezvous {host}:{port}: {e}") from e

        for peer, sock in self._socks.items():
            self._send_locks[peer] = threading.Lock()
            t = threading.Thread(target=self._receive_loop, args=(peer, sock),
                                 name=f"tcp-recv-{r}-{peer}", daemon=True)
            t.start()
            self._threads.append(t)
        self.logger.debug("tcp mesh ready", rank=r, peers=sorted(self._socks))
        return self

    def _receive_loop(self, peer: int, sock: socket.socket) -> None:
        while not self._closing.is_set():
            try:
                frame = _read_frame(sock)
            except (OSError, ConnectionError) as e:
                if not self._closing.is_set():
                    self.mailbox.abort(peer, f"connection to rank {peer} lost: {e}")
                return
            self.mailbox.deliver(frame)

    def send(self, frame: Frame) -> None:
        data = encode_frame(frame)
        with self._send_locks[frame.dst]:
            self._socks[frame.dst].sendall(data)

    def close(self) -> None:
        self._closing.set()
        for sock in self._socks.values():
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()
        if self._listener is not None:
            self._listener.close()
        for t in self._threads:
            t.join(timeout=1.0)
