"""Server-to-client links carrying framed messages, in process or over sockets."""

from __future__ import annotations

import collections
import queue
import socket
import threading

from ..errors import FramingError
from ..wire import FrameBuffer, encode_frame, read_frame
from .metrics import SERVER, TrafficMeter, client_party

RECV_TIMEOUT = 30.0


class Endpoint:
    """One side of a link. Sends and receives whole messages and meters bytes."""

    def __init__(self, party: str, meter: TrafficMeter):
        self.party = party
        self.meter = meter

    def send(self, msg) -> int:
        frame = encode_frame(msg)
        self._send_frame(frame)
        self.meter.record(self.party, "sent", len(frame))
        return len(frame)

    def recv(self):
        msg, size = self._recv_frame()
        self.meter.record(self.party, "recv", size)
        return msg

    def _send_frame(self, frame: bytes):
        raise NotImplementedError

    def _recv_frame(self):
        raise NotImplementedError

    def close(self):
        pass


class _QueueEndpoint(Endpoint):
    def __init__(self, party, meter, inbox: collections.deque, outbox: collections.deque):
        super().__init__(party, meter)
        self.inbox, self.outbox = inbox, outbox

    def _send_frame(self, frame):
        self.outbox.append(frame)

    def _recv_frame(self):
        if not self.inbox:
            raise FramingError(f"{self.party}: nothing to receive")
        frame = self.inbox.popleft()
        return read_frame(frame)


class _SocketEndpoint(Endpoint):
    def __init__(self, party, meter, sock: socket.socket):
        super().__init__(party, meter)
        self.sock = sock
        self.inbox: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, name=f"reader-{party}", daemon=True)
        self._reader.start()

    def _pump(self):
        buf = FrameBuffer()
        while True:
            try:
                chunk = self.sock.recv(1 << 16)
            except OSError:
                break
            if not chunk:
                break
            buf.feed(chunk)
            try:
                for item in buf.frames():
                    self.inbox.put(item)
            except Exception as exc:  # surface decode errors to the receiver
                self.inbox.put(exc)
                break
        if buf.pending:
            self.inbox.put(FramingError(f"{self.party}: stream closed inside a frame"))

    def _send_frame(self, frame):
        self.sock.sendall(frame)

    def _recv_frame(self):
        try:
            item = self.inbox.get(timeout=RECV_TIMEOUT)
        except queue.Empty:
            raise FramingError(f"{self.party}: receive timed out") from None
        if isinstance(item, Exception):
            raise item
        return item

    def close(self):
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()
        self._reader.join(timeout=1.0)


class Network:
    """A star of links between the server and each client."""

    def __init__(self, client_ids, mode: str = "inproc", meter: TrafficMeter | None = None):
        if mode not in ("inproc", "socket"):
            raise ValueError(f"unknown transport {mode!r}")
        self.mode = mode
        self.meter = meter or TrafficMeter()
        self.server_side: dict = {}
        self.client_side: dict = {}
        for cid in client_ids:
            if mode == "inproc":
                up, down = collections.deque(), collections.deque()
                self.server_side[cid] = _QueueEndpoint(SERVER, self.meter, inbox=up, outbox=down)
                self.client_side[cid] = _QueueEndpoint(client_party(cid), self.meter, inbox=down, outbox=up)
            else:
                a, b = socket.socketpair()
                self.server_side[cid] = _SocketEndpoint(SERVER, self.meter, a)
                self.client_side[cid] = _SocketEndpoint(client_party(cid), self.meter, b)

    def server(self, cid) -> Endpoint:
        return self.server_side[cid]

    def client(self, cid) -> Endpoint:
        return self.client_side[cid]

    def close(self):
        for ep in (*self.server_side.values(), *self.client_side.values()):
            ep.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
