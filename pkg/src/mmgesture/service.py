"""Streaming inference: sliding windows of frames -> UDP prediction datagrams.

An ingest thread slices the frame source into windows and feeds a small
bounded queue; when the queue is full the oldest window is discarded. The
calling thread runs the pipeline and the classifier and sends one
datagram per processed window.
"""

from __future__ import annotations

import logging
import socket
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .scene import GestureInstance
from .wire import PredictionMessage, WireError, decode_message, encode_message

log = logging.getLogger(__name__)

_END = object()


@dataclass(frozen=True)
class StreamConfig:
    window_frames: int = 32
    hop_frames: int = 8
    host: str = "127.0.0.1"
    port: int = 9870
    confidence_floor: float = 0.0
    queue_capacity: int = 4
    frame_interval: float = 0.0  # pacing for replayed sources; 0 = as fast as the source yields
    send_retries: int = 3
    retry_backoff: float = 0.01

    def __post_init__(self):
        if self.window_frames < 8:
            raise ValueError("window must hold at least 8 frames")
        if not 1 <= self.hop_frames <= self.window_frames:
            raise ValueError("hop must be in [1, window]")
        if self.queue_capacity < 1:
            raise ValueError("queue capacity must be positive")


@dataclass
class StreamStats:
    windows: int = 0
    sent: int = 0
    suppressed: int = 0
    dropped: int = 0
    send_failures: int = 0
    latencies: list = field(default_factory=list)


class DropOldestQueue:
    """Bounded FIFO whose ``put`` evicts the oldest item instead of blocking."""

    def __init__(self, capacity: int):
        self._items = deque()
        self._cap = capacity
        self._cond = threading.Condition()
        self.dropped = 0

    def put(self, item, droppable: bool = True) -> None:
        with self._cond:
            if droppable and len(self._items) >= self._cap:
                self._items.popleft()
                self.dropped += 1
            self._items.append(item)
            self._cond.notify()

    def get(self, timeout: float | None = None):
        with self._cond:
            if not self._cond.wait_for(lambda: self._items, timeout):
                raise TimeoutError
            return self._items.popleft()


def sliding_windows(frames: Iterable, window: int, hop: int):
    buf = deque(maxlen=window)
    since = 0
    for f in frames:
        buf.append(f)
        since += 1
        if len(buf) == window and since >= hop:
            since = 0
            yield list(buf)


def _ingest(source, cfg: StreamConfig, q: DropOldestQueue, stop: threading.Event, errors: list):
    try:
        for win in sliding_windows(source, cfg.window_frames, cfg.hop_frames):
            if stop.is_set():
                break
            q.put(win)
            if cfg.frame_interval:
                time.sleep(cfg.frame_interval * cfg.hop_frames)
    except Exception as exc:  # surfaced to the caller
        errors.append(exc)
    finally:
        q.put(_END, droppable=False)


def _send(sock, payload: bytes, addr, cfg: StreamConfig, stats: StreamStats) -> bool:
    delay = cfg.retry_backoff
    for attempt in range(cfg.send_retries + 1):
        try:
            sock.sendto(payload, addr)
            return True
        except OSError as exc:
            log.warning("send to %s failed (attempt %d): %s", addr, attempt + 1, exc)
            if attempt < cfg.send_retries:
                time.sleep(delay)
                delay = min(delay * 2, 1.0)
    stats.send_failures += 1
    return False


def classify_window(frames, model, pipeline) -> tuple[int, float]:
    inst = GestureInstance(list(frames), 0, instance_id="stream")
    x = pipeline.stacks([inst])
    p = np.asarray(model.predict_proba(x))[0]
    k = int(np.argmax(p))
    return k, float(p[k])


def serve_stream(source: Iterable, model, pipeline, cfg: StreamConfig | None = None,
                 stop: threading.Event | None = None, sock=None,
                 max_messages: int | None = None) -> StreamStats:
    """Run until the source is exhausted, ``stop`` is set or ``max_messages`` were sent."""
    cfg = StreamConfig() if cfg is None else cfg
    stop = threading.Event() if stop is None else stop
    own_sock = sock is None
    if own_sock:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    addr = (cfg.host, cfg.port)
    stats = StreamStats()
    q = DropOldestQueue(cfg.queue_capacity)
    errors: list = []
    ingest = threading.Thread(target=_ingest, args=(source, cfg, q, stop, errors), daemon=True)
    ingest.start()
    seq = 0
    try:
        while not stop.is_set():
            try:
                win = q.get(timeout=0.1)
            except TimeoutError:
                continue
            if win is _END:
                break
            t0 = time.perf_counter()
            label, conf = classify_window(win, model, pipeline)
            stats.windows += 1
            if conf < cfg.confidence_floor:
                stats.suppressed += 1
            else:
                msg = PredictionMessage(seq, int(time.time() * 1e6), label, min(max(conf, 0.0), 1.0))
                if _send(sock, encode_message(msg), addr, cfg, stats):
                    seq += 1
                    stats.sent += 1
            dt = time.perf_counter() - t0
            stats.latencies.append(dt)
            log.debug("window %d: label %d conf %.3f in %.1f ms", stats.windows, label, conf, 1e3 * dt)
            if max_messages is not None and stats.sent >= max_messages:
                break
    finally:
        stop.set()
        ingest.join(timeout=5)
        stats.dropped = q.dropped
        if own_sock:
            sock.close()
    if errors:
        raise RuntimeError("frame source failed") from errors[0]
    return stats


def receive_messages(sock, count: int | None = None, timeout: float = 1.0):
    """Yield decoded messages from a bound UDP socket until ``count`` or a timeout."""
    sock.settimeout(timeout)
    n = 0
    while count is None or n < count:
        try:
            data, _ = sock.recvfrom(64)
        except socket.timeout:
            return
        try:
            yield decode_message(data)
            n += 1
        except WireError as exc:
            log.warning("discarding datagram: %s", exc)
