"""22-byte big-endian datagram carrying one prediction.

    offset  size  field
    0       4     magic b"WVMN"
    4       1     version (1)
    5       4     sequence, u32
    9       8     timestamp in microseconds, u64
    17      1     label
    18      4     confidence, f32
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

MAGIC = b"WVMN"
VERSION = 1
N_LABELS = 5
_LAYOUT = struct.Struct(">4sBIQBf")
MESSAGE_SIZE = _LAYOUT.size  # 22


class WireError(ValueError):
    pass


@dataclass(frozen=True)
class PredictionMessage:
    sequence: int
    timestamp_us: int
    label: int
    confidence: float

    def validate(self) -> None:
        if not 0 <= self.sequence < 2 ** 32:
            raise WireError(f"sequence {self.sequence} does not fit in 32 bits")
        if not 0 <= self.timestamp_us < 2 ** 64:
            raise WireError(f"timestamp {self.timestamp_us} does not fit in 64 bits")
        if not 0 <= self.label < N_LABELS:
            raise WireError(f"label {self.label} out of range")
        if not (math.isfinite(self.confidence) and 0.0 <= self.confidence <= 1.0):
            raise WireError(f"confidence {self.confidence} outside [0, 1]")


def encode_message(msg: PredictionMessage) -> bytes:
    msg.validate()
    return _LAYOUT.pack(MAGIC, VERSION, msg.sequence, msg.timestamp_us, msg.label, msg.confidence)


def decode_message(data: bytes) -> PredictionMessage:
    data = bytes(data)
    if len(data) < MESSAGE_SIZE:
        raise WireError(f"short buffer: {len(data)} bytes")
    if len(data) > MESSAGE_SIZE:
        raise WireError(f"{len(data) - MESSAGE_SIZE} trailing bytes")
    magic, version, seq, ts, label, conf = _LAYOUT.unpack(data)
    if magic != MAGIC:
        raise WireError(f"bad magic {magic!r}")
    if version != VERSION:
        raise WireError(f"unsupported version {version}")
    msg = PredictionMessage(seq, ts, label, conf)
    msg.validate()
    return msg
