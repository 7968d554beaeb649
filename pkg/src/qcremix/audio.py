"""Waveform containers and RIFF/WAVE input/output.

Buffers hold samples as a ``(channels, n)`` float64 array with full scale at
+-1.0.  Only the 48 kHz rate is used by the quality models; other rates load
fine but are rejected by :func:`segment`.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import (
    AlignmentError,
    AudioIOError,
    FormatError,
    MissingFileError,
    SampleRateError,
    TruncatedDataError,
    UnsupportedFormatError,
)

SAMPLE_RATE = 48_000
SEGMENT_LENGTH = 192_000
SCORING_HOP = 96_000

_FORMAT_PCM = 0x0001
_FORMAT_FLOAT = 0x0003
_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True)
class AudioBuffer:
    """Multichannel waveform.

    Args:
        samples: array of shape ``(channels, n)``; a 1-D array is taken as mono.
        sample_rate: sampling rate in Hz.
    """

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64)
        if x.ndim == 1:
            x = x[np.newaxis, :]
        if x.ndim != 2 or x.shape[0] < 1:
            raise FormatError(f"samples must be (channels, n), got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise FormatError("samples contain NaN or Inf")
        if self.sample_rate <= 0:
            raise FormatError(f"sample rate must be positive, got {self.sample_rate}")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def channel_count(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def channel(self, i: int) -> np.ndarray:
        return self.samples[i]

    def __len__(self):
        return self.n_samples


@dataclass(frozen=True)
class SegmentSet:
    """Fixed-length windows cut from a mono signal.

    ``segments[i]`` starts at ``offsets[i] = i * hop`` in the source signal.
    """

    segments: np.ndarray
    hop: int
    source_length: int
    length: int = SEGMENT_LENGTH
    offsets: tuple = field(default=())

    def __len__(self):
        return self.segments.shape[0]

    def unpadded(self, i: int) -> np.ndarray:
        """Segment ``i`` without its trailing zero padding."""
        start = self.offsets[i]
        return self.segments[i, : max(0, min(self.length, self.source_length - start))]


def load_wav(path) -> AudioBuffer:
    """Read a RIFF/WAVE file (PCM 16/24/32-bit integer or 32-bit float).

    Integer samples are divided by ``2**(bits - 1)``.

    Raises:
        MissingFileError: the path does not exist.
        UnsupportedFormatError: not RIFF/WAVE or an encoding other than the above.
        TruncatedDataError: the data chunk is shorter than its header claims.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"no such file: {path}")
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise AudioIOError(f"cannot read {path}: {exc}") from exc

    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise UnsupportedFormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos : pos + 4]
        (size,) = struct.unpack("<I", raw[pos + 4 : pos + 8])
        body = raw[pos + 8 : pos + 8 + size]
        if chunk_id == b"fmt ":
            fmt = body
        elif chunk_id == b"data":
            if len(body) < size:
                raise TruncatedDataError(
                    f"{path}: data chunk declares {size} bytes, found {len(body)}"
                )
            data = body
            break
        pos += 8 + size + (size & 1)

    if fmt is None or len(fmt) < 16:
        raise UnsupportedFormatError(f"{path}: missing fmt chunk")
    if data is None:
        raise TruncatedDataError(f"{path}: missing data chunk")

    tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag == _FORMAT_EXTENSIBLE and len(fmt) >= 26:
        (tag,) = struct.unpack("<H", fmt[24:26])
    if channels < 1 or block_align != channels * bits // 8:
        raise UnsupportedFormatError(f"{path}: inconsistent fmt chunk")

    if tag == _FORMAT_FLOAT and bits == 32:
        x = np.frombuffer(data, dtype="<f4", count=len(data) // 4).astype(np.float64)
    elif tag == _FORMAT_PCM and bits in (16, 32):
        dtype = "<i2" if bits == 16 else "<i4"
        x = np.frombuffer(data, dtype=dtype, count=len(data) // (bits // 8))
        x = x.astype(np.float64) / 2.0 ** (bits - 1)
    elif tag == _FORMAT_PCM and bits == 24:
        b = np.frombuffer(data, dtype=np.uint8, count=len(data) - len(data) % 3)
        b = b.reshape(-1, 3).astype(np.int32)
        v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        v = np.where(v >= 1 << 23, v - (1 << 24), v)
        x = v.astype(np.float64) / 2.0**23
    else:
        raise UnsupportedFormatError(f"{path}: unsupported encoding (tag {tag}, {bits} bits)")

    n = x.size // channels
    if x.size != n * channels:
        raise TruncatedDataError(f"{path}: data chunk ends inside a sample frame")
    return AudioBuffer(x.reshape(n, channels).T, rate)


def save_wav(buffer: AudioBuffer, path, bit_depth=32) -> None:
    """Write ``buffer`` as RIFF/WAVE.

    ``bit_depth`` is 16, 24 or 32 for integer PCM, or ``"float32"``.
    Integer output clamps to the representable range; float output keeps
    values as they are.
    """
    path = Path(path)
    x = buffer.samples.T  # interleave
    if bit_depth == "float32":
        tag, bits = _FORMAT_FLOAT, 32
        payload = np.ascontiguousarray(x, dtype="<f4").tobytes()
    elif bit_depth in (16, 24, 32):
        tag, bits = _FORMAT_PCM, int(bit_depth)
        scale = 2.0 ** (bits - 1)
        v = np.clip(np.round(x * scale), -scale, scale - 1).astype(np.int64)
        if bits == 16:
            payload = v.astype("<i2").tobytes()
        elif bits == 32:
            payload = v.astype("<i4").tobytes()
        else:
            u = (v & 0xFFFFFF).astype("<u4").reshape(-1, 1).view(np.uint8)
            payload = np.ascontiguousarray(u.reshape(-1, 4)[:, :3]).tobytes()
    else:
        raise ValueError(f"unsupported bit depth {bit_depth!r}")

    channels = buffer.channel_count
    block_align = channels * bits // 8
    pad = len(payload) & 1
    header = b"RIFF" + struct.pack("<I", 36 + len(payload) + pad) + b"WAVE"
    fmt = b"fmt " + struct.pack(
        "<IHHIIHH", 16, tag, channels, buffer.sample_rate,
        buffer.sample_rate * block_align, block_align, bits,
    )
    data = b"data" + struct.pack("<I", len(payload)) + payload
    if pad:
        data += b"\x00"
    try:
        path.write_bytes(header + fmt + data)
    except OSError as exc:
        raise AudioIOError(f"cannot write {path}: {exc}") from exc


def downmix_mono(buffer: AudioBuffer) -> AudioBuffer:
    """Channel average; identical channels come back bit-exact."""
    if buffer.channel_count == 1:
        return buffer
    x = buffer.samples
    if np.array_equal(x, np.broadcast_to(x[0], x.shape)):
        return AudioBuffer(x[0], buffer.sample_rate)
    return AudioBuffer(x.mean(axis=0), buffer.sample_rate)


def segment_count(n: int, length: int = SEGMENT_LENGTH, hop: int = SCORING_HOP) -> int:
    if n <= length:
        return 1
    return max(1, math.ceil((n - length) / hop) + 1)


def segment_array(x: np.ndarray, length: int = SEGMENT_LENGTH, hop: int = SCORING_HOP) -> SegmentSet:
    """Cut a 1-D array into ``length``-sample windows, zero-padding the last one."""
    x = np.asarray(x)
    if x.ndim != 1:
        raise FormatError("segmentation expects a single channel")
    if hop <= 0 or length <= 0:
        raise ValueError("length and hop must be positive")
    n = x.shape[0]
    count = segment_count(n, length, hop)
    out = np.zeros((count, length), dtype=x.dtype if x.dtype.kind == "f" else np.float64)
    offsets = tuple(i * hop for i in range(count))
    for i, start in enumerate(offsets):
        piece = x[start : start + length]
        out[i, : piece.shape[0]] = piece
    return SegmentSet(out, hop, n, length, offsets)


def segment(buffer: AudioBuffer, length: int = SEGMENT_LENGTH, hop: int = SCORING_HOP) -> SegmentSet:
    """Segment a mono 48 kHz buffer. No implicit resampling is done.

    Raises:
        SampleRateError: the buffer is not at 48 kHz.
    """
    if buffer.sample_rate != SAMPLE_RATE:
        raise SampleRateError(
            f"expected {SAMPLE_RATE} Hz, got {buffer.sample_rate} Hz (resample beforehand)"
        )
    if buffer.channel_count != 1:
        raise FormatError("segment() expects a mono buffer; use downmix_mono or per-channel scoring")
    return segment_array(buffer.samples[0], length, hop)


def check_aligned(*buffers: AudioBuffer, same_channels: bool = True) -> None:
    """Raise :class:`~qcremix.exceptions.AlignmentError` unless buffers match."""
    first = buffers[0]
    for other in buffers[1:]:
        if other.sample_rate != first.sample_rate:
            raise AlignmentError(
                f"sample rates differ: {first.sample_rate} vs {other.sample_rate}"
            )
        if other.n_samples != first.n_samples:
            raise AlignmentError(f"lengths differ: {first.n_samples} vs {other.n_samples}")
        if same_channels and other.channel_count != first.channel_count:
            raise AlignmentError(
                f"channel counts differ: {first.channel_count} vs {other.channel_count}"
            )
