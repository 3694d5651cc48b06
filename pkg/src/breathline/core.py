"""Shared domain types, the label-stream CSV format and the seeded random source."""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np


class BreathlineError(ValueError):
    """Base class for every data/contract error raised by the package."""


class InvalidStreamError(BreathlineError):
    pass


class InvalidInputError(BreathlineError):
    pass


class InvalidSpecError(BreathlineError):
    pass


class ParseError(BreathlineError):
    """Malformed file content. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class BreathState(enum.IntEnum):
    INHALATION = 0
    EXHALATION = 1

    @classmethod
    def parse(cls, token) -> "BreathState":
        text = str(token).strip()
        if text == "0":
            return cls.INHALATION
        if text == "1":
            return cls.EXHALATION
        raise ValueError(f"label must be 0 or 1, got {token!r}")


@dataclass(frozen=True)
class LabeledFrame:
    index: int
    timestamp_s: float
    label: BreathState

    def __post_init__(self):
        if self.index < 0:
            raise InvalidInputError(f"negative frame index {self.index}")
        if not (self.timestamp_s >= 0 and math.isfinite(self.timestamp_s)):
            raise InvalidInputError(f"bad timestamp {self.timestamp_s!r} at frame {self.index}")
        object.__setattr__(self, "label", BreathState(self.label))


@dataclass(frozen=True, eq=False)
class AudioTrack:
    """Mono audio normalized to [-1, 1]. The sample buffer is made read-only."""

    samples: np.ndarray
    sample_rate_hz: int = 48000

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64, copy=True).reshape(-1)
        if self.sample_rate_hz <= 0:
            raise InvalidInputError("sample_rate_hz must be positive")
        if samples.size and not np.all(np.isfinite(samples)):
            raise InvalidInputError("audio contains non-finite samples")
        if samples.size and np.max(np.abs(samples)) > 1.0:
            raise InvalidInputError("audio samples must lie in [-1, 1]")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size

    def __eq__(self, other):
        if not isinstance(other, AudioTrack):
            return NotImplemented
        return self.sample_rate_hz == other.sample_rate_hz and np.array_equal(self.samples, other.samples)

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True)
class RespirationEstimate:
    """Output of the rate tracker.

    ``rate_bpm``/``std_bpm`` are ``None`` when fewer than two end-of-exhalation
    transitions were seen; that "no-estimate" outcome is deliberately distinct
    from a rate of zero.
    """

    rate_bpm: Optional[float]
    std_bpm: Optional[float]
    cycle_count: int
    transition_times_s: tuple = field(default_factory=tuple)

    @property
    def status(self) -> str:
        return "ok" if self.cycle_count >= 1 else "no-estimate"

    @property
    def ok(self) -> bool:
        return self.cycle_count >= 1

    def to_dict(self) -> dict:
        return {
            "rate_bpm": self.rate_bpm,
            "std_bpm": self.std_bpm,
            "cycle_count": self.cycle_count,
            "transition_times_s": list(self.transition_times_s),
            "status": self.status,
        }

    def display(self) -> str:
        """Whole-breath rendering, ``-`` for no estimate."""
        if not self.ok:
            return "-"
        return f"{round(self.rate_bpm):d}±{round(self.std_bpm):d}"


def seeded_rng(seed: int) -> np.random.Generator:
    """Deterministic random source: numpy ``PCG64`` seeded through ``SeedSequence``.

    PCG64 output is specified bit-for-bit by numpy, so streams are identical across
    platforms. Use ``rng.spawn(n)`` (or ``SeedSequence.spawn``) for independent
    child streams.
    """
    seed = int(seed)
    if not -(2**63) <= seed < 2**64:
        raise InvalidInputError(f"seed {seed} does not fit in 64 bits")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed % 2**64)))


def frames_from_labels(labels: Iterable, fps: float, start_index: int = 0) -> list[LabeledFrame]:
    """Attach ``index / fps`` timestamps to a plain label sequence."""
    if not fps > 0:
        raise InvalidInputError("fps must be positive")
    return [
        LabeledFrame(start_index + i, (start_index + i) / fps, BreathState(int(y)))
        for i, y in enumerate(labels)
    ]


def validate_stream(stream: Sequence[LabeledFrame]) -> None:
    """Reject (never reorder) streams whose indices or timestamps are not strictly increasing."""
    for prev, cur in zip(stream, stream[1:]):
        if cur.index <= prev.index:
            raise InvalidStreamError(f"frame index {cur.index} does not increase after {prev.index}")
        if cur.timestamp_s <= prev.timestamp_s:
            raise InvalidStreamError(
                f"timestamp {cur.timestamp_s!r} at frame {cur.index} does not increase after {prev.timestamp_s!r}"
            )


def labels_array(stream: Sequence[LabeledFrame]) -> np.ndarray:
    return np.fromiter((int(f.label) for f in stream), dtype=np.int8, count=len(stream))


# -- label stream CSV ---------------------------------------------------------

CSV_HEADER = ("index", "timestamp_s", "label")


def format_timestamp(t: float) -> str:
    """Shortest exact positional form, padded to at least 6 decimals."""
    text = np.format_float_positional(float(t), unique=True, trim="k")
    whole, _, frac = text.partition(".")
    return f"{whole}.{frac.ljust(6, '0')}"


def render_label_csv(stream: Sequence[LabeledFrame]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for f in stream:
        writer.writerow((f.index, format_timestamp(f.timestamp_s), int(f.label)))
    return buf.getvalue()


def parse_label_csv(text: str) -> list[LabeledFrame]:
    rows = csv.reader(io.StringIO(text))
    header = next(rows, None)
    if header is None:
        raise ParseError("empty file, expected header 'index,timestamp_s,label'", 1)
    if tuple(h.strip() for h in header) != CSV_HEADER:
        raise ParseError(f"expected header 'index,timestamp_s,label', got {','.join(header)!r}", 1)
    stream = []
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != 3:
            raise ParseError(f"expected 3 fields, got {len(row)}", lineno)
        try:
            frame = LabeledFrame(int(row[0]), float(row[1]), BreathState.parse(row[2]))
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from exc
        if stream:
            try:
                validate_stream([stream[-1], frame])
            except InvalidStreamError as exc:
                raise ParseError(str(exc), lineno) from exc
        stream.append(frame)
    return stream


def write_label_csv(path, stream: Sequence[LabeledFrame]) -> None:
    Path(path).write_text(render_label_csv(stream), encoding="utf-8", newline="\n")


def read_label_csv(path) -> list[LabeledFrame]:
    return parse_label_csv(Path(path).read_text(encoding="utf-8"))
