"""Respiration rate from end-of-exhalation transitions, in batch and streaming form."""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, replace
from typing import Optional, Sequence

from .core import (
    BreathState,
    InvalidInputError,
    InvalidStreamError,
    LabeledFrame,
    RespirationEstimate,
    validate_stream,
)

NO_ESTIMATE_CYCLES = 0


def _accept(times: Sequence[float], t: float, min_gap_s: Optional[float]) -> bool:
    return not (min_gap_s and times and t - times[-1] < min_gap_s)


def detect_transitions(stream: Sequence[LabeledFrame], min_gap_s: Optional[float] = None) -> list[float]:
    """Times of the last exhalation frame before every exhalation -> inhalation change.

    ``min_gap_s`` drops a transition closer than that to the previously kept one
    (off by default).
    """
    validate_stream(stream)
    times: list[float] = []
    for prev, cur in zip(stream, stream[1:]):
        if cur.label is BreathState.INHALATION and prev.label is BreathState.EXHALATION:
            if _accept(times, prev.timestamp_s, min_gap_s):
                times.append(prev.timestamp_s)
    return times


def estimate_rate(transition_times_s: Sequence[float]) -> RespirationEstimate:
    times = tuple(float(t) for t in transition_times_s)
    n = len(times)
    if n < 2:
        return RespirationEstimate(None, None, NO_ESTIMATE_CYCLES, times)
    gaps = [b - a for a, b in zip(times, times[1:])]
    if any(not g > 0 for g in gaps):
        raise InvalidInputError("transition times must be strictly increasing")
    rate = 60.0 / (n - 1) * math.fsum(1.0 / g for g in gaps)
    per_cycle = [60.0 / g for g in gaps]
    std = statistics.stdev(per_cycle) if n > 2 else 0.0
    return RespirationEstimate(rate, std, n - 1, times)


def predict_respiration_rate(
    stream: Sequence[LabeledFrame], min_gap_s: Optional[float] = None
) -> RespirationEstimate:
    return estimate_rate(detect_transitions(stream, min_gap_s))


@dataclass(frozen=True)
class TrackerState:
    previous_frame: Optional[LabeledFrame] = None
    transition_times_s: tuple = ()
    frames_seen: int = 0

    @property
    def previous_label(self) -> Optional[BreathState]:
        return None if self.previous_frame is None else self.previous_frame.label


def streaming_update(
    state: TrackerState, frame: LabeledFrame, min_gap_s: Optional[float] = None
) -> tuple[TrackerState, Optional[RespirationEstimate]]:
    """Feed one frame. Emits an estimate only when a transition was just recorded and N >= 2."""
    prev = state.previous_frame
    if prev is not None:
        try:
            validate_stream([prev, frame])
        except InvalidStreamError as exc:
            raise InvalidInputError(f"out-of-order frame: {exc}") from exc
    times = state.transition_times_s
    recorded = False
    if (
        prev is not None
        and prev.label is BreathState.EXHALATION
        and frame.label is BreathState.INHALATION
        and _accept(times, prev.timestamp_s, min_gap_s)
    ):
        times = times + (prev.timestamp_s,)
        recorded = True
    new_state = replace(state, previous_frame=frame, transition_times_s=times, frames_seen=state.frames_seen + 1)
    if recorded and len(times) >= 2:
        return new_state, estimate_rate(times)
    return new_state, None


def stream_estimates(stream: Sequence[LabeledFrame], min_gap_s: Optional[float] = None):
    """Replay ``stream`` through :func:`streaming_update`, yielding ``(frame, estimate)`` on each emission."""
    state = TrackerState()
    for frame in stream:
        state, est = streaming_update(state, frame, min_gap_s)
        if est is not None:
            yield frame, est
