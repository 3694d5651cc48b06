"""Audio-driven fuzzy labeling of breath states.

Pipeline: bandpass the track, cut it into one window per video frame, mark a
window as exhalation when its amplitude statistic exceeds a threshold, then
smooth the label sequence with a nearest-neighbour majority vote.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal
from scipy.io import wavfile
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from .core import (
    AudioTrack,
    BreathState,
    BreathlineError,
    InvalidInputError,
    InvalidSpecError,
    LabeledFrame,
    ParseError,
    frames_from_labels,
)

THRESHOLD_PRESETS = (0.009, 0.01, 0.0125)


class InsufficientAudioError(BreathlineError):
    def __init__(self, frame: int, needed: int, available: int):
        self.frame = frame
        super().__init__(
            f"audio too short: frame {frame} needs samples up to {needed}, track has {available}"
        )


class InvalidWindowError(BreathlineError):
    pass


class Statistic(str, enum.Enum):
    PEAK_ABS = "peak"
    RMS = "rms"


@dataclass(frozen=True)
class BandpassSpec:
    low_hz: float = 325.0
    high_hz: float = 600.0
    # 513 taps cannot hold -1 dB at low+25 Hz and -40 dB at low/2 simultaneously
    taps: int = 2049

    def validate(self, sample_rate_hz: float) -> None:
        if not 0 < self.low_hz < self.high_hz < sample_rate_hz / 2:
            raise InvalidSpecError(
                f"band edges must satisfy 0 < low < high < Nyquist ({sample_rate_hz / 2:g} Hz), "
                f"got {self.low_hz:g}-{self.high_hz:g} Hz"
            )
        if self.taps <= 0 or self.taps % 2 == 0:
            raise InvalidSpecError(f"taps must be odd and positive, got {self.taps}")


NARROW_BAND = BandpassSpec(low_hz=400.0, high_hz=600.0)


@dataclass(frozen=True)
class ThresholdSpec:
    threshold: float = 0.01
    statistic: Statistic = Statistic.PEAK_ABS

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise InvalidSpecError(f"threshold must be in (0, 1), got {self.threshold}")
        object.__setattr__(self, "statistic", Statistic(self.statistic))


@dataclass(frozen=True)
class ConsistencySpec:
    delta: int = 6

    def __post_init__(self):
        if self.delta < 0:
            raise InvalidSpecError(f"delta must be >= 0, got {self.delta}")


def bandpass_kernel(spec: BandpassSpec, sample_rate_hz: float) -> np.ndarray:
    """Hamming-windowed sinc bandpass, scaled to unit peak gain inside the band."""
    spec.validate(sample_rate_hz)
    h = signal.firwin(
        spec.taps, [spec.low_hz, spec.high_hz], pass_zero=False, window="hamming", scale=False, fs=sample_rate_hz
    )
    grid = np.arange(np.ceil(spec.low_hz), np.floor(spec.high_hz) + 1.0)
    return h / np.max(kernel_response(h, grid, sample_rate_hz))


def kernel_response(h: np.ndarray, freqs_hz, sample_rate_hz: float) -> np.ndarray:
    """|H(f)| of an FIR kernel by direct evaluation of its DTFT."""
    freqs_hz = np.atleast_1d(np.asarray(freqs_hz, dtype=float))
    _, resp = signal.freqz(h, worN=freqs_hz, fs=sample_rate_hz)
    return np.abs(resp)


def bandpass_filter(track: AudioTrack, spec: BandpassSpec = BandpassSpec()) -> AudioTrack:
    """Zero-phase-aligned FIR bandpass. Output has the input's length; edges are zero padded."""
    h = bandpass_kernel(spec, track.sample_rate_hz)
    if len(track) == 0:
        return track
    # 'same' mode removes the (taps-1)/2 group delay
    out = signal.oaconvolve(track.samples, h, mode="same")
    return AudioTrack(np.clip(out, -1.0, 1.0), track.sample_rate_hz)


def frame_windows(track: AudioTrack, fps: float, frame_count: int) -> list[range]:
    """Sample ranges ``[round(i*fs/fps), round((i+1)*fs/fps))`` for each frame."""
    if not fps > 0:
        raise InvalidInputError("fps must be positive")
    if frame_count <= 0:
        raise InvalidInputError("frame_count must be positive")
    fs = track.sample_rate_hz
    bounds = [round(i * fs / fps) for i in range(frame_count + 1)]
    if bounds[-1] > len(track):
        first_bad = next(i for i in range(frame_count) if bounds[i + 1] > len(track))
        raise InsufficientAudioError(first_bad, bounds[first_bad + 1], len(track))
    return [range(a, b) for a, b in zip(bounds, bounds[1:])]


def window_statistic(samples: np.ndarray, statistic: Statistic) -> float:
    if samples.size == 0:
        raise InvalidWindowError("empty window")
    if statistic is Statistic.RMS:
        return float(np.sqrt(np.mean(np.square(samples))))
    return float(np.max(np.abs(samples)))


def threshold_classify(
    track: AudioTrack, windows: Sequence[range], spec: ThresholdSpec = ThresholdSpec()
) -> list[BreathState]:
    labels = []
    for w in windows:
        if w.start < 0 or w.stop > len(track):
            raise InvalidWindowError(f"window [{w.start}, {w.stop}) outside track of {len(track)} samples")
        stat = window_statistic(track.samples[w.start : w.stop], spec.statistic)
        labels.append(BreathState.EXHALATION if stat > spec.threshold else BreathState.INHALATION)
    return labels


def nn_consistency(labels: Sequence, spec: ConsistencySpec = ConsistencySpec()) -> list[BreathState]:
    """Majority vote over ``[i - delta, i + delta]``, truncated at the ends; ties go to exhalation."""
    y = np.asarray([int(v) for v in labels], dtype=np.int64)
    if spec.delta == 0 or y.size == 0:
        return [BreathState(int(v)) for v in y]
    n = y.size
    csum = np.concatenate(([0], np.cumsum(y)))
    idx = np.arange(n)
    lo = np.maximum(0, idx - spec.delta)
    hi = np.minimum(n - 1, idx + spec.delta) + 1
    ones = csum[hi] - csum[lo]
    # mean >= 0.5 without floating division
    out = 2 * ones >= hi - lo
    return [BreathState(int(v)) for v in out]


def label_audio(
    track: AudioTrack,
    fps: float,
    frame_count: int,
    bp: BandpassSpec = BandpassSpec(),
    th: ThresholdSpec = ThresholdSpec(),
    cs: ConsistencySpec = ConsistencySpec(),
) -> list[LabeledFrame]:
    filtered = bandpass_filter(track, bp)
    windows = frame_windows(filtered, fps, frame_count)
    raw = threshold_classify(filtered, windows, th)
    return frames_from_labels(nn_consistency(raw, cs), fps)


class AudioBreathLabeler(BaseEstimator, TransformerMixin):
    """Transformer wrapping :func:`label_audio`.

    ``transform`` takes a 1-D sample array (or an :class:`AudioTrack`) and returns
    one 0/1 label per frame. ``frame_count=None`` labels every frame the audio
    fully covers.
    """

    def __init__(
        self,
        sample_rate_hz=48000,
        fps=29.94,
        frame_count=None,
        low_hz=325.0,
        high_hz=600.0,
        taps=2049,
        threshold=0.01,
        statistic="peak",
        delta=6,
    ):
        self.sample_rate_hz = sample_rate_hz
        self.fps = fps
        self.frame_count = frame_count
        self.low_hz = low_hz
        self.high_hz = high_hz
        self.taps = taps
        self.threshold = threshold
        self.statistic = statistic
        self.delta = delta

    def fit(self, X=None, y=None):
        BandpassSpec(self.low_hz, self.high_hz, self.taps).validate(self.sample_rate_hz)
        ThresholdSpec(self.threshold, self.statistic)
        ConsistencySpec(self.delta)
        return self

    def _track(self, X) -> AudioTrack:
        if isinstance(X, AudioTrack):
            return X
        samples = check_array(np.asarray(X, dtype=float).reshape(1, -1), ensure_2d=True).ravel()
        return AudioTrack(samples, self.sample_rate_hz)

    def transform(self, X):
        track = self._track(X)
        count = self.frame_count
        if count is None:
            count = int(len(track) * self.fps / track.sample_rate_hz)
            while count > 0 and round(count * track.sample_rate_hz / self.fps) > len(track):
                count -= 1
        frames = label_audio(
            track,
            self.fps,
            count,
            BandpassSpec(self.low_hz, self.high_hz, self.taps),
            ThresholdSpec(self.threshold, self.statistic),
            ConsistencySpec(self.delta),
        )
        return np.array([int(f.label) for f in frames], dtype=np.int8)


# -- WAV I/O -------------------------------------------------------------------


def read_wav(path) -> AudioTrack:
    """Read a mono PCM16 or float32 WAV into [-1, 1]."""
    try:
        rate, data = wavfile.read(Path(path))
    except (ValueError, EOFError) as exc:
        raise ParseError(f"{path}: not a supported WAV file ({exc})") from exc
    if data.ndim != 1:
        raise ParseError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
        if samples.size and np.max(np.abs(samples)) > 1.0:
            raise ParseError(f"{path}: float samples outside [-1, 1]")
    else:
        raise ParseError(f"{path}: unsupported sample encoding {data.dtype}; use PCM16 or float32")
    return AudioTrack(samples, int(rate))


def write_wav(path, track: AudioTrack, encoding: str = "float32") -> None:
    if encoding == "float32":
        data = track.samples.astype(np.float32)
    elif encoding == "pcm16":
        data = np.clip(np.round(track.samples * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    wavfile.write(Path(path), track.sample_rate_hz, data)
