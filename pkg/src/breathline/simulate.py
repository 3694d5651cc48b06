"""Synthetic breathing scenarios with exact ground truth.

A scenario is a periodic exhale/inhale timeline, a matching audio track
(band-limited noise, loud during exhalation) and matching 64x64 frames
(exhalation frames carry bright bubble disks).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.signal import oaconvolve

from .audio import BandpassSpec, bandpass_kernel, write_wav
from .core import (
    AudioTrack,
    BreathState,
    InvalidInputError,
    LabeledFrame,
    ParseError,
    seeded_rng,
    write_label_csv,
)
from .detector import Frame, write_pgm
from .tracker import detect_transitions

# Filtered noise RMS is amp / CREST so that window peaks land near amp.
CREST = 3.0
BACKGROUND_MEAN = 0.3
BACKGROUND_STD = 0.05
# one full default consistency window (2 * 6 + 1)
MIN_FRAMES = 13


class InvalidConfigError(InvalidInputError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    duration_s: float = 15.0
    fps: float = 29.94
    sample_rate_hz: int = 48000
    rate_bpm: float = 12.0
    exhalation_fraction: float = 0.56
    period_jitter_frac: float = 0.0
    exhale_amp: float = 0.05
    background_amp: float = 0.002
    bubble_brightness: float = 0.9
    bubbles_per_frame: tuple = (5, 15)
    frame_size: int = 64
    seed: int = 0
    label_lag_frames: int = 0

    def __post_init__(self):
        object.__setattr__(self, "bubbles_per_frame", tuple(int(v) for v in self.bubbles_per_frame))
        problems = []
        if not self.duration_s > 0:
            problems.append("duration_s must be positive")
        if not self.fps > 0:
            problems.append("fps must be positive")
        if self.duration_s > 0 and self.fps > 0 and math.floor(self.duration_s * self.fps) < MIN_FRAMES:
            problems.append(
                f"duration_s={self.duration_s} holds fewer than {MIN_FRAMES} frames at {self.fps} fps"
            )
        if not (isinstance(self.sample_rate_hz, int) and self.sample_rate_hz > 0):
            problems.append("sample_rate_hz must be a positive integer")
        if not self.rate_bpm > 0:
            problems.append("rate_bpm must be positive")
        if not 0 < self.exhalation_fraction < 1:
            problems.append("exhalation_fraction must be in (0, 1)")
        if not 0 <= self.period_jitter_frac < 1:
            problems.append("period_jitter_frac must be in [0, 1)")
        if not 0 <= self.background_amp < self.exhale_amp < 1:
            problems.append("need 0 <= background_amp < exhale_amp < 1")
        if not 0 < self.bubble_brightness < 1:
            problems.append("bubble_brightness must be in (0, 1)")
        lo, hi = self.bubbles_per_frame if len(self.bubbles_per_frame) == 2 else (-1, -1)
        if not 0 <= lo <= hi:
            problems.append("bubbles_per_frame must be a [min, max] pair with 0 <= min <= max")
        if self.frame_size < 8:
            problems.append("frame_size must be at least 8")
        if self.label_lag_frames < 0:
            problems.append("label_lag_frames must be >= 0")
        if problems:
            raise InvalidConfigError("; ".join(problems))

    @property
    def frame_count(self) -> int:
        return math.floor(self.duration_s * self.fps)

    @property
    def period_s(self) -> float:
        return 60.0 / self.rate_bpm

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bubbles_per_frame"] = list(self.bubbles_per_frame)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise InvalidConfigError(f"unknown config field(s): {', '.join(unknown)}")
        return cls(**d)


def load_config(path) -> ScenarioConfig:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc.msg})", exc.lineno) from exc
    if not isinstance(payload, dict):
        raise ParseError(f"{path}: config must be a JSON object")
    try:
        return ScenarioConfig.from_dict(payload)
    except TypeError as exc:
        raise InvalidConfigError(str(exc)) from exc


@dataclass(frozen=True, eq=False)
class Scenario:
    config: ScenarioConfig
    truth_labels: list
    truth_transition_times_s: list
    audio: AudioTrack
    frames: list = field(repr=False)
    exhalation_segments: list = field(default_factory=list, repr=False)


def exhalation_segments(config: ScenarioConfig, rng: Optional[np.random.Generator] = None) -> list[tuple[float, float]]:
    """``[start, end)`` of every exhalation: each cycle opens with exhalation_fraction of its period."""
    segments = []
    t = 0.0
    while t < config.duration_s:
        period = config.period_s
        if config.period_jitter_frac > 0:
            period *= 1.0 + rng.uniform(-config.period_jitter_frac, config.period_jitter_frac)
        segments.append((t, t + config.exhalation_fraction * period))
        t += period
    return segments


def _state_at(times: np.ndarray, segments) -> np.ndarray:
    starts = np.array([s for s, _ in segments])
    ends = np.array([e for _, e in segments])
    k = np.searchsorted(starts, times, side="right") - 1
    return (k >= 0) & (times < ends[np.clip(k, 0, None)])


def _render_frame(rng: np.random.Generator, config: ScenarioConfig, bubbles: bool) -> np.ndarray:
    n = config.frame_size
    px = np.clip(rng.normal(BACKGROUND_MEAN, BACKGROUND_STD, size=(n, n)), 0.0, 1.0)
    if bubbles:
        lo, hi = config.bubbles_per_frame
        yy, xx = np.mgrid[0:n, 0:n]
        for _ in range(int(rng.integers(lo, hi + 1))):
            r = rng.uniform(2.0, 6.0)
            cy, cx = rng.uniform(0, n, size=2)
            px[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = config.bubble_brightness
    return px


def generate(config: ScenarioConfig, render_frames: bool = True) -> Scenario:
    """Build a scenario. Independent child streams drive timing, audio and frames."""
    timing_rng, audio_rng, frame_rng = seeded_rng(config.seed).spawn(3)
    segments = exhalation_segments(config, timing_rng)

    n_frames = config.frame_count
    frame_times = np.arange(n_frames) / config.fps
    exhaling = _state_at(frame_times, segments)
    truth = [
        LabeledFrame(i, i / config.fps, BreathState(int(e))) for i, e in enumerate(exhaling)
    ]

    fs = config.sample_rate_hz
    n_samples = max(round(config.duration_s * fs), round(n_frames * fs / config.fps))
    sample_exhaling = _state_at(np.arange(n_samples) / fs, segments)
    envelope = np.where(sample_exhaling, config.exhale_amp, config.background_amp)
    h = bandpass_kernel(BandpassSpec(), fs)
    noise_gain = float(np.sqrt(np.sum(h * h)))
    noise = audio_rng.standard_normal(n_samples) * envelope / (CREST * noise_gain)
    samples = np.clip(oaconvolve(noise, h, mode="same"), -1.0, 1.0)
    audio = AudioTrack(samples, fs)

    frames = []
    if render_frames:
        visual = np.concatenate((np.zeros(config.label_lag_frames, dtype=bool), exhaling))[:n_frames]
        frames = [Frame(_render_frame(frame_rng, config, bool(v))) for v in visual]

    return Scenario(
        config=config,
        truth_labels=truth,
        truth_transition_times_s=detect_transitions(truth),
        audio=audio,
        frames=frames,
        exhalation_segments=segments,
    )


def inject_label_noise(labels, flip_prob: float, seed: int) -> list[LabeledFrame]:
    """Flip each label independently with probability ``flip_prob``."""
    if not 0.0 <= flip_prob <= 1.0:
        raise InvalidInputError(f"flip_prob must be in [0, 1], got {flip_prob}")
    flips = seeded_rng(seed).random(len(labels)) < flip_prob
    return [
        LabeledFrame(f.index, f.timestamp_s, BreathState(int(f.label) ^ int(flip)))
        for f, flip in zip(labels, flips)
    ]


def write_scenario(scenario: Scenario, out_dir) -> list[Path]:
    """Write audio.wav, frames/frame_NNNNN.pgm, truth.csv and transitions.json; return the paths."""
    out = Path(out_dir)
    frames_dir = out / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    paths = [out / "audio.wav", out / "truth.csv", out / "transitions.json"]
    write_wav(paths[0], scenario.audio)
    write_label_csv(paths[1], scenario.truth_labels)
    paths[2].write_text(
        json.dumps(
            {
                "rate_bpm": scenario.config.rate_bpm,
                "transition_times_s": scenario.truth_transition_times_s,
                "exhalation_segments_s": [list(s) for s in scenario.exhalation_segments],
            },
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    for i, frame in enumerate(scenario.frames):
        p = frames_dir / f"frame_{i:05d}.pgm"
        write_pgm(p, frame)
        paths.append(p)
    return paths
