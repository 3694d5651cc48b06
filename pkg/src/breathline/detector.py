"""Frame-level breath-state detectors.

Any binary classifier can drive the rate tracker. This module ships a linear
max-margin model trained by subgradient descent on frame features, a fixed
brightness heuristic, and a loader for predictions produced elsewhere.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .core import (
    BreathState,
    BreathlineError,
    InvalidInputError,
    LabeledFrame,
    ParseError,
    seeded_rng,
    validate_stream,
    InvalidStreamError,
)

HIST_BINS = 16
EDGE_THRESHOLD = 0.1
TOP_DECILE = 0.9
FEATURE_NAMES = (
    ["mean", "variance"]
    + [f"hist_{i:02d}" for i in range(HIST_BINS)]
    + ["edge_density", "top_decile_fraction", "row_variance_mean", "col_variance_mean"]
)
N_FEATURES = len(FEATURE_NAMES)


class InvalidFrameError(BreathlineError):
    pass


class DegenerateDatasetError(BreathlineError):
    pass


@dataclass(frozen=True, eq=False)
class Frame:
    """Grayscale image with pixel values in [0, 1], stored as a read-only (height, width) array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64, copy=True)
        if px.ndim != 2 or px.size == 0:
            raise InvalidFrameError(f"frame must be a non-empty 2-D array, got shape {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise InvalidFrameError("pixel values must lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __eq__(self, other):
        return isinstance(other, Frame) and np.array_equal(self.pixels, other.pixels)


def _as_pixels(frame) -> np.ndarray:
    if isinstance(frame, Frame):
        return frame.pixels
    return Frame(frame).pixels


def extract_features(frame) -> np.ndarray:
    """22-value encoding: mean, variance, 16-bin histogram, edge density,
    fraction of pixels >= 0.9, mean row variance, mean column variance."""
    px = _as_pixels(frame)
    hist, _ = np.histogram(px, bins=HIST_BINS, range=(0.0, 1.0))
    hist = hist / px.size
    gy, gx = np.gradient(px) if min(px.shape) > 1 else (np.zeros_like(px), np.zeros_like(px))
    edges = np.hypot(gx, gy) > EDGE_THRESHOLD
    return np.concatenate(
        (
            [px.mean(), px.var()],
            hist,
            [
                edges.mean(),
                np.mean(px >= TOP_DECILE),
                px.var(axis=1).mean(),
                px.var(axis=0).mean(),
            ],
        )
    )


def extract_feature_matrix(frames) -> np.ndarray:
    return np.vstack([extract_features(f) for f in frames]) if len(frames) else np.empty((0, N_FEATURES))


def brightness_baseline(frame, cutoff: float = 0.6, fraction: float = 0.02) -> BreathState:
    """Exhalation when more than ``fraction`` of pixels are brighter than ``cutoff``."""
    px = _as_pixels(frame)
    return BreathState(int(np.mean(px > cutoff) > fraction))


# -- linear max-margin model -------------------------------------------------


@dataclass(frozen=True, eq=False)
class LinearModel:
    weights: np.ndarray
    bias: float
    feature_means: np.ndarray
    feature_stds: np.ndarray
    trained_epochs: int = 0
    lam: float = 1e-4
    learning_rate: float = 1e-3
    seed: Optional[int] = None
    loss_history: tuple = field(default_factory=tuple)

    def __post_init__(self):
        for name in ("weights", "feature_means", "feature_stds"):
            arr = np.array(getattr(self, name), dtype=np.float64, copy=True).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.weights.size == self.feature_means.size == self.feature_stds.size):
            raise InvalidInputError("weights and standardization vectors differ in length")
        if not np.all(np.isfinite(self.weights)) or not math.isfinite(self.bias):
            raise InvalidInputError("model parameters must be finite")

    @property
    def n_features(self) -> int:
        return self.weights.size

    def standardize(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.feature_means) / self.feature_stds

    def decision_function(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise InvalidInputError(f"expected {self.n_features} features, got {X.shape[1]}")
        return self.standardize(X) @ self.weights + self.bias

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "feature_means": self.feature_means.tolist(),
            "feature_stds": self.feature_stds.tolist(),
            "hyperparameters": {
                "epochs": self.trained_epochs,
                "learning_rate": self.learning_rate,
                "lambda": self.lam,
                "seed": self.seed,
            },
            "loss_history": list(self.loss_history),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        try:
            hp = d.get("hyperparameters", {})
            return cls(
                weights=d["weights"],
                bias=float(d["bias"]),
                feature_means=d["feature_means"],
                feature_stds=d["feature_stds"],
                trained_epochs=int(hp.get("epochs", 0)),
                lam=float(hp.get("lambda", 1e-4)),
                learning_rate=float(hp.get("learning_rate", 1e-3)),
                seed=hp.get("seed"),
                loss_history=tuple(d.get("loss_history", ())),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"corrupt model description: {exc}") from exc


def save_model(path, model: LinearModel) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_model(path) -> LinearModel:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc.msg})", exc.lineno) from exc
    if not isinstance(payload, dict):
        raise ParseError(f"{path}: model file must hold a JSON object")
    return LinearModel.from_dict(payload)


def _objective(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, lam: float) -> float:
    margins = y * (X @ w + b)
    return float(np.mean(np.maximum(0.0, 1.0 - margins)) + 0.5 * lam * (w @ w))


def train_linear(
    X,
    y,
    epochs: int = 50,
    learning_rate: float = 0.001,
    lam: float = 1e-4,
    seed: int = 0,
    standardize: bool = True,
) -> LinearModel:
    """Fit a linear SVM by epoch-shuffled subgradient descent on hinge loss + L2.

    ``y`` holds 0/1 (or :class:`BreathState`) labels. Features are standardized with
    the training mean/std (zero-variance columns get std 1). The step size is fixed.
    An epoch that would raise the full-set objective above the best seen so far is
    rolled back, so the recorded per-epoch objective never increases.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray([int(v) for v in y], dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidInputError("training set must be a non-empty 2-D feature matrix")
    if X.shape[0] != labels.size:
        raise InvalidInputError(f"{X.shape[0]} feature rows but {labels.size} labels")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("features must be finite")
    if not set(np.unique(labels)) <= {0, 1}:
        raise InvalidInputError("labels must be 0 or 1")
    if np.unique(labels).size < 2:
        raise DegenerateDatasetError("training set contains a single class")

    if standardize:
        means = X.mean(axis=0)
        stds = X.std(axis=0)
        stds = np.where(stds > 0, stds, 1.0)
    else:
        means = np.zeros(X.shape[1])
        stds = np.ones(X.shape[1])
    Z = (X - means) / stds
    ys = np.where(labels == 1, 1.0, -1.0)

    rng = seeded_rng(seed)
    w = np.zeros(X.shape[1])
    b = 0.0
    best = _objective(w, b, Z, ys, lam)
    history = []
    for _ in range(epochs):
        w_try, b_try = w.copy(), b
        for i in rng.permutation(Z.shape[0]):
            zi, yi = Z[i], ys[i]
            hinge_active = yi * (zi @ w_try + b_try) < 1.0
            w_try *= 1.0 - learning_rate * lam
            if hinge_active:
                w_try += learning_rate * yi * zi
                b_try += learning_rate * yi
        loss = _objective(w_try, b_try, Z, ys, lam)
        if loss <= best:
            w, b, best = w_try, b_try, loss
        history.append(best)

    return LinearModel(
        weights=w,
        bias=b,
        feature_means=means,
        feature_stds=stds,
        trained_epochs=epochs,
        lam=lam,
        learning_rate=learning_rate,
        seed=seed,
        loss_history=tuple(history),
    )


def predict(model: LinearModel, features) -> tuple[BreathState, float]:
    """Label and raw score for one feature vector. A score of exactly 0 is inhalation."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 1 or features.size != model.n_features:
        raise InvalidInputError(f"expected a {model.n_features}-value feature vector, got shape {features.shape}")
    score = float(model.decision_function(features)[0])
    return BreathState(int(score > 0)), score


# -- sklearn-facing estimators ---------------------------------------------


class FrameFeatureExtractor(BaseEstimator, TransformerMixin):
    """Stateless transformer: stack of (h, w) frames -> (n, 22) feature matrix."""

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        if isinstance(X, np.ndarray) and X.ndim == 2:
            X = X[np.newaxis]
        return extract_feature_matrix(list(X))

    def get_feature_names_out(self, input_features=None):
        return np.asarray(FEATURE_NAMES, dtype=object)


class LinearSVMDetector(BaseEstimator, ClassifierMixin):
    """Linear SVM over feature vectors with 0/1 targets (1 = exhalation)."""

    def __init__(self, epochs=50, learning_rate=0.001, lam=1e-4, seed=0, standardize=True):
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.lam = lam
        self.seed = seed
        self.standardize = standardize

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.model_ = train_linear(
            X, y, self.epochs, self.learning_rate, self.lam, self.seed, self.standardize
        )
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return self.model_.decision_function(check_array(X))

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(np.int64)


class BrightnessBaselineDetector(BaseEstimator, ClassifierMixin):
    """Model-free detector on raw frames; ``fit`` only records the classes."""

    def __init__(self, cutoff=0.6, fraction=0.02):
        self.cutoff = cutoff
        self.fraction = fraction

    def fit(self, X=None, y=None):
        if not (0 < self.cutoff < 1 and 0 < self.fraction < 1):
            raise InvalidInputError("cutoff and fraction must lie in (0, 1)")
        self.classes_ = np.array([0, 1])
        return self

    def predict(self, X):
        if isinstance(X, np.ndarray) and X.ndim == 2:
            X = X[np.newaxis]
        return np.array([int(brightness_baseline(f, self.cutoff, self.fraction)) for f in X], dtype=np.int64)


# -- file formats ---------------------------------------------------------------


def write_pgm(path, frame) -> None:
    px = _as_pixels(frame)
    data = np.round(px * 255.0).astype(np.uint8)
    header = f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def read_pgm(path) -> Frame:
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    # magic, width, height, maxval; '#' comments allowed between tokens
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise ParseError(f"{path}: not a binary PGM (P5) file")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ParseError(f"{path}: bad PGM header") from exc
    if maxval != 255:
        raise ParseError(f"{path}: only maxval 255 is supported, got {maxval}")
    body = raw[pos : pos + width * height]
    if len(body) != width * height:
        raise ParseError(f"{path}: expected {width * height} pixel bytes, got {len(body)}")
    return Frame(np.frombuffer(body, dtype=np.uint8).reshape(height, width) / 255.0)


def render_predictions_jsonl(stream: Sequence[LabeledFrame], scores: Optional[Sequence[float]] = None) -> str:
    lines = []
    for k, f in enumerate(stream):
        rec = {"index": f.index, "timestamp_s": f.timestamp_s, "label": int(f.label)}
        if scores is not None:
            rec["score"] = float(scores[k])
        lines.append(json.dumps(rec))
    return "".join(line + "\n" for line in lines)


def parse_predictions_jsonl(text: str) -> list[LabeledFrame]:
    stream: list[LabeledFrame] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", lineno) from exc
        if not isinstance(rec, dict):
            raise ParseError("expected a JSON object", lineno)
        try:
            index, ts, label = rec["index"], rec["timestamp_s"], rec["label"]
        except KeyError as exc:
            raise ParseError(f"missing field {exc.args[0]!r}", lineno) from exc
        if isinstance(index, bool) or not isinstance(index, int):
            raise ParseError(f"index must be an integer, got {index!r}", lineno)
        if isinstance(ts, bool) or not isinstance(ts, (int, float)):
            raise ParseError(f"timestamp_s must be a number, got {ts!r}", lineno)
        if label not in (0, 1) or isinstance(label, bool):
            raise ParseError(f"label must be 0 or 1, got {label!r}", lineno)
        if "score" in rec and (isinstance(rec["score"], bool) or not isinstance(rec["score"], (int, float))):
            raise ParseError(f"score must be a number, got {rec['score']!r}", lineno)
        try:
            frame = LabeledFrame(index, float(ts), BreathState(label))
            if stream:
                validate_stream([stream[-1], frame])
        except (InvalidInputError, InvalidStreamError) as exc:
            raise ParseError(str(exc), lineno) from exc
        stream.append(frame)
    return stream


def load_external_predictions(path) -> list[LabeledFrame]:
    return parse_predictions_jsonl(Path(path).read_text(encoding="utf-8"))


def write_predictions_jsonl(path, stream, scores=None) -> None:
    Path(path).write_text(render_predictions_jsonl(stream, scores), encoding="utf-8", newline="\n")
