"""Classification statistics, rater reliability and rate-error arithmetic."""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import BreathlineError, InvalidInputError, ParseError, RespirationEstimate


class DegenerateInputError(BreathlineError):
    pass


class UndefinedAlphaError(BreathlineError):
    pass


def _as_labels(seq) -> np.ndarray:
    arr = np.asarray([int(getattr(v, "label", v)) for v in seq], dtype=np.int64)
    if arr.size and not set(np.unique(arr)) <= {0, 1}:
        raise InvalidInputError("labels must be 0 or 1")
    return arr


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def as_array(self) -> np.ndarray:
        """Rows = truth (inhalation, exhalation), columns = prediction."""
        return np.array([[self.tn, self.fp], [self.fn, self.tp]])


def confusion(pred, truth) -> ConfusionMatrix:
    """Counts with exhalation as the positive class. Accepts labels or LabeledFrames."""
    p, t = _as_labels(pred), _as_labels(truth)
    if p.size != t.size:
        raise InvalidInputError(f"prediction length {p.size} != truth length {t.size}")
    return ConfusionMatrix(
        tp=int(np.sum((p == 1) & (t == 1))),
        fp=int(np.sum((p == 1) & (t == 0))),
        tn=int(np.sum((p == 0) & (t == 0))),
        fn=int(np.sum((p == 0) & (t == 1))),
    )


def _safe_div(a: float, b: float) -> float:
    return a / b if b else 0.0


def weighted_report(pred, truth) -> dict:
    """Support-weighted precision/recall/F1 over both classes, plus accuracy.

    Undefined per-class ratios (no predictions of a class) count as 0.
    """
    cm = confusion(pred, truth)
    support = {1: cm.tp + cm.fn, 0: cm.tn + cm.fp}
    if min(support.values()) == 0:
        raise DegenerateInputError("truth contains a single class; weighted statistics are undefined")
    per_class = {}
    for cls, (tp, fp, fn) in {1: (cm.tp, cm.fp, cm.fn), 0: (cm.tn, cm.fn, cm.fp)}.items():
        precision = _safe_div(tp, tp + fp)
        recall = _safe_div(tp, tp + fn)
        f1 = _safe_div(2 * precision * recall, precision + recall)
        per_class[cls] = (precision, recall, f1)
    total = cm.total
    weighted = [
        sum(per_class[c][k] * support[c] for c in (0, 1)) / total for k in range(3)
    ]
    return {
        "precision": weighted[0],
        "recall": weighted[1],
        "f1": weighted[2],
        "accuracy": (cm.tp + cm.tn) / total,
    }


# -- rater panels -------------------------------------------------------------


def as_rater_matrix(ratings) -> np.ndarray:
    """(raters, items) float array; ``None``/NaN mark missing ratings."""
    arr = np.array(
        [[np.nan if v is None else float(v) for v in row] for row in ratings], dtype=np.float64
    )
    if arr.ndim != 2:
        raise InvalidInputError("ratings must be a rectangular raters x items grid")
    return arr


def percent_agreement(ratings) -> list[float]:
    """Per item, the share of raters whose (integer-rounded) rating equals the modal one."""
    arr = as_rater_matrix(ratings)
    out = []
    for j in range(arr.shape[1]):
        col = arr[:, j]
        col = col[~np.isnan(col)]
        if col.size == 0:
            raise InvalidInputError(f"item {j} has no ratings")
        counts = Counter(np.rint(col).astype(np.int64).tolist())
        out.append(max(counts.values()) / col.size)
    return out


def krippendorff_alpha(ratings, metric: str = "interval") -> float:
    """Krippendorff's alpha via the coincidence matrix, interval (squared-difference) metric."""
    if metric != "interval":
        raise InvalidInputError(f"unsupported metric {metric!r}; only 'interval' is implemented")
    arr = as_rater_matrix(ratings)
    units = [col[~np.isnan(col)] for col in arr.T]
    units = [u for u in units if u.size >= 2]
    if sum(u.size for u in units) < 2:
        raise UndefinedAlphaError("fewer than two pairable ratings")

    values = np.unique(np.concatenate(units))
    index = {v: k for k, v in enumerate(values)}
    coincidence = np.zeros((values.size, values.size))
    for u in units:
        counts = np.zeros(values.size)
        for v in u:
            counts[index[v]] += 1
        pairs = np.outer(counts, counts) - np.diag(counts)
        coincidence += pairs / (u.size - 1)

    n_c = coincidence.sum(axis=1)
    n = n_c.sum()
    delta2 = np.subtract.outer(values, values) ** 2
    d_observed = float(np.sum(coincidence * delta2)) / n
    d_expected = float(np.sum(np.outer(n_c, n_c) * delta2)) / (n * (n - 1))
    if d_expected == 0:
        raise UndefinedAlphaError("all pairable ratings are identical; expected disagreement is zero")
    return 1.0 - d_observed / d_expected


def read_ratings_csv(path) -> np.ndarray:
    """Rows = raters, columns = items, blank = missing.

    A non-numeric first row is taken as item names and a non-numeric first
    column as rater ids; both are dropped.
    """
    rows = [r for r in csv.reader(io.StringIO(Path(path).read_text(encoding="utf-8"))) if r]
    if not rows:
        raise ParseError(f"{path}: empty ratings file")

    def numeric(cell: str) -> bool:
        try:
            float(cell)
            return True
        except ValueError:
            return cell.strip() == ""

    start_row = 0 if all(numeric(c) for c in rows[0]) else 1
    body = rows[start_row:]
    start_col = 0 if all(numeric(r[0]) for r in body) else 1
    width = None
    grid = []
    for lineno, row in enumerate(body, start=start_row + 1):
        cells = row[start_col:]
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise ParseError(f"expected {width} ratings, got {len(cells)}", lineno)
        try:
            grid.append([None if c.strip() == "" else float(c) for c in cells])
        except ValueError as exc:
            raise ParseError(f"non-numeric rating ({exc})", lineno) from exc
    return as_rater_matrix(grid)


# -- rate error -----------------------------------------------------------------


@dataclass(frozen=True)
class ErrorReport:
    error_pct: float
    sigma_pct: float

    def display(self) -> str:
        return f"{self.error_pct:.1f}±{self.sigma_pct:.1f}%"

    def to_dict(self) -> dict:
        return asdict(self)


def relative_error(
    pred: RespirationEstimate, obs_mean: float, obs_std: float, denominator: str = "prediction"
) -> Optional[ErrorReport]:
    """Absolute relative error of a predicted rate against the observers' mean.

    ``error = |m - p| / p`` (``denominator="observer"`` divides by ``m`` instead);
    ``sigma`` is the first-order propagated uncertainty
    ``sqrt((sigma_m / p)**2 + (m * sigma_p / p**2)**2)``. Both are in percent.
    Returns ``None`` for a no-estimate prediction.
    """
    if not pred.ok:
        return None
    p, sp = pred.rate_bpm, pred.std_bpm
    if not p > 0:
        raise InvalidInputError("predicted rate must be positive")
    if obs_std < 0 or sp < 0:
        raise InvalidInputError("standard deviations must be nonnegative")
    m = obs_mean
    if denominator == "prediction":
        err = abs(m - p) / p
    elif denominator == "observer":
        if not m > 0:
            raise InvalidInputError("observer mean must be positive")
        err = abs(m - p) / m
    else:
        raise InvalidInputError(f"unknown denominator {denominator!r}")
    sigma = math.hypot(obs_std / p, m * sp / (p * p))
    return ErrorReport(100.0 * err, 100.0 * sigma)


def estimate_from_table(rate: Optional[float], std: Optional[float]) -> RespirationEstimate:
    """Wrap a reported ``rate ± std`` as an estimate; a std of 0 stands for one cycle."""
    if rate is None:
        return RespirationEstimate(None, None, 0, ())
    cycles = 1 if not std else 2
    return RespirationEstimate(float(rate), float(std or 0.0), cycles, ())


def read_error_rows(path) -> list[dict]:
    """CSV with columns ``item,pred_rate,pred_std,obs_mean,obs_std`` (blank prediction = dash)."""
    text = Path(path).read_text(encoding="utf-8")
    reader = csv.DictReader(io.StringIO(text))
    required = {"item", "pred_rate", "pred_std", "obs_mean", "obs_std"}
    if reader.fieldnames is None or not required <= set(reader.fieldnames):
        raise ParseError(f"{path}: header must include {', '.join(sorted(required))}", 1)
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        try:
            pr = rec["pred_rate"].strip()
            rows.append(
                {
                    "item": rec["item"],
                    "pred_rate": float(pr) if pr not in ("", "-") else None,
                    "pred_std": float(rec["pred_std"] or 0.0) if pr not in ("", "-") else None,
                    "obs_mean": float(rec["obs_mean"]),
                    "obs_std": float(rec["obs_std"] or 0.0),
                    "denominator": (rec.get("denominator") or "prediction").strip(),
                }
            )
        except (ValueError, AttributeError) as exc:
            raise ParseError(f"bad numeric field ({exc})", lineno) from exc
    return rows


def error_rows(rows: Sequence[dict]) -> list[dict]:
    out = []
    for r in rows:
        est = estimate_from_table(r["pred_rate"], r["pred_std"])
        rep = relative_error(est, r["obs_mean"], r["obs_std"], r.get("denominator", "prediction"))
        out.append(
            {
                "item": r["item"],
                "predicted_rr": est.display(),
                "error_pct": None if rep is None else rep.error_pct,
                "sigma_pct": None if rep is None else rep.sigma_pct,
                "error_with_observer": "-" if rep is None else rep.display(),
            }
        )
    return out
