"""MAE and capped wMAPE on grayscale sound maps, overall and split by LoS/NLoS.

All metrics are computed in grayscale units (0-255), which is what image
models emit. Building pixels are never evaluated.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import UndefinedMetricError, ValidationError
from .geometry import BUILDING, LOS, NLOS, visibility_mask

COLUMNS = ("mae", "wmape", "los_mae", "nlos_mae", "los_wmape", "nlos_wmape")
HEADERS = ("MAE", "wMAPE", "LoS MAE", "NLoS MAE", "LoS wMAPE", "NLoS wMAPE")


def _prepare(pred, truth, mask):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValidationError(f"shape mismatch: pred {pred.shape} vs truth {truth.shape}")
    if mask is None:
        mask = np.ones(truth.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != truth.shape:
        raise ValidationError(f"shape mismatch: mask {mask.shape} vs truth {truth.shape}")
    if not mask.any():
        raise UndefinedMetricError("mask selects no pixels")
    return pred[mask].astype(np.float64), truth[mask].astype(np.float64)


def abs_errors(pred, truth) -> np.ndarray:
    return np.abs(np.asarray(pred, dtype=np.float64) - np.asarray(truth, dtype=np.float64))


def pct_errors(pred, truth) -> np.ndarray:
    """Per-pixel relative error, denominator floored at 1 and capped at 1.

    Not symmetric in (pred, truth): overshooting a dark pixel costs up to
    the full 100 %.
    """
    truth = np.asarray(truth, dtype=np.float64)
    return np.minimum(abs_errors(pred, truth) / np.maximum(truth, 1.0), 1.0)


def mae(pred, truth, mask=None) -> float:
    p, t = _prepare(pred, truth, mask)
    return float(abs_errors(p, t).mean())


def wmape(pred, truth, mask=None) -> float:
    p, t = _prepare(pred, truth, mask)
    return float(100.0 * pct_errors(p, t).mean())


@dataclass(frozen=True)
class MetricsReport:
    mae: float
    wmape: float
    los_mae: Optional[float]
    nlos_mae: Optional[float]
    los_wmape: Optional[float]
    nlos_wmape: Optional[float]
    n_pixels: int
    n_los: int
    n_nlos: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def report_from_masks(pred, truth, los: np.ndarray, nlos: np.ndarray) -> MetricsReport:
    """Report over the disjoint pixel sets ``los`` and ``nlos``."""
    los = np.asarray(los, dtype=bool)
    nlos = np.asarray(nlos, dtype=bool)
    if np.any(los & nlos):
        raise ValidationError("LoS and NLoS masks overlap")
    every = los | nlos
    n_los, n_nlos = int(los.sum()), int(nlos.sum())

    def pair(mask, n):
        if n == 0:
            return None, None
        return mae(pred, truth, mask), wmape(pred, truth, mask)

    overall = pair(every, n_los + n_nlos)
    if overall[0] is None:
        raise UndefinedMetricError("no evaluable pixels")
    los_m = pair(los, n_los)
    nlos_m = pair(nlos, n_nlos)
    return MetricsReport(overall[0], overall[1], los_m[0], nlos_m[0], los_m[1], nlos_m[1],
                         n_los + n_nlos, n_los, n_nlos)


def evaluate(pred, truth, scene, source=None) -> MetricsReport:
    """Compare two sound maps (``SoundMap`` or 2D gray arrays).

    LoS/NLoS is decided per pixel center by ray casting from ``source``
    (default: the scene source). Pixels inside buildings, by the scene or
    by the truth's building mask, are excluded.
    """
    pg = getattr(pred, "gray", pred)
    tg = getattr(truth, "gray", truth)
    if np.shape(pg) != np.shape(tg):
        raise ValidationError(f"resolution mismatch: pred {np.shape(pg)} vs truth {np.shape(tg)}")
    res = np.shape(tg)[0]
    vis = visibility_mask(scene, scene.source if source is None else source, res)
    excluded = vis == BUILDING
    truth_mask = getattr(truth, "building_mask", None)
    if truth_mask is not None:
        excluded |= truth_mask
    return report_from_masks(pg, tg, (vis == LOS) & ~excluded, (vis == NLOS) & ~excluded)


def aggregate(reports) -> dict:
    """Mean of each metric over reports; absent NLoS/LoS entries are skipped."""
    reports = list(reports)
    out = {"n_samples": len(reports)}
    for col in COLUMNS:
        vals = [getattr(r, col) for r in reports if getattr(r, col) is not None]
        out[col] = math.fsum(vals) / len(vals) if vals else None
    return out


def _fmt(v) -> str:
    return "-" if v is None else f"{v:.2f}"


def format_table(rows, runtime: Optional[dict] = None) -> str:
    """Aligned text table; ``rows`` maps a label (e.g. task) to an aggregate dict.

    ``runtime`` optionally maps the same labels to ``(mean, std)`` seconds.
    """
    head = ["Task", *HEADERS] + (["Runtime per Sample (s)"] if runtime else [])
    body = []
    for label, agg in rows.items():
        line = [str(label), *(_fmt(agg.get(c)) for c in COLUMNS)]
        if runtime:
            rt = runtime.get(label)
            line.append("-" if rt is None else f"{rt[0]:.4f} ± {rt[1]:.4f}")
        body.append(line)
    widths = [max(len(r[i]) for r in [head, *body]) for i in range(len(head))]
    fmt = lambda r: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))  # noqa: E731
    sep = "  ".join("-" * w for w in widths)
    return "\n".join([fmt(head), sep, *map(fmt, body)]) + "\n"
