"""Empirical L^q spectra and box-counting dimensions from function traces"""

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import logsumexp
from scipy.stats import linregress

from .cascade import FunctionTrace
from .errors import DegenerateError, OutOfRangeError
from .parallel import parallel_map

R2_WARNING = 0.9
MIN_LEVELS = 3
BOX_TARGETS = ("graph", "range", "projection", "levelset")


@dataclass(frozen=True)
class ScalingFit:
    """OLS fit of a per-level statistic against the level over a window"""
    scales: np.ndarray
    statistics: np.ndarray
    slope: float
    intercept: float
    r2: float
    window: Tuple[int, int]
    stderr: float = 0.0
    low_confidence: bool = False


def default_window(depth: int) -> Tuple[int, int]:
    return (min(4, max(depth - 2, 0)), max(depth - 2, 0))


def _ols(x: np.ndarray, y: np.ndarray) -> Tuple[float, float, float, float]:
    """slope, intercept, r2, slope stderr"""
    fit = linregress(x, y)
    residual = y - (fit.slope * x + fit.intercept)
    ss_res = float(np.sum(residual ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot > 0.0:
        r2 = 1.0 - ss_res / ss_tot
    else:
        r2 = 1.0 if ss_res <= 1e-24 else 0.0
    return float(fit.slope), float(fit.intercept), min(max(r2, 0.0), 1.0), float(fit.stderr)


def _windowed_fit(levels: np.ndarray, log_stat: np.ndarray, window: Tuple[int, int],
                  b: int, x_sign: float, what: str) -> ScalingFit:
    j_min, j_max = window
    usable = (levels >= j_min) & (levels <= j_max) & np.isfinite(log_stat)
    if usable.sum() < MIN_LEVELS:
        raise DegenerateError(
            f"{what}: only {int(usable.sum())} usable levels in window {j_min}..{j_max}")

    j = levels[usable].astype(float)
    slope, intercept, r2, stderr = _ols(x_sign * j, log_stat[usable])
    low = r2 < R2_WARNING
    if low:
        print(f"⚠️ Warning: {what} fit has r2={r2:.3f} < {R2_WARNING} over levels {j_min}..{j_max}")
    return ScalingFit(
        scales=float(b) ** -j,
        statistics=log_stat[usable],
        slope=slope,
        intercept=intercept,
        r2=r2,
        window=(int(j_min), int(j_max)),
        stderr=stderr,
        low_confidence=low,
    )


def fit_dimension(counts: Union[Sequence[float], Mapping[int, float]],
                  window: Tuple[int, int], b: int = 2) -> ScalingFit:
    """Slope of log_b N_j against j; counts indexed by level j"""
    if isinstance(counts, Mapping):
        levels = np.array(sorted(counts), dtype=int)
        values = np.array([counts[j] for j in levels], dtype=float)
    else:
        values = np.asarray(counts, dtype=float)
        levels = np.arange(values.size)
    with np.errstate(divide="ignore"):
        log_n = np.where(values > 0, np.log(values) / math.log(b), -np.inf)
    return _windowed_fit(levels, log_n, window, b, 1.0, "box count")


# ===== L^q spectrum =====

@dataclass(frozen=True)
class LqSpectrum:
    qs: np.ndarray
    fits: Tuple[ScalingFit, ...]

    @property
    def tau_hat(self) -> np.ndarray:
        return np.array([f.slope for f in self.fits])

    @property
    def r2(self) -> np.ndarray:
        return np.array([f.r2 for f in self.fits])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"q": self.qs, "tau_hat": self.tau_hat, "r2": self.r2})

    def legendre(self, hs: Optional[Sequence[float]] = None) -> "LegendreEstimate":
        return legendre_numeric(self.qs, self.tau_hat, hs)


def _log_partition(osc: np.ndarray, q: float) -> float:
    """log sum over cells with osc > 0 of osc^q"""
    active = osc[osc > 0.0]
    if active.size == 0:
        return -math.inf
    return float(logsumexp(q * np.log(active)))


def lq_spectrum(trace: FunctionTrace, qs: Sequence[float],
                window: Optional[Tuple[int, int]] = None, side: str = "W") -> LqSpectrum:
    """tau_hat(q) = slope of log_b S_j(q) against -j, S_j = sum of osc^q over level-j cells"""
    window = window or default_window(trace.depth)
    if window[1] > trace.depth:
        raise ValueError(f"window {window} exceeds trace depth {trace.depth}")
    osc = trace.osc_W if side == "W" else trace.osc_L
    levels = np.arange(trace.depth + 1)
    log_b = math.log(trace.b)

    def fit_q(q):
        log_s = np.array([_log_partition(osc[j], q) for j in levels]) / log_b
        return _windowed_fit(levels, log_s, window, trace.b, -1.0, f"L^q spectrum at q={q:g}")

    qs = np.asarray(qs, dtype=float)
    return LqSpectrum(qs=qs, fits=tuple(parallel_map(fit_q, list(qs))))


@dataclass(frozen=True)
class LegendreEstimate:
    h: np.ndarray
    dim: np.ndarray
    low_confidence: bool


def legendre_numeric(qs: Sequence[float], tau_values: Sequence[float],
                     hs: Optional[Sequence[float]] = None) -> LegendreEstimate:
    """Discrete inf over the q-grid of q*h - tau(q)"""
    qs = np.asarray(qs, dtype=float)
    tau_values = np.asarray(tau_values, dtype=float)
    low = qs.size < 5
    if low:
        print(f"⚠️ Warning: Legendre transform from {qs.size} q-point(s) is low confidence")

    if hs is None:
        if qs.size >= 2:
            slopes = np.gradient(tau_values, qs)
            hs = np.linspace(slopes.min(), slopes.max(), 201)
        else:
            hs = np.linspace(0.0, 2.0, 21)
    hs = np.asarray(hs, dtype=float)
    dim = (qs[None, :] * hs[:, None] - tau_values[None, :]).min(axis=1)
    return LegendreEstimate(h=hs, dim=dim, low_confidence=low)


# ===== Box counting =====

@dataclass(frozen=True)
class BoxCountResult:
    target: str
    counts: np.ndarray
    fit: ScalingFit
    theta: float = 0.0
    y: Optional[float] = None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"j": np.arange(self.counts.size), "N_j": self.counts})


def _level_extremes(trace: FunctionTrace, level: int) -> Tuple[np.ndarray, np.ndarray]:
    """min and max of F_W over each level-j cell"""
    group = trace.b ** (trace.depth - level)
    hi = trace.cell_max_W.reshape(-1, group).max(axis=1)
    lo = trace.cell_min_W.reshape(-1, group).min(axis=1)
    return lo, hi


def _level_boxes(trace: FunctionTrace, level: int, theta: float) -> Tuple[np.ndarray, np.ndarray]:
    """Projection of each level-j graph box onto l_theta"""
    step = trace.b ** (trace.depth - level)
    x = trace.FL_at[::step]
    y_lo, y_hi = _level_extremes(trace, level)
    sin, cos = math.sin(theta), math.cos(theta)
    lo = np.minimum(x[:-1] * sin, x[1:] * sin) + np.minimum(y_lo * cos, y_hi * cos)
    hi = np.maximum(x[:-1] * sin, x[1:] * sin) + np.maximum(y_lo * cos, y_hi * cos)
    return lo, hi


def _occupied_bins(lo: np.ndarray, hi: np.ndarray, size: float, origin: float) -> int:
    """Number of bins [origin + i*size, origin + (i+1)*size) met by the union of intervals"""
    first = np.floor((lo - origin) / size).astype(np.int64)
    last = np.floor((hi - origin) / size).astype(np.int64)
    order = np.argsort(first, kind="stable")
    first, last = first[order], last[order]

    total = 0
    cur_lo, cur_hi = int(first[0]), int(last[0])
    for a, c in zip(first[1:], last[1:]):
        if a > cur_hi + 1:
            total += cur_hi - cur_lo + 1
            cur_lo, cur_hi = int(a), int(c)
        elif c > cur_hi:
            cur_hi = int(c)
    return total + cur_hi - cur_lo + 1


def _graph_counts(trace: FunctionTrace, extent: float) -> np.ndarray:
    counts = []
    for j in range(trace.depth + 1):
        size = extent * float(trace.b) ** -j
        counts.append(float(np.sum(np.ceil(trace.osc_W[j] / size) + 1.0)))
    return np.array(counts)


def _line_counts(trace: FunctionTrace, extent: float, theta: float) -> np.ndarray:
    boxes = [_level_boxes(trace, j, theta) for j in range(trace.depth + 1)]
    origin = min(float(lo.min()) for lo, _ in boxes)
    counts = []
    for j, (lo, hi) in enumerate(boxes):
        size = extent * float(trace.b) ** -j
        counts.append(float(_occupied_bins(lo, hi, size, origin)))
    return np.array(counts)


def _levelset_counts(trace: FunctionTrace, y: float, theta: float) -> np.ndarray:
    """Columns whose piecewise-linear projected path crosses y, per level"""
    s = trace.FL_at * math.sin(theta) + trace.FW_at * math.cos(theta)
    if not s.min() <= y <= s.max():
        raise OutOfRangeError(f"y={y} outside the projected range [{s.min()}, {s.max()}]")
    crosses = (np.minimum(s[:-1], s[1:]) <= y) & (y <= np.maximum(s[:-1], s[1:]))
    counts = []
    for j in range(trace.depth + 1):
        group = trace.b ** (trace.depth - j)
        counts.append(float(crosses.reshape(-1, group).any(axis=1).sum()))
    return np.array(counts)


def box_count(trace: FunctionTrace, target: str, theta: float = 0.0, y: Optional[float] = None,
              window: Optional[Tuple[int, int]] = None) -> BoxCountResult:
    """Per-level box counts at sizes b^-j * F_L(1) and their fitted dimension"""
    if target not in BOX_TARGETS:
        raise ValueError(f"target must be one of {BOX_TARGETS}, got {target!r}")
    window = window or default_window(trace.depth)
    extent = float(trace.FL_at[-1])

    if target == "graph":
        counts = _graph_counts(trace, extent)
    elif target == "range":
        counts = _line_counts(trace, extent, 0.0)
    elif target == "projection":
        counts = _line_counts(trace, extent, theta)
    else:
        if y is None:
            raise ValueError("levelset box count needs y")
        counts = _levelset_counts(trace, y, theta)

    fit = fit_dimension(counts, window, trace.b)
    return BoxCountResult(target=target, counts=counts, fit=fit,
                          theta=theta if target in ("projection", "levelset") else 0.0, y=y)


# ===== Pointwise exponents =====

def holder_exponents(trace: FunctionTrace, indices: Sequence[int],
                     window: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """Per finest-cell index, slope of log Osc_F(I_{w|j}) against log |F_L(I_{w|j})| over the window"""
    window = window or default_window(trace.depth)
    indices = np.asarray(indices, dtype=np.int64)
    levels = np.arange(window[0], window[1] + 1)

    log_osc = np.empty((indices.size, levels.size))
    log_width = np.empty((indices.size, levels.size))
    with np.errstate(divide="ignore"):
        for col, j in enumerate(levels):
            shift = trace.b ** (trace.depth - j)
            cell = indices // shift
            widths = trace.values_at_level(j, "L")
            log_osc[:, col] = np.log(trace.osc_W[j][cell])
            log_width[:, col] = np.log(widths[cell + 1] - widths[cell])

    x = log_width - log_width.mean(axis=1, keepdims=True)
    y = log_osc - log_osc.mean(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return (x * y).sum(axis=1) / (x * x).sum(axis=1)
