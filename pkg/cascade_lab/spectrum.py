"""Exact multifractal functions of a spec: tau, its Legendre transform and the predicted spectra.

Units: xi, xi_tilde and gamma are in nats per level. Dimensions on the
coding space divide gamma by log(b); dimensions on the domain of F use
tau* directly (tau* = gamma / xi_tilde).
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import brentq

from .errors import BracketError, EmptyJError
from .generator import GeneratorSpec

TAU_BRACKET_LIMIT = 1e3
Q_WINDOW = (-50.0, 50.0)
Q_SCAN_POINTS = 10_000
J_TOL = 1e-9
ENDPOINT_XTOL = 1e-8


# ===== Moment kernel =====

class _Terms:
    """Flattened (log p, log|w|, log l) over the nonzero-w entries of a spec"""

    def __init__(self, spec: GeneratorSpec):
        mask = spec.nonzero_w
        log_p = np.broadcast_to(np.log(spec.probs)[:, None], mask.shape)
        self.log_p = log_p[mask]
        self.log_w = spec.log_abs_w[mask]
        self.log_l = spec.log_l[mask]

    def log_phi(self, q: float, t: float) -> float:
        terms = self.log_p + q * self.log_w - t * self.log_l
        top = terms.max()
        return float(top + math.log(np.exp(terms - top).sum()))

    def log_phi_grid(self, q: np.ndarray, t: np.ndarray) -> np.ndarray:
        terms = self.log_p[None, :] + q[:, None] * self.log_w[None, :] - t[:, None] * self.log_l[None, :]
        top = terms.max(axis=1)
        return top + np.log(np.exp(terms - top[:, None]).sum(axis=1))

    def weights(self, q: np.ndarray, t: np.ndarray) -> np.ndarray:
        """Normalized weights p|w|^q l^-t / Phi per (q, entry)"""
        terms = self.log_p[None, :] + q[:, None] * self.log_w[None, :] - t[:, None] * self.log_l[None, :]
        terms -= terms.max(axis=1)[:, None]
        w = np.exp(terms)
        return w / w.sum(axis=1)[:, None]


@lru_cache(maxsize=64)
def _terms(spec: GeneratorSpec) -> _Terms:
    return _Terms(spec)


# ===== tau =====

def tau(spec: GeneratorSpec, q: float) -> float:
    """Unique t with Phi(q, t) = 1 (log Phi is strictly increasing in t)"""
    terms = _terms(spec)
    f = lambda t: terms.log_phi(q, t)

    lo, hi = -1.0, 1.0
    while f(lo) > 0.0:
        lo *= 2.0
        if abs(lo) > TAU_BRACKET_LIMIT:
            raise BracketError(f"tau({q}): no lower bracket within |t| <= {TAU_BRACKET_LIMIT:g}")
    while f(hi) < 0.0:
        hi *= 2.0
        if abs(hi) > TAU_BRACKET_LIMIT:
            raise BracketError(f"tau({q}): no upper bracket within |t| <= {TAU_BRACKET_LIMIT:g}")
    if f(lo) == 0.0:
        return lo
    if f(hi) == 0.0:
        return hi
    return float(brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200))


def tau_grid(spec: GeneratorSpec, qs: Sequence[float]) -> np.ndarray:
    """tau over an array of q: vectorized bracket + bisection + Newton polish"""
    terms = _terms(spec)
    q = np.atleast_1d(np.asarray(qs, dtype=float))

    lo = np.full(q.shape, -1.0)
    hi = np.full(q.shape, 1.0)
    while True:
        need = terms.log_phi_grid(q, lo) > 0.0
        if not need.any():
            break
        if np.any(np.abs(lo[need]) * 2.0 > TAU_BRACKET_LIMIT):
            raise BracketError(f"tau: no lower bracket within |t| <= {TAU_BRACKET_LIMIT:g}")
        lo[need] *= 2.0
    while True:
        need = terms.log_phi_grid(q, hi) < 0.0
        if not need.any():
            break
        if np.any(np.abs(hi[need]) * 2.0 > TAU_BRACKET_LIMIT):
            raise BracketError(f"tau: no upper bracket within |t| <= {TAU_BRACKET_LIMIT:g}")
        hi[need] *= 2.0

    for _ in range(200):
        mid = 0.5 * (lo + hi)
        below = terms.log_phi_grid(q, mid) < 0.0
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= 4e-16 * np.maximum(1.0, np.abs(mid))):
            break
    t = 0.5 * (lo + hi)

    # d(log Phi)/dt = sum of weights * (-log l)
    for _ in range(2):
        slope = terms.weights(q, t) @ (-terms.log_l)
        t = t - terms.log_phi_grid(q, t) / slope
    return t


# ===== Derivatives and spectrum points =====

def _gamma_graph(ts, h):
    ts, h = np.asarray(ts, dtype=float), np.asarray(h, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.maximum(np.minimum(ts / h, ts + 1.0 - h), ts)
    return np.where(h > 0.0, g, np.nan)


def _gamma_range(ts, h):
    ts, h = np.asarray(ts, dtype=float), np.asarray(h, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.minimum(ts / h, 1.0)
    return np.where(h > 0.0, g, np.nan)


@dataclass(frozen=True)
class SpectrumPoint:
    """All exact quantities at one q (see module docstring for units)"""
    q: float
    tau: float
    xi: float
    xi_tilde: float
    tau_prime: float
    gamma: float
    tau_star: float
    gammaG: float
    gammaR: float

    @property
    def in_J(self) -> bool:
        return self.tau_star > J_TOL

    @property
    def subinterval(self) -> str:
        if not self.in_J:
            return ""
        return classify_subinterval(self.gammaG, self.tau_prime)

    def ledrappier_young_gap(self) -> float:
        """gammaG - (tau* + gammaR * max(0, 1 - tau')); zero on J"""
        return self.gammaG - (self.tau_star + self.gammaR * max(0.0, 1.0 - self.tau_prime))


def classify_subinterval(gammaG: float, tau_prime: float) -> str:
    """J1: gammaG > 1; J2: gammaG <= 1 and tau' < 1; J3: otherwise"""
    if gammaG > 1.0:
        return "J1"
    if tau_prime < 1.0:
        return "J2"
    return "J3"


def spectrum_arrays(spec: GeneratorSpec, qs: Sequence[float]) -> dict:
    """Vectorized SpectrumPoint fields over a q grid"""
    q = np.atleast_1d(np.asarray(qs, dtype=float))
    t = tau_grid(spec, q)
    terms = _terms(spec)
    weights = terms.weights(q, t)
    xi = weights @ (-terms.log_w)
    xi_tilde = weights @ (-terms.log_l)
    tau_prime = xi / xi_tilde
    tau_star = q * tau_prime - t
    return {
        "q": q,
        "tau": t,
        "xi": xi,
        "xi_tilde": xi_tilde,
        "tau_prime": tau_prime,
        "gamma": q * xi - t * xi_tilde,
        "tau_star": tau_star,
        "gammaG": _gamma_graph(tau_star, tau_prime),
        "gammaR": _gamma_range(tau_star, tau_prime),
    }


def derivatives(spec: GeneratorSpec, q: float) -> SpectrumPoint:
    """Exact analytic xi, xi_tilde, tau' and the derived spectra at q"""
    t = tau(spec, q)
    terms = _terms(spec)
    weights = terms.weights(np.array([q]), np.array([t]))[0]
    xi = float(weights @ (-terms.log_w))
    xi_tilde = float(weights @ (-terms.log_l))
    h = xi / xi_tilde
    ts = q * h - t
    return SpectrumPoint(
        q=float(q),
        tau=t,
        xi=xi,
        xi_tilde=xi_tilde,
        tau_prime=h,
        gamma=q * xi - t * xi_tilde,
        tau_star=ts,
        gammaG=float(_gamma_graph(ts, h)),
        gammaR=float(_gamma_range(ts, h)),
    )


def tau_prime(spec: GeneratorSpec, q: float) -> float:
    return derivatives(spec, q).tau_prime


def spectrum_table(spec: GeneratorSpec, qs: Sequence[float]) -> pd.DataFrame:
    """One row per q: tau, tau', tau*, gammaG, gammaR, J membership and subinterval"""
    arrays = spectrum_arrays(spec, qs)
    frame = pd.DataFrame(arrays)
    frame["inJ"] = frame["tau_star"] > J_TOL
    frame["subinterval"] = [
        classify_subinterval(g, h) if inside else ""
        for g, h, inside in zip(frame["gammaG"], frame["tau_prime"], frame["inJ"])
    ]
    return frame


# ===== Legendre transform =====

class LegendrePoint(NamedTuple):
    h: float
    value: float
    q: float
    clamped: bool
    monofractal: bool


def legendre(spec: GeneratorSpec, h: float,
             window: Tuple[float, float] = Q_WINDOW) -> LegendrePoint:
    """tau*(h) = inf_q qh - tau(q), solving tau'(q) = h inside the window"""
    q_lo, q_hi = window
    slope_max = tau_prime(spec, q_lo)
    slope_min = tau_prime(spec, q_hi)

    if slope_max - slope_min < 1e-12:
        value = -tau(spec, 0.0) if abs(h - slope_max) <= 1e-9 else -math.inf
        return LegendrePoint(h, value, 0.0, False, True)

    if h >= slope_max:
        q = q_lo
        clamped = h > slope_max
    elif h <= slope_min:
        q = q_hi
        clamped = h < slope_min
    else:
        q = brentq(lambda x: tau_prime(spec, x) - h, q_lo, q_hi, xtol=1e-13, maxiter=200)
        clamped = False
    return LegendrePoint(h, q * h - tau(spec, q), float(q), clamped, False)


def tau_star(spec: GeneratorSpec, h: float, window: Tuple[float, float] = Q_WINDOW) -> float:
    return legendre(spec, h, window).value


# ===== Interval J =====

@dataclass(frozen=True)
class IntervalJ:
    """J = {q : q tau'(q) - tau(q) > 0} with its J1/J2/J3 partition on a grid"""
    q_lo: float
    q_hi: float
    grid: np.ndarray
    labels: Tuple[str, ...]

    def contains(self, q: float) -> bool:
        return self.q_lo < q < self.q_hi

    def label_of(self, q: float) -> str:
        i = int(np.argmin(np.abs(self.grid - q)))
        return self.labels[i]


def _legendre_at(spec: GeneratorSpec, q: float) -> float:
    return derivatives(spec, q).tau_star - J_TOL


def interval_J(spec: GeneratorSpec, window: Tuple[float, float] = Q_WINDOW,
               points: int = Q_SCAN_POINTS) -> IntervalJ:
    """Locate the J endpoints by sign-change bisection on a scanned grid"""
    qs = np.linspace(window[0], window[1], points)
    arrays = spectrum_arrays(spec, qs)
    g = arrays["tau_star"]
    positive = g > J_TOL
    if not positive.any():
        raise EmptyJError(f"{spec.label}: q*tau'(q) - tau(q) <= 0 on [{window[0]}, {window[1]}]")

    # J is the positive run around the maximum of q*tau' - tau
    peak = int(np.argmax(g))
    i0 = peak
    while i0 > 0 and positive[i0 - 1]:
        i0 -= 1
    i1 = peak
    while i1 < points - 1 and positive[i1 + 1]:
        i1 += 1

    if i0 == 0:
        q_lo = -math.inf
    else:
        q_lo = brentq(lambda q: _legendre_at(spec, q), qs[i0 - 1], qs[i0], xtol=ENDPOINT_XTOL)
    if i1 == points - 1:
        q_hi = math.inf
    else:
        q_hi = brentq(lambda q: _legendre_at(spec, q), qs[i1], qs[i1 + 1], xtol=ENDPOINT_XTOL)

    labels = []
    for i in range(points):
        if i0 <= i <= i1:
            labels.append(classify_subinterval(arrays["gammaG"][i], arrays["tau_prime"][i]))
        else:
            labels.append("")
    return IntervalJ(q_lo=float(q_lo), q_hi=float(q_hi), grid=qs, labels=tuple(labels))


# ===== Predicted spectra and general bounds =====

class PredictedSpectra(NamedTuple):
    dimG: float
    dimR: float
    dimL: float
    dim_graph_whole: float


def predicted_spectra(spec: GeneratorSpec, h: float) -> PredictedSpectra:
    """Graph, range and a.e.-direction level-set spectra at h, plus the whole-graph dimension"""
    if h <= 0.0:
        raise ValueError("h must be > 0")
    ts = tau_star(spec, h)
    whole = 1.0 - tau(spec, 1.0)
    if not ts > 0.0:
        return PredictedSpectra(math.nan, math.nan, math.nan, whole)
    dim_g = max(min(ts / h, ts + 1.0 - h), ts)
    dim_r = min(ts / h, 1.0)
    dim_l = ts - h if ts - h > 0.0 else math.nan
    return PredictedSpectra(dim_g, dim_r, dim_l, whole)


def levelset_measure_dimension(spec: GeneratorSpec, q: float) -> float:
    """Dimension of the level-set measures when gammaG(q) > 1: gammaG(q) - 1"""
    point = derivatives(spec, q)
    if not point.gammaG > 1.0:
        return math.nan
    return point.gammaG - 1.0


class UpperBounds(NamedTuple):
    graphUB: float
    rangeUB: float
    levelUB: float


def upper_bounds(dimE: float, h: float, gamma_level: float,
                 dimension: str = "H") -> UpperBounds:
    """Bounds on graph, range and level-set dimensions over a set of exponent h.

    dimension="H" gives the Hausdorff bounds, "P" the packing ones (same
    graph/range formulas; no level-set bound).
    """
    if h <= 0.0:
        raise ValueError("h must be > 0")
    if not 0.0 <= dimE <= 1.0:
        raise ValueError("dimE must lie in [0, 1]")
    if gamma_level < 0.0:
        raise ValueError("gamma_level must be >= 0")
    if dimension not in ("H", "P"):
        raise ValueError("dimension must be 'H' or 'P'")

    graph = max(min(dimE / h, dimE + 1.0 - h), dimE)
    rng = min(dimE / h, 1.0)
    level = dimE - h * gamma_level if dimension == "H" else math.nan
    return UpperBounds(graph, rng, level)
