"""Auxiliary measures mu_q on a realization, their pushforwards, Cantor filters and Riesz energies"""

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import linregress

from .cascade import (
    DEFAULT_TAIL_DEPTH,
    CascadeRealization,
    FunctionTrace,
    Word,
    level_log_products,
)
from .errors import BinningError, DepthError, EmptyBallError
from .parallel import parallel_map
from .spectrum import J_TOL, derivatives, tau

PAIR_BUDGET = 20_000_000
ENERGY_BLOCK = 1024
SAMPLE_BLOCK = 1 << 20
MIN_BIN_WIDTH = 2.0 ** -40
LINE_MAX_LEVEL = 12
GRAPH_MAX_LEVEL = 9

TARGETS = ("domain", "graph", "range", "projection")


# ===== mu_q tables =====

@dataclass(frozen=True)
class MeasureTable:
    """mu_q masses of the level-n words in index order"""
    q: float
    level: int
    tail_depth: int
    tau: float
    b: int
    masses: np.ndarray
    seed: Optional[int] = None

    @property
    def total(self) -> float:
        return math.fsum(self.masses)

    def mass(self, word: Word) -> float:
        if len(word) != self.level:
            raise ValueError(f"word has length {len(word)}, table level is {self.level}")
        return float(self.masses[word.index])

    def to_frame(self) -> pd.DataFrame:
        words = [str(Word.from_index(k, self.level, self.b)) for k in range(self.masses.size)]
        return pd.DataFrame({"word": words, "mass": self.masses})


def _log_weights(log_w: np.ndarray, log_l: np.ndarray, q: float, t: float) -> np.ndarray:
    """log of 1{W != 0}|W|^q L^-t; -inf where the W product is zero"""
    finite = np.isfinite(log_w)
    safe = np.where(finite, log_w, 0.0)
    return np.where(finite, q * safe - t * log_l, -np.inf)


def build_mu_q(real: CascadeRealization, q: float, level: int,
               tail_depth: int = DEFAULT_TAIL_DEPTH) -> MeasureTable:
    """mass(w) = W_{q,w} * Y_hat_q(w), Y_hat summed over the tail_depth subtree"""
    if level < 0 or tail_depth < 0:
        raise ValueError("level and tail_depth must be >= 0")
    if level + tail_depth > real.depth:
        raise DepthError(f"level {level} + tail {tail_depth} exceeds sampled depth {real.depth}")

    spec = real.spec
    point = derivatives(spec, q)
    if not point.tau_star > J_TOL:
        print(f"⚠️ Warning: q={q} lies outside J for '{spec.label}'; mu_q may be degenerate")

    log_w, log_l = level_log_products(real, level + tail_depth)
    fine = np.exp(_log_weights(log_w, log_l, q, point.tau))
    masses = fine.reshape(spec.b ** level, spec.b ** tail_depth).sum(axis=1)
    return MeasureTable(q=float(q), level=level, tail_depth=tail_depth, tau=point.tau,
                        b=spec.b, masses=masses, seed=real.seed)


def partition_sum(real: CascadeRealization, q: float, level: int) -> float:
    """Y_{q,n}: total of the level-n table with no tail"""
    log_w, log_l = level_log_products(real, level)
    t = tau(real.spec, q)
    return math.fsum(np.exp(_log_weights(log_w, log_l, q, t)))


# ===== Pushforwards =====

@dataclass(frozen=True)
class MassMap:
    """Mass on a uniform grid; one edge array per axis"""
    target: str
    edges: Tuple[np.ndarray, ...]
    masses: np.ndarray
    theta: float = 0.0

    @property
    def total(self) -> float:
        return math.fsum(self.masses.ravel())

    @property
    def is_line(self) -> bool:
        return len(self.edges) == 1

    @property
    def centres(self) -> np.ndarray:
        e = self.edges[0]
        return 0.5 * (e[:-1] + e[1:])

    def cdf(self, x) -> np.ndarray:
        """Mass of (-inf, x], linear inside each bin"""
        if not self.is_line:
            raise ValueError("cdf is defined on 1-D mass maps only")
        cumulative = np.concatenate([[0.0], np.cumsum(self.masses)])
        return np.interp(x, self.edges[0], cumulative)


def _check_pair(table: MeasureTable, trace: FunctionTrace):
    if table.level != trace.depth:
        raise ValueError(f"table level {table.level} != trace depth {trace.depth}")
    if table.seed is not None and trace.seed is not None and table.seed != trace.seed:
        raise ValueError(f"table seed {table.seed} != trace seed {trace.seed}")


def _edges(lo: float, hi: float, bins: int) -> np.ndarray:
    if hi <= lo:
        hi = lo + 1.0
    if (hi - lo) / bins < MIN_BIN_WIDTH:
        raise BinningError(f"bin width {(hi - lo) / bins:.3g} is below 2^-40")
    return np.linspace(lo, hi, bins + 1)


def _spread(lo: np.ndarray, hi: np.ndarray, edges: np.ndarray):
    """Split each interval [lo, hi] over the bins it overlaps.

    Returns (cell, bin, fraction) triples; fractions of a cell sum to 1.
    Degenerate intervals put all their mass in one bin.
    """
    bins = edges.size - 1
    width = edges[1] - edges[0]
    first = np.clip(((lo - edges[0]) / width).astype(np.int64), 0, bins - 1)
    last = np.clip(((hi - edges[0]) / width).astype(np.int64), 0, bins - 1)
    counts = last - first + 1

    cell = np.repeat(np.arange(lo.size), counts)
    offset = np.arange(cell.size) - np.repeat(np.cumsum(counts) - counts, counts)
    bin_idx = first[cell] + offset

    left = np.maximum(edges[bin_idx], lo[cell])
    right = np.minimum(edges[bin_idx + 1], hi[cell])
    overlap = np.maximum(right - left, 0.0)
    span = hi[cell] - lo[cell]
    frac = np.where(span > 0.0, overlap, 1.0)

    norm = np.bincount(cell, weights=frac, minlength=lo.size)
    # rounding can leave a zero overlap on a boundary-touching interval
    empty = norm[cell] <= 0.0
    frac = np.where(empty, 1.0 / counts[cell], frac / np.where(empty, 1.0, norm[cell]))
    return cell, bin_idx, frac


def _deposit_line(lo, hi, masses, edges) -> np.ndarray:
    cell, bin_idx, frac = _spread(lo, hi, edges)
    return np.bincount(bin_idx, weights=masses[cell] * frac, minlength=edges.size - 1)


def _deposit_plane(x_lo, x_hi, y_lo, y_hi, masses, x_edges, y_edges) -> np.ndarray:
    xc, xb, xf = _spread(x_lo, x_hi, x_edges)
    yc, yb, yf = _spread(y_lo, y_hi, y_edges)
    ny = np.bincount(yc, minlength=masses.size)
    y_start = np.cumsum(ny) - ny

    # outer product of the x and y splits of each cell
    rep = ny[xc]
    base = np.repeat(y_start[xc], rep)
    offset = np.arange(rep.sum()) - np.repeat(np.cumsum(rep) - rep, rep)
    y_entry = base + offset
    x_entry = np.repeat(np.arange(xc.size), rep)

    flat = xb[x_entry] * (y_edges.size - 1) + yb[y_entry]
    weights = masses[xc[x_entry]] * xf[x_entry] * yf[y_entry]
    size = (x_edges.size - 1) * (y_edges.size - 1)
    return np.bincount(flat, weights=weights, minlength=size).reshape(
        x_edges.size - 1, y_edges.size - 1)


def _projected_boxes(trace: FunctionTrace, theta: float):
    """Interval of s = x sin(theta) + y cos(theta) over each graph cell box"""
    x_lo, x_hi = trace.FL_at[:-1], trace.FL_at[1:]
    y_lo, y_hi = trace.cell_min_W, trace.cell_max_W
    sin, cos = math.sin(theta), math.cos(theta)
    xs = (x_lo * sin, x_hi * sin)
    ys = (y_lo * cos, y_hi * cos)
    lo = np.minimum(xs[0], xs[1]) + np.minimum(ys[0], ys[1])
    hi = np.maximum(xs[0], xs[1]) + np.maximum(ys[0], ys[1])
    return lo, hi


def pushforward(table: MeasureTable, trace: FunctionTrace, target: str,
                theta: float = 0.0, bins: Optional[int] = None) -> MassMap:
    """Deposit each word's mass on its image under the domain, graph, range or projection map"""
    _check_pair(table, trace)
    if target not in TARGETS:
        raise ValueError(f"target must be one of {TARGETS}, got {target!r}")
    b, n = trace.b, trace.depth
    m = table.masses

    if target == "graph":
        bins = bins or b ** min(n, GRAPH_MAX_LEVEL)
        x_lo, x_hi = trace.FL_at[:-1], trace.FL_at[1:]
        y_lo, y_hi = trace.cell_min_W, trace.cell_max_W
        x_edges = _edges(0.0, float(trace.FL_at[-1]), bins)
        y_edges = _edges(float(y_lo.min()), float(y_hi.max()), bins)
        grid = _deposit_plane(x_lo, x_hi, y_lo, y_hi, m, x_edges, y_edges)
        return MassMap("graph", (x_edges, y_edges), grid)

    bins = bins or b ** min(n, LINE_MAX_LEVEL)
    if target == "domain":
        lo, hi = trace.FL_at[:-1], trace.FL_at[1:]
        edges = _edges(0.0, float(trace.FL_at[-1]), bins)
    else:
        angle = 0.0 if target == "range" else theta
        lo, hi = _projected_boxes(trace, angle)
        edges = _edges(float(lo.min()), float(hi.max()), bins)
    return MassMap(target, (edges,), _deposit_line(lo, hi, m, edges),
                   theta=theta if target == "projection" else 0.0)


def sample_from_massmap(massmap: MassMap, count: int, seed: int = 0) -> np.ndarray:
    """Bin centres drawn with probability proportional to mass"""
    p = massmap.masses / massmap.masses.sum()
    rng = np.random.default_rng(seed)
    return massmap.centres[rng.choice(p.size, size=count, p=p)]


# ===== Local dimension =====

@dataclass(frozen=True)
class LocalDimensionResult:
    points: np.ndarray
    radii: np.ndarray
    slopes: np.ndarray
    excluded: np.ndarray

    @property
    def median(self) -> float:
        return float(np.median(self.slopes[~self.excluded]))


def local_dimension(massmap: MassMap, points: Sequence[float],
                    radii: Sequence[float]) -> LocalDimensionResult:
    """Slope of log mu(B(x, r)) against log r for each point"""
    radii = np.asarray(radii, dtype=float)
    points = np.asarray(points, dtype=float)
    if radii.size < 4:
        raise ValueError("local_dimension needs at least 4 radii")
    if np.any(radii <= 0.0):
        raise ValueError("radii must be > 0")

    balls = massmap.cdf(points[:, None] + radii[None, :]) - massmap.cdf(points[:, None] - radii[None, :])
    smallest = int(np.argmin(radii))
    excluded = balls[:, smallest] <= 0.0
    if excluded.all():
        raise EmptyBallError("every point has an empty ball at the smallest radius")
    if excluded.any():
        print(f"⚠️ Warning: {int(excluded.sum())} point(s) with empty balls excluded")

    log_r = np.log(radii)
    slopes = np.full(points.size, np.nan)
    for i in np.flatnonzero(~excluded):
        usable = balls[i] > 0.0
        slopes[i] = linregress(log_r[usable], np.log(balls[i, usable])).slope
    return LocalDimensionResult(points=points, radii=radii, slopes=slopes, excluded=excluded)


# ===== Cantor filter =====

@dataclass(frozen=True)
class CantorFilterResult:
    """Finest-level words whose prefixes at levels n..depth all stay inside the bands"""
    q: float
    epsilon: float
    n: int
    depth: int
    surviving: np.ndarray
    retained_mass: float
    complement_mass_by_level: Dict[int, float] = field(default_factory=dict)

    @property
    def surviving_words(self) -> np.ndarray:
        return np.flatnonzero(self.surviving)


def _with_neighbours(ok: np.ndarray) -> np.ndarray:
    """Require ok for w, w- and w+ where the neighbour exists"""
    out = ok.copy()
    out[1:] &= ok[:-1]
    out[:-1] &= ok[1:]
    return out


def _band_pass(real: CascadeRealization, trace: FunctionTrace, p: int,
               xi: float, xi_tilde: float, epsilon: float) -> np.ndarray:
    log_w, log_l = level_log_products(real, p)
    with np.errstate(divide="ignore", invalid="ignore"):
        ok = np.abs(log_w + p * xi) <= p * epsilon
        ok &= np.abs(log_l + p * xi_tilde) <= p * epsilon
        osc_w = np.log(trace.osc_W[p]) - log_w
        osc_l = np.log(trace.osc_L[p]) - log_l
        ok &= np.abs(osc_w) <= p * epsilon
        ok &= np.abs(osc_l) <= p * epsilon
    if math.isinf(epsilon):
        ok[:] = True
    return _with_neighbours(ok)


def cantor_filter(real: CascadeRealization, trace: FunctionTrace, q: float,
                  epsilon: float, n: int, table: Optional[MeasureTable] = None) -> CantorFilterResult:
    """Words in the exponential W/L/oscillation bands around xi(q) and xi_tilde(q)"""
    if epsilon <= 0.0:
        raise ValueError("epsilon must be > 0")
    if not 1 <= n <= trace.depth:
        raise ValueError(f"n must lie in 1..{trace.depth}")
    point = derivatives(real.spec, q)
    if table is None:
        table = build_mu_q(real, q, trace.depth, trace.tail_depth)
    _check_pair(table, trace)

    b, depth = trace.b, trace.depth
    surviving = np.ones(b ** depth, dtype=bool)
    complement = {}
    for p in range(n, depth + 1):
        passed = np.repeat(_band_pass(real, trace, p, point.xi, point.xi_tilde, epsilon),
                           b ** (depth - p))
        complement[p] = math.fsum(table.masses[~passed])
        surviving &= passed

    return CantorFilterResult(
        q=float(q),
        epsilon=float(epsilon),
        n=n,
        depth=depth,
        surviving=surviving,
        retained_mass=math.fsum(table.masses[surviving]),
        complement_mass_by_level=complement,
    )


# ===== Riesz energies =====

@dataclass(frozen=True)
class EnergyEstimate:
    gamma: float
    depth: int
    value: float
    pair_count: int
    subsampled: bool
    stderr: float = 0.0


def _kernel(dx: np.ndarray, dy: np.ndarray, gamma: float, mode: str) -> np.ndarray:
    """Capped kernel: dist^-gamma v 1 (planar for graph, |dy| for range)"""
    with np.errstate(divide="ignore"):
        if mode == "graph":
            dist = np.hypot(dx, dy)
        else:
            dist = np.abs(dy)
        return np.maximum(dist ** -gamma, 1.0)


def _exact_pairs(x, y, m, gamma, mode) -> float:
    """sum over u < v of K(u, v) m_u m_v, by fixed row blocks"""
    size = m.size

    def block(start):
        stop = min(start + ENERGY_BLOCK, size)
        total = 0.0
        for u in range(start, stop):
            if u + 1 >= size:
                continue
            k = _kernel(x[u + 1:] - x[u], y[u + 1:] - y[u], gamma, mode)
            total += m[u] * float(np.dot(k, m[u + 1:]))
        return total

    return math.fsum(parallel_map(block, range(0, size, ENERGY_BLOCK)))


def _sampled_pairs(x, y, m, gamma, mode, samples, seed) -> Tuple[float, float]:
    """Unbiased estimate of sum over ordered u != v of K m_u m_v, and its stderr"""
    size = m.size
    starts = list(range(0, samples, SAMPLE_BLOCK))

    def block(i):
        count = min(SAMPLE_BLOCK, samples - starts[i])
        rng = np.random.default_rng([seed, i])
        u = rng.integers(0, size, count)
        v = rng.integers(0, size - 1, count)
        v = v + (v >= u)
        vals = _kernel(x[v] - x[u], y[v] - y[u], gamma, mode) * m[u] * m[v]
        return float(vals.sum()), float((vals ** 2).sum())

    parts = parallel_map(block, range(len(starts)))
    s1 = math.fsum(p[0] for p in parts)
    s2 = math.fsum(p[1] for p in parts)
    mean = s1 / samples
    var = max(s2 / samples - mean * mean, 0.0)
    scale = size * (size - 1)
    return scale * mean, scale * math.sqrt(var / samples)


def riesz_energy(table: MeasureTable, trace: FunctionTrace, gamma: float, mode: str = "graph",
                 pair_budget: int = PAIR_BUDGET, seed: int = 0) -> EnergyEstimate:
    """Discrete mu_q energy of the graph or range kernel; self pairs count with kernel 1"""
    if gamma <= 0.0:
        raise ValueError("gamma must be > 0")
    if mode not in ("graph", "range"):
        raise ValueError(f"mode must be 'graph' or 'range', got {mode!r}")
    _check_pair(table, trace)
    return energy_of_points(trace.FL_at[:-1], trace.FW_at[:-1], table.masses, gamma, mode,
                            pair_budget, seed, depth=trace.depth)


def energy_of_points(x: np.ndarray, y: np.ndarray, masses: np.ndarray, gamma: float,
                     mode: str = "graph", pair_budget: int = PAIR_BUDGET, seed: int = 0,
                     depth: int = 0) -> EnergyEstimate:
    """Energy of weighted points (x_i, y_i); riesz_energy feeds it the left endpoints"""
    m = np.asarray(masses, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    diagonal = math.fsum(m * m)
    pairs = m.size * (m.size - 1) // 2

    if pairs <= pair_budget:
        value = diagonal + 2.0 * _exact_pairs(x, y, m, gamma, mode)
        return EnergyEstimate(gamma=float(gamma), depth=depth, value=value,
                              pair_count=pairs, subsampled=False)

    off, err = _sampled_pairs(x, y, m, gamma, mode, int(pair_budget), seed)
    return EnergyEstimate(gamma=float(gamma), depth=depth, value=diagonal + off,
                          pair_count=int(pair_budget), subsampled=True, stderr=err)
