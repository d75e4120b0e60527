"""Cascade realizations, b-adic function traces and the composed graph F = F_W o F_L^-1"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .errors import CapacityError, DepthError, NonMonotoneError
from .generator import GeneratorSpec
from .parallel import parallel_map

DEFAULT_TAIL_DEPTH = 6
MAX_LEAF_BITS = 34
CHUNK = 1 << 18

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MASK64 = (1 << 64) - 1

TRACE_COLUMNS = ["level", "k", "x", "FW", "FL", "oscW", "oscL"]


# ===== Counter-based RNG =====

def _mix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer on a uint64 array (wrapping arithmetic)"""
    with np.errstate(over="ignore"):
        x = x ^ (x >> np.uint64(30))
        x = x * np.uint64(0xBF58476D1CE4E5B9)
        x = x ^ (x >> np.uint64(27))
        x = x * np.uint64(0x94D049BB133111EB)
        x = x ^ (x >> np.uint64(31))
    return x


def _level_key(seed: int, level: int) -> np.uint64:
    with np.errstate(over="ignore"):
        base = np.array([seed & _MASK64], dtype=np.uint64)
        return _mix64(base + np.uint64(level + 1) * _GOLDEN)[0]


def node_uniforms(seed: int, level: int, index) -> np.ndarray:
    """Uniforms in [0, 1) for the words (level, index); pure in its arguments"""
    idx = np.asarray(index, dtype=np.uint64)
    key = _level_key(seed, level)
    with np.errstate(over="ignore"):
        h = _mix64(idx * _GOLDEN + key)
        h = _mix64(h ^ key)
    return (h >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)


def derive_seed(master: int, index: int) -> int:
    """Split a master seed into the seed of run `index` (63-bit, sqlite safe)"""
    u = node_uniforms(master, -1, np.array([index]))[0]
    return int(u * (2.0 ** 63)) & ((1 << 63) - 1)


# ===== Words =====

@dataclass(frozen=True)
class Word:
    """Finite b-adic word; lexicographic order matches lambda order"""
    digits: Tuple[int, ...]
    b: int = 2

    def __post_init__(self):
        if any(d < 0 or d >= self.b for d in self.digits):
            raise ValueError(f"digits {self.digits} are not all in 0..{self.b - 1}")

    @classmethod
    def from_index(cls, k: int, n: int, b: int) -> "Word":
        digits = []
        for _ in range(n):
            k, d = divmod(k, b)
            digits.append(d)
        return cls(tuple(reversed(digits)), b)

    def __len__(self) -> int:
        return len(self.digits)

    def __lt__(self, other: "Word") -> bool:
        return self.lam < other.lam or (self.lam == other.lam and len(self) < len(other))

    @property
    def index(self) -> int:
        k = 0
        for d in self.digits:
            k = k * self.b + d
        return k

    @property
    def lam(self) -> float:
        """Left endpoint of I_w"""
        return self.index / self.b ** len(self)

    @property
    def parent(self) -> "Word":
        return Word(self.digits[:-1], self.b)

    def child(self, d: int) -> "Word":
        return Word(self.digits + (d,), self.b)

    def prefix(self, k: int) -> "Word":
        return Word(self.digits[:k], self.b)

    def minus(self) -> Optional["Word"]:
        """w^-: left neighbour at the same level, None when lambda(w) = 0"""
        k = self.index
        return None if k == 0 else Word.from_index(k - 1, len(self), self.b)

    def plus(self) -> Optional["Word"]:
        """w^+: right neighbour at the same level, None at the right boundary"""
        k = self.index
        last = self.b ** len(self) - 1
        return None if k == last else Word.from_index(k + 1, len(self), self.b)

    def __str__(self) -> str:
        return "".join(str(d) for d in self.digits) or "-"


# ===== Realizations =====

@dataclass(frozen=True)
class CascadeRealization:
    """Weight tree to depth n; levels[j][k] is the atom index of word (j, k)"""
    spec: GeneratorSpec
    seed: int
    depth: int
    levels: Tuple[np.ndarray, ...]

    def node(self, word: Word) -> Tuple[np.ndarray, np.ndarray]:
        """(w-vector, l-vector) at `word`, a pure function of (seed, word)"""
        if len(word) >= self.depth:
            raise DepthError(f"node at level {len(word)} but realization depth is {self.depth}")
        a = int(self.levels[len(word)][word.index])
        return self.spec.w_matrix[a].copy(), self.spec.l_matrix[a].copy()


def _atoms_for(spec: GeneratorSpec, seed: int, level: int, start: int, stop: int) -> np.ndarray:
    u = node_uniforms(seed, level, np.arange(start, stop, dtype=np.uint64))
    a = np.searchsorted(spec.cdf, u, side="right")
    return np.minimum(a, len(spec.atoms) - 1).astype(np.int32)


def sample(spec: GeneratorSpec, seed: int, depth: int) -> CascadeRealization:
    """Sample the weight tree; node atoms come from hashing (seed, level, index)"""
    if depth < 0:
        raise ValueError("depth must be >= 0")
    if depth * math.log2(spec.b) > MAX_LEAF_BITS:
        raise CapacityError(f"depth {depth} with b={spec.b} exceeds 2^{MAX_LEAF_BITS} leaves")

    levels = []
    for j in range(depth):
        size = spec.b ** j
        bounds = [(s, min(s + CHUNK, size)) for s in range(0, size, CHUNK)]
        parts = parallel_map(lambda r: _atoms_for(spec, seed, j, r[0], r[1]), bounds)
        levels.append(np.concatenate(parts))
    return CascadeRealization(spec=spec, seed=seed, depth=depth, levels=tuple(levels))


def weight_product(real: CascadeRealization, prefix: Word, u: Word) -> Tuple[float, float]:
    """(W_u(prefix), L_u(prefix)): products of the per-level entries along u"""
    if len(prefix) + len(u) > real.depth:
        raise DepthError(f"|prefix|+|u| = {len(prefix) + len(u)} exceeds depth {real.depth}")
    w_prod, l_prod = 1.0, 1.0
    current = prefix
    for d in u.digits:
        w, l = real.node(current)
        w_prod *= float(w[d])
        l_prod *= float(l[d])
        current = current.child(d)
    return w_prod, l_prod


def _expand(parent: np.ndarray, atoms: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Children products: parent[k] * matrix[atoms[k], d] at index k*b + d"""
    if parent.size <= CHUNK:
        return (parent[:, None] * matrix[atoms]).ravel()
    bounds = [(s, min(s + CHUNK, parent.size)) for s in range(0, parent.size, CHUNK)]
    parts = parallel_map(
        lambda r: (parent[r[0]:r[1], None] * matrix[atoms[r[0]:r[1]]]).ravel(), bounds)
    return np.concatenate(parts)


def level_products(real: CascadeRealization, level: int) -> Tuple[np.ndarray, np.ndarray]:
    """(W_u(root), L_u(root)) for every word u of length `level`, in index order"""
    if level > real.depth:
        raise DepthError(f"level {level} exceeds realization depth {real.depth}")
    w_prod = np.ones(1)
    l_prod = np.ones(1)
    for j in range(level):
        w_prod = _expand(w_prod, real.levels[j], real.spec.w_matrix)
        l_prod = _expand(l_prod, real.levels[j], real.spec.l_matrix)
    return w_prod, l_prod


def level_log_products(real: CascadeRealization, level: int) -> Tuple[np.ndarray, np.ndarray]:
    """(log|W_u(root)|, log L_u(root)); -inf marks a zero W product"""
    if level > real.depth:
        raise DepthError(f"level {level} exceeds realization depth {real.depth}")
    log_w = np.zeros(1)
    log_l = np.zeros(1)
    for j in range(level):
        a = real.levels[j]
        log_w = (log_w[:, None] + real.spec.log_abs_w[a]).ravel()
        log_l = (log_l[:, None] + real.spec.log_l[a]).ravel()
    return log_w, log_l


# ===== Traces =====

@dataclass(frozen=True)
class FunctionTrace:
    """F_W and F_L at the level-n b-adic points plus per-cell oscillations"""
    b: int
    depth: int
    tail_depth: int
    FW_at: np.ndarray
    FL_at: np.ndarray
    osc_W: Tuple[np.ndarray, ...]
    osc_L: Tuple[np.ndarray, ...]
    cell_max_W: np.ndarray
    cell_min_W: np.ndarray
    seed: Optional[int] = None

    def values_at_level(self, level: int, side: str = "W") -> np.ndarray:
        """Function values at the level-j points, j <= depth"""
        if level > self.depth:
            raise DepthError(f"level {level} exceeds trace depth {self.depth}")
        values = self.FW_at if side == "W" else self.FL_at
        return values[:: self.b ** (self.depth - level)]

    def to_frame(self) -> pd.DataFrame:
        """Rows (level, k, x, FW, FL, oscW, oscL) for every cell of levels 0..n"""
        frames = []
        for j in range(self.depth + 1):
            count = self.b ** j
            k = np.arange(count)
            step = self.b ** (self.depth - j)
            frames.append(pd.DataFrame({
                "level": np.full(count, j),
                "k": k,
                "x": k / count,
                "FW": self.FW_at[:-1:step],
                "FL": self.FL_at[:-1:step],
                "oscW": self.osc_W[j],
                "oscL": self.osc_L[j],
            }))
        return pd.concat(frames, ignore_index=True)[TRACE_COLUMNS]

    def write_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, lineterminator="\n", float_format="%.17g")
        return path


def _oscillation_tables(grid: np.ndarray, b: int, n: int, m: int):
    """Per-level (osc, finest max, finest min) from the level-(n+m) grid"""
    block = b ** m
    inner = grid[:-1].reshape(b ** n, block)
    right = grid[block::block]
    cell_max = np.maximum(inner.max(axis=1), right)
    cell_min = np.minimum(inner.min(axis=1), right)

    osc = []
    for j in range(n + 1):
        group = b ** (n - j)
        hi = cell_max.reshape(b ** j, group).max(axis=1)
        lo = cell_min.reshape(b ** j, group).min(axis=1)
        osc.append(hi - lo)
    return tuple(osc), cell_max, cell_min


def build_trace(real: CascadeRealization, depth: int,
                tail_depth: int = DEFAULT_TAIL_DEPTH) -> FunctionTrace:
    """F_U at the level-n points from prefix sums of W_u * Z_hat(u), Z cut at tail_depth"""
    if depth < 0 or tail_depth < 0:
        raise ValueError("depth and tail_depth must be >= 0")
    if depth + tail_depth > real.depth:
        raise DepthError(
            f"depth {depth} + tail {tail_depth} exceeds sampled depth {real.depth}")

    b = real.spec.b
    fine_w, fine_l = level_products(real, depth + tail_depth)
    grid_w = np.concatenate([[0.0], np.cumsum(fine_w)])
    grid_l = np.concatenate([[0.0], np.cumsum(fine_l)])

    step = b ** tail_depth
    osc_w, max_w, min_w = _oscillation_tables(grid_w, b, depth, tail_depth)
    osc_l, _, _ = _oscillation_tables(grid_l, b, depth, tail_depth)

    return FunctionTrace(
        b=b,
        depth=depth,
        tail_depth=tail_depth,
        FW_at=grid_w[::step].copy(),
        FL_at=grid_l[::step].copy(),
        osc_W=osc_w,
        osc_L=osc_l,
        cell_max_W=max_w,
        cell_min_W=min_w,
        seed=real.seed,
    )


@dataclass(frozen=True)
class GraphSamples:
    """Points (F_L(t_k), F_W(t_k)) of the graph of F plus the cell geometry"""
    x: np.ndarray
    y: np.ndarray
    widths: np.ndarray
    osc: np.ndarray

    @property
    def x_extent(self) -> float:
        return float(self.x[-1] - self.x[0])


def compose_F(trace: FunctionTrace) -> GraphSamples:
    """Graph of F = F_W o F_L^-1 sampled at the level-n b-adic times"""
    widths = np.diff(trace.FL_at)
    if np.any(widths <= 0.0):
        bad = int(np.argmax(widths <= 0.0))
        raise NonMonotoneError(f"F_L is not strictly increasing at cell {bad}")
    return GraphSamples(x=trace.FL_at, y=trace.FW_at, widths=widths,
                        osc=trace.osc_W[trace.depth])


def sample_traces(spec: GeneratorSpec, seeds: Sequence[int], depth: int,
                  tail_depth: int = DEFAULT_TAIL_DEPTH) -> List[FunctionTrace]:
    """One trace per seed, built in parallel, returned in seed order"""
    def job(seed):
        return build_trace(sample(spec, seed, depth + tail_depth), depth, tail_depth)
    return parallel_map(job, seeds)
