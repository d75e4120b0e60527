"""Tests for scaling fits, L^q spectra and box counts"""

import math
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent.parent))
sys.path.insert(0, str(Path(__file__).parent))

from runner import run_tests
from cascade_lab.cascade import FunctionTrace, build_trace, sample
from cascade_lab.errors import DegenerateError, OutOfRangeError
from cascade_lab.estimators import (
    box_count,
    fit_dimension,
    holder_exponents,
    legendre_numeric,
    lq_spectrum,
)
from cascade_lab.generator import load_spec
from cascade_lab.spectrum import derivatives, tau_grid
from cascade_lab.verify import VerifyConfig, graph_slopes, levelset_slopes, lq_table

SPECS = Path(__file__).parent.parent / "specs"
CANONICAL = load_spec(SPECS / "canonical.json")
MULTINOMIAL = load_spec(SPECS / "multinomial.json")


def linear_trace(depth: int = 10) -> FunctionTrace:
    """Trace of f(x) = x: every level-j cell has oscillation 2^-j"""
    grid = np.linspace(0.0, 1.0, 2 ** depth + 1)
    osc = tuple(np.full(2 ** j, 2.0 ** -j) for j in range(depth + 1))
    return FunctionTrace(b=2, depth=depth, tail_depth=0, FW_at=grid, FL_at=grid.copy(),
                         osc_W=osc, osc_L=osc, cell_max_W=grid[1:], cell_min_W=grid[:-1])


def test_fit_dimension_closed_forms():
    j = np.arange(15)
    fit = fit_dimension(2.0 ** j, (2, 12))
    assert abs(fit.slope - 1.0) < 1e-12 and abs(fit.r2 - 1.0) < 1e-12

    flat = fit_dimension(np.full(15, 7.0), (2, 12))
    assert abs(flat.slope) < 1e-12

    synthetic = fit_dimension(np.round(2.0 ** (1.263 * j)), (2, 14))
    assert abs(synthetic.slope - 1.263) <= 0.01

    by_level = fit_dimension({3: 8.0, 4: 16.0, 5: 32.0}, (3, 5))
    assert abs(by_level.slope - 1.0) < 1e-12
    try:
        fit_dimension(2.0 ** j, (3, 4))
        raise AssertionError("expected DegenerateError")
    except DegenerateError:
        pass
    print("✅ fit_dimension on synthetic counts")


def test_noisy_fit_is_flagged():
    counts = np.array([1, 50, 3, 80, 2, 60, 4, 90], dtype=float)
    fit = fit_dimension(counts, (0, 7))
    assert fit.low_confidence and fit.r2 < 0.9
    print("✅ low r2 fits are flagged, not refused")


def test_lq_spectrum_of_linear_function():
    spectrum = lq_spectrum(linear_trace(), [-1.0, 0.0, 1.0, 2.0], (2, 8))
    assert np.allclose(spectrum.tau_hat, [-2.0, -1.0, 0.0, 1.0], atol=1e-9)
    assert list(spectrum.to_frame().columns) == ["q", "tau_hat", "r2"]
    estimate = spectrum.legendre([1.0])
    assert abs(estimate.dim[0] - 1.0) < 1e-9
    print("✅ tau_hat(q) = q - 1 for f(x) = x")


def test_lq_spectrum_at_zero_counts_cells():
    trace = build_trace(sample(CANONICAL, 3, 16), 10, 6)
    spectrum = lq_spectrum(trace, [0.0], (3, 9))
    assert abs(spectrum.tau_hat[0] + 1.0) < 1e-9
    print("✅ tau_hat(0) = -1 when every cell oscillates")


def test_legendre_numeric():
    qs = np.linspace(-5.0, 5.0, 1001)
    estimate = legendre_numeric(qs, tau_grid(MULTINOMIAL, qs))
    point = derivatives(MULTINOMIAL, 1.0)
    value = legendre_numeric(qs, tau_grid(MULTINOMIAL, qs), [point.tau_prime]).dim[0]
    assert abs(value - point.tau_star) <= 1e-3
    assert estimate.h.size == 201 and not estimate.low_confidence

    affine_q = np.linspace(-2.0, 2.0, 9)
    affine = legendre_numeric(affine_q, affine_q - 1.0, [0.5, 1.0, 1.5])
    assert abs(affine.dim[1] - 1.0) < 1e-12
    assert affine.dim[0] < 1.0 and affine.dim[2] < 1.0

    single = legendre_numeric([1.0], [0.0])
    assert single.low_confidence and single.dim.size > 0
    print("✅ numeric Legendre transform")


def test_linear_graph_box_count():
    result = box_count(linear_trace(), "graph", window=(2, 9))
    assert np.allclose(result.counts, 2.0 * 2.0 ** np.arange(11))
    assert abs(result.fit.slope - 1.0) <= 0.02
    assert list(result.to_frame().columns) == ["j", "N_j"]
    print("✅ graph of f(x) = x has dimension 1")


def test_range_never_exceeds_graph():
    trace = build_trace(sample(CANONICAL, 5, 16), 10, 6)
    graph = box_count(trace, "graph", window=(3, 9))
    rng = box_count(trace, "range", window=(3, 9))
    proj = box_count(trace, "projection", theta=0.4, window=(3, 9))
    assert np.all(rng.counts <= graph.counts)
    assert np.all(np.diff(rng.counts) >= 0) and np.all(np.diff(graph.counts) >= 0)
    assert np.all(proj.counts >= 1)
    print("✅ range counts <= graph counts")


def test_levelset_counts():
    trace = build_trace(sample(CANONICAL, 6, 16), 10, 6)
    projected = trace.FL_at * math.sin(0.2) + trace.FW_at * math.cos(0.2)
    result = box_count(trace, "levelset", theta=0.2, y=float(np.median(projected)), window=(3, 9))
    assert np.all(result.counts <= 2.0 ** np.arange(11))
    assert np.all(result.counts >= 1)
    try:
        box_count(trace, "levelset", y=100.0)
        raise AssertionError("expected OutOfRangeError")
    except OutOfRangeError:
        pass
    print("✅ level-set counts bounded by the column count")


def test_increasing_function_levelset_is_small():
    trace = build_trace(sample(MULTINOMIAL, 0, 16), 10, 6)
    result = box_count(trace, "levelset", theta=0.0, y=0.5, window=(4, 8))
    assert np.all(result.counts <= 2)
    assert result.fit.slope <= 0.05
    print("✅ increasing F: level sets are points")


def test_holder_exponents_of_linear_function():
    exps = holder_exponents(linear_trace(), [0, 100, 1023], (2, 8))
    assert np.allclose(exps, 1.0, atol=1e-9)
    print("✅ Holder exponent 1 for f(x) = x")


def test_levelset_follows_chords():
    result = box_count(linear_trace(), "levelset", theta=0.0, y=0.3, window=(2, 8))
    assert np.all(result.counts == 1.0)

    grid = np.linspace(0.0, 1.0, 5)
    flat = FunctionTrace(b=2, depth=2, tail_depth=0, FW_at=np.zeros(5), FL_at=grid,
                         osc_W=tuple(np.ones(2 ** j) for j in range(3)),
                         osc_L=tuple(np.full(2 ** j, 2.0 ** -j) for j in range(3)),
                         cell_max_W=np.ones(4), cell_min_W=np.zeros(4))
    assert list(box_count(flat, "levelset", y=0.0, window=(0, 2)).counts) == [1.0, 2.0, 4.0]
    try:
        box_count(flat, "levelset", y=0.5, window=(0, 2))
        raise AssertionError("expected OutOfRangeError")
    except OutOfRangeError:
        pass
    print("✅ level sets cross the chords between level-n endpoints")


def test_canonical_lq_spectrum_tracks_tau():
    table = lq_table(CANONICAL, VerifyConfig(depth=14, seeds=4))
    slack = 0.1 * (1.0 + np.abs(table["q"]))
    assert np.all(np.abs(table["tau_hat"] - table["tau"]) <= slack), table
    print("✅ seed-averaged tau_hat within 0.1(1+|q|) of tau at depth 14")


def test_canonical_graph_dimension():
    slopes = graph_slopes(CANONICAL, VerifyConfig(depth=14, seeds=4))
    assert slopes.size == 4
    assert abs(np.median(slopes) - (1.0 + math.log2(1.2))) <= 0.15, slopes
    print(f"✅ median graph slope {np.median(slopes):.4f} near 1 - tau(1)")


def test_canonical_levelset_dimension():
    point = derivatives(CANONICAL, 1.0)
    slopes = levelset_slopes(CANONICAL, VerifyConfig(depth=14, levelset_draws=8))
    assert abs(np.median(slopes) - (point.tau_star - point.tau_prime)) <= 0.25, slopes
    print(f"✅ median level-set slope {np.median(slopes):.4f} near tau* - tau'")


def main():
    tests = [
        ("fit_dimension", test_fit_dimension_closed_forms),
        ("Low r2 flag", test_noisy_fit_is_flagged),
        ("Linear L^q", test_lq_spectrum_of_linear_function),
        ("L^q at 0", test_lq_spectrum_at_zero_counts_cells),
        ("Legendre numeric", test_legendre_numeric),
        ("Linear graph", test_linear_graph_box_count),
        ("Range vs graph", test_range_never_exceeds_graph),
        ("Level sets", test_levelset_counts),
        ("Increasing level sets", test_increasing_function_levelset_is_small),
        ("Holder exponents", test_holder_exponents_of_linear_function),
        ("Level-set chords", test_levelset_follows_chords),
        ("Canonical L^q", test_canonical_lq_spectrum_tracks_tau),
        ("Canonical graph", test_canonical_graph_dimension),
        ("Canonical level sets", test_canonical_levelset_dimension),
    ]
    return run_tests(tests)


if __name__ == "__main__":
    sys.exit(main())
