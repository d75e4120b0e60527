"""Tests for mu_q tables, pushforwards, local dimensions, Cantor filters and energies"""

import math
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent.parent))
sys.path.insert(0, str(Path(__file__).parent))

from runner import run_tests
from cascade_lab.cascade import build_trace, derive_seed, sample
from cascade_lab.errors import BinningError, DepthError, EmptyBallError
from cascade_lab.generator import load_spec
from cascade_lab.measures import (
    MassMap,
    build_mu_q,
    cantor_filter,
    energy_of_points,
    local_dimension,
    partition_sum,
    pushforward,
    riesz_energy,
    sample_from_massmap,
)
from cascade_lab.spectrum import derivatives
from cascade_lab.verify import (
    VerifyConfig,
    cantor_complements,
    divergent_growth_floor,
    energy_growth,
    local_dimension_slopes,
    typical_holder_exponents,
)

SPECS = Path(__file__).parent.parent / "specs"
CANONICAL = load_spec(SPECS / "canonical.json")
MULTINOMIAL = load_spec(SPECS / "multinomial.json")


def _pair(spec, seed, depth, tail=6, q=1.0):
    real = sample(spec, seed, depth + tail)
    return real, build_trace(real, depth, tail), build_mu_q(real, q, depth, tail)


def test_uniform_table_at_q_zero():
    table = build_mu_q(sample(MULTINOMIAL, 0, 12), 0.0, 6, 6)
    assert abs(table.tau + 1.0) < 1e-12
    assert np.allclose(table.masses, 2.0 ** -6, rtol=1e-12)
    assert abs(table.total - 1.0) < 1e-12
    print("✅ q = 0 multinomial masses are uniform")


def test_refinement_consistency():
    real = sample(CANONICAL, 8, 10)
    fine = build_mu_q(real, 1.0, 5, 4)
    coarse = build_mu_q(real, 1.0, 4, 5)
    assert np.allclose(fine.masses.reshape(-1, 2).sum(axis=1), coarse.masses, rtol=1e-9)
    assert np.all(fine.masses >= 0.0)
    print("✅ children masses sum to the parent mass")


def test_no_tail_is_partition_sum():
    real = sample(CANONICAL, 3, 9)
    table = build_mu_q(real, 1.5, 9, 0)
    assert abs(table.total - partition_sum(real, 1.5, 9)) < 1e-12 * max(1.0, table.total)
    assert table.total == math.fsum(table.masses)
    try:
        build_mu_q(real, 1.0, 6, 6)
        raise AssertionError("expected DepthError")
    except DepthError:
        pass
    print("✅ tail depth 0 gives Y_{q,n}")


def test_partition_sum_has_mean_one():
    values = np.array([partition_sum(sample(CANONICAL, derive_seed(5, i), 8), 1.0, 8)
                       for i in range(200)])
    se = values.std(ddof=1) / math.sqrt(values.size)
    assert abs(values.mean() - 1.0) <= 4.0 * se
    print(f"✅ E Y_(1,8) = 1: mean {values.mean():.4f} (se {se:.4f})")


def test_pushforward_conserves_mass():
    _, trace, table = _pair(CANONICAL, 4, 8)
    total = table.total
    for target, theta in (("domain", 0.0), ("range", 0.0), ("graph", 0.0), ("projection", 0.6)):
        mapped = pushforward(table, trace, target, theta=theta)
        assert abs(mapped.total - total) <= 1e-12 * total, target
    print("✅ every pushforward conserves mass")


def test_projection_at_zero_is_range():
    _, trace, table = _pair(CANONICAL, 6, 8)
    rng = pushforward(table, trace, "range")
    proj = pushforward(table, trace, "projection", theta=0.0)
    assert np.array_equal(rng.edges[0], proj.edges[0])
    assert np.array_equal(rng.masses, proj.masses)
    print("✅ projection at theta = 0 is the range pushforward")


def test_domain_pushforward_uniform():
    real = sample(MULTINOMIAL, 1, 14)
    trace = build_trace(real, 8, 6)
    table = build_mu_q(real, 0.0, 8, 6)
    domain = pushforward(table, trace, "domain")
    assert domain.masses.size == 256
    assert np.allclose(domain.masses, 1.0 / 256, rtol=1e-10)
    print("✅ q = 0 domain pushforward is uniform")


def test_binning_floor():
    _, trace, table = _pair(MULTINOMIAL, 0, 4)
    try:
        pushforward(table, trace, "domain", bins=2 ** 45)
        raise AssertionError("expected BinningError")
    except BinningError:
        pass
    print("✅ bins below 2^-40 are refused")


def test_local_dimension_closed_forms():
    edges = np.linspace(0.0, 1.0, 1025)
    radii = [0.01, 0.02, 0.04, 0.08]

    uniform = MassMap("domain", (edges,), np.full(1024, 1.0 / 1024))
    result = local_dimension(uniform, [0.3, 0.5, 0.7], radii)
    assert abs(result.median - 1.0) <= 0.02

    atom = np.zeros(1024)
    atom[512] = 1.0
    point = MassMap("domain", (edges,), atom)
    centre = float(point.centres[512])
    assert abs(local_dimension(point, [centre], radii).median) <= 1e-9

    try:
        local_dimension(point, [0.05], radii)
        raise AssertionError("expected EmptyBallError")
    except EmptyBallError:
        pass
    try:
        local_dimension(uniform, [0.5], radii[:3])
        raise AssertionError("expected ValueError")
    except ValueError:
        pass
    print("✅ local dimension: Lebesgue 1, point mass 0")


def test_sampled_points_follow_mass():
    edges = np.linspace(0.0, 1.0, 11)
    masses = np.zeros(10)
    masses[3] = 1.0
    points = sample_from_massmap(MassMap("range", (edges,), masses), 50, seed=2)
    assert np.allclose(points, 0.35)
    print("✅ points are drawn where the mass is")


def test_cantor_filter_extremes_and_monotonicity():
    real, trace, table = _pair(CANONICAL, 9, 8)
    everything = cantor_filter(real, trace, 1.0, math.inf, 4, table)
    assert everything.surviving.all()
    assert everything.surviving_words.size == 2 ** 8
    assert abs(everything.retained_mass - table.total) <= 1e-12 * table.total

    tiny = cantor_filter(real, trace, 1.0, 1e-6, 4, table)
    assert tiny.retained_mass <= 0.05 * table.total

    narrow = cantor_filter(real, trace, 1.0, 0.1, 4, table)
    wide = cantor_filter(real, trace, 1.0, 0.3, 4, table)
    assert np.all(wide.surviving[narrow.surviving])
    assert narrow.retained_mass <= wide.retained_mass
    assert sorted(narrow.complement_mass_by_level) == list(range(4, 9))
    print("✅ Cantor filter bands shrink with epsilon")


def test_two_point_energy():
    a, b, d = 0.3, 0.7, 0.5
    est = energy_of_points([0.0, 0.0], [0.0, d], [a, b], 1.0, "range")
    assert abs(est.value - (a * a + b * b + 2 * a * b / d)) < 1e-12
    assert est.pair_count == 1 and not est.subsampled
    print("✅ two-point energy by hand")


def test_energy_limits_and_monotonicity():
    rng = np.random.default_rng(0)
    x, y = rng.uniform(0, 0.5, 60), rng.uniform(0, 0.5, 60)
    m = rng.uniform(0, 1, 60)
    total = m.sum()
    low = energy_of_points(x, y, m, 1e-9, "graph").value
    assert abs(low - total ** 2) <= 1e-6 * total ** 2

    values = [energy_of_points(x, y, m, g, "graph").value for g in (0.5, 1.0, 1.5)]
    assert values[0] <= values[1] <= values[2]
    print("✅ energy tends to total^2 and grows with gamma")


def test_subsampled_energy_is_unbiased():
    rng = np.random.default_rng(1)
    x, y = rng.uniform(0, 1, 200), rng.uniform(0, 1, 200)
    m = rng.uniform(0, 1, 200) / 200
    exact = energy_of_points(x, y, m, 0.5, "graph")
    approx = energy_of_points(x, y, m, 0.5, "graph", pair_budget=5_000, seed=3)
    assert approx.subsampled and approx.stderr > 0.0
    assert abs(approx.value - exact.value) <= 6.0 * approx.stderr
    print("✅ subsampled energy within its standard error")


def test_riesz_energy_on_realization():
    _, trace, table = _pair(CANONICAL, 2, 6)
    est = riesz_energy(table, trace, 0.8, "graph")
    assert est.value >= table.total ** 2 * (1 - 1e-12)
    assert est.pair_count == 64 * 63 // 2
    _, other_trace, _ = _pair(CANONICAL, 2, 5)
    try:
        riesz_energy(table, other_trace, 0.8, "graph")
        raise AssertionError("expected ValueError")
    except ValueError:
        pass
    print("✅ realization energy bounded below by total^2")


def test_canonical_local_dimension_and_holder():
    config = VerifyConfig(depth=14)
    point = derivatives(CANONICAL, 1.0)
    local = float(np.nanmedian(local_dimension_slopes(CANONICAL, config)))
    holder = float(np.nanmedian(typical_holder_exponents(CANONICAL, config)))
    assert abs(local - point.tau_star) <= 0.15, local
    assert abs(holder - point.tau_prime) <= 0.15, holder
    print(f"✅ mu_1-typical local dimension {local:.4f}, Holder exponent {holder:.4f}")


def test_energy_dichotomy_small_levels():
    config = VerifyConfig(energy_levels=(5, 6, 7, 8), energy_seeds=2, tail_depth=4)
    critical = derivatives(CANONICAL, 1.0).gammaG
    below = energy_growth(CANONICAL, config, critical - 0.3)
    above = energy_growth(CANONICAL, config, critical + 0.3)
    assert below <= 1.5 and above > below, (below, above)
    assert 1.0 < divergent_growth_floor(CANONICAL) < 2.0 ** 0.3

    _, trace, table = _pair(CANONICAL, 1, 7, tail=4)
    values = [riesz_energy(table, trace, g, "graph").value for g in (0.5, 1.0, 1.5, 2.0)]
    assert all(a <= b for a, b in zip(values, values[1:]))
    print(f"✅ energy growth/level {below:.3f} below gammaG, {above:.3f} above")


def test_cantor_complement_decays():
    config = VerifyConfig(cantor_levels=(4, 6, 8), cantor_seeds=2, tail_depth=4)
    complements = cantor_complements(CANONICAL, config)
    assert np.all(np.diff(complements) <= 1e-15) and complements[-1] < complements[0], complements
    print("✅ Cantor complement mass falls as the first filtered level grows")


def main():
    tests = [
        ("Uniform table", test_uniform_table_at_q_zero),
        ("Refinement", test_refinement_consistency),
        ("Partition sum", test_no_tail_is_partition_sum),
        ("Martingale mean", test_partition_sum_has_mean_one),
        ("Conservation", test_pushforward_conserves_mass),
        ("Projection at 0", test_projection_at_zero_is_range),
        ("Uniform domain", test_domain_pushforward_uniform),
        ("Binning floor", test_binning_floor),
        ("Local dimension", test_local_dimension_closed_forms),
        ("Sampling", test_sampled_points_follow_mass),
        ("Cantor filter", test_cantor_filter_extremes_and_monotonicity),
        ("Two-point energy", test_two_point_energy),
        ("Energy limits", test_energy_limits_and_monotonicity),
        ("Subsampled energy", test_subsampled_energy_is_unbiased),
        ("Realization energy", test_riesz_energy_on_realization),
        ("Canonical local dimension", test_canonical_local_dimension_and_holder),
        ("Energy dichotomy", test_energy_dichotomy_small_levels),
        ("Cantor decay", test_cantor_complement_decays),
    ]
    return run_tests(tests)


if __name__ == "__main__":
    sys.exit(main())
