"""Tests for the acceptance runner"""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent.parent))
sys.path.insert(0, str(Path(__file__).parent))

from runner import run_tests
from cascade_lab.generator import load_spec
from cascade_lab.verify import VerifyConfig, results_frame, run_verify, seed_sweep

SPECS = Path(__file__).parent.parent / "specs"
CANONICAL = load_spec(SPECS / "canonical.json")
MULTINOMIAL = load_spec(SPECS / "multinomial.json")


def test_exact_identities_pass():
    results = run_verify(CANONICAL, VerifyConfig(), ["A1", "A2", "A3"], progress=False)
    assert [r.name for r in results] == ["A1", "A2", "A3"]
    assert all(r.passed and not r.refused for r in results), [r.detail for r in results]
    frame = results_frame(results)
    assert list(frame.columns) == ["criterion", "passed", "detail"]
    print("✅ exact identities hold for the canonical spec")


def test_conservative_spec_is_refused():
    results = run_verify(MULTINOMIAL, VerifyConfig(), ["A4", "A6"], progress=False)
    assert all(r.refused and not r.passed for r in results)
    assert "conservative" in results[0].detail
    print("✅ theorem criteria refused for a conservative spec")


def test_unknown_criterion():
    try:
        run_verify(CANONICAL, VerifyConfig(), ["A12"], progress=False)
        raise AssertionError("expected ValueError")
    except ValueError:
        pass
    print("✅ unknown criterion names are rejected")


def test_seed_sweep():
    summary = seed_sweep(lambda seed: float(seed % 7), master_seed=4, count=20)
    assert summary.values.size == 20
    assert abs(summary.mean - summary.values.mean()) < 1e-12
    assert summary.stderr > 0.0
    again = seed_sweep(lambda seed: float(seed % 7), master_seed=4, count=20)
    assert np.array_equal(summary.values, again.values)
    print("✅ seed sweeps are reproducible")


def test_martingale_criterion():
    result = run_verify(CANONICAL, VerifyConfig(), ["A4"], progress=False)[0]
    assert not result.refused
    assert result.passed, result.detail
    assert result.detail.startswith("q=0: mean=1.0000")
    print(f"✅ martingale criterion passes: {result.detail}")


def test_energy_criterion():
    result = run_verify(CANONICAL, VerifyConfig(), ["A9"], progress=False)[0]
    assert result.passed, result.detail
    assert "floor" in result.detail
    print(f"✅ energy criterion passes: {result.detail}")


def test_criterion_errors_stay_local():
    config = VerifyConfig(depth=8, tail_depth=2, seeds=1, window=(2, 12))
    failed, exact = run_verify(CANONICAL, config, ["A5", "A1"], progress=False)
    assert not failed.passed and failed.detail.startswith("ValueError")
    assert exact.passed
    print("✅ a raising criterion fails alone")


def main():
    tests = [
        ("Exact identities", test_exact_identities_pass),
        ("Refusal", test_conservative_spec_is_refused),
        ("Unknown criterion", test_unknown_criterion),
        ("Seed sweep", test_seed_sweep),
        ("Martingale", test_martingale_criterion),
        ("Energy", test_energy_criterion),
        ("Criterion errors", test_criterion_errors_stay_local),
    ]
    return run_tests(tests)


if __name__ == "__main__":
    sys.exit(main())
