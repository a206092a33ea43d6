import math

import numpy as np
import pytest

from dyadic_sim.common import InconclusiveError, make_rng
from dyadic_sim.densities import GaussianDensity
from dyadic_sim.regions import AxisBox, load_region
from dyadic_sim.stats import (
    GridHistogram,
    chi_square_counts,
    chi_square_density,
    chi_square_uniform,
    compute_session_metrics,
    conditional_independence_check,
    empirical_tv,
    ks_uniformity_of_pvalues,
    tail_exponent,
)


def test_tail_exponent_of_zipf():
    p = np.arange(1, 1001, dtype=float) ** -2.0
    assert np.isclose(tail_exponent(p / p.sum()), 2.0, atol=1e-9)


def test_tail_exponent_errors():
    with pytest.raises(ValueError):
        tail_exponent(np.full(50, 0.02))
    with pytest.raises(ValueError):
        tail_exponent(np.full(200, 0.005))


def test_grid_histogram_counts_outside_samples(tmp_path):
    samples = np.array([[0.1, 0.1], [0.6, 0.9], [1.5, 0.5]])
    hist = GridHistogram.from_samples(samples, [0, 0], [1, 1], 2)
    assert hist.outside == 1
    assert hist.total == 3
    assert hist.counts.tolist() == [[1, 0], [0, 1]]
    lo, hi = hist.cell_bounds()
    assert np.allclose(lo[1], [0.0, 0.5]) and np.allclose(hi[1], [0.5, 1.0])
    path = str(tmp_path / "hist.csv")
    hist.to_csv(path)
    with open(path) as f:
        assert len(f.readlines()) == 5


def test_chi_square_pools_small_cells():
    result = chi_square_counts([10, 10, 1, 1], [10, 10, 1, 1])
    assert result.merged_cells == 2
    assert result.dof == 1
    assert np.isclose(result.statistic, 0.0)
    assert np.isclose(result.p_value, 1.0)


def test_chi_square_edge_cases():
    result = chi_square_counts([50, 50, 3], [50, 50, 0], min_expected=0)
    assert result.statistic == math.inf
    assert result.p_value == 0.0
    with pytest.raises(InconclusiveError):
        chi_square_counts([5], [5])


def test_chi_square_uniform():
    square = load_region("unit-square")
    rng = make_rng(0)
    assert chi_square_uniform(rng.uniform(size=(5000, 2)), square, bins=8).p_value > 1e-4
    corner = rng.uniform(0, 0.5, size=(5000, 2))
    assert chi_square_uniform(corner, square, bins=8).p_value < 1e-10


def test_chi_square_density():
    gauss = GaussianDensity(np.zeros(2), np.eye(2))
    rng = make_rng(1)
    samples = gauss.sample(5000, rng)
    assert chi_square_density(samples, gauss, bins=8).p_value > 1e-4
    assert chi_square_density(2 * samples, gauss, bins=8).p_value < 1e-10


def test_empirical_tv():
    rng = make_rng(2)
    square = AxisBox([0, 0], [1, 1])
    far = AxisBox([1.5, 1.5], [2.5, 2.5])
    disjoint = empirical_tv(rng.uniform(size=(1000, 2)), far)
    assert np.isclose(disjoint.value, 1.0)
    close = empirical_tv(rng.uniform(size=(20_000, 2)), square)
    assert close.value < 0.08
    assert close.radius > 0
    assert close.samples == 20_000


def test_conditional_independence_check():
    rng = make_rng(3)
    cubes = [(0, (0, 0))] * 2000 + [(1, (1, 1))] * 100
    independent = rng.uniform(size=(2100, 2))
    report = conditional_independence_check(cubes, independent)
    assert report.passed
    # the sparse cube is skipped; 2 KS + 1 correlation + 1 contingency test remain
    assert len(report.cubes) == 1
    assert report.tests == 4
    assert np.isclose(report.threshold, 0.01 / 4)

    x = rng.uniform(size=2100)
    coupled = np.column_stack([x, x])
    assert not conditional_independence_check(cubes, coupled).passed

    with pytest.raises(InconclusiveError):
        conditional_independence_check(cubes[:100], independent[:100])


def test_independence_uses_cube_coordinates():
    rng = make_rng(4)
    cubes = [(2, (1, 3))] * 1000
    # side 1/4, cube [0.25, 0.5] x [0.75, 1]
    outputs = np.column_stack([0.25 + rng.uniform(size=1000) / 4, 0.75 + rng.uniform(size=1000) / 4])
    report = conditional_independence_check(cubes, outputs)
    assert report.passed
    assert report.to_dict()["cubes"][0]["cube"] == [2, [1, 3]]


def test_ks_uniformity_of_pvalues():
    assert ks_uniformity_of_pvalues(np.linspace(0.005, 0.995, 100)) > 0.5
    assert ks_uniformity_of_pvalues(np.full(100, 0.001)) < 1e-10


def test_compute_session_metrics():
    cubes = [(0, (0, 0)), (0, (0, 1)), (0, (0, 0)), (0, (1, 0))]
    metrics = compute_session_metrics(cubes, [1, 2, 1, 2])
    assert metrics["mean_bits"] == 1.5
    assert metrics["max_bits"] == 2.0
    assert metrics["sessions"] == 4.0
    prefixed = compute_session_metrics(cubes, [1, 2, 1, 2], metric_prefix="prefix")
    assert prefixed["prefix/mean_bits"] == 1.5
    probabilities = {(0, (0, 0)): 1 / 3, (0, (0, 1)): 1 / 3, (0, (1, 0)): 1 / 3}
    many = cubes * 30
    metrics = compute_session_metrics(many, [1] * len(many), probabilities)
    assert 0 < metrics["cube_chi2_p_value"] <= 1
