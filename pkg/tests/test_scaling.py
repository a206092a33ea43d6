import math

import numpy as np
import pytest

from dyadic_sim.common import LOG2E, Estimate, McParams
from dyadic_sim.regions import Ellipsoid, load_region
from dyadic_sim.scaling import (
    BoundsReport,
    ScalingMatrix,
    bound_thm1,
    bound_thm2,
    bound_thm3,
    bounds_report,
    find_scaling,
    prop2_bound,
    randomized_shift_scale,
)

MC = McParams(sample_count=20_000, seed=0)


def test_projection_bound():
    h, g = bound_thm1(load_region("unit-square"))
    assert np.isclose(h, 2 + 2 * (2 + LOG2E))
    assert np.isclose(h, 8.885, atol=1e-3)
    assert np.isclose(h - g, 4)
    h, _ = bound_thm1(load_region("ellipse-elongated"))
    assert np.isclose(h, 13.906, atol=1e-3)


def test_scaled_projection_bound():
    projection, _, _ = bound_thm2(load_region("ellipse-elongated"), MC)
    assert np.isclose(projection, 9.234, atol=2e-3)
    projection, _, _ = bound_thm2(load_region("ellipse-example1"), MC)
    assert np.isclose(projection, 9.441, atol=2e-3)


def test_scaled_bound_is_invariant_under_diagonal_scaling():
    unit = bound_thm2(Ellipsoid(np.eye(2)), MC)[0]
    stretched = bound_thm2(load_region("ellipse-elongated"), MC)[0]
    assert np.isclose(unit, stretched)


def test_truncated_form_on_gaussian():
    gauss = load_region("gauss-example2")
    projection, truncated, g_form = bound_thm2(gauss, MC)
    assert projection is None
    assert np.isclose(truncated.value - g_form.value, 2 * gauss.n)


def test_logconcave_bound():
    h, g = bound_thm3(2, 0.0)
    assert np.isclose(h, 29.59, atol=0.01)
    assert np.isclose(g, 23.77, atol=0.01)
    h1, _ = bound_thm3(2, 1.0)
    assert np.isclose(h1 - h, 1.0)


def test_find_scaling_of_elongated_ellipse():
    scaling = find_scaling(load_region("ellipse-elongated"))
    assert np.allclose(scaling.d, [10.0, 0.1], rtol=1e-3)
    assert np.isclose(np.prod(scaling.d), 1.0)
    scaled = scaling.apply(load_region("ellipse-elongated"))
    assert np.isclose(scaled.volume, math.pi / 100)


def test_find_scaling_of_gaussian_equalizes_variances():
    gauss = load_region("gauss-example2")
    scaling = find_scaling(gauss, MC)
    assert np.isclose(np.prod(scaling.d), 1.0)
    # the two x-marginals are mirror images; only Monte Carlo noise separates them
    assert np.isclose(scaling.d[0], scaling.d[1], rtol=0.1)


def test_scaling_matrix_rejects_nonpositive_entries():
    with pytest.raises(AssertionError):
        ScalingMatrix([1.0, 0.0])
    assert np.allclose(ScalingMatrix([2.0, 0.5]).matrix, np.diag([2.0, 0.5]))


def test_randomized_shift_scale():
    square = load_region("unit-square")
    image = randomized_shift_scale(square, 2, rng_seed=0)
    assert 1.0 <= image.volume <= 4.0
    lo, hi = image.bounding_box
    assert np.all(lo >= 0) and np.all(lo <= 4)
    fixed = randomized_shift_scale(square, 2, theta=1.0, shift=[0.5, 0.5])
    assert np.allclose(fixed.bounding_box[0], [0.5, 0.5])
    assert np.allclose(fixed.bounding_box[1], [2.5, 2.5])
    with pytest.raises(ValueError):
        randomized_shift_scale(square, 1, rng_seed=0)
    with pytest.raises(ValueError):
        randomized_shift_scale(square, 2.5, rng_seed=0)


def test_erosion_bound_of_unit_square():
    bound = prop2_bound(load_region("unit-square"), MC)
    # log V + n h = 3 log2 e for the unit square
    assert abs(bound.value - 4 - 3 * LOG2E) < 0.12


def test_bounds_report_of_unit_square():
    report = bounds_report(load_region("unit-square"), 4, McParams(sample_count=5000, seed=0))
    assert report.h_measured == (0.0, 0.0)
    assert report.i_d.value == 0.0
    assert np.allclose(report.scaling.d, [1.0, 1.0], rtol=1e-6)
    assert report.thm3 is None
    assert report.prop2 is not None
    assert report.check_ordering() == []
    summary = report.to_dict()
    assert summary["violations"] == []
    assert summary["region"] == "unit-square"


def test_check_ordering_uses_the_matching_bracket_ends():
    report = BoundsReport(
        region="wide-bracket",
        n=2,
        i_d=Estimate(4.0),
        erosion=None,
        h_measured=(3.0, 50.0),
        k_max=4,
        scaling=ScalingMatrix([1.0, 1.0]),
        h_scaled=(3.0, 50.0),
        thm1=(10.0, 6.0),
        thm2_projection=10.0,
        thm2_truncated=Estimate(10.0),
        thm3=(10.0, 4.0),
        prop2=Estimate(10.0),
    )
    failures = report.check_ordering()
    assert "I_D > H(W_A)" in failures
    assert len(failures) == 6

    tight = BoundsReport("tight", 2, Estimate(2.0), None, (3.0, 5.0), 4, ScalingMatrix([1.0, 1.0]), (3.0, 5.0),
                         thm1=(10.0, 6.0), thm2_projection=10.0, thm3=(10.0, 4.0), prop2=Estimate(10.0))
    assert tight.check_ordering() == []
