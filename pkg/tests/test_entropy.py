import math

import numpy as np
import pytest
from scipy import special

from dyadic_sim.common import LOG2E, McParams
from dyadic_sim.densities import GaussianDensity, load_density
from dyadic_sim.entropy import (
    AxisSegment,
    Box,
    FullCube,
    differential_entropy,
    dual_total_correlation,
    erosion_entropy,
    lemma3_gap,
    lemma4_gap,
    logconcave_trunc_gap_bound,
    truncated_entropy,
)
from dyadic_sim.regions import Ellipsoid, load_region, transform

MC = McParams(sample_count=20_000, seed=0)


def test_interval_erosion_entropy_is_log_e():
    h = erosion_entropy(load_region("uniform-interval"), FullCube(), MC)
    assert abs(h.value - LOG2E) < 0.06
    assert h.samples == 20_000


def test_unit_square_erosion_entropy():
    # min of two uniforms: E[-ln] = 3/2
    h = erosion_entropy(load_region("unit-square"), FullCube(), MC)
    assert abs(h.value - 1.5 * LOG2E) < 0.06
    assert h.lower < 1.5 * LOG2E + 0.06


def test_axis_segment_erosion():
    h = erosion_entropy(load_region("unit-square"), AxisSegment(0), MC)
    assert abs(h.value - LOG2E) < 0.06


def test_erosion_entropy_scales_by_log_alpha():
    square = load_region("unit-square")
    base = erosion_entropy(square, FullCube(), MC)
    doubled = erosion_entropy(transform(square, scale=2.0), FullCube(), MC)
    assert np.isclose(doubled.value, base.value - 1, atol=1e-6)
    # stretching the basis by beta adds log2 beta
    stretched = erosion_entropy(square, Box((2.0, 2.0)), MC)
    assert np.isclose(stretched.value, base.value + 1, atol=1e-6)


def test_erosion_entropy_is_reproducible():
    disk = load_region("unit-disk")
    mc = McParams(sample_count=2000, seed=3)
    assert erosion_entropy(disk, FullCube(), mc).value == erosion_entropy(disk, FullCube(), mc).value


class PinnedCube(FullCube):
    """Full cube basis whose first sample sits on the boundary."""

    def phi(self, region, points):
        phi = np.array(super().phi(region, points), dtype=float)
        phi[0] = 0.0
        return phi


def test_erosion_entropy_rejects_zero_scale_samples():
    with pytest.raises(ValueError, match="admit no scaled copy"):
        erosion_entropy(load_region("unit-square"), PinnedCube(), McParams(sample_count=2000, seed=0))


def test_differential_entropy():
    gauss = GaussianDensity(np.zeros(2), np.eye(2))
    assert np.isclose(differential_entropy(gauss).value, math.log2(2 * math.pi * math.e))
    assert np.isclose(differential_entropy(load_region("l-shape")).value, math.log2(3))
    tri = load_density({"family": "triangular"})
    assert np.isclose(differential_entropy(tri).value, -1 + 0.5 * LOG2E)


def test_dual_total_correlation_of_ellipses():
    elongated = load_region("ellipse-elongated")
    assert np.isclose(dual_total_correlation(elongated).value, math.log2(math.pi / math.e), atol=1e-12)
    assert np.isclose(dual_total_correlation(elongated).value, 0.2088, atol=1e-4)
    assert np.isclose(dual_total_correlation(load_region("ellipse-example1")).value, 0.416, atol=1e-3)
    assert np.isclose(dual_total_correlation(Ellipsoid(np.eye(2))).value, 0.2088, atol=1e-4)


def test_dual_total_correlation_of_gaussians():
    assert np.isclose(dual_total_correlation(GaussianDensity(np.zeros(3), np.eye(3))).value, 0.0)
    gauss = load_region("gauss-example2")
    assert np.isclose(dual_total_correlation(gauss).value, 0.5 * math.log2(4 / 3))


def test_dual_total_correlation_monte_carlo():
    # section lengths are (2, 2) on one cell and (1, 2) or (2, 1) on the others
    h = dual_total_correlation(load_region("l-shape"), MC)
    expected = math.log2(3) - 4 / 3
    assert abs(h.value - expected) < 0.02
    assert dual_total_correlation(load_region("unit-square"), MC).value == 0.0


def test_gaussian_gaps():
    gauss = GaussianDensity(np.zeros(2), np.eye(2))
    assert np.isclose(lemma3_gap(gauss).value, LOG2E)
    assert np.isclose(lemma4_gap(gauss).value, 0.5 * LOG2E)
    correlated = load_region("gauss-example2").density
    assert 0 <= lemma3_gap(correlated).value <= correlated.n * LOG2E


def test_truncated_entropy_of_triangle():
    tri = load_density({"family": "triangular"})
    xi, h = truncated_entropy(tri, 0.5)
    assert np.isclose(xi, 2 - math.sqrt(2), atol=1e-6)
    assert h.value > differential_entropy(tri).value


def test_truncated_entropy_of_gaussian():
    gauss = GaussianDensity(np.zeros(2), np.eye(2))
    xi, h = truncated_entropy(gauss, 1.0)
    assert xi == gauss.fmax
    assert np.isclose(h.value, gauss.entropy())
    xi, h = truncated_entropy(gauss, 0.5)
    assert xi < gauss.fmax
    assert np.isclose(gauss.clipped_mass(xi), 0.5)
    # truncation can only raise the entropy by the log-concave gap bound
    bound, _, _ = logconcave_trunc_gap_bound(2, 0.5)
    assert gauss.entropy() <= h.value <= gauss.entropy() + bound
    with pytest.raises(AssertionError):
        truncated_entropy(gauss, 0.0)


def test_logconcave_trunc_gap_bound():
    bound, simplified, nu = logconcave_trunc_gap_bound(1, 1.0)
    assert nu == 0.0
    assert np.isclose(bound, LOG2E)
    bound, simplified, nu = logconcave_trunc_gap_bound(2, 0.5)
    assert np.isclose(special.gammaincc(3, nu), 0.5)
    assert simplified is not None and bound <= simplified
    _, simplified, _ = logconcave_trunc_gap_bound(4, 1e-3)
    assert simplified is None
