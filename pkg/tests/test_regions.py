import math

import numpy as np
import pytest

from dyadic_sim.common import (
    DimensionMismatchError,
    DyadicCube,
    NotOrthogonallyConvexError,
    PointOutsideRegionError,
    UnboundedProjectionError,
)
from dyadic_sim.regions import (
    AxisBox,
    CubeClass,
    DisjointUnion,
    Ellipsoid,
    build_hypograph,
    classify_cube,
    clipped_volume,
    load_region,
    max_inscribed_scale,
    projection_volume,
    region_from_spec,
    section_interval,
    standard_shift,
    transform,
)


def test_axis_box_classification_uses_closures():
    square = AxisBox([0, 0], [1, 1])
    lo = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 0.0]])
    hi = np.array([[0.5, 0.5], [2.0, 1.0], [1.5, 1.0]])
    classes = square.classify_boxes(lo, hi)
    assert list(classes) == [CubeClass.INSIDE, CubeClass.OUTSIDE, CubeClass.PARTIAL]


def test_membership_is_strict():
    square = AxisBox([0, 0], [1, 1])
    points = np.array([[0.0, 0.5], [0.5, 0.5]])
    assert list(square.contains(points)) == [False, True]
    assert list(square.closure_contains(points)) == [True, True]


def test_unit_disk_volume_and_cubes():
    disk = load_region("unit-disk")
    assert np.isclose(disk.volume, math.pi)
    assert classify_cube(disk, DyadicCube(2, (0, 0))) == CubeClass.INSIDE
    # [0.9, 1]^2 has q >= 1.62 everywhere
    lo, hi = np.array([[0.9, 0.9]]), np.array([[1.0, 1.0]])
    assert disk.classify_boxes(lo, hi)[0] == CubeClass.OUTSIDE
    assert classify_cube(disk, DyadicCube(0, (0, 0))) == CubeClass.PARTIAL


def test_ellipse_clipped_volume_is_exact():
    disk = load_region("unit-disk")
    res = clipped_volume(disk, DyadicCube(0, (0, 0)))
    assert np.isclose(res.value, math.pi / 4, rtol=1e-9)
    assert not res.flagged

    ellipse = load_region("ellipse-example1")
    lo, hi = ellipse.bounding_box
    total = ellipse.clipped_box_volume(lo, hi).value[0]
    assert np.isclose(total, ellipse.volume, rtol=1e-9)
    assert np.isclose(ellipse.volume, math.pi / math.sqrt(4 / 3))


def test_generic_clipped_volume_brackets_the_truth():
    ellipse = Ellipsoid(np.eye(3))
    res = ellipse.clipped_box_volume(np.zeros(3), np.ones(3))
    exact = 4 / 3 * math.pi / 8
    assert abs(res.value[0] - exact) <= res.error_bound[0] + 1e-12


def test_sections():
    disk = load_region("unit-disk")
    a, b = section_interval(disk, 0, [0.0, 0.6])
    assert np.isclose(a, -0.8) and np.isclose(b, 0.8)
    assert section_interval(disk, 0, [0.0, 1.5]) is None

    l_shape = load_region("l-shape")
    assert section_interval(l_shape, 0, [0.0, 0.5]) == (0.0, 2.0)
    assert section_interval(l_shape, 0, [0.0, 1.5]) == (0.0, 1.0)
    assert np.isclose(l_shape.section_length(1, np.array([[0.5, 0.0], [1.5, 0.0]])), [2.0, 1.0]).all()


def test_disconnected_section_raises():
    pair = DisjointUnion([AxisBox([0, 0], [1, 1]), AxisBox([2, 0], [3, 1])])
    with pytest.raises(NotOrthogonallyConvexError):
        section_interval(pair, 0, [0.0, 0.5])


def test_union_rejects_overlap():
    with pytest.raises(ValueError):
        DisjointUnion([AxisBox([0, 0], [1, 1]), AxisBox([0.5, 0.5], [1.5, 1.5])])


def test_union_fills_straddling_cube():
    # the root cube [0,2]^2 straddles both halves of this square
    halves = DisjointUnion([AxisBox([0, 0], [1, 2]), AxisBox([1, 0], [2, 2])])
    assert classify_cube(halves, DyadicCube(-1, (0, 0))) == CubeClass.INSIDE


def test_l_shape_fixture():
    l_shape = load_region("l-shape")
    assert l_shape.name == "l-shape"
    assert np.isclose(l_shape.volume, 3.0)
    assert classify_cube(l_shape, DyadicCube(0, (1, 1))) == CubeClass.OUTSIDE
    assert classify_cube(l_shape, DyadicCube(0, (0, 1))) == CubeClass.INSIDE
    half = load_region("l-shape-half")
    assert np.isclose(half.volume, 0.75)


def test_hypograph():
    tri = load_region("triangular")
    assert tri.n == 2
    assert tri.volume == 1.0
    assert list(tri.contains(np.array([[0.5, 0.5], [0.5, 1.5], [0.5, -0.1]]))) == [True, False, False]
    assert np.isclose(projection_volume(tri, 1).value, 1.0)

    gauss = load_region("gauss-example2")
    assert gauss.n == 3
    with pytest.raises(UnboundedProjectionError):
        projection_volume(gauss, 2)


def test_hypograph_clipped_volume_matches_triangle():
    tri = build_hypograph({"family": "triangular"})
    # area under f(x) = 2(1 - x) over [0, 0.5], capped at z < 1
    res = tri.clipped_box_volume(np.array([[0.0, 0.0]]), np.array([[0.5, 1.0]]))
    assert np.isclose(res.value[0], 0.5, atol=1e-6)


def test_transform_keeps_simple_forms():
    box = transform(AxisBox([0, 0], [1, 1]), scale=[2, 3], shift=[1, 0])
    assert isinstance(box, AxisBox)
    assert np.allclose(box.lo, [1, 0]) and np.allclose(box.hi, [3, 3])
    ellipse = transform(load_region("unit-disk"), scale=[10, 0.1])
    assert isinstance(ellipse, Ellipsoid)
    assert np.isclose(ellipse.volume, math.pi)
    shifted = standard_shift(load_region("unit-disk"))
    assert np.allclose(shifted.bounding_box[0], 0.0)


def test_max_inscribed_scale():
    square = AxisBox([0, 0], [1, 1])
    points = np.array([[0.25, 0.5], [0.9, 0.1]])
    assert np.allclose(max_inscribed_scale(square, points), [0.5, 0.1], atol=1e-8)
    box_base = max_inscribed_scale(square, points, base=np.array([2.0, 1.0]))
    assert np.allclose(box_base, [0.375, 0.05], atol=1e-8)
    with pytest.raises(PointOutsideRegionError):
        max_inscribed_scale(square, np.array([[1.5, 0.5]]))


def test_spec_errors():
    with pytest.raises(ValueError):
        load_region("no-such-region")
    with pytest.raises(DimensionMismatchError):
        region_from_spec({"kind": "AxisBox", "n": 3, "params": {"lo": [0, 0], "hi": [1, 1]}})
    with pytest.raises(ValueError):
        region_from_spec({"kind": "Torus", "params": {}})
    with pytest.raises(ValueError):
        Ellipsoid([[1.0, 0.0], [0.0, -1.0]])
    with pytest.raises(DimensionMismatchError):
        classify_cube(AxisBox([0, 0], [1, 1]), DyadicCube(0, (0, 0, 0)))
