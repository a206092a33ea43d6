import math

import numpy as np
import pytest

from dyadic_sim.common import DimensionMismatchError, DyadicCube, PointOutsideRegionError
from dyadic_sim.dyadic import (
    DecompositionTable,
    coding_frame,
    decompose,
    locate,
    locate_many,
    root_cubes,
    start_level,
    table_entropy,
    truncate_table,
)
from dyadic_sim.regions import CubeClass, classify_cube, load_region


def test_start_level():
    assert start_level(load_region("unit-square")) == 0
    assert start_level(load_region("l-shape")) == -1
    assert start_level(load_region("l-shape-half")) == 0


def test_l_shape_table():
    table = decompose(load_region("l-shape"), 6)
    assert len(table) == 3
    assert list(table.k) == [0, 0, 0]
    assert [cube.v for cube, _ in table.entries] == [(0, 0), (0, 1), (1, 0)]
    assert np.allclose(table.probabilities, 1 / 3)
    assert table.residual_mass < 1e-12
    h_lower, h_upper = table_entropy(table)
    assert np.isclose(h_lower, math.log2(3))
    assert np.isclose(h_upper, math.log2(3))


def test_unit_square_is_one_cube():
    table = decompose(load_region("unit-square"), 0)
    assert table.entries == [(DyadicCube(0, (0, 0)), 1.0)]
    assert table_entropy(table) == (0.0, 0.0)


def test_disk_table_invariants():
    disk = load_region("unit-disk")
    table = decompose(disk, 8)
    assert np.isclose(math.fsum(table.probabilities) + table.residual_mass, 1.0)
    assert np.allclose(table.probabilities, np.ldexp(1.0, -2 * table.k) / math.pi)
    residuals = [r for _, r in table.level_residuals]
    assert all(b <= a + 1e-15 for a, b in zip(residuals[:-1], residuals[1:]))
    assert 0 < table.residual_mass < 0.05
    for i in range(0, len(table), max(1, len(table) // 50)):
        assert classify_cube(disk, table.cube(i)) == CubeClass.INSIDE
    h_lower, h_upper = table_entropy(table)
    assert h_lower < h_upper


def test_entries_are_disjoint():
    table = decompose(load_region("ellipse-example1"), 6)
    # map every entry to its cells at the deepest level and look for repeats
    k_max = int(table.k.max())
    seen = set()
    for cube, _ in table.entries:
        scale = 2 ** (k_max - cube.k)
        base = np.array(cube.v) * scale
        cells = {(base[0] + i, base[1] + j) for i in range(scale) for j in range(scale)}
        assert not cells & seen
        seen |= cells


def test_workers_do_not_change_the_table():
    disk = load_region("unit-disk")
    serial = decompose(disk, 7)
    threaded = decompose(disk, 7, workers=3, batch_size=64)
    assert np.array_equal(serial.k, threaded.k)
    assert np.array_equal(serial.v, threaded.v)
    assert np.array_equal(serial.probabilities, threaded.probabilities)


def test_min_mass_pruning_moves_mass_to_residual():
    gauss = load_region("gauss-example2")
    full = decompose(gauss, 5)
    pruned = decompose(gauss, 5, min_mass=1e-6)
    assert len(pruned) <= len(full)
    assert pruned.residual_mass >= full.residual_mass - 1e-12


def test_depth_above_start_gives_empty_table():
    table = decompose(load_region("l-shape"), -2)
    assert len(table) == 0
    assert table.residual_mass == 1.0
    assert table.flagged


def test_locate():
    l_shape = load_region("l-shape")
    assert locate(l_shape, [0.5, 1.5], 6) == DyadicCube(0, (0, 1))
    with pytest.raises(PointOutsideRegionError):
        locate(l_shape, [1.5, 1.5], 6)
    with pytest.raises(DimensionMismatchError):
        locate(l_shape, [0.5, 0.5, 0.5], 6)

    disk = load_region("unit-disk")
    table = decompose(disk, 8)
    points = np.array([[0.1, 0.1], [-0.5, 0.3], [0.0, -0.7]])
    k, v, resolved = locate_many(disk, points, 8)
    assert resolved.all()
    for a, b in zip(k, v):
        assert table.index_of(DyadicCube(int(a), tuple(int(x) for x in b))) is not None


def test_truncate_table():
    table = decompose(load_region("unit-disk"), 8)
    truncated = truncate_table(table, 4)
    assert np.all(truncated.k < 4)
    assert truncated.residual_mass == 0.0
    assert np.isclose(math.fsum(truncated.probabilities), 1.0)
    dropped = math.fsum(table.probabilities[table.k >= 4])
    assert np.isclose(truncated.moved_mass, dropped + table.residual_mass)
    r = truncated.replacement_index
    top = table.index_of(truncated.cube(r))
    assert np.isclose(truncated.probabilities[r], table.probabilities[top] + truncated.moved_mass)
    with pytest.raises(ValueError):
        truncate_table(table, -5)


def test_truncate_beyond_depth_keeps_residual():
    table = decompose(load_region("unit-disk"), 6)
    kept = truncate_table(table, 20)
    assert len(kept) == len(table)
    assert kept.residual_mass == table.residual_mass


def test_csv_round_trip(tmp_path):
    table = decompose(load_region("ellipse-example1"), 5)
    path = str(tmp_path / "table.csv")
    table.to_csv(path)
    loaded = DecompositionTable.from_csv(path, k_max=5)
    assert np.array_equal(loaded.k, table.k)
    assert np.array_equal(loaded.v, table.v)
    assert np.array_equal(loaded.probabilities, table.probabilities)
    assert np.isclose(loaded.region_volume, table.region_volume)
    assert np.isclose(loaded.residual_mass, table.residual_mass)


def test_coding_frame_keeps_single_root_regions():
    region = load_region("l-shape")
    coded, offset = coding_frame(region)
    assert coded is region
    assert np.all(offset == 0)


@pytest.mark.parametrize("name", ["unit-disk", "ellipse-example1"])
def test_coding_frame_moves_centered_regions(name):
    region = load_region(name)
    assert len(root_cubes(region, start_level(region))) == 4
    coded, offset = coding_frame(region)
    assert np.allclose(offset, [-1.0, -1.0])
    lo, hi = coded.bounding_box
    assert np.allclose(lo, 0.0)
    assert len(root_cubes(coded, start_level(coded))) == 1
    assert np.isclose(coded.volume, region.volume)
    points = coded.sample_uniform(500, np.random.default_rng(0))
    assert np.all(region.closure_contains(points + offset))
