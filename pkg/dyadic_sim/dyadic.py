import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from dyadic_sim.common import (
    DepthExceeded,
    DimensionMismatchError,
    DyadicCube,
    PointOutsideRegionError,
    box_vertices,
    cube_bounds,
    to_batch,
)
from dyadic_sim.regions import CubeClass, Region, standard_shift, transform

# ratio used for the residual tail when too few levels have been recorded
DEFAULT_TAIL_RATIO = 0.5


def start_level(region: Region) -> int:
    """Smallest k whose cube side 2^-k is at least the longest bounding-box side."""
    lo, hi = region.bounding_box
    side = float(np.max(hi - lo))
    return -math.ceil(math.log2(side))


def root_cubes(region: Region, k0: int) -> np.ndarray:
    """Offsets of the level-k0 cubes meeting the bounding box, in lexicographic order."""
    lo, hi = region.bounding_box
    first = np.floor(np.ldexp(lo, k0)).astype(np.int64)
    last = np.ceil(np.ldexp(hi, k0)).astype(np.int64) - 1
    axes = [np.arange(a, b + 1) for a, b in zip(first, last)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, region.n)


def coding_frame(region: Region) -> tuple[Region, np.ndarray]:
    """The region placed so its bounding box meets a single level-k0 cell, and the offset back.

    Such a region is returned as is with a zero offset. Otherwise it is moved
    by standard_shift into the positive orthant, and a point y of the moved
    region corresponds to y + offset in the original. Regions with an
    unbounded box are left in place."""
    lo, hi = region.bounding_box
    offset = np.zeros(region.n)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        return region, offset
    if len(root_cubes(region, start_level(region))) == 1:
        return region, offset
    moved = standard_shift(region)
    # rounding can leave the new lower corner an ulp below 0
    slack = np.minimum(moved.bounding_box[0], 0.0)
    if np.any(slack < 0):
        moved = transform(moved, shift=-slack)
    return moved, np.asarray(lo, dtype=float) + slack


def child_offsets(n: int) -> np.ndarray:
    """The 2^n child offsets in lexicographic order, axis 0 most significant."""
    return box_vertices(np.zeros(n), np.ones(n))[0].astype(np.int64)


@dataclass
class DecompositionTable:
    """Distribution of the decomposition cube W = (k, v) of a region.

    Entries are sorted by (k, v); each probability is 2^-nk / V. Mass that was
    not resolved by level k_max (or was pruned) is kept in `residual_mass`."""

    n: int
    k: np.ndarray
    v: np.ndarray
    probabilities: np.ndarray
    k_max: int
    residual_mass: float
    region_volume: float
    k_start: Optional[int] = None
    # (level, residual after that level) pairs
    level_residuals: list = field(default_factory=list)
    flagged: bool = False
    # set by truncate_table
    replacement_index: Optional[int] = None
    moved_mass: float = 0.0

    def __len__(self):
        return len(self.k)

    @property
    def entries(self) -> list[tuple[DyadicCube, float]]:
        return [
            (DyadicCube(int(k), tuple(int(x) for x in v)), float(p))
            for k, v, p in zip(self.k, self.v, self.probabilities)
        ]

    def cube(self, index: int) -> DyadicCube:
        return DyadicCube(int(self.k[index]), tuple(int(x) for x in self.v[index]))

    def index_of(self, cube: DyadicCube) -> Optional[int]:
        hit = np.flatnonzero((self.k == cube.k) & np.all(self.v == np.asarray(cube.v), axis=1))
        return int(hit[0]) if len(hit) else None

    def sorted_probabilities(self) -> np.ndarray:
        return np.sort(self.probabilities)[::-1]

    def to_csv(self, path: str):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["k"] + [f"v_{i + 1}" for i in range(self.n)] + ["probability"])
            for k, v, p in zip(self.k, self.v, self.probabilities):
                writer.writerow([int(k)] + [int(x) for x in v] + [repr(float(p))])

    @classmethod
    def from_csv(cls, path: str, k_max: Optional[int] = None) -> "DecompositionTable":
        with open(path, "r", newline="") as f:
            rows = list(csv.reader(f))
        n = len(rows[0]) - 2
        body = rows[1:]
        k = np.array([int(r[0]) for r in body], dtype=np.int64)
        v = np.array([[int(x) for x in r[1 : n + 1]] for r in body], dtype=np.int64).reshape(-1, n)
        p = np.array([float(r[-1]) for r in body])
        volume = math.ldexp(1.0, int(-n * k[0])) / p[0] if len(p) else math.nan
        return cls(
            n=n,
            k=k,
            v=v,
            probabilities=p,
            k_max=int(k_max if k_max is not None else (k.max() if len(k) else 0)),
            residual_mass=max(0.0, 1.0 - math.fsum(p)),
            region_volume=volume,
        )


def _sort_entries(k: np.ndarray, v: np.ndarray, p: np.ndarray):
    order = np.lexsort(np.vstack([v.T[::-1], k[None, :]]))
    return k[order], v[order], p[order]


def decompose(
    region: Region,
    k_max: int,
    min_mass: float = 0.0,
    workers: int = 1,
    batch_size: int = 2**15,
) -> DecompositionTable:
    """Enumerate the dyadic decomposition of `region` down to level k_max.

    Cubes are refined level by level from the roots at `start_level`. A cube
    classified INSIDE is emitted (its parent was PARTIAL, otherwise it would
    never have been visited); PARTIAL cubes are split. With min_mass > 0,
    partial cubes whose mass bound is below it are dropped into the residual.
    Classification of a level may be spread over `workers` threads; results
    are merged in submission order, so the table does not depend on it."""
    n = region.n
    V = region.volume
    k0 = start_level(region)
    children = child_offsets(n)
    if k_max < k0:
        print(f"Warning: k_max={k_max} is above the start level {k0}; table is empty")
        return DecompositionTable(
            n, np.zeros(0, np.int64), np.zeros((0, n), np.int64), np.zeros(0), k_max, 1.0, V, k0, [], True
        )

    def classify(v_chunk, k):
        lo, hi = cube_bounds(k, v_chunk)
        cls = region.classify_boxes(lo, hi)
        keep = cls == CubeClass.PARTIAL
        if min_mass > 0 and keep.any():
            keep &= region.clipped_upper_bound(lo, hi) / V >= min_mass
        return cls == CubeClass.INSIDE, keep

    ks, vs, ps, level_residuals = [], [], [], []
    emitted = []
    current = root_cubes(region, k0)
    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for k in range(k0, k_max + 1):
            if len(current) == 0:
                break
            chunks = list(to_batch(current, batch_size))
            if executor is not None:
                results = list(executor.map(lambda c: classify(c, k), chunks))
            else:
                results = [classify(c, k) for c in chunks]
            inside = np.concatenate([r[0] for r in results])
            partial = np.concatenate([r[1] for r in results])
            if inside.any():
                count = int(inside.sum())
                ks.append(np.full(count, k, dtype=np.int64))
                vs.append(current[inside])
                p = math.ldexp(1.0, -n * k) / V
                ps.append(np.full(count, p))
                emitted.extend([p] * count)
            level_residuals.append((k, max(0.0, 1.0 - math.fsum(emitted))))
            if k < k_max:
                current = (2 * current[partial][:, None, :] + children[None, :, :]).reshape(-1, n)
    finally:
        if executor is not None:
            executor.shutdown()

    if ks:
        k_arr, v_arr, p_arr = _sort_entries(np.concatenate(ks), np.concatenate(vs), np.concatenate(ps))
    else:
        k_arr, v_arr, p_arr = np.zeros(0, np.int64), np.zeros((0, n), np.int64), np.zeros(0)
    residual = max(0.0, 1.0 - math.fsum(p_arr))
    return DecompositionTable(
        n=n,
        k=k_arr,
        v=v_arr,
        probabilities=p_arr,
        k_max=k_max,
        residual_mass=residual,
        region_volume=V,
        k_start=k0,
        level_residuals=level_residuals,
        flagged=len(k_arr) == 0,
    )


def locate_many(region: Region, points, k_max: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Decomposition cubes of many points at once.

    Returns (k, v, resolved); unresolved rows have k = k_max + 1."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != region.n:
        raise DimensionMismatchError(f"points in R^{points.shape[1]} for a region in R^{region.n}")
    m = len(points)
    k_out = np.full(m, k_max + 1, dtype=np.int64)
    v_out = np.zeros((m, region.n), dtype=np.int64)
    resolved = np.zeros(m, dtype=bool)
    pending = np.arange(m)
    for k in range(start_level(region), k_max + 1):
        if len(pending) == 0:
            break
        v = np.floor(np.ldexp(points[pending], k)).astype(np.int64)
        lo, hi = cube_bounds(k, v)
        done = region.classify_boxes(lo, hi) == CubeClass.INSIDE
        idx = pending[done]
        k_out[idx] = k
        v_out[idx] = v[done]
        resolved[idx] = True
        pending = pending[~done]
    return k_out, v_out, resolved


def locate(region: Region, point, k_max: int) -> DyadicCube:
    point = np.asarray(point, dtype=float)
    if point.shape != (region.n,):
        raise DimensionMismatchError(f"point in R^{point.size} for a region in R^{region.n}")
    if not region.contains(point)[0]:
        raise PointOutsideRegionError(f"{point} is not in {region.name}")
    k, v, resolved = locate_many(region, point[None, :], k_max)
    if not resolved[0]:
        raise DepthExceeded(f"{point} not resolved by level {k_max}")
    return DyadicCube(int(k[0]), tuple(int(x) for x in v[0]))


def residual_tail_ratio(table: DecompositionTable) -> float:
    """Largest per-level shrink factor of the residual over the last three levels."""
    r = [res for _, res in table.level_residuals if res > 0][-4:]
    ratios = [b / a for a, b in zip(r[:-1], r[1:])]
    if not ratios:
        return DEFAULT_TAIL_RATIO
    return min(max(ratios), 0.99)


def table_entropy(table: DecompositionTable) -> tuple[float, float]:
    """Bracket on H(W) in bits.

    The lower end counts enumerated entries only. The upper end charges the
    residual as if it were spread over cubes below k_max whose mass shrinks
    geometrically at the observed residual ratio."""
    p = table.probabilities[table.probabilities > 0]
    h_lower = float(-np.sum(p * np.log2(p)))
    r = table.residual_mass
    if r <= 0:
        return h_lower, h_lower
    rho = residual_tail_ratio(table)
    n = table.n
    h_upper = h_lower + r * (n * table.k_max + math.log2(table.region_volume)) + n * r / (1 - rho)
    return h_lower, max(h_upper, h_lower)


def truncate_table(
    table: DecompositionTable, l: float, replacement: Optional[DyadicCube] = None
) -> DecompositionTable:
    """Map every cube at level >= l onto one replacement cube of level < l.

    The replacement defaults to the most probable entry below level l. The
    residual is moved as well when every unresolved cube lies at level >= l,
    that is when l <= k_max + 1."""
    if math.isinf(l):
        return replace(table, k=table.k.copy(), v=table.v.copy(), probabilities=table.probabilities.copy())
    keep = table.k < l
    if not keep.any():
        raise ValueError(f"no entry has level below {l}")
    if replacement is None:
        idx = np.flatnonzero(keep)
        target = int(idx[np.argmax(table.probabilities[idx])])
    else:
        target = table.index_of(replacement)
        if target is None or not keep[target]:
            raise ValueError(f"{replacement} is not an entry with level below {l}")
    p = table.probabilities.copy()
    moved = math.fsum(p[~keep])
    residual = table.residual_mass
    if l <= table.k_max + 1:
        moved += residual
        residual = 0.0
    p[target] += moved
    return replace(
        table,
        k=table.k[keep].copy(),
        v=table.v[keep].copy(),
        probabilities=p[keep],
        residual_mass=residual,
        replacement_index=int(np.sum(keep[:target])),
        moved_mass=moved,
    )
