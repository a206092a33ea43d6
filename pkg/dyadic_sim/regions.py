import enum
import math
import os
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Callable, Optional, Union

import numpy as np
import yaml
from scipy import special

from dyadic_sim.common import (
    BracketError,
    DimensionMismatchError,
    DyadicCube,
    Estimate,
    LowAcceptanceError,
    McParams,
    Method,
    NotOrthogonallyConvexError,
    PointOutsideRegionError,
    QuadratureResult,
    UnboundedProjectionError,
    box_vertices,
    box_volume,
    make_rng,
)
from dyadic_sim.config import REGIONS_DIR
from dyadic_sim.densities import Density, gauss_legendre_box, load_density


class CubeClass(enum.IntEnum):
    OUTSIDE = 0
    PARTIAL = 1
    INSIDE = 2


class ConvexityClass(str, enum.Enum):
    CONVEX = "Convex"
    QUASICONCAVE_HYPOGRAPH = "OrthogonallyConvexViaQuasiconcavity"
    UNION = "UnionOfSuch"


def unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2) / special.gamma(n / 2 + 1)


def _as_boxes(lo, hi, n: int) -> tuple[np.ndarray, np.ndarray]:
    lo = np.atleast_2d(np.asarray(lo, dtype=float))
    hi = np.atleast_2d(np.asarray(hi, dtype=float))
    if lo.shape[-1] != n or hi.shape != lo.shape:
        raise DimensionMismatchError(f"expected boxes in R^{n}, got {lo.shape} and {hi.shape}")
    return lo, hi


def _as_points(points, n: int) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[-1] != n:
        raise DimensionMismatchError(f"expected points in R^{n}, got shape {points.shape}")
    return points


class Region(ABC):
    """A bounded open set in R^n queried through membership, cube, section and volume oracles.

    Regions are immutable once built, so a single instance may be shared
    read-only between threads.

    Cube classification follows the closure convention: a box is INSIDE when
    the closed box lies in the closure of the region and OUTSIDE when it
    misses the (open) region. Membership itself is strict, so boundary points
    count as outside."""

    n: int
    name: str = "region"
    spec: Optional[dict] = None
    convexity_class: ConvexityClass = ConvexityClass.CONVEX
    volume_tolerance: float = 0.0
    # relative error above which numeric clipped volumes are flagged
    quadrature_tolerance: float = 1e-3
    # per-box refinement budget of the default clipped-volume quadrature
    quadrature_budget: int = 4096

    @property
    @abstractmethod
    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        ...

    @property
    @abstractmethod
    def volume(self) -> float:
        ...

    @abstractmethod
    def contains(self, points) -> np.ndarray:
        ...

    @abstractmethod
    def classify_boxes(self, lo, hi) -> np.ndarray:
        """CubeClass codes for each closed box [lo_i, hi_i]."""

    def closure_contains(self, points) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no closure test")

    def clipped_box_volume(self, lo, hi) -> QuadratureResult:
        """V_n(A ∩ box) by deterministic refinement.

        Each box is split into 2^n children, level by level, until its partial
        pieces would exceed `quadrature_budget`; remaining partial leaves are
        counted by their centre. The error bound is the total volume of those
        leaves."""
        lo, hi = _as_boxes(lo, hi, self.n)
        m = len(lo)
        value = np.zeros(m)
        error = np.zeros(m)
        owner = np.arange(m)
        corners = box_vertices(np.zeros(self.n), np.ones(self.n))[0]
        for depth in range(41):
            if len(owner) == 0:
                break
            cls = self.classify_boxes(lo, hi)
            vol = box_volume(lo, hi)
            inside = cls == CubeClass.INSIDE
            np.add.at(value, owner[inside], vol[inside])
            partial = cls == CubeClass.PARTIAL
            counts = np.bincount(owner[partial], minlength=m) * 2**self.n
            stop = (counts > self.quadrature_budget) | (depth == 40)
            leaf = partial & stop[owner]
            if leaf.any():
                centre = (lo[leaf] + hi[leaf]) / 2
                hit = self.contains(centre)
                np.add.at(value, owner[leaf][hit], vol[leaf][hit])
                np.add.at(error, owner[leaf], vol[leaf])
            split = partial & ~stop[owner]
            half = (hi[split] - lo[split]) / 2
            lo = (lo[split][:, None, :] + corners[None, :, :] * half[:, None, :]).reshape(-1, self.n)
            hi = lo + np.repeat(half, len(corners), axis=0)
            owner = np.repeat(owner[split], len(corners))
        flagged = bool(np.any(error > self.quadrature_tolerance * np.maximum(value, 1e-300)))
        return QuadratureResult(value, error, flagged)

    def clipped_upper_bound(self, lo, hi) -> np.ndarray:
        """Cheap upper bound on V_n(A ∩ box), used to prune negligible cubes."""
        lo, hi = _as_boxes(lo, hi, self.n)
        return np.where(self.classify_boxes(lo, hi) == CubeClass.OUTSIDE, 0.0, box_volume(lo, hi))

    @abstractmethod
    def sections(self, axis: int, points) -> tuple[np.ndarray, np.ndarray]:
        """End points of the section through each point along `axis`.

        The axis entry of each point is ignored. Empty sections are NaN."""

    def section_length(self, axis: int, points) -> np.ndarray:
        a, b = self.sections(axis, points)
        return np.nan_to_num(np.maximum(b - a, 0.0))

    def projection_volume(self, drop_axis: int, mc: Optional[McParams] = None) -> Estimate:
        """Monte Carlo (n-1)-volume of the projection dropping `drop_axis`."""
        mc = mc or McParams(sample_count=100_000)
        lo, hi = self.bounding_box
        keep = [j for j in range(self.n) if j != drop_axis]
        if not keep:
            return Estimate(1.0)
        rng = mc.rng(drop_axis)
        points = rng.uniform(lo, hi, size=(mc.sample_count, self.n))
        hit = (self.section_length(drop_axis, points) > 0).astype(float)
        box = float(np.prod((hi - lo)[keep]))
        p = float(hit.mean())
        radius = mc.z_score * box * math.sqrt(max(p * (1 - p), 1e-12) / mc.sample_count)
        return Estimate(box * p, radius, Method.MONTE_CARLO, mc.sample_count, mc.seed)

    def sample_uniform(self, size: int, rng: np.random.Generator, return_acceptance: bool = False):
        """Rejection sampling from the bounding box."""
        lo, hi = self.bounding_box
        out = []
        accepted, drawn = 0, 0
        rate = max(self.volume / float(np.prod(hi - lo)), 1e-3)
        while accepted < size:
            batch = int(min(max(2 * (size - accepted) / rate, 1024), 2**20))
            x = rng.uniform(lo, hi, size=(batch, self.n))
            keep = x[self.contains(x)]
            out.append(keep)
            accepted += len(keep)
            drawn += batch
            if drawn >= 2**22 and accepted / drawn < 1e-6:
                raise LowAcceptanceError(
                    f"acceptance {accepted}/{drawn} for {self.name}; shrink its bounding box"
                )
        points = np.concatenate(out)[:size]
        if return_acceptance:
            return points, accepted / drawn
        return points

    def to_dict(self) -> dict:
        lo, hi = self.bounding_box
        return {
            "name": self.name,
            "n": self.n,
            "volume": self.volume,
            "convexity_class": self.convexity_class.value,
            "bounding_box": [lo.tolist(), hi.tolist()],
        }


class AxisBox(Region):
    def __init__(self, lo, hi, name: str = "box"):
        self.lo = np.atleast_1d(np.asarray(lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if self.lo.shape != self.hi.shape:
            raise DimensionMismatchError("box corners differ in dimension")
        if not (np.all(np.isfinite(self.lo)) and np.all(np.isfinite(self.hi))):
            raise ValueError("box corners must be finite")
        assert np.all(self.hi > self.lo), "box sides must be positive"
        self.n = len(self.lo)
        self.name = name

    @property
    def bounding_box(self):
        return self.lo.copy(), self.hi.copy()

    @property
    def volume(self):
        return float(np.prod(self.hi - self.lo))

    def contains(self, points):
        points = _as_points(points, self.n)
        return np.all((points > self.lo) & (points < self.hi), axis=1)

    def closure_contains(self, points):
        points = _as_points(points, self.n)
        return np.all((points >= self.lo) & (points <= self.hi), axis=1)

    def classify_boxes(self, lo, hi):
        lo, hi = _as_boxes(lo, hi, self.n)
        inside = np.all((lo >= self.lo) & (hi <= self.hi), axis=1)
        outside = np.any((hi <= self.lo) | (lo >= self.hi), axis=1)
        return np.where(inside, CubeClass.INSIDE, np.where(outside, CubeClass.OUTSIDE, CubeClass.PARTIAL))

    def clipped_box_volume(self, lo, hi):
        lo, hi = _as_boxes(lo, hi, self.n)
        return QuadratureResult(box_volume(np.maximum(lo, self.lo), np.minimum(hi, self.hi)))

    def clipped_upper_bound(self, lo, hi):
        return self.clipped_box_volume(lo, hi).value

    def sections(self, axis, points):
        points = _as_points(points, self.n)
        others = [j for j in range(self.n) if j != axis]
        ok = np.all((points[:, others] > self.lo[others]) & (points[:, others] < self.hi[others]), axis=1)
        return np.where(ok, self.lo[axis], np.nan), np.where(ok, self.hi[axis], np.nan)

    def projection_volume(self, drop_axis, mc=None):
        keep = [j for j in range(self.n) if j != drop_axis]
        return Estimate(float(np.prod((self.hi - self.lo)[keep])))

    def sample_uniform(self, size, rng, return_acceptance=False):
        points = rng.uniform(self.lo, self.hi, size=(size, self.n))
        return (points, 1.0) if return_acceptance else points


class Ellipsoid(Region):
    """{x : (x - c)^T K (x - c) < 1} for symmetric positive definite K."""

    def __init__(self, K, center=None, name: str = "ellipsoid"):
        self.K = np.atleast_2d(np.asarray(K, dtype=float))
        self.n = self.K.shape[0]
        if self.K.shape != (self.n, self.n):
            raise DimensionMismatchError(f"K must be square, got {self.K.shape}")
        self.center = np.zeros(self.n) if center is None else np.asarray(center, dtype=float)
        if self.center.shape != (self.n,):
            raise DimensionMismatchError("center does not match K")
        if not (np.all(np.isfinite(self.K)) and np.all(np.isfinite(self.center))):
            raise ValueError("ellipsoid parameters must be finite")
        if not np.allclose(self.K, self.K.T):
            raise ValueError("K must be symmetric")
        eig = np.linalg.eigvalsh(self.K)
        if eig.min() <= 0:
            raise ValueError(f"K must be positive definite, eigenvalues {eig}")
        self.name = name
        self.det = float(np.linalg.det(self.K))
        self.inverse = np.linalg.inv(self.K)
        self._sqrt_lmax = math.sqrt(float(eig.max()))
        self._half = np.sqrt(np.diag(self.inverse))

    @property
    def bounding_box(self):
        return self.center - self._half, self.center + self._half

    @property
    def volume(self):
        return unit_ball_volume(self.n) / math.sqrt(self.det)

    def quadratic(self, points) -> np.ndarray:
        d = _as_points(points, self.n) - self.center
        return np.einsum("...i,ij,...j->...", d, self.K, d)

    def contains(self, points):
        return self.quadratic(points) < 1

    def closure_contains(self, points):
        return self.quadratic(points) <= 1

    def linear_image(self, M) -> "Ellipsoid":
        M = np.asarray(M, dtype=float)
        Minv = np.linalg.inv(M)
        return Ellipsoid(Minv.T @ self.K @ Minv, M @ self.center, name=self.name)

    def _box_min_quadratic(self, lo, hi):
        if self.n != 2:
            # q^(1/2) is a norm: bound it below through the box centre
            centre = (lo + hi) / 2
            r = np.linalg.norm((hi - lo) / 2, axis=1)
            dist = np.sqrt(self.quadratic(centre)) - self._sqrt_lmax * r
            return np.maximum(dist, 0.0) ** 2
        a = lo - self.center
        b = hi - self.center
        K11, K12, K22 = self.K[0, 0], self.K[0, 1], self.K[1, 1]
        candidates = []
        for e in (a[:, 0], b[:, 0]):
            t = np.clip(-K12 * e / K22, a[:, 1], b[:, 1])
            candidates.append(K11 * e**2 + 2 * K12 * e * t + K22 * t**2)
        for t in (a[:, 1], b[:, 1]):
            e = np.clip(-K12 * t / K11, a[:, 0], b[:, 0])
            candidates.append(K11 * e**2 + 2 * K12 * e * t + K22 * t**2)
        q = np.min(np.stack(candidates), axis=0)
        centred = np.all((a <= 0) & (b >= 0), axis=1)
        return np.where(centred, 0.0, q)

    def classify_boxes(self, lo, hi):
        lo, hi = _as_boxes(lo, hi, self.n)
        m = len(lo)
        q_max = self.quadratic(box_vertices(lo, hi).reshape(-1, self.n)).reshape(m, -1).max(axis=1)
        blo, bhi = self.bounding_box
        outside = np.any((hi <= blo) | (lo >= bhi), axis=1) | (self._box_min_quadratic(lo, hi) >= 1)
        inside = q_max <= 1
        return np.where(inside, CubeClass.INSIDE, np.where(outside, CubeClass.OUTSIDE, CubeClass.PARTIAL))

    def clipped_box_volume(self, lo, hi):
        if self.n != 2:
            return super().clipped_box_volume(lo, hi)
        lo, hi = _as_boxes(lo, hi, self.n)
        cls = self.classify_boxes(lo, hi)
        value = np.where(cls == CubeClass.INSIDE, box_volume(lo, hi), 0.0)
        for i in np.flatnonzero(cls == CubeClass.PARTIAL):
            value[i] = self._ellipse_box_area(lo[i] - self.center, hi[i] - self.center)
        return QuadratureResult(value)

    def _ellipse_box_area(self, lo, hi) -> float:
        # integrate the clipped vertical chord length over x, piecewise between
        # the abscissae where the ellipse crosses the horizontal box edges
        K11, K12, K22, det = self.K[0, 0], self.K[0, 1], self.K[1, 1], self.det
        R2 = K22 / det
        R = math.sqrt(R2)
        u0, w0 = max(lo[0], -R), min(hi[0], R)
        if w0 <= u0:
            return 0.0
        breaks = {u0, w0}
        for t in (lo[1], hi[1]):
            disc = K11 - det * t * t
            if disc > 0:
                for x in ((-K12 * t + math.sqrt(disc)) / K11, (-K12 * t - math.sqrt(disc)) / K11):
                    if u0 < x < w0:
                        breaks.add(x)
        xs = sorted(breaks)

        def F(x):
            return 0.5 * (x * math.sqrt(max(R2 - x * x, 0.0)) + R2 * math.asin(min(max(x / R, -1.0), 1.0)))

        def chord_ends(x):
            s = math.sqrt(max(K22 - det * x * x, 0.0))
            return (-K12 * x - s) / K22, (-K12 * x + s) / K22

        area = 0.0
        for u, w in zip(xs[:-1], xs[1:]):
            t_lo, t_hi = chord_ends((u + w) / 2)
            if min(hi[1], t_hi) <= max(lo[1], t_lo):
                continue
            linear = -K12 / 2 * (w * w - u * u)
            arc = math.sqrt(det) * (F(w) - F(u))
            upper = hi[1] * (w - u) if hi[1] < t_hi else (linear + arc) / K22
            lower = lo[1] * (w - u) if lo[1] > t_lo else (linear - arc) / K22
            area += upper - lower
        return max(area, 0.0)

    def sections(self, axis, points):
        d = _as_points(points, self.n) - self.center
        others = [j for j in range(self.n) if j != axis]
        K_aa = self.K[axis, axis]
        beta = d[:, others] @ self.K[axis, others]
        gamma = np.einsum("...i,ij,...j->...", d[:, others], self.K[np.ix_(others, others)], d[:, others]) - 1
        disc = beta**2 - K_aa * gamma
        root = np.sqrt(np.where(disc > 0, disc, np.nan))
        c = self.center[axis]
        return c + (-beta - root) / K_aa, c + (-beta + root) / K_aa

    def projection_volume(self, drop_axis, mc=None):
        keep = [j for j in range(self.n) if j != drop_axis]
        if not keep:
            return Estimate(1.0)
        sub = self.inverse[np.ix_(keep, keep)]
        return Estimate(unit_ball_volume(self.n - 1) * math.sqrt(float(np.linalg.det(sub))))


class Hypograph(Region):
    """Strict positive hypograph {(x, z) : 0 < z < f(x)} of a density f on R^n.

    The height coordinate z is the last axis. Its uniform distribution has
    x-marginal f and unit volume."""

    convexity_class = ConvexityClass.QUASICONCAVE_HYPOGRAPH
    quadrature_tolerance = 1e-3

    def __init__(self, density: Density, name: Optional[str] = None):
        self.density = density
        self.n = density.n + 1
        self.name = name or f"hyp-{density.name}"
        self.volume_tolerance = density.normalization_tolerance

    @property
    def bounding_box(self):
        lo, hi = self.density.support_box()
        return np.append(lo, 0.0), np.append(hi, self.density.fmax)

    @property
    def volume(self):
        return 1.0

    def contains(self, points):
        points = _as_points(points, self.n)
        z = points[:, -1]
        return (z > 0) & (z < self.density.pdf(points[:, :-1]))

    def classify_boxes(self, lo, hi):
        lo, hi = _as_boxes(lo, hi, self.n)
        z0, z1 = lo[:, -1], hi[:, -1]
        f_min = self.density.box_min(lo[:, :-1], hi[:, :-1])
        f_max = self.density.box_max(lo[:, :-1], hi[:, :-1])
        inside = (z0 >= 0) & (z1 <= f_min)
        outside = (z1 <= 0) | (z0 >= f_max)
        return np.where(inside, CubeClass.INSIDE, np.where(outside, CubeClass.OUTSIDE, CubeClass.PARTIAL))

    def clipped_box_volume(self, lo, hi):
        lo, hi = _as_boxes(lo, hi, self.n)
        cls = self.classify_boxes(lo, hi)
        value = np.where(cls == CubeClass.INSIDE, box_volume(lo, hi), 0.0)
        error = np.zeros(len(lo))
        partial = np.flatnonzero(cls == CubeClass.PARTIAL)
        if len(partial):
            xlo, xhi = lo[partial, :-1], hi[partial, :-1]
            z0 = np.maximum(lo[partial, -1], 0.0)[:, None]
            z1 = hi[partial, -1][:, None]

            def height(points):
                m, p, d = points.shape
                f = self.density.pdf(points.reshape(-1, d)).reshape(m, p)
                return np.clip(f - z0, 0.0, np.maximum(z1 - z0, 0.0))

            fine = gauss_legendre_box(height, xlo, xhi, pieces=4, order=5)
            coarse = gauss_legendre_box(height, xlo, xhi, pieces=2, order=5)
            value[partial] = np.maximum(fine, 0.0)
            error[partial] = np.abs(fine - coarse)
        flagged = bool(np.any(error > self.quadrature_tolerance * np.maximum(value, 1e-300)))
        return QuadratureResult(value, error, flagged)

    def clipped_upper_bound(self, lo, hi):
        lo, hi = _as_boxes(lo, hi, self.n)
        f_max = self.density.box_max(lo[:, :-1], hi[:, :-1])
        height = np.maximum(np.minimum(hi[:, -1], f_max) - np.maximum(lo[:, -1], 0.0), 0.0)
        return box_volume(lo[:, :-1], hi[:, :-1]) * height

    def sections(self, axis, points):
        points = _as_points(points, self.n)
        z = points[:, -1]
        if axis == self.n - 1:
            f = self.density.pdf(points[:, :-1])
            ok = f > 0
            return np.where(ok, 0.0, np.nan), np.where(ok, f, np.nan)
        a, b = self.density.superlevel_interval(axis, points[:, :-1], np.maximum(z, 0.0))
        ok = z > 0
        return np.where(ok, a, np.nan), np.where(ok, b, np.nan)

    def projection_volume(self, drop_axis, mc=None):
        if drop_axis == self.n - 1:
            vol = self.density.support_volume
            if not math.isfinite(vol):
                raise UnboundedProjectionError(
                    f"{self.density.name} has unbounded support; drop an x-axis instead"
                )
            return Estimate(vol)
        return Estimate(self.density.sup_slice_integral(drop_axis))

    def sample_uniform(self, size, rng, return_acceptance=False):
        x = self.density.sample(size, rng)
        z = rng.uniform(size=size) * self.density.pdf(x)
        points = np.column_stack([x, z])
        return (points, 1.0) if return_acceptance else points


class Transformed(Region):
    """{scale * x + shift : x in child} with a positive diagonal scale."""

    def __init__(self, child: Region, scale=None, shift=None, name: Optional[str] = None):
        self.child = child
        self.n = child.n
        self.scale = np.ones(self.n) if scale is None else np.broadcast_to(np.asarray(scale, dtype=float), (self.n,)).copy()
        self.shift = np.zeros(self.n) if shift is None else np.broadcast_to(np.asarray(shift, dtype=float), (self.n,)).copy()
        if not (np.all(np.isfinite(self.scale)) and np.all(np.isfinite(self.shift))):
            raise ValueError("scale and shift must be finite")
        assert np.all(self.scale > 0), "scale entries must be positive"
        self.name = name or child.name
        self.convexity_class = child.convexity_class
        self.volume_tolerance = child.volume_tolerance * float(np.prod(self.scale))

    def _back(self, points):
        return (_as_points(points, self.n) - self.shift) / self.scale

    @property
    def bounding_box(self):
        lo, hi = self.child.bounding_box
        return lo * self.scale + self.shift, hi * self.scale + self.shift

    @property
    def volume(self):
        return self.child.volume * float(np.prod(self.scale))

    def contains(self, points):
        return self.child.contains(self._back(points))

    def closure_contains(self, points):
        return self.child.closure_contains(self._back(points))

    def classify_boxes(self, lo, hi):
        return self.child.classify_boxes(self._back(lo), self._back(hi))

    def clipped_box_volume(self, lo, hi):
        res = self.child.clipped_box_volume(self._back(lo), self._back(hi))
        factor = float(np.prod(self.scale))
        return QuadratureResult(res.value * factor, np.asarray(res.error_bound) * factor, res.flagged)

    def clipped_upper_bound(self, lo, hi):
        return self.child.clipped_upper_bound(self._back(lo), self._back(hi)) * float(np.prod(self.scale))

    def sections(self, axis, points):
        a, b = self.child.sections(axis, self._back(points))
        return a * self.scale[axis] + self.shift[axis], b * self.scale[axis] + self.shift[axis]

    def projection_volume(self, drop_axis, mc=None):
        est = self.child.projection_volume(drop_axis, mc)
        factor = float(np.prod(np.delete(self.scale, drop_axis)))
        return Estimate(est.value * factor, est.radius * factor, est.method, est.samples, est.seed)

    def sample_uniform(self, size, rng, return_acceptance=False):
        out = self.child.sample_uniform(size, rng, return_acceptance)
        if return_acceptance:
            return out[0] * self.scale + self.shift, out[1]
        return out * self.scale + self.shift


class DisjointUnion(Region):
    convexity_class = ConvexityClass.UNION

    def __init__(self, children: list[Region], name: str = "union", overlap_checks: int = 256, seed: int = 0):
        assert len(children) >= 1, "a union needs at least one child"
        self.children = list(children)
        self.n = children[0].n
        if any(c.n != self.n for c in children):
            raise DimensionMismatchError("union children differ in dimension")
        self.name = name
        self.volume_tolerance = sum(c.volume_tolerance for c in children)
        rng = make_rng(seed, 11)
        for i, child in enumerate(children):
            points = child.sample_uniform(overlap_checks, rng)
            for j, other in enumerate(children):
                if i != j and other.contains(points).any():
                    raise ValueError(f"union children {i} and {j} overlap")

    @property
    def bounding_box(self):
        boxes = [c.bounding_box for c in self.children]
        return np.min([b[0] for b in boxes], axis=0), np.max([b[1] for b in boxes], axis=0)

    @property
    def volume(self):
        return float(sum(c.volume for c in self.children))

    def contains(self, points):
        points = _as_points(points, self.n)
        return np.any([c.contains(points) for c in self.children], axis=0)

    def classify_boxes(self, lo, hi):
        lo, hi = _as_boxes(lo, hi, self.n)
        classes = np.stack([c.classify_boxes(lo, hi) for c in self.children])
        cls = np.where(
            np.any(classes == CubeClass.INSIDE, axis=0),
            CubeClass.INSIDE,
            np.where(np.all(classes == CubeClass.OUTSIDE, axis=0), CubeClass.OUTSIDE, CubeClass.PARTIAL),
        )
        # boxes straddling several children are inside when the pieces fill them
        partial = np.flatnonzero(cls == CubeClass.PARTIAL)
        if len(partial):
            filled = self.clipped_box_volume(lo[partial], hi[partial]).value
            full = filled >= box_volume(lo[partial], hi[partial]) * (1 - 1e-12)
            cls[partial[full]] = CubeClass.INSIDE
        return cls

    def clipped_box_volume(self, lo, hi):
        parts = [c.clipped_box_volume(lo, hi) for c in self.children]
        return QuadratureResult(
            np.sum([p.value for p in parts], axis=0),
            np.sum([np.broadcast_to(p.error_bound, np.shape(p.value)) for p in parts], axis=0),
            any(p.flagged for p in parts),
        )

    def clipped_upper_bound(self, lo, hi):
        return np.sum([c.clipped_upper_bound(lo, hi) for c in self.children], axis=0)

    def sections(self, axis, points):
        points = _as_points(points, self.n)
        ends = [c.sections(axis, points) for c in self.children]
        a = np.stack([e[0] for e in ends], axis=1)
        b = np.stack([e[1] for e in ends], axis=1)
        lo = np.full(len(points), np.nan)
        hi = np.full(len(points), np.nan)
        for row in range(len(points)):
            ok = ~np.isnan(a[row])
            if not ok.any():
                continue
            order = np.argsort(a[row, ok])
            ra, rb = a[row, ok][order], b[row, ok][order]
            reach = np.maximum.accumulate(rb)
            if np.any(ra[1:] > reach[:-1]):
                raise NotOrthogonallyConvexError(
                    f"section of {self.name} along axis {axis} is disconnected"
                )
            lo[row], hi[row] = ra[0], reach[-1]
        return lo, hi

    def section_length(self, axis, points):
        return np.sum([c.section_length(axis, points) for c in self.children], axis=0)

    def sample_uniform(self, size, rng, return_acceptance=False):
        weights = np.array([c.volume for c in self.children])
        counts = rng.multinomial(size, weights / weights.sum())
        parts = [c.sample_uniform(int(k), rng) for c, k in zip(self.children, counts)]
        points = np.concatenate(parts)[rng.permutation(size)]
        return (points, 1.0) if return_acceptance else points


def transform(region: Region, scale=None, shift=None) -> Region:
    """Image of `region` under x -> scale * x + shift, kept in the simplest form."""
    n = region.n
    s = np.ones(n) if scale is None else np.broadcast_to(np.asarray(scale, dtype=float), (n,))
    t = np.zeros(n) if shift is None else np.broadcast_to(np.asarray(shift, dtype=float), (n,))
    if isinstance(region, AxisBox):
        return AxisBox(region.lo * s + t, region.hi * s + t, name=region.name)
    if isinstance(region, Ellipsoid):
        image = region.linear_image(np.diag(s))
        return Ellipsoid(image.K, image.center + t, name=region.name)
    if isinstance(region, DisjointUnion):
        return DisjointUnion([transform(c, s, t) for c in region.children], name=region.name)
    if isinstance(region, Transformed):
        return Transformed(region.child, region.scale * s, region.shift * s + t, name=region.name)
    return Transformed(region, s, t)


def standard_shift(region: Region) -> Region:
    """Translate so the bounding box starts at the origin."""
    lo, _ = region.bounding_box
    return transform(region, shift=-lo)


def build_hypograph(density_spec: Any) -> Hypograph:
    """Hypograph of a density given as a registry spec or a Density instance.

    Callable densities are checked for normalization and for connected
    superlevel sections when they are built."""
    return Hypograph(load_density(density_spec))


@dataclass
class RegionKind:
    # builds a region from (params, n); children are already-built specs
    builder: Callable[[dict, Optional[int]], Region]


# mapping from spec kind to builder
_REGISTRY: dict[str, RegionKind] = {}


def register_region_kind(name: str, kind: RegionKind):
    _REGISTRY[name] = kind


def _check_finite(value, what: str):
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite {what}")
    return arr


register_region_kind(
    "AxisBox",
    RegionKind(lambda p, n: AxisBox(_check_finite(p["lo"], "lo"), _check_finite(p["hi"], "hi"))),
)
register_region_kind(
    "Ellipsoid",
    RegionKind(lambda p, n: Ellipsoid(_check_finite(p["K"], "K"), p.get("center"))),
)
register_region_kind("Hypograph", RegionKind(lambda p, n: build_hypograph(p["density"])))
register_region_kind(
    "Scaled",
    RegionKind(lambda p, n: transform(region_from_spec(p["child"]), scale=_check_finite(p["scale"], "scale"))),
)
register_region_kind(
    "Shifted",
    RegionKind(lambda p, n: transform(region_from_spec(p["child"]), shift=_check_finite(p["shift"], "shift"))),
)
register_region_kind(
    "DisjointUnion",
    RegionKind(lambda p, n: DisjointUnion([region_from_spec(c) for c in p["children"]])),
)

VALID_REGION_KINDS: list[str] = list(_REGISTRY.keys())


def region_from_spec(spec: dict, name: Optional[str] = None) -> Region:
    """Build a region from {kind, n, params, shift, scale}.

    `scale` is applied before `shift` when both are present."""
    kind = spec.get("kind")
    if kind not in _REGISTRY:
        raise ValueError(f"Unknown region kind {kind}, please register")
    region = _REGISTRY[kind].builder(dict(spec.get("params", {})), spec.get("n"))
    if spec.get("n") is not None and int(spec["n"]) != region.n:
        raise DimensionMismatchError(f"spec declares n={spec['n']} but {kind} has n={region.n}")
    if spec.get("scale") is not None or spec.get("shift") is not None:
        region = transform(
            region,
            scale=None if spec.get("scale") is None else _check_finite(spec["scale"], "scale"),
            shift=None if spec.get("shift") is None else _check_finite(spec["shift"], "shift"),
        )
    region.name = name or spec.get("name", region.name)
    region.spec = spec
    return region


def load_region(name_or_path: Union[str, Region]) -> Region:
    """Load a region from a fixture name in configs/regions or a YAML/JSON file path."""
    if isinstance(name_or_path, Region):
        return name_or_path
    path = name_or_path
    if not os.path.exists(path):
        path = os.path.join(REGIONS_DIR, f"{name_or_path}.yaml")
    if not os.path.exists(path):
        raise ValueError(f"Unknown region {name_or_path}")
    with open(path, "r") as f:
        spec = yaml.safe_load(f)
    name = os.path.splitext(os.path.basename(path))[0]
    return region_from_spec(spec, name=name)


def _check_cube(region: Region, cube: DyadicCube):
    if len(cube.v) != region.n:
        raise DimensionMismatchError(f"cube in R^{len(cube.v)} for a region in R^{region.n}")


def classify_cube(region: Region, cube: DyadicCube) -> CubeClass:
    _check_cube(region, cube)
    lo, hi = cube.bounds()
    return CubeClass(int(region.classify_boxes(lo, hi)[0]))


def clipped_volume(region: Region, cube: DyadicCube) -> QuadratureResult:
    _check_cube(region, cube)
    lo, hi = cube.bounds()
    res = region.clipped_box_volume(lo, hi)
    return QuadratureResult(
        float(np.asarray(res.value)[0]), float(np.asarray(res.error_bound).reshape(-1)[0]), res.flagged
    )


def section_interval(region: Region, axis: int, point) -> Optional[tuple[float, float]]:
    """The section through `point` along `axis`, or None when it is empty."""
    if not 0 <= axis < region.n:
        raise DimensionMismatchError(f"axis {axis} out of range for n={region.n}")
    a, b = region.sections(axis, _as_points(point, region.n))
    if np.isnan(a[0]) or b[0] <= a[0]:
        return None
    return float(a[0]), float(b[0])


def projection_volume(region: Region, drop_axis: int, mc: Optional[McParams] = None) -> Estimate:
    if not 0 <= drop_axis < region.n:
        raise DimensionMismatchError(f"axis {drop_axis} out of range for n={region.n}")
    return region.projection_volume(drop_axis, mc)


def max_inscribed_scale(region: Region, points, base=None, rel_tol: float = 2.0**-30) -> np.ndarray:
    """Largest gamma with x + gamma * B inside the region, for each point x.

    B is the unit cube when `base` is None, the box [0, base] for a vector of
    side lengths, and the parallelotope spanned by the columns of `base` for a
    matrix. Parallelotopes are tested through their vertices, which is exact
    for convex regions only."""
    points = _as_points(points, region.n)
    if not region.contains(points).all():
        raise PointOutsideRegionError("max_inscribed_scale needs interior points")
    base = np.ones(region.n) if base is None else np.asarray(base, dtype=float)
    if base.ndim == 2:
        if region.convexity_class != ConvexityClass.CONVEX:
            raise ValueError("parallelotope bases need a convex region")
        corners = box_vertices(np.zeros(region.n), np.ones(region.n))[0] @ base.T

        def fits(gamma):
            vertices = points[:, None, :] + gamma[:, None, None] * corners[None, :, :]
            return region.closure_contains(vertices.reshape(-1, region.n)).reshape(len(points), -1).all(axis=1)

        reach = float(np.min(np.linalg.norm(base, axis=0)))
    else:

        def fits(gamma):
            return region.classify_boxes(points, points + gamma[:, None] * base) == CubeClass.INSIDE

        reach = float(np.min(base))
    blo, bhi = region.bounding_box
    lo = np.zeros(len(points))
    hi = np.full(len(points), 2 * float(np.max(bhi - blo)) / reach)
    if fits(hi).any():
        raise BracketError("inscribed scale is not bracketed by the bounding box")
    for _ in range(200):
        active = (hi - lo) > rel_tol * hi
        if not active.any():
            break
        mid = (lo + hi) / 2
        ok = fits(mid)
        lo = np.where(active & ok, mid, lo)
        hi = np.where(active & ~ok, mid, hi)
    return lo


def sample_uniform(region: Region, rng_seed: Optional[int], size: int = 1) -> np.ndarray:
    return region.sample_uniform(size, make_rng(rng_seed))
