import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Callable, Optional

import numpy as np
from scipy import special, stats

from dyadic_sim.common import (
    LOG2E,
    NormalizationError,
    NotOrthogonallyConvexError,
    box_vertices,
    make_rng,
)

# tail mass left outside the finite support box of full-support densities
SUPPORT_TAIL = 1e-12


def gauss_legendre_box(func, lo: np.ndarray, hi: np.ndarray, pieces: int = 4, order: int = 5):
    """Composite tensor Gauss-Legendre integral of `func` over each box.

    func maps an (m, p, n) array of points to (m, p) values; lo, hi are (m, n).
    The rule is fixed, so identical inputs always give bit-identical outputs."""
    lo = np.atleast_2d(np.asarray(lo, dtype=float))
    hi = np.atleast_2d(np.asarray(hi, dtype=float))
    m, n = lo.shape
    x, w = np.polynomial.legendre.leggauss(order)
    # nodes and weights on [0, 1] for one axis split into `pieces` equal cells
    edges = np.arange(pieces)[:, None]
    u = ((edges + (x[None, :] + 1) / 2) / pieces).ravel()
    wu = np.tile(w / 2 / pieces, pieces)
    grid = np.stack(np.meshgrid(*[u] * n, indexing="ij"), axis=-1).reshape(-1, n)
    weights = np.prod(np.stack(np.meshgrid(*[wu] * n, indexing="ij"), axis=-1).reshape(-1, n), axis=1)
    points = lo[:, None, :] + grid[None, :, :] * (hi - lo)[:, None, :]
    values = func(points)
    return (values * weights[None, :]).sum(axis=1) * np.prod(hi - lo, axis=1)


class Density(ABC):
    """An evaluable probability density on R^n.

    Subclasses supply the bounds used by hypograph cube classification:
    `box_min` must never exceed the true minimum over a closed box and
    `box_max` must never fall below the true maximum."""

    n: int
    name: str = "density"
    log_concave: bool = False
    normalization_tolerance: float = 0.0

    @abstractmethod
    def pdf(self, x: np.ndarray) -> np.ndarray:
        ...

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(x))

    @abstractmethod
    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        ...

    @property
    @abstractmethod
    def fmax(self) -> float:
        ...

    @abstractmethod
    def support_box(self) -> tuple[np.ndarray, np.ndarray]:
        ...

    @property
    def support_volume(self) -> float:
        lo, hi = self.support_box()
        return float(np.prod(hi - lo))

    def box_min(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        if self.log_concave:
            # quasiconcave: the minimum over a box is attained at a vertex
            vertices = box_vertices(lo, hi)
            m, p, n = vertices.shape
            return self.pdf(vertices.reshape(-1, n)).reshape(m, p).min(axis=1)
        return self._grid_extreme(lo, hi, np.min)

    def box_max(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        slo, shi = self.support_box()
        overlaps = np.all((np.atleast_2d(hi) > slo) & (np.atleast_2d(lo) < shi), axis=1)
        return np.where(overlaps, self.fmax, 0.0)

    def _grid_extreme(self, lo, hi, reduce):
        lo = np.atleast_2d(lo)
        hi = np.atleast_2d(hi)
        m, n = lo.shape
        u = (np.arange(4) + 0.5) / 4
        grid = np.stack(np.meshgrid(*[u] * n, indexing="ij"), axis=-1).reshape(-1, n)
        grid = np.concatenate([grid, box_vertices(np.zeros(n), np.ones(n))[0]])
        points = lo[:, None, :] + grid[None, :, :] * (hi - lo)[:, None, :]
        values = self.pdf(points.reshape(-1, n)).reshape(m, -1)
        return reduce(values, axis=1)

    def superlevel_interval(self, axis: int, points: np.ndarray, level: np.ndarray):
        """Endpoints of {t : f(x with x_axis = t) > level} for each row of points.

        Returns (a, b) with NaN where the set is empty."""
        return self._numeric_superlevel(axis, points, level)

    def _numeric_superlevel(self, axis, points, level, resolution: int = 513):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        level = np.broadcast_to(np.asarray(level, dtype=float), (len(points),))
        slo, shi = self.support_box()
        t = np.linspace(slo[axis], shi[axis], resolution)
        a = np.full(len(points), np.nan)
        b = np.full(len(points), np.nan)
        for row, (x, z) in enumerate(zip(points, level)):
            line = np.repeat(x[None, :], resolution, axis=0)
            line[:, axis] = t
            mask = self.pdf(line) > z
            if not mask.any():
                continue
            idx = np.flatnonzero(mask)
            if idx[-1] - idx[0] + 1 != len(idx):
                raise NotOrthogonallyConvexError(
                    f"superlevel set of {self.name} along axis {axis} is disconnected"
                )
            a[row] = t[max(idx[0] - 1, 0)] if idx[0] > 0 else t[0]
            b[row] = t[min(idx[-1] + 1, resolution - 1)]
        return a, b

    def entropy(self) -> Optional[float]:
        """Differential entropy in bits when known in closed form."""
        return None

    def conditional_entropy(self, axis: int) -> Optional[float]:
        """h(X_axis | rest) in bits when known in closed form."""
        return None

    def sup_slice_integral(self, axis: int) -> float:
        """Integral over the other coordinates of sup_{x_axis} f."""
        raise NotImplementedError(f"{self.name} has no sup-slice integral")


class GaussianDensity(Density):
    log_concave = True

    def __init__(self, mean, cov, name: str = "gaussian"):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(cov, dtype=float))
        self.n = len(self.mean)
        assert self.cov.shape == (self.n, self.n), "covariance shape must match the mean"
        assert np.all(np.isfinite(self.cov)) and np.all(np.isfinite(self.mean))
        assert np.allclose(self.cov, self.cov.T), "covariance must be symmetric"
        eig = np.linalg.eigvalsh(self.cov)
        if eig.min() <= 0:
            raise ValueError("covariance must be positive definite")
        self.name = name
        self.precision = np.linalg.inv(self.cov)
        self.chol = np.linalg.cholesky(self.cov)
        self.logdet = float(np.linalg.slogdet(self.cov)[1])
        self._log_norm = -0.5 * (self.n * math.log(2 * math.pi) + self.logdet)
        self._prec_norm = math.sqrt(float(np.linalg.eigvalsh(self.precision).max()))

    def mahalanobis_sq(self, x: np.ndarray) -> np.ndarray:
        d = np.asarray(x, dtype=float) - self.mean
        return np.einsum("...i,ij,...j->...", d, self.precision, d)

    def logpdf(self, x):
        return self._log_norm - 0.5 * self.mahalanobis_sq(x)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def sample(self, size, rng):
        z = rng.standard_normal((size, self.n))
        return self.mean + z @ self.chol.T

    @property
    def fmax(self):
        return math.exp(self._log_norm)

    def support_box(self, tail: float = SUPPORT_TAIL):
        r = stats.norm.isf(tail / (2 * self.n))
        half = r * np.sqrt(np.diag(self.cov))
        return self.mean - half, self.mean + half

    @property
    def support_volume(self):
        return math.inf

    def box_max(self, lo, hi):
        lo = np.atleast_2d(lo)
        hi = np.atleast_2d(hi)
        # per-axis marginal bound: q(x) >= (x_i - mu_i)^2 / cov_ii
        gap = np.maximum(np.maximum(lo - self.mean, self.mean - hi), 0.0)
        q_axis = np.max(gap**2 / np.diag(self.cov), axis=1)
        # ball bound around the box centre
        centre = (lo + hi) / 2
        radius = np.linalg.norm((hi - lo) / 2, axis=1)
        d = np.sqrt(self.mahalanobis_sq(centre)) - self._prec_norm * radius
        q_ball = np.maximum(d, 0.0) ** 2
        return np.exp(self._log_norm - 0.5 * np.maximum(q_axis, q_ball))

    def superlevel_interval(self, axis, points, level):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        level = np.asarray(level, dtype=float)
        p_aa = self.precision[axis, axis]
        d = points - self.mean
        others = [j for j in range(self.n) if j != axis]
        shift = d[:, others] @ self.precision[axis, others] / p_aa
        centre = self.mean[axis] - shift
        d_centre = d.copy()
        d_centre[:, axis] = -shift
        q_rest = np.einsum("...i,ij,...j->...", d_centre, self.precision, d_centre)
        with np.errstate(divide="ignore", invalid="ignore"):
            budget = 2 * (self._log_norm - np.log(level)) - q_rest
            half = np.sqrt(np.where(budget > 0, budget / p_aa, np.nan))
        return centre - half, centre + half

    def entropy(self):
        return 0.5 * (self.n * math.log2(2 * math.pi * math.e) + self.logdet * LOG2E)

    def conditional_entropy(self, axis):
        return 0.5 * math.log2(2 * math.pi * math.e / self.precision[axis, axis])

    def sup_slice_integral(self, axis):
        others = [j for j in range(self.n) if j != axis]
        if not others:
            return self.fmax
        sub = self.cov[np.ix_(others, others)]
        return self.fmax * (2 * math.pi) ** (len(others) / 2) * math.sqrt(np.linalg.det(sub))

    def clipped_mass(self, xi: float) -> float:
        """Integral of min(xi, f)."""
        if xi >= self.fmax:
            return 1.0
        t = 2 * math.log(self.fmax / xi)
        return xi * self._level_volume(t) + float(stats.chi2.sf(t, self.n))

    def clipped_entropy(self, xi: float, zeta: float) -> float:
        """Entropy in bits of min(xi, f) / zeta."""
        if xi >= self.fmax:
            return self.entropy()
        t = 2 * math.log(self.fmax / xi)
        vol = self._level_volume(t)
        tail = float(stats.chi2.sf(t, self.n))
        tail_q = self.n * float(stats.chi2.sf(t, self.n + 2))
        # integral of c log2 c over the flat top and the untouched tails
        c_log_c = xi * math.log2(xi) * vol + math.log2(self.fmax) * tail - 0.5 * LOG2E * tail_q
        return -c_log_c / zeta + math.log2(zeta)

    def _level_volume(self, t: float) -> float:
        ball = math.pi ** (self.n / 2) / special.gamma(self.n / 2 + 1)
        return ball * t ** (self.n / 2) * math.exp(0.5 * self.logdet)


class UniformDensity(Density):
    log_concave = True

    def __init__(self, lo, hi, name: str = "uniform"):
        self.lo = np.atleast_1d(np.asarray(lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(hi, dtype=float))
        assert self.lo.shape == self.hi.shape
        assert np.all(self.hi > self.lo), "uniform box must have positive sides"
        self.n = len(self.lo)
        self.name = name
        self._value = 1.0 / float(np.prod(self.hi - self.lo))

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = np.all((x > self.lo) & (x < self.hi), axis=-1)
        return np.where(inside, self._value, 0.0)

    def sample(self, size, rng):
        return rng.uniform(self.lo, self.hi, size=(size, self.n))

    @property
    def fmax(self):
        return self._value

    def support_box(self):
        return self.lo.copy(), self.hi.copy()

    def box_min(self, lo, hi):
        inside = np.all((np.atleast_2d(lo) >= self.lo) & (np.atleast_2d(hi) <= self.hi), axis=1)
        return np.where(inside, self._value, 0.0)

    def superlevel_interval(self, axis, points, level):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        others = [j for j in range(self.n) if j != axis]
        ok = np.all(
            (points[:, others] > self.lo[others]) & (points[:, others] < self.hi[others]), axis=1
        ) & (np.asarray(level) < self._value)
        a = np.where(ok, self.lo[axis], np.nan)
        b = np.where(ok, self.hi[axis], np.nan)
        return a, b

    def entropy(self):
        return -math.log2(self._value)

    def conditional_entropy(self, axis):
        return math.log2(self.hi[axis] - self.lo[axis])

    def sup_slice_integral(self, axis):
        return 1.0 / float(self.hi[axis] - self.lo[axis])


class TriangularDensity(Density):
    """Decreasing triangular density f(x) = 2(hi - x)/(hi - lo)^2 on (lo, hi)."""

    log_concave = True
    n = 1

    def __init__(self, lo: float = 0.0, hi: float = 1.0, name: str = "triangular"):
        assert hi > lo
        self.lo = float(lo)
        self.hi = float(hi)
        self.name = name
        self._width = self.hi - self.lo

    def pdf(self, x):
        x = np.asarray(x, dtype=float)[..., 0]
        inside = (x > self.lo) & (x < self.hi)
        return np.where(inside, 2 * (self.hi - x) / self._width**2, 0.0)

    def sample(self, size, rng):
        u = rng.uniform(size=size)
        return (self.hi - self._width * np.sqrt(1 - u))[:, None]

    @property
    def fmax(self):
        return 2.0 / self._width

    def support_box(self):
        return np.array([self.lo]), np.array([self.hi])

    def box_min(self, lo, hi):
        a = np.atleast_2d(lo)[:, 0]
        b = np.atleast_2d(hi)[:, 0]
        value = 2 * (self.hi - np.minimum(b, self.hi)) / self._width**2
        return np.where(a >= self.lo, value, 0.0)

    def box_max(self, lo, hi):
        a = np.atleast_2d(lo)[:, 0]
        b = np.atleast_2d(hi)[:, 0]
        value = 2 * (self.hi - np.maximum(a, self.lo)) / self._width**2
        return np.where((a < self.hi) & (b > self.lo), value, 0.0)

    def superlevel_interval(self, axis, points, level):
        assert axis == 0
        level = np.broadcast_to(np.asarray(level, dtype=float), (len(np.atleast_2d(points)),))
        ok = level < self.fmax
        b = self.hi - np.maximum(level, 0.0) * self._width**2 / 2
        return np.where(ok, self.lo, np.nan), np.where(ok, b, np.nan)

    def entropy(self):
        return math.log2(self._width / 2) + 0.5 * LOG2E

    def sup_slice_integral(self, axis):
        return self.fmax


class CallableDensity(Density):
    """A user-supplied density on a finite support box.

    Normalization is checked by quadrature on construction; unless the density
    is declared log-concave, orthogonal concavity is spot-checked along random
    axis-parallel lines."""

    def __init__(
        self,
        pdf: Callable[[np.ndarray], np.ndarray],
        lo,
        hi,
        log_concave: bool = False,
        name: str = "callable",
        normalization_tolerance: float = 1e-3,
        seed: int = 0,
    ):
        self._pdf = pdf
        self.lo = np.atleast_1d(np.asarray(lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(hi, dtype=float))
        self.n = len(self.lo)
        self.log_concave = log_concave
        self.name = name
        self.normalization_tolerance = normalization_tolerance
        pieces = max(2, 32 // 2 ** (self.n - 1))
        total = float(gauss_legendre_box(self._grid_pdf, self.lo, self.hi, pieces=pieces, order=8)[0])
        if abs(total - 1) > normalization_tolerance:
            raise NormalizationError(f"{name} integrates to {total:.6f}, not 1")
        u = np.linspace(0, 1, 65)
        grid = np.stack(np.meshgrid(*[u] * self.n, indexing="ij"), axis=-1).reshape(-1, self.n)
        self._fmax = float(self.pdf(self.lo + grid * (self.hi - self.lo)).max()) * 1.05
        if not log_concave:
            self._check_orthogonal_concavity(make_rng(seed, 7))

    def _grid_pdf(self, points):
        m, p, n = points.shape
        return self.pdf(points.reshape(-1, n)).reshape(m, p)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = np.all((x > self.lo) & (x < self.hi), axis=-1)
        return np.where(inside, np.asarray(self._pdf(x), dtype=float), 0.0)

    def _check_orthogonal_concavity(self, rng, lines: int = 32):
        for axis in range(self.n):
            points = rng.uniform(self.lo, self.hi, size=(lines, self.n))
            levels = rng.uniform(0, self._fmax, size=lines)
            self._numeric_superlevel(axis, points, levels)

    def sample(self, size, rng):
        out = np.empty((0, self.n))
        while len(out) < size:
            x = rng.uniform(self.lo, self.hi, size=(2 * size, self.n))
            keep = rng.uniform(0, self._fmax, size=2 * size) < self.pdf(x)
            out = np.concatenate([out, x[keep]])
        return out[:size]

    @property
    def fmax(self):
        return self._fmax

    def support_box(self):
        return self.lo.copy(), self.hi.copy()

    def sup_slice_integral(self, axis):
        if self.n == 1:
            return self._fmax
        others = [j for j in range(self.n) if j != axis]
        t = np.linspace(self.lo[axis], self.hi[axis], 129)

        def profile(points):
            m, p, _ = points.shape
            full = np.repeat(points[:, :, None, :], len(t), axis=2)
            full = np.insert(full, axis, 0.0, axis=3)
            full[..., axis] = t
            return self.pdf(full.reshape(-1, self.n)).reshape(m, p, len(t)).max(axis=2)

        return float(gauss_legendre_box(profile, self.lo[others], self.hi[others])[0])


@dataclass
class DensityConfig:
    # builds a density from the keyword parameters of a spec
    factory: Callable[..., Density]
    # parameter names that must be present
    required: tuple


# mapping from family name to factory
_REGISTRY: dict[str, DensityConfig] = {}


def register_density(name: str, config: DensityConfig):
    _REGISTRY[name] = config


register_density("gaussian", DensityConfig(GaussianDensity, ("mean", "cov")))
register_density("uniform", DensityConfig(UniformDensity, ("lo", "hi")))
register_density("triangular", DensityConfig(TriangularDensity, ()))

VALID_DENSITIES: list[str] = list(_REGISTRY.keys())


def load_density(spec: Any) -> Density:
    """Build a density from {"family": ..., **params}; Density instances pass through."""
    if isinstance(spec, Density):
        return spec
    spec = dict(spec)
    family = spec.pop("family", None)
    if family not in _REGISTRY:
        raise ValueError(f"Unknown density family {family}, please register")
    cfg = _REGISTRY[family]
    missing = [key for key in cfg.required if key not in spec]
    assert not missing, f"{family} density is missing parameters {missing}"
    for value in spec.values():
        if isinstance(value, (int, float)) and not math.isfinite(value):
            raise ValueError(f"non-finite parameter in {family} density")
    return cfg.factory(**spec)
