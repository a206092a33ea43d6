import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import integrate, optimize, special

from dyadic_sim.common import (
    LOG2E,
    BracketError,
    Estimate,
    McParams,
    Method,
    mc_estimate,
    to_batch,
)
from dyadic_sim.densities import Density, GaussianDensity, UniformDensity, load_density
from dyadic_sim.regions import Ellipsoid, Hypograph, Region, max_inscribed_scale

# samples handled per chunk; chunk i always draws from stream i of the seed
CHUNK = 2**14


@dataclass(frozen=True)
class FullCube:
    """B = [0,1]^n."""

    def phi(self, region: Region, points: np.ndarray) -> np.ndarray:
        return max_inscribed_scale(region, points)


@dataclass(frozen=True)
class AxisSegment:
    """B = {0}^(n-1) x [0,1] placed along `axis`."""

    axis: int

    def phi(self, region: Region, points: np.ndarray) -> np.ndarray:
        _, b = region.sections(self.axis, points)
        return b - points[:, self.axis]


@dataclass(frozen=True)
class Box:
    """B = [0, sides_1] x ... x [0, sides_n]."""

    sides: tuple

    def phi(self, region: Region, points: np.ndarray) -> np.ndarray:
        return max_inscribed_scale(region, points, base=np.asarray(self.sides, dtype=float))


@dataclass(frozen=True)
class Parallelotope:
    """B = M [0,1]^n for a nonsingular matrix M (convex regions only)."""

    matrix: tuple

    def phi(self, region: Region, points: np.ndarray) -> np.ndarray:
        return max_inscribed_scale(region, points, base=np.asarray(self.matrix, dtype=float))


Basis = Union[FullCube, AxisSegment, Box, Parallelotope]


def _chunked_samples(sampler, mc: McParams, stream: int = 0):
    """Yield consecutive sample chunks, chunk i drawn from rng stream (stream, i)."""
    sizes = [len(c) for c in to_batch(range(mc.sample_count), CHUNK)]
    for i, size in enumerate(sizes):
        yield sampler(size, mc.rng(stream, i))


def erosion_entropy(region: Region, basis: Optional[Basis] = None, mc: Optional[McParams] = None) -> Estimate:
    """E[-log2 Phi] for X uniform on the region, Phi = sup{phi : X + phi B in A}."""
    basis = basis or FullCube()
    mc = mc or McParams()
    assert 0 < region.volume < math.inf
    values = []
    for points in _chunked_samples(region.sample_uniform, mc, stream=1):
        phi = basis.phi(region, points)
        assert np.all(np.isfinite(phi)), "erosion scale must be finite for a bounded region"
        zero = int(np.sum(phi <= 0))
        if zero:
            raise ValueError(f"{zero} of {len(phi)} samples admit no scaled copy of the basis in {region.name}")
        values.append(-np.log2(phi))
    return mc_estimate(np.concatenate(values), mc)


def as_density(obj) -> Density:
    if isinstance(obj, Density):
        return obj
    if isinstance(obj, Hypograph):
        return obj.density
    return load_density(obj)


def differential_entropy(obj, mc: Optional[McParams] = None) -> Estimate:
    """Differential entropy in bits of a density, or of the uniform law on a region."""
    if isinstance(obj, Region) and not isinstance(obj, Hypograph):
        return Estimate(math.log2(obj.volume))
    density = as_density(obj)
    h = density.entropy()
    if h is not None:
        return Estimate(h)
    mc = mc or McParams()
    values = []
    for x in _chunked_samples(density.sample, mc, stream=2):
        logf = density.logpdf(x)
        bad = ~np.isfinite(logf)
        if bad.any():
            print(f"Warning: {density.name} vanishes at {int(bad.sum())} of its own samples")
        values.append(-logf[~bad] * LOG2E)
    return mc_estimate(np.concatenate(values), mc)


def _axis_normalizer(density: Density, axis: int, points: np.ndarray, pieces: int = 8, order: int = 16):
    """Integral of f along `axis` through each point (the axis entry is ignored)."""
    lo, hi = density.support_box()
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo[axis], hi[axis], pieces + 1)
    half = np.diff(edges) / 2
    t = ((edges[:-1] + half)[:, None] + half[:, None] * x[None, :]).ravel()
    wt = (half[:, None] * w[None, :]).ravel()
    line = np.repeat(points[:, None, :], len(t), axis=1)
    line[:, :, axis] = t[None, :]
    f = density.pdf(line.reshape(-1, density.n)).reshape(len(points), len(t))
    return f @ wt


def conditional_entropy(density: Density, axis: int, mc: Optional[McParams] = None) -> Estimate:
    """h(X_axis | rest) in bits."""
    h = density.conditional_entropy(axis)
    if h is not None:
        return Estimate(h)
    mc = mc or McParams()
    values = []
    for x in _chunked_samples(density.sample, mc, stream=3 + axis):
        logc = np.log(_axis_normalizer(density, axis, x))
        values.append(-(density.logpdf(x) - logc) * LOG2E)
    return mc_estimate(np.concatenate(values), mc)


def dual_total_correlation(obj, mc: Optional[McParams] = None) -> Estimate:
    """I_D = h(X) - sum_i h(X_i | X_rest) in bits.

    Accepts a density (Gaussian in closed form) or a region whose uniform law
    is meant (2-D ellipses in closed form)."""
    mc = mc or McParams()
    if isinstance(obj, Region) and not isinstance(obj, Hypograph):
        region = obj
        assert region.n >= 2, "dual total correlation needs n >= 2"
        if isinstance(region, Ellipsoid) and region.n == 2:
            K = region.K
            return Estimate(math.log2(math.pi / math.e * math.sqrt(K[0, 0] * K[1, 1] / region.det)))
        logv = math.log2(region.volume)
        values = []
        for x in _chunked_samples(region.sample_uniform, mc, stream=4):
            lengths = np.stack([region.section_length(i, x) for i in range(region.n)], axis=1)
            values.append(logv - np.log2(lengths).sum(axis=1))
        return mc_estimate(np.concatenate(values), mc)
    density = as_density(obj)
    assert density.n >= 2, "dual total correlation needs n >= 2"
    if isinstance(density, GaussianDensity):
        if np.linalg.det(density.cov) <= 0:
            raise ValueError("singular covariance")
        return Estimate(0.5 * math.log2(np.linalg.det(density.cov) * np.prod(np.diag(density.precision))))
    if isinstance(density, UniformDensity):
        return Estimate(0.0)
    values = []
    for x in _chunked_samples(density.sample, mc, stream=5):
        logf = density.logpdf(x)
        logc = sum(np.log(_axis_normalizer(density, i, x)) for i in range(density.n))
        values.append(((density.n - 1) * logf - logc) * LOG2E)
    return mc_estimate(np.concatenate(values), mc)


class RegionMarginal(Density):
    """Density of X with one coordinate dropped, for X uniform on a region: len_i(x) / V."""

    def __init__(self, region: Region, drop_axis: int, seed: int = 0):
        self.region = region
        self.drop_axis = drop_axis
        self.n = region.n - 1
        self.name = f"{region.name}-marginal-{drop_axis}"
        self.log_concave = False
        self._keep = [j for j in range(region.n) if j != drop_axis]
        sample = self.sample(4096, np.random.default_rng(seed))
        self._fmax = float(self.pdf(sample).max()) * 1.05

    def pdf(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        full = np.insert(x, self.drop_axis, 0.0, axis=1)
        return self.region.section_length(self.drop_axis, full) / self.region.volume

    def sample(self, size, rng):
        return self.region.sample_uniform(size, rng)[:, self._keep]

    @property
    def fmax(self):
        return self._fmax

    def support_box(self):
        lo, hi = self.region.bounding_box
        return lo[self._keep], hi[self._keep]


def region_marginal(region: Region, drop_axis: int) -> Density:
    if isinstance(region, Hypograph) and drop_axis == region.n - 1:
        return region.density
    return RegionMarginal(region, drop_axis)


def _solve_level(mass, zeta: float, lo: float, hi: float) -> float:
    """Root of mass(xi) = zeta for a nondecreasing mass on [lo, hi]."""
    if (mass(lo) - zeta) * (mass(hi) - zeta) > 0:
        raise BracketError(f"cannot bracket the truncation level for zeta={zeta}")
    return optimize.brentq(lambda xi: mass(xi) - zeta, lo, hi, xtol=1e-300, rtol=1e-12)


def truncated_entropy(obj, zeta: float, mc: Optional[McParams] = None) -> tuple[float, Estimate]:
    """Level xi with integral of min(xi, f) equal to zeta, and the entropy of min(xi, f)/zeta.

    Gaussians are solved in closed form, one-dimensional densities on a
    finite support by quadrature and everything else by Monte Carlo over
    samples of f."""
    assert 0 < zeta <= 1, "zeta must lie in (0, 1]"
    density = obj if isinstance(obj, Density) else as_density(obj)
    if zeta == 1:
        return density.fmax, differential_entropy(density, mc)
    if isinstance(density, GaussianDensity):
        s_hi = 1.0
        while density.clipped_mass(density.fmax * math.exp(-s_hi)) > zeta:
            s_hi *= 2
        s = optimize.brentq(
            lambda s: density.clipped_mass(density.fmax * math.exp(-s)) - zeta, 0.0, s_hi, xtol=1e-14, rtol=1e-12
        )
        xi = density.fmax * math.exp(-s)
        return xi, Estimate(density.clipped_entropy(xi, zeta))
    lo, hi = density.support_box()
    if density.n == 1 and np.all(np.isfinite([lo[0], hi[0]])):
        a, b = float(lo[0]), float(hi[0])

        def f(t):
            return float(density.pdf(np.array([[t]]))[0])

        def mass(xi):
            return integrate.quad(lambda t: min(xi, f(t)), a, b, limit=200)[0]

        xi = _solve_level(mass, zeta, 1e-12, density.fmax)

        def c_log_c(t):
            c = min(xi, f(t))
            return c * math.log2(c) if c > 0 else 0.0

        value, err = integrate.quad(c_log_c, a, b, limit=200)
        return xi, Estimate(-value / zeta + math.log2(zeta), abs(err) / zeta, Method.QUADRATURE)
    mc = mc or McParams()
    x = np.concatenate(list(_chunked_samples(density.sample, mc, stream=6)))
    g = density.pdf(x)
    g = g[g > 0]

    def mc_mass(xi):
        return float(np.mean(np.minimum(1.0, xi / g)))

    xi = _solve_level(mc_mass, zeta, float(g.min()) * 1e-9, float(g.max()))
    c = np.minimum(xi, g)
    values = -(c / g) * np.log2(c) / zeta + math.log2(zeta)
    return xi, mc_estimate(values, mc)


def logconcave_trunc_gap_bound(n: int, zeta: float) -> tuple[float, Optional[float], float]:
    """Upper bound on h_zeta-tilde - h for log-concave densities.

    Returns (bound, simplified bound or None when it does not apply, nu),
    where nu solves Gamma(n+1, nu) = zeta Gamma(n+1)."""
    assert 0 < zeta <= 1, "zeta must lie in (0, 1]"
    if zeta == 1:
        nu = 0.0
    else:
        hi = float(n + 1)
        while special.gammaincc(n + 1, hi) > zeta:
            hi *= 2
        nu = optimize.brentq(lambda t: special.gammaincc(n + 1, t) - zeta, 0.0, hi, xtol=1e-14, rtol=1e-12)
    bound = math.log2(zeta) + nu * LOG2E + n * LOG2E
    simplified = None
    if zeta >= math.exp(-(math.e - 2) * n):
        simplified = math.log2(zeta) + (math.e + LOG2E) * n
    return bound, simplified, nu


def lemma3_gap(obj, mc: Optional[McParams] = None) -> Estimate:
    """h(X) + log2 sup f; lies in [0, n log2 e] for log-concave f."""
    density = as_density(obj)
    h = differential_entropy(density, mc)
    return Estimate(h.value + math.log2(density.fmax), h.radius, h.method, h.samples, h.seed)


def lemma4_gap(obj, axis: Optional[int] = None, mc: Optional[McParams] = None) -> Estimate:
    """h(X_axis | rest) + log2 of the integral of sup_{x_axis} f; axis defaults to the last."""
    density = as_density(obj)
    axis = density.n - 1 if axis is None else axis
    h = conditional_entropy(density, axis, mc)
    return Estimate(h.value + math.log2(density.sup_slice_integral(axis)), h.radius, h.method, h.samples, h.seed)
