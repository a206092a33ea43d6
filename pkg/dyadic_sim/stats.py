import csv
import itertools
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy import stats
from sklearn.linear_model import LinearRegression

from dyadic_sim.common import Estimate, InconclusiveError, Method, cube_bounds, make_rng
from dyadic_sim.densities import Density, gauss_legendre_box
from dyadic_sim.regions import Region


@dataclass
class GridHistogram:
    lo: np.ndarray
    hi: np.ndarray
    bins: tuple
    counts: np.ndarray
    # samples falling outside [lo, hi)
    outside: int = 0

    @classmethod
    def from_samples(cls, samples, lo, hi, bins) -> "GridHistogram":
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        bins = tuple(np.broadcast_to(np.asarray(bins, dtype=int), lo.shape).tolist())
        counts, _ = np.histogramdd(samples, bins=bins, range=list(zip(lo, hi)))
        counts = counts.astype(np.int64)
        return cls(lo, hi, bins, counts, int(len(samples) - counts.sum()))

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.outside

    def cell_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Corners of every cell in C order, shape (cells, n)."""
        widths = (self.hi - self.lo) / np.asarray(self.bins)
        index = np.stack(np.meshgrid(*[np.arange(b) for b in self.bins], indexing="ij"), axis=-1)
        index = index.reshape(-1, len(self.bins))
        lo = self.lo + index * widths
        return lo, lo + widths

    def to_csv(self, path: str):
        lo, hi = self.cell_bounds()
        n = len(self.bins)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow([f"lo_{i + 1}" for i in range(n)] + [f"hi_{i + 1}" for i in range(n)] + ["count"])
            for a, b, c in zip(lo, hi, self.counts.ravel()):
                writer.writerow([repr(float(x)) for x in a] + [repr(float(x)) for x in b] + [int(c)])


Target = Union[Region, Density]


def target_box(target: Target) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(target, Region):
        return target.bounding_box
    return target.support_box()


def cell_masses(target: Target, hist: GridHistogram) -> np.ndarray:
    """Probability of each grid cell under the uniform law of a region or under a density."""
    lo, hi = hist.cell_bounds()
    if isinstance(target, Region):
        masses = np.asarray(target.clipped_box_volume(lo, hi).value, dtype=float) / target.volume
    else:

        def pdf(points):
            m, p, d = points.shape
            return target.pdf(points.reshape(-1, d)).reshape(m, p)

        masses = gauss_legendre_box(pdf, lo, hi)
    return np.clip(masses, 0.0, None)


@dataclass
class ChiSquareResult:
    statistic: float
    p_value: float
    dof: int
    # number of low-expectation cells pooled into one
    merged_cells: int

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "dof": self.dof,
            "merged_cells": self.merged_cells,
        }


def chi_square_counts(observed: np.ndarray, expected: np.ndarray, min_expected: float = 5.0) -> ChiSquareResult:
    """Pearson test with every cell below `min_expected` pooled into one cell."""
    observed = np.asarray(observed, dtype=float).ravel()
    expected = np.asarray(expected, dtype=float).ravel()
    small = expected < min_expected
    obs = np.append(observed[~small], observed[small].sum())
    exp = np.append(expected[~small], expected[small].sum())
    if exp[-1] < min_expected and len(exp) > 1:
        # fold the pooled cell into the smallest regular cell
        j = int(np.argmin(exp[:-1]))
        obs[j] += obs[-1]
        exp[j] += exp[-1]
        obs, exp = obs[:-1], exp[:-1]
    if np.any((exp <= 0) & (obs > 0)):
        return ChiSquareResult(math.inf, 0.0, len(exp) - 1, int(small.sum()))
    keep = exp > 0
    obs, exp = obs[keep], exp[keep]
    if len(exp) < 2:
        raise InconclusiveError("fewer than two usable cells")
    exp = exp * obs.sum() / exp.sum()
    statistic, p_value = stats.chisquare(obs, exp)
    return ChiSquareResult(float(statistic), float(p_value), len(exp) - 1, int(small.sum()))


def chi_square_uniform(samples, region: Region, bins=16) -> ChiSquareResult:
    """Goodness of fit of samples to the uniform law on a region over a grid on its bounding box."""
    lo, hi = region.bounding_box
    hist = GridHistogram.from_samples(samples, lo, hi, bins)
    expected = np.append(cell_masses(region, hist).ravel(), 0.0) * hist.total
    observed = np.append(hist.counts.ravel(), hist.outside)
    return chi_square_counts(observed, expected)


def chi_square_density(samples, density: Density, bins=16, lo=None, hi=None) -> ChiSquareResult:
    slo, shi = density.support_box()
    lo = slo if lo is None else np.asarray(lo, dtype=float)
    hi = shi if hi is None else np.asarray(hi, dtype=float)
    hist = GridHistogram.from_samples(samples, lo, hi, bins)
    masses = cell_masses(density, hist).ravel()
    expected = np.append(masses, max(0.0, 1.0 - masses.sum())) * hist.total
    observed = np.append(hist.counts.ravel(), hist.outside)
    return chi_square_counts(observed, expected)


def empirical_tv(
    samples,
    target: Target,
    bins=16,
    lo=None,
    hi=None,
    bootstrap: int = 200,
    seed: int = 0,
    z: float = 3.0,
) -> Estimate:
    """Half the L1 distance between empirical and target cell masses.

    Samples outside the grid form one extra cell. Projecting onto cells can
    only shrink total variation, so this is a lower estimate of the true
    distance; the radius is z bootstrap standard deviations."""
    blo, bhi = target_box(target)
    lo = blo if lo is None else np.asarray(lo, dtype=float)
    hi = bhi if hi is None else np.asarray(hi, dtype=float)
    hist = GridHistogram.from_samples(samples, lo, hi, bins)
    masses = cell_masses(target, hist).ravel()
    p = np.append(masses, max(0.0, 1.0 - masses.sum()))
    counts = np.append(hist.counts.ravel(), hist.outside)
    m = counts.sum()
    p_hat = counts / m
    tv = 0.5 * float(np.abs(p_hat - p).sum())
    rng = make_rng(seed, 13)
    resampled = rng.multinomial(m, p_hat, size=bootstrap) / m
    boot = 0.5 * np.abs(resampled - p[None, :]).sum(axis=1)
    return Estimate(tv, z * float(boot.std(ddof=1)), Method.MONTE_CARLO, int(m), seed)


def tail_exponent(probabilities, window: tuple = (0.1, 0.9)) -> float:
    """alpha of p_i ~ i^-alpha from a least-squares fit of log p against log rank.

    Only ranks in [window[0] m, window[1] m] enter the fit."""
    p = np.sort(np.asarray(probabilities, dtype=float))[::-1]
    p = p[p > 0]
    m = len(p)
    if m < 100:
        raise ValueError(f"need at least 100 atoms for a tail fit, got {m}")
    first, last = int(window[0] * m), int(window[1] * m)
    ranks = np.arange(first + 1, last + 1)
    logp = np.log(p[first:last])
    if np.ptp(logp) == 0:
        raise ValueError("pmf is flat over the fit window; tail exponent undefined")
    fit = LinearRegression().fit(np.log(ranks)[:, None], logp)
    return float(-fit.coef_[0])


def ks_uniformity_of_pvalues(p_values) -> float:
    """p-value of a KS test that the given p-values are Unif[0,1]."""
    return float(stats.kstest(np.asarray(p_values, dtype=float), "uniform").pvalue)


@dataclass
class CubeCheck:
    cube: tuple
    sessions: int
    ks_p_values: list
    correlations: list
    correlation_p_values: list
    independence_p_values: list

    def p_values(self) -> list:
        return self.ks_p_values + self.correlation_p_values + self.independence_p_values


@dataclass
class IndependenceReport:
    cubes: list = field(default_factory=list)
    alpha: float = 0.01
    tests: int = 0
    passed: bool = True

    @property
    def threshold(self) -> float:
        return self.alpha / max(self.tests, 1)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "alpha": self.alpha,
            "tests": self.tests,
            "threshold": self.threshold,
            "cubes": [
                {
                    "cube": [c.cube[0], list(c.cube[1])],
                    "sessions": c.sessions,
                    "min_p_value": min(c.p_values()) if c.p_values() else None,
                    "max_abs_correlation": max((abs(r) for r in c.correlations), default=0.0),
                }
                for c in self.cubes
            ],
        }


def conditional_independence_check(
    cubes,
    outputs,
    min_sessions_per_cube: int = 500,
    alpha: float = 0.01,
    max_cubes: int = 20,
    grid: int = 8,
) -> IndependenceReport:
    """Check that outputs are independent and uniform on the sides of their cube.

    `cubes` holds one (k, v) per session and `outputs` the agents' values.
    For the most visited cubes with enough sessions every axis gets a KS test
    against uniform, every pair a Pearson correlation test and, when the
    grid is well filled, a chi-square test of independence on a grid x grid
    table. The report passes when every p-value clears alpha divided by the
    number of tests."""
    outputs = np.atleast_2d(np.asarray(outputs, dtype=float))
    groups = defaultdict(list)
    for row, (k, v) in enumerate(cubes):
        groups[(int(k), tuple(int(x) for x in v))].append(row)
    eligible = [(key, rows) for key, rows in groups.items() if len(rows) >= min_sessions_per_cube]
    if not eligible:
        raise InconclusiveError(f"no cube has {min_sessions_per_cube} sessions")
    eligible.sort(key=lambda item: (-len(item[1]), item[0]))
    report = IndependenceReport(alpha=alpha)
    d = outputs.shape[1]
    for (k, v), rows in eligible[:max_cubes]:
        lo, hi = cube_bounds(k, v)
        u = (outputs[rows] - lo[:d]) / (hi[:d] - lo[:d])
        check = CubeCheck((k, v), len(rows), [], [], [], [])
        for i in range(d):
            check.ks_p_values.append(float(stats.kstest(u[:, i], "uniform").pvalue))
        for i, j in itertools.combinations(range(d), 2):
            r, p = stats.pearsonr(u[:, i], u[:, j])
            check.correlations.append(float(r))
            check.correlation_p_values.append(float(p))
            if len(rows) >= 5 * grid * grid:
                table, _, _ = np.histogram2d(u[:, i], u[:, j], bins=grid, range=[[0, 1], [0, 1]])
                check.independence_p_values.append(float(stats.chi2_contingency(table)[1]))
        report.cubes.append(check)
    all_p = [p for c in report.cubes for p in c.p_values()]
    report.tests = len(all_p)
    report.passed = all(p > report.threshold for p in all_p)
    return report


# ##############################################################################
# # Metrics
# ##############################################################################


def compute_session_metrics(
    cubes,
    codeword_lengths,
    table_probabilities: Optional[dict] = None,
    metric_prefix: Optional[str] = None,
) -> dict[str, float]:
    """Summary numbers of a batch of sessions, in the flat form the logger takes."""
    lengths = np.asarray(codeword_lengths, dtype=float)
    metrics = {
        "sessions": float(len(lengths)),
        "mean_bits": float(lengths.mean()) if len(lengths) else math.nan,
        "mean_bits_std_err": float(lengths.std() / np.sqrt(len(lengths))) if len(lengths) else math.nan,
        "max_bits": float(lengths.max()) if len(lengths) else math.nan,
    }
    if table_probabilities:
        counts = defaultdict(int)
        for k, v in cubes:
            counts[(int(k), tuple(int(x) for x in v))] += 1
        keys = list(table_probabilities.keys())
        observed = np.array([counts.get(key, 0) for key in keys], dtype=float)
        expected = np.array([table_probabilities[key] for key in keys]) * len(lengths)
        metrics["cube_chi2_p_value"] = chi_square_counts(observed, expected).p_value
    if metric_prefix:
        metrics = {f"{metric_prefix}/{k}": v for k, v in metrics.items()}
    return metrics
