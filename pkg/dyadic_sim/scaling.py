import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from dyadic_sim.common import (
    LOG2E,
    Estimate,
    McParams,
    Method,
    UnboundedProjectionError,
    make_rng,
)
from dyadic_sim.densities import Density
from dyadic_sim.dyadic import DecompositionTable, coding_frame, decompose, table_entropy
from dyadic_sim.entropy import (
    FullCube,
    as_density,
    dual_total_correlation,
    erosion_entropy,
    region_marginal,
    truncated_entropy,
)
from dyadic_sim.regions import Hypograph, Region, build_hypograph, max_inscribed_scale, transform


@dataclass
class ScalingMatrix:
    """Positive diagonal matrix D = diag(d)."""

    d: np.ndarray

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=float)
        assert np.all(self.d > 0), "scaling entries must be positive"

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.d)

    def apply(self, region: Region) -> Region:
        return transform(region, scale=self.d)

    def to_dict(self) -> dict:
        return {"d": self.d.tolist()}


def as_region(obj) -> Region:
    if isinstance(obj, Region):
        return obj
    return build_hypograph(obj)


def _projection_volumes(region: Region, mc: Optional[McParams]) -> list[float]:
    return [region.projection_volume(i, mc).value for i in range(region.n)]


def bound_thm1(region: Region, mc: Optional[McParams] = None) -> tuple[float, float]:
    """Bounds on H(W_A) and on G from projection volumes.

    Returns (H bound, G bound); the G bound drops the 2n term by averaging
    over random shifts and scales."""
    n = region.n
    vp = _projection_volumes(region, mc)
    core = n * math.log2(sum(vp)) - (n - 1) * math.log2(region.volume)
    return core + (2 + LOG2E) * n, core + n * LOG2E


def truncated_marginals(region: Region, mc: Optional[McParams] = None) -> list[tuple[float, Estimate]]:
    """(alpha_i, truncated entropy at 1/n) of each marginal with coordinate i dropped."""
    zeta = 1.0 / region.n
    return [truncated_entropy(region_marginal(region, i), zeta, mc) for i in range(region.n)]


def find_scaling(obj, mc: Optional[McParams] = None, marginals=None) -> ScalingMatrix:
    """Diagonal D with d_i = xi / alpha_i, xi the geometric mean of the alphas.

    alpha_i is the level at which min(alpha_i, f_i) integrates to 1/n, f_i
    being the density of X with coordinate i dropped; det D = 1."""
    region = as_region(obj)
    marginals = marginals or truncated_marginals(region, mc)
    alpha = np.array([a for a, _ in marginals])
    assert np.all(alpha > 0)
    xi = float(np.exp(np.mean(np.log(alpha))))
    return ScalingMatrix(xi / alpha)


def bound_thm2(obj, mc: Optional[McParams] = None, marginals=None) -> tuple[Optional[float], Estimate, Estimate]:
    """Bounds on H(W_DA) after diagonal scaling.

    Returns (projection form or None when a projection is unbounded,
    truncated-entropy form, G form of the truncated bound)."""
    region = as_region(obj)
    n = region.n
    tail = -(n - 1) * math.log2(region.volume) + n * math.log2(n) + (2 + LOG2E) * n
    try:
        projection = sum(math.log2(v) for v in _projection_volumes(region, mc)) + tail
    except UnboundedProjectionError:
        projection = None
    marginals = marginals or truncated_marginals(region, mc)
    value = sum(h.value for _, h in marginals) + tail
    radius = sum(h.radius for _, h in marginals)
    method = Method.ANALYTIC if all(h.method == Method.ANALYTIC for _, h in marginals) else Method.MONTE_CARLO
    truncated = Estimate(value, radius, method)
    g_form = Estimate(value - 2 * n, radius, method)
    return projection, truncated, g_form


def bound_thm3(n: int, i_d: float) -> tuple[float, float]:
    """(H bound, G bound) for the hypograph of a log-concave density on R^n."""
    h = i_d + n * n * LOG2E + n * (math.log2(n) + math.log2(n + 1) + math.e + 2 * LOG2E + 2) + 2 + LOG2E
    g = i_d + n * n * LOG2E + 9 * n * math.log2(n)
    return h, g


def randomized_shift_scale(
    region: Region,
    T: int,
    rng_seed: Optional[int] = None,
    theta: Optional[float] = None,
    shift=None,
) -> Region:
    """Lambda A + U with Lambda = 2^Theta, Theta ~ Unif[0,1], U_i ~ Unif[0, 2^T] i.i.d.

    `theta` and `shift` override the random draws."""
    n = region.n
    if int(T) != T or T <= math.log2(region.volume) / n + 1:
        raise ValueError(f"T={T} must be an integer above {math.log2(region.volume) / n + 1:.3f}")
    rng = make_rng(rng_seed)
    theta = rng.uniform() if theta is None else float(theta)
    shift = rng.uniform(0, 2.0**T, size=n) if shift is None else np.asarray(shift, dtype=float)
    return transform(region, scale=np.full(n, 2.0**theta), shift=shift)


def prop2_bound(region: Region, mc: Optional[McParams] = None, erosion: Optional[Estimate] = None) -> Estimate:
    """log V + n h_erosion + 2n."""
    h = erosion or erosion_entropy(region, FullCube(), mc)
    n = region.n
    return Estimate(math.log2(region.volume) + n * h.value + 2 * n, n * h.radius, h.method, h.samples, h.seed)


def prop2_check(
    region: Region,
    T: int,
    draws: int = 200,
    k_max: int = 10,
    seed: int = 0,
    mc: Optional[McParams] = None,
    min_mass: float = 0.0,
) -> dict:
    """Average H(W) over random shifts and scales next to log V + n h_erosion."""
    mc = mc or McParams(seed=seed)
    lower, upper = [], []
    for d in range(draws):
        image = randomized_shift_scale(region, T, rng_seed=seed * 100_003 + d)
        lo, hi = table_entropy(decompose(image, k_max, min_mass=min_mass))
        lower.append(lo)
        upper.append(hi)
    h = erosion_entropy(region, FullCube(), mc)
    n = region.n
    expected = Estimate(math.log2(region.volume) + n * h.value, n * h.radius, h.method, h.samples, h.seed)
    z = mc.z_score
    return {
        "mean_H_lower": Estimate(
            float(np.mean(lower)), z * float(np.std(lower, ddof=1)) / math.sqrt(draws), Method.MONTE_CARLO, draws
        ),
        "mean_H_upper": Estimate(
            float(np.mean(upper)), z * float(np.std(upper, ddof=1)) / math.sqrt(draws), Method.MONTE_CARLO, draws
        ),
        "expected": expected,
    }


def lemma1_check(region: Region, gamma: float, mc: Optional[McParams] = None) -> tuple[Estimate, Estimate]:
    """(V of the erosion by [0, gamma]^n, section lower bound), both by Monte Carlo."""
    mc = mc or McParams()
    x = region.sample_uniform(mc.sample_count, mc.rng(7))
    V = region.volume
    phi = max_inscribed_scale(region, x)
    lengths = np.stack([region.section_length(i, x) for i in range(region.n)], axis=1)
    lhs = V * (phi >= gamma).astype(float)
    rhs = V * (1 - np.minimum(1.0, gamma / lengths).sum(axis=1))
    z = mc.z_score

    def estimate(values):
        return Estimate(
            float(values.mean()),
            z * float(values.std(ddof=1)) / math.sqrt(len(values)),
            Method.MONTE_CARLO,
            len(values),
            mc.seed,
        )

    return estimate(lhs), estimate(rhs)


@dataclass
class BoundsReport:
    region: str
    n: int
    i_d: Estimate
    erosion: Optional[Estimate]
    h_measured: tuple
    k_max: int
    scaling: ScalingMatrix
    h_scaled: tuple
    thm1: Optional[tuple] = None
    thm2_projection: Optional[float] = None
    thm2_truncated: Optional[Estimate] = None
    thm2_g: Optional[Estimate] = None
    thm3: Optional[tuple] = None
    prop2: Optional[Estimate] = None
    notes: list = field(default_factory=list)

    def check_ordering(self) -> list[str]:
        """Inequalities that fail beyond their confidence radii.

        I_D is held against the lower end of the measured bracket and every
        bound against its upper end."""
        h_lower, h_upper = self.h_measured
        h_scaled_upper = self.h_scaled[1]
        failures = []
        if self.i_d.lower > h_lower:
            failures.append("I_D > H(W_A)")
        if self.thm1 is not None and h_upper > self.thm1[0]:
            failures.append("H(W_A) > projection bound")
        if self.prop2 is not None and h_upper > self.prop2.upper:
            failures.append("H(W_A) > erosion bound")
        if self.thm2_projection is not None and h_scaled_upper > self.thm2_projection:
            failures.append("H(W_DA) > scaled projection bound")
        if self.thm2_truncated is not None and h_scaled_upper > self.thm2_truncated.upper:
            failures.append("H(W_DA) > truncated-entropy bound")
        if self.thm3 is not None and h_scaled_upper > self.thm3[0]:
            failures.append("H(W_DA) > log-concave bound")
        return failures

    def to_dict(self) -> dict:
        return {
            "region": self.region,
            "n": self.n,
            "I_D": self.i_d.to_dict(),
            "erosion": self.erosion.to_dict() if self.erosion else None,
            "H_measured": list(self.h_measured),
            "k_max": self.k_max,
            "scaling": self.scaling.to_dict(),
            "H_scaled": list(self.h_scaled),
            "thm1": list(self.thm1) if self.thm1 else None,
            "thm2_projection": self.thm2_projection,
            "thm2_truncated": self.thm2_truncated.to_dict() if self.thm2_truncated else None,
            "thm2_G": self.thm2_g.to_dict() if self.thm2_g else None,
            "thm3": list(self.thm3) if self.thm3 else None,
            "prop2": self.prop2.to_dict() if self.prop2 else None,
            "violations": self.check_ordering(),
            "notes": self.notes,
        }


def bounds_report(
    obj,
    k_max: int = 11,
    mc: Optional[McParams] = None,
    min_mass: float = 0.0,
    workers: int = 1,
    table: Optional[DecompositionTable] = None,
) -> BoundsReport:
    """Measure H(W) of a region (or of the hypograph of a density) next to every bound that applies.

    H(W) is measured on the coding frame of the region (see coding_frame);
    `table`, when given, is that frame's decomposition at k_max."""
    mc = mc or McParams()
    region = as_region(obj)
    notes = []
    hypograph = isinstance(region, Hypograph)
    density: Optional[Density] = as_density(region) if hypograph else None
    i_d = dual_total_correlation(density if hypograph else region, mc)
    if table is None:
        table = decompose(coding_frame(region)[0], k_max, min_mass=min_mass, workers=workers)
    h_measured = table_entropy(table)
    marginals = truncated_marginals(region, mc)
    scaling = find_scaling(region, mc, marginals)
    scaled, _ = coding_frame(scaling.apply(region))
    h_scaled = table_entropy(decompose(scaled, k_max, min_mass=min_mass, workers=workers))
    try:
        thm1 = bound_thm1(region, mc)
    except UnboundedProjectionError as e:
        thm1 = None
        notes.append(f"projection bound skipped: {e}")
    projection, truncated, g_form = bound_thm2(region, mc, marginals)
    thm3 = None
    if density is not None and density.log_concave:
        thm3 = bound_thm3(density.n, i_d.value)
    erosion = None if hypograph else erosion_entropy(region, FullCube(), mc)
    prop2 = None if hypograph else prop2_bound(region, mc, erosion)
    return BoundsReport(
        region=region.name,
        n=region.n,
        i_d=i_d,
        erosion=erosion,
        h_measured=h_measured,
        k_max=k_max,
        scaling=scaling,
        h_scaled=h_scaled,
        thm1=thm1,
        thm2_projection=projection,
        thm2_truncated=truncated,
        thm2_g=g_form,
        thm3=thm3,
        prop2=prop2,
        notes=notes,
    )
