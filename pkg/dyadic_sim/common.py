import enum
import math
import os
from dataclasses import dataclass, field
from typing import Any, NamedTuple, Optional

import numpy as np
from scipy.stats import norm

LOG2E = math.log2(math.e)

# resolution of the fixed-point child slots shared by the coder's generator and agents
FIXED_POINT_BITS = 60


class DyadicSimError(Exception):
    """Base class for every domain error raised by dyadic_sim."""


class DimensionMismatchError(DyadicSimError, ValueError):
    pass


class DepthExceeded(DyadicSimError):
    """A descent or point location was not resolved within the depth budget."""


class PointOutsideRegionError(DyadicSimError, ValueError):
    pass


class UnboundedProjectionError(DyadicSimError):
    pass


class NotOrthogonallyConvexError(DyadicSimError, ValueError):
    """An axis-parallel section was found to be disconnected."""


class NormalizationError(DyadicSimError, ValueError):
    pass


class LowAcceptanceError(DyadicSimError):
    pass


class DecodeError(DyadicSimError):
    pass


class BitsExhaustedError(DecodeError):
    pass


class CubeDisagreementError(DyadicSimError):
    pass


class BracketError(DyadicSimError):
    pass


class NondeterminismError(DyadicSimError):
    pass


class InconclusiveError(DyadicSimError):
    pass


class DyadicCube(NamedTuple):
    """C_{k,v} = 2^-k ([0,1]^n + v)."""

    k: int
    v: tuple[int, ...]

    @property
    def n(self) -> int:
        return len(self.v)

    def parent(self) -> "DyadicCube":
        return DyadicCube(self.k - 1, tuple(x >> 1 for x in self.v))

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return cube_bounds(self.k, self.v)


class Method(str, enum.Enum):
    ANALYTIC = "Analytic"
    MONTE_CARLO = "MonteCarlo"
    QUADRATURE = "Quadrature"


@dataclass
class Estimate:
    """A real-valued estimate (bits, for entropies) with a symmetric confidence radius."""

    value: float
    radius: float = 0.0
    method: Method = Method.ANALYTIC
    samples: Optional[int] = None
    seed: Optional[int] = None

    @property
    def lower(self) -> float:
        return self.value - self.radius

    @property
    def upper(self) -> float:
        return self.value + self.radius

    def to_dict(self) -> dict[str, Any]:
        return {
            "value": float(self.value),
            "radius": float(self.radius),
            "method": self.method.value,
            "samples": self.samples,
            "seed": self.seed,
        }


@dataclass
class QuadratureResult:
    """Clipped volumes with a rigorous or estimated error bound.

    `flagged` is set whenever the refinement budget ran out before the
    declared tolerance was met."""

    value: Any
    error_bound: Any = 0.0
    flagged: bool = False


@dataclass
class McParams:
    sample_count: int = 10_000
    seed: int = 0
    confidence_level: float = 0.997
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        assert self.sample_count >= 1000, "Monte Carlo needs at least 1000 samples"
        assert 0 < self.confidence_level < 1

    @property
    def z_score(self) -> float:
        return float(norm.ppf((1 + self.confidence_level) / 2))

    def rng(self, *stream: int) -> np.random.Generator:
        return make_rng(self.seed, *stream)


def make_rng(seed: Optional[int], *stream: int) -> np.random.Generator:
    """Deterministic generator for (seed, stream...) so that chunked or threaded
    work draws the same numbers regardless of how it is scheduled."""
    if seed is None:
        return np.random.default_rng()
    return np.random.default_rng([int(seed), *[int(s) for s in stream]])


def mc_estimate(values: np.ndarray, mc: McParams) -> Estimate:
    values = np.asarray(values, dtype=float)
    radius = mc.z_score * float(np.std(values, ddof=1)) / math.sqrt(len(values))
    return Estimate(
        float(np.mean(values)),
        radius,
        Method.MONTE_CARLO,
        samples=len(values),
        seed=mc.seed,
    )


def to_batch(x, batch_size: int, start: int = 0, end: int | None = None):
    """Helper function to split an array into consecutive chunks,
    keeping the last partial chunk"""
    end = min(end, len(x)) if end is not None else len(x)
    for i in range(start, end, batch_size):
        yield x[i : min(i + batch_size, end)]


def cube_bounds(k, v) -> tuple[np.ndarray, np.ndarray]:
    """Exact corners of C_{k,v} = 2^-k([0,1]^n + v); works on a single offset
    vector or on an (m, n) array of offsets with a matching level array."""
    v = np.asarray(v, dtype=np.int64)
    k = np.asarray(k, dtype=np.int64)
    if v.ndim == 2 and k.ndim == 1:
        k = k[:, None]
    lo = np.ldexp(v.astype(float), -k)
    hi = np.ldexp((v + 1).astype(float), -k)
    return lo, hi


def box_volume(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return np.prod(np.maximum(hi - lo, 0.0), axis=-1)


def box_vertices(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """All 2^n corners of each box; returns shape (m, 2^n, n)."""
    lo = np.atleast_2d(lo)
    hi = np.atleast_2d(hi)
    n = lo.shape[1]
    corners = ((np.arange(2**n)[:, None] >> np.arange(n)[::-1]) & 1).astype(bool)
    return np.where(corners[None, :, :], hi[:, None, :], lo[:, None, :])


def default_out_dir() -> str:
    return os.environ.get("DYADIC_SIM_OUT", "/tmp/dyadic_sim")
