"""Discretized action distributions and their contrastive combination.

Continuous action dimensions are handled as categorical distributions over
a shared bin grid. Sample-based policies are converted to categoricals with
a Gaussian kernel density estimate evaluated at bin centers; the contrast
step reweights the original distribution by the ratio against its
masked-observation counterpart, raised to a strength exponent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SQRT_2PI = math.sqrt(2.0 * math.pi)

BANDWIDTH_FLOOR = 1e-6
PROB_SUM_TOL = 1e-9


@dataclass(frozen=True)
class BinGrid:
    """Uniform discretization of one real action dimension."""

    lower: float
    upper: float
    count: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise ValueError("grid bounds must be finite")
        if self.upper <= self.lower:
            raise ValueError(f"grid upper {self.upper} must exceed lower {self.lower}")
        if self.count < 2:
            raise ValueError(f"grid needs at least 2 bins, got {self.count}")

    @property
    def width(self) -> float:
        return (self.upper - self.lower) / self.count

    def centers(self) -> np.ndarray:
        return self.lower + (np.arange(self.count) + 0.5) * self.width

    def index_of(self, value: float) -> int:
        """Bin index containing value, clipped to the grid range."""
        raw = int(math.floor((value - self.lower) / self.width))
        return min(max(raw, 0), self.count - 1)


@dataclass(frozen=True)
class CategoricalDist:
    """Probabilities over the bins of one grid.

    Entries are non-negative, finite, and sum to 1 within 1e-9. The
    probability array is stored read-only; instances are value types.
    """

    grid: BinGrid
    probs: np.ndarray

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.shape != (self.grid.count,):
            raise ValueError(
                f"probs shape {probs.shape} does not match grid count {self.grid.count}"
            )
        if not np.all(np.isfinite(probs)):
            raise ValueError("probs must be finite")
        if np.any(probs < 0.0):
            raise ValueError("probs must be non-negative")
        if abs(float(probs.sum()) - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"probs sum to {probs.sum()!r}, expected 1")
        probs = probs.copy()
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)

    @staticmethod
    def uniform(grid: BinGrid) -> "CategoricalDist":
        return CategoricalDist(grid, np.full(grid.count, 1.0 / grid.count))

    def argmax_center(self) -> float:
        # np.argmax resolves ties toward the lower index, which is the
        # documented greedy tie-break.
        return float(self.grid.centers()[int(np.argmax(self.probs))])


@dataclass(frozen=True)
class ActionDistribution:
    """Per-dimension marginals; the joint is their product."""

    dims: tuple[CategoricalDist, ...]

    def __post_init__(self) -> None:
        if len(self.dims) < 1:
            raise ValueError("need at least one action dimension")
        object.__setattr__(self, "dims", tuple(self.dims))

    @property
    def m(self) -> int:
        return len(self.dims)


@dataclass(frozen=True)
class KdeConfig:
    """Settings for sample-to-categorical conversion.

    bandwidth is either a positive number or the string "scott".
    support_pad is measured in bandwidth multiples.
    """

    n_samples: int = 24
    bandwidth: float | str = "scott"
    grid_count: int = 256
    support_pad: float = 4.0

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "scott":
                raise ValueError(f"unknown bandwidth rule {self.bandwidth!r}")
        elif not (float(self.bandwidth) > 0.0):
            raise ValueError("fixed bandwidth must be > 0")
        if self.grid_count < 16:
            raise ValueError("grid_count must be at least 16")
        if self.support_pad < 0.0:
            raise ValueError("support_pad must be >= 0")


@dataclass(frozen=True)
class DecodeConfig:
    """Contrast strength and action selection settings."""

    alpha: float = 1.0
    prob_floor: float = 1e-8
    selection: str = "greedy"

    def __post_init__(self) -> None:
        if not (self.alpha >= 0.0):
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if not (0.0 < self.prob_floor <= 1e-3):
            raise ValueError("prob_floor must lie in (0, 1e-3]")
        if self.selection not in ("greedy", "sample"):
            raise ValueError(f"selection must be 'greedy' or 'sample', got {self.selection!r}")


def gaussian_kernel(u: np.ndarray) -> np.ndarray:
    """Standard normal kernel K(u) = exp(-u^2/2) / sqrt(2*pi)."""
    return np.exp(-0.5 * np.square(u)) / SQRT_2PI


def scott_bandwidth(samples: np.ndarray) -> float:
    """Bandwidth sigma * N^(-1/5), floored at 1e-6.

    sigma is the standard deviation of the sample set itself (ddof=0), so
    constant samples hit the floor instead of producing a zero bandwidth.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("no samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    b = float(np.std(x)) * x.size ** (-1.0 / 5.0)
    return max(b, BANDWIDTH_FLOOR)


def _resolve_bandwidth(samples: np.ndarray, config: KdeConfig) -> float:
    if isinstance(config.bandwidth, str):
        return scott_bandwidth(samples)
    return float(config.bandwidth)


def kde_estimate(samples: np.ndarray, grid: BinGrid, bandwidth: float) -> CategoricalDist:
    """Kernel density estimate evaluated at bin centers, as a categorical.

    probs[k] is proportional to sum_j K((center_k - sample_j) / bandwidth);
    renormalization over the bins absorbs every constant factor.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("no samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    if not (bandwidth > 0.0):
        raise ValueError(f"bandwidth must be > 0, got {bandwidth}")
    z = (grid.centers()[:, None] - x[None, :]) / bandwidth
    weights = gaussian_kernel(z).sum(axis=1)
    total = float(weights.sum())
    if total <= 0.0:
        # All kernel mass underflowed; every center is equally (un)likely.
        return CategoricalDist.uniform(grid)
    return CategoricalDist(grid, weights / total)


def kde_grid(samples_a: np.ndarray, samples_b: np.ndarray, config: KdeConfig) -> BinGrid:
    """Shared support for two sample sets of the same action dimension.

    Spans the combined sample range padded by support_pad bandwidths on
    each side. Both contrast branches must be evaluated on this one grid;
    with the scott rule the larger of the two branch bandwidths pads, so
    the margin guarantee holds for either branch.
    """
    a = np.asarray(samples_a, dtype=np.float64).ravel()
    b = np.asarray(samples_b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("no samples")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("samples must be finite")
    bw = max(_resolve_bandwidth(a, config), _resolve_bandwidth(b, config))
    lo = min(float(a.min()), float(b.min())) - config.support_pad * bw
    hi = max(float(a.max()), float(b.max())) + config.support_pad * bw
    if hi <= lo:  # all samples identical and pad 0
        lo -= BANDWIDTH_FLOOR
        hi += BANDWIDTH_FLOOR
    return BinGrid(lo, hi, config.grid_count)


def kde_estimate_multi(
    samples: np.ndarray, config: KdeConfig, samples_masked: np.ndarray
) -> tuple[ActionDistribution, ActionDistribution]:
    """Per-dimension KDE for both contrast branches on shared grids.

    samples and samples_masked are (N, M) matrices of action draws under
    the original and masked observation. Dimensions are treated as
    independent; each gets one shared grid built from both columns.
    """
    orig = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    masked = np.atleast_2d(np.asarray(samples_masked, dtype=np.float64))
    if orig.shape[1] != masked.shape[1]:
        raise ValueError(
            f"dimension mismatch: {orig.shape[1]} vs {masked.shape[1]} action dims"
        )
    if orig.shape[0] < 2 or masked.shape[0] < 2:
        raise ValueError("need at least 2 samples per branch")
    dims_o = []
    dims_m = []
    for t in range(orig.shape[1]):
        col_o = orig[:, t]
        col_m = masked[:, t]
        if not np.all(np.isfinite(col_o)) or not np.all(np.isfinite(col_m)):
            raise ValueError(f"non-finite samples in action dimension {t}")
        grid = kde_grid(col_o, col_m, config)
        dims_o.append(kde_estimate(col_o, grid, _resolve_bandwidth(col_o, config)))
        dims_m.append(kde_estimate(col_m, grid, _resolve_bandwidth(col_m, config)))
    return ActionDistribution(tuple(dims_o)), ActionDistribution(tuple(dims_m))


def contrastive_combine(
    p: CategoricalDist, p_masked: CategoricalDist, cfg: DecodeConfig
) -> CategoricalDist:
    """Reweight p by its ratio against the masked-branch distribution.

    Output is proportional to p * (p / max(p_masked, prob_floor))^alpha,
    renormalized. alpha = 0 returns p itself: the exponent kills the ratio
    term exactly, and returning the input keeps downstream records
    bit-identical to a run that never built the masked branch.
    """
    if p.grid != p_masked.grid:
        raise ValueError("contrast branches must share one grid")
    if cfg.alpha == 0.0:
        return p
    with np.errstate(divide="ignore"):  # log(0) -> -inf is the intended limit
        log_w = (1.0 + cfg.alpha) * np.log(p.probs) - cfg.alpha * np.log(
            np.maximum(p_masked.probs, cfg.prob_floor)
        )
    log_w -= log_w.max()
    w = np.exp(log_w)
    return CategoricalDist(p.grid, w / w.sum())


def contrastive_combine_multi(
    p: ActionDistribution, p_masked: ActionDistribution, cfg: DecodeConfig
) -> ActionDistribution:
    if p.m != p_masked.m:
        raise ValueError(f"dimension count mismatch: {p.m} vs {p_masked.m}")
    return ActionDistribution(
        tuple(
            contrastive_combine(d, dm, cfg) for d, dm in zip(p.dims, p_masked.dims)
        )
    )


def select_index(dist: CategoricalDist, cfg: DecodeConfig, rng: np.random.Generator) -> int:
    """Pick one bin: the argmax under greedy, a categorical draw otherwise."""
    if cfg.selection == "greedy":
        return int(np.argmax(dist.probs))
    cdf = np.cumsum(dist.probs)
    idx = int(np.searchsorted(cdf, rng.random(), side="right"))
    return min(idx, dist.grid.count - 1)


def select_action(
    dist: ActionDistribution, cfg: DecodeConfig, rng: np.random.Generator
) -> np.ndarray:
    """Return one action vector of bin centers, one entry per dimension."""
    out = np.empty(dist.m)
    for t, d in enumerate(dist.dims):
        out[t] = d.grid.centers()[select_index(d, cfg, rng)]
    return out
