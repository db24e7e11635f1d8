"""Closed-form error-rate and information benchmarks for the read channel.

Everything here works from per-state `StateMoments` alone: tail masses give
the symbol error rate, a two-tier weighting converts it to a bit error rate
under a one-bit-per-adjacent-level map, and two 1-D searches return the
error-minimizing and information-maximizing read thresholds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from .channel import GrayMap, NoiseFamily, StateMoments

__all__ = [
    "ThresholdSet",
    "ErrorRates",
    "state_pdf",
    "state_cdf",
    "ser",
    "ber_adjacent",
    "ber_two_bit",
    "error_rates",
    "optimal_thresholds",
    "mutual_information",
    "mmi_thresholds",
]

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ThresholdSet:
    """Strictly increasing read thresholds separating 2**q states."""

    values: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.values.ndim != 1 or self.values.size == 0:
            raise ValueError("thresholds must be a non-empty 1-D array")
        if np.any(np.diff(self.values) <= 0):
            raise ValueError("thresholds must be strictly increasing")

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class ErrorRates:
    """Symbol error rate with its one-bit and two-tier bit-rate reductions."""

    ser: float
    ber_adjacent: float
    ber_two_bit: float

    def __post_init__(self) -> None:
        for name in ("ser", "ber_adjacent", "ber_two_bit"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")


def _check(moments: StateMoments, thresholds: ThresholdSet) -> None:
    if len(thresholds) != moments.n_states - 1:
        raise ValueError(
            f"{moments.n_states} states need {moments.n_states - 1} thresholds, "
            f"got {len(thresholds)}"
        )


# Mixed normal-plus-mirrored-Gamma densities integrate out one component at
# quadrature nodes of the other.  Averaging the normal factor (Laguerre
# route) has an analytic integrand and needs fewer nodes, but its resolution
# collapses as the normal share vanishes; averaging the Gamma factor
# (Hermite route) is the mirror image, with a weak kink where the Gamma
# argument hits zero that extra nodes absorb.  The 0.85 handover keeps the
# worst-case error near 1e-11 (measured against adaptive quadrature).
_GAMMA_ROUTE_CUTOFF = 0.85
_LAGUERRE_NODES = 192
_HERMITE_NODES = 256


@lru_cache(maxsize=32)
def _gamma_mean_nodes(shape: float, n: int = _LAGUERRE_NODES):
    """Nodes/weights turning E[f(G)], G ~ Gamma(shape, 1), into a dot product.

    Generalized Gauss-Laguerre with alpha = shape - 1; weights renormalized to
    sum to one so they form a probability measure regardless of Gamma(shape).
    """
    x, w = special.roots_genlaguerre(n, shape - 1.0)
    return x, w / w.sum()


@lru_cache(maxsize=4)
def _normal_mean_nodes(n: int = _HERMITE_NODES):
    """Nodes/weights turning E[f(Z)], Z standard normal, into a dot product."""
    z, w = special.roots_hermitenorm(n)
    return z, w / w.sum()


def _split(moments: StateMoments, state_index: int) -> tuple[float, float, float]:
    """(total variance, skewed-component variance, shape) for one state."""
    return (
        float(moments.variances[state_index]),
        float(moments.skew_variances[state_index]),
        moments.gamma_shape,
    )


def state_cdf(moments: StateMoments, state_index: int, v) -> np.ndarray:
    """P(read voltage <= v) for one state, under the moments' noise family.

    Gamma family: the state's skewed variance share is a mirrored Gamma
    (V has a term theta*(k - G), G ~ Gamma(k, 1), so V's lower tail is G's
    upper tail) and the rest is normal.  The pure cases use closed forms;
    the mixed convolution averages one factor's closed form over quadrature
    nodes of the other, integrating out whichever component is smaller.
    """
    v = np.asarray(v, dtype=float)
    mu = moments.means[state_index]
    sigma = math.sqrt(moments.variances[state_index])
    if moments.family is NoiseFamily.GAUSSIAN:
        return special.ndtr((v - mu) / sigma)
    var, skew, k = _split(moments, state_index)
    if skew <= var * 1e-14:
        return special.ndtr((v - mu) / sigma)
    if skew >= var * (1.0 - 1e-14):
        theta = sigma / math.sqrt(k)
        g = (mu + k * theta - v) / theta
        return np.where(g <= 0.0, 1.0, special.gammaincc(k, np.maximum(g, 0.0)))
    theta = math.sqrt(skew / k)
    sigma_g = math.sqrt(var - skew)
    if skew <= _GAMMA_ROUTE_CUTOFF * var:
        g, w = _gamma_mean_nodes(k)
        return special.ndtr((v[..., None] - mu - theta * (k - g)) / sigma_g) @ w
    z, w = _normal_mean_nodes()
    g = (mu + k * theta - v[..., None] + sigma_g * z) / theta
    return special.gammaincc(k, np.maximum(g, 0.0)) @ w


def state_sf(moments: StateMoments, state_index: int, v) -> np.ndarray:
    """P(read voltage > v); complementary tail of state_cdf."""
    v = np.asarray(v, dtype=float)
    mu = moments.means[state_index]
    sigma = math.sqrt(moments.variances[state_index])
    if moments.family is NoiseFamily.GAUSSIAN:
        return special.ndtr((mu - v) / sigma)
    var, skew, k = _split(moments, state_index)
    if skew <= var * 1e-14:
        return special.ndtr((mu - v) / sigma)
    if skew >= var * (1.0 - 1e-14):
        theta = sigma / math.sqrt(k)
        g = (mu + k * theta - v) / theta
        return np.where(g <= 0.0, 0.0, special.gammainc(k, np.maximum(g, 0.0)))
    theta = math.sqrt(skew / k)
    sigma_g = math.sqrt(var - skew)
    if skew <= _GAMMA_ROUTE_CUTOFF * var:
        g, w = _gamma_mean_nodes(k)
        return special.ndtr((mu + theta * (k - g) - v[..., None]) / sigma_g) @ w
    z, w = _normal_mean_nodes()
    g = (mu + k * theta - v[..., None] + sigma_g * z) / theta
    return special.gammainc(k, np.maximum(g, 0.0)) @ w


def _gamma_logpdf(g, k: float) -> np.ndarray:
    """Log density of Gamma(k, 1) with -inf where the argument is <= 0."""
    safe = np.maximum(g, 0.0)
    out = special.xlogy(k - 1.0, safe) - safe - math.lgamma(k)
    return np.where(g > 0.0, out, -np.inf)


def state_pdf(moments: StateMoments, state_index: int, v) -> np.ndarray:
    """Read-voltage density for one state."""
    v = np.asarray(v, dtype=float)
    mu = moments.means[state_index]
    sigma = math.sqrt(moments.variances[state_index])
    if moments.family is NoiseFamily.GAUSSIAN:
        z = (v - mu) / sigma
        return np.exp(-0.5 * z * z) / (sigma * math.sqrt(2.0 * math.pi))
    var, skew, k = _split(moments, state_index)
    if skew <= var * 1e-14:
        z = (v - mu) / sigma
        return np.exp(-0.5 * z * z) / (sigma * math.sqrt(2.0 * math.pi))
    if skew >= var * (1.0 - 1e-14):
        theta = sigma / math.sqrt(k)
        g = (mu + k * theta - v) / theta
        return np.exp(_gamma_logpdf(g, k)) / theta
    theta = math.sqrt(skew / k)
    sigma_g = math.sqrt(var - skew)
    if skew <= _GAMMA_ROUTE_CUTOFF * var:
        g, w = _gamma_mean_nodes(k)
        z = (v[..., None] - mu - theta * (k - g)) / sigma_g
        return (np.exp(-0.5 * z * z) / (sigma_g * math.sqrt(2.0 * math.pi))) @ w
    z, w = _normal_mean_nodes()
    g = (mu + k * theta - v[..., None] + sigma_g * z) / theta
    return (np.exp(_gamma_logpdf(g, k)) / theta) @ w


def _region_masses(moments: StateMoments, values: np.ndarray) -> np.ndarray:
    """(n_states, n_states) matrix of P(land in region j | state i)."""
    k = moments.n_states
    cdfs = np.empty((k, values.size))
    for i in range(k):
        cdfs[i] = state_cdf(moments, i, values)
    edges = np.hstack([np.zeros((k, 1)), cdfs, np.ones((k, 1))])
    return np.diff(edges, axis=1)


def ser(moments: StateMoments, thresholds: ThresholdSet) -> float:
    """Symbol error rate with equiprobable states: mean escaped tail mass.

    State 0 errs above the first threshold, the top state errs below the
    last, and every interior state loses both tails around its own region.
    """
    _check(moments, thresholds)
    t = thresholds.values
    k = moments.n_states
    total = state_sf(moments, 0, t[0]) + state_cdf(moments, k - 1, t[-1])
    for i in range(1, k - 1):
        total += state_cdf(moments, i, t[i - 1]) + state_sf(moments, i, t[i])
    return float(total) / k


def ber_adjacent(moments: StateMoments, thresholds: ThresholdSet) -> float:
    """Bit error rate when every symbol error costs one of q bits."""
    q = int(round(math.log2(moments.n_states)))
    return ser(moments, thresholds) / q


def ber_two_bit(
    moments: StateMoments, thresholds: ThresholdSet, gray_map: GrayMap
) -> float:
    """Bit error rate charging adjacent-region slips 1 bit and all other
    misses 2 bits (of q).

    ``gray_map`` is validated against the moments; under its adjacency
    property the 1-bit tier is exact and remaining mass is charged 2 bits
    even where the map differs by more.
    """
    _check(moments, thresholds)
    if 2**gray_map.q != moments.n_states:
        raise ValueError("bit map and moments disagree on state count")
    q = gray_map.q
    masses = _region_masses(moments, thresholds.values)
    k = moments.n_states
    total = 0.0
    for i in range(k):
        e1 = 0.0
        if i > 0:
            e1 += masses[i, i - 1]
        if i < k - 1:
            e1 += masses[i, i + 1]
        e_all = 1.0 - masses[i, i]
        e2 = max(e_all - e1, 0.0)
        total += e1 / q + 2.0 * e2 / q
    return total / k


def error_rates(
    moments: StateMoments, thresholds: ThresholdSet, gray_map: GrayMap
) -> ErrorRates:
    """All three analytic rates for one threshold set."""
    return ErrorRates(
        ser=ser(moments, thresholds),
        ber_adjacent=ber_adjacent(moments, thresholds),
        ber_two_bit=ber_two_bit(moments, thresholds, gray_map),
    )


def _golden_min(f, lo: float, hi: float, iters: int = 30) -> float:
    """Golden-section minimizer; returns the midpoint of the final bracket."""
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def _search_grid(moments: StateMoments, n: int = 1000) -> np.ndarray:
    lo = moments.means.min() - 5.0 * moments.stds.max()
    hi = moments.means.max() + 5.0 * moments.stds.max()
    return np.linspace(lo, hi, n)


def optimal_thresholds(moments: StateMoments) -> ThresholdSet:
    """Thresholds minimizing the symbol error rate.

    The rate separates per threshold into ``sf(lower state) + cdf(upper
    state)``, so each is found on a 1000-point grid over the full voltage
    span and polished by 30 golden-section steps; grid ties take the lowest
    voltage.
    """
    if np.any(np.diff(moments.means) == 0.0):
        raise ValueError("coincident state means leave thresholds undefined")
    grid = _search_grid(moments)
    step = grid[1] - grid[0]
    out = np.empty(moments.n_states - 1)
    for j in range(1, moments.n_states):

        def pair_error(v, j=j):
            return state_sf(moments, j - 1, v) + state_cdf(moments, j, v)

        values = pair_error(grid)
        best = int(np.argmin(values))
        out[j - 1] = _golden_min(
            lambda v: float(pair_error(v)), grid[best] - step, grid[best] + step
        )
    return ThresholdSet(out)


def mutual_information(moments: StateMoments, thresholds: ThresholdSet) -> float:
    """Bits conveyed per cell by hard-region reads of equiprobable states."""
    _check(moments, thresholds)
    return float(_mi_from_masses(_region_masses(moments, thresholds.values)))


def _mi_from_masses(masses: np.ndarray) -> float:
    k = masses.shape[-1]
    py = masses.mean(axis=-2, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(masses > 0.0, masses / py, 1.0)
        terms = np.where(masses > 0.0, masses * np.log2(ratio), 0.0)
    return terms.sum(axis=(-2, -1)) / k


def _mi_batch(moments: StateMoments, threshold_sets: np.ndarray) -> np.ndarray:
    """Mutual information for each row of an (n, 2**q - 1) threshold array."""
    k = moments.n_states
    n = threshold_sets.shape[0]
    cdfs = np.empty((n, k, k - 1))
    for i in range(k):
        cdfs[:, i, :] = state_cdf(moments, i, threshold_sets)
    edges = np.concatenate(
        [np.zeros((n, k, 1)), cdfs, np.ones((n, k, 1))], axis=2
    )
    return _mi_from_masses(np.diff(edges, axis=2))


def mmi_thresholds(moments: StateMoments, passes: int = 3) -> ThresholdSet:
    """Thresholds maximizing mutual information.

    Same grid-plus-golden-section scheme as `optimal_thresholds`, applied
    coordinate-wise for a few ascent passes because the objective couples
    neighboring thresholds.
    """
    if np.any(np.diff(moments.means) == 0.0):
        raise ValueError("coincident state means leave thresholds undefined")
    current = optimal_thresholds(moments).values.copy()
    grid = _search_grid(moments)
    step = grid[1] - grid[0]
    k = moments.n_states

    def mi_with(j: int, v: float) -> float:
        trial = current.copy()
        trial[j] = v
        return float(_mi_batch(moments, trial[None, :])[0])

    for _ in range(passes):
        for j in range(k - 1):
            lo = current[j - 1] if j > 0 else -np.inf
            hi = current[j + 1] if j < k - 2 else np.inf
            usable = grid[(grid > lo) & (grid < hi)]
            if usable.size == 0:
                continue
            trials = np.tile(current, (usable.size, 1))
            trials[:, j] = usable
            values = _mi_batch(moments, trials)
            best = int(np.argmax(values))
            lo_b = max(usable[best] - step, lo + 1e-12)
            hi_b = min(usable[best] + step, hi - 1e-12)
            current[j] = _golden_min(lambda v: -mi_with(j, v), lo_b, hi_b)
    return ThresholdSet(current)
