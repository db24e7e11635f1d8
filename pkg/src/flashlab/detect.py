"""Symbol decisions from voltages: network round-off, hard thresholds, and a
dynamic program that converts any reference decision rule into read thresholds.

The DP lays a uniform grid over the observed voltage span, tallies reference
decisions per grid interval, and picks the threshold subset minimizing
Hamming distance to those decisions — exactly, in O(levels * m^2).
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .neuralnet import NetworkParams, forward_many
from .oracle import ThresholdSet

__all__ = [
    "DpConfig",
    "round_to_symbols",
    "rnn_detect",
    "threshold_detect",
    "hamming_cost",
    "derive_thresholds_dp",
    "derive_thresholds_brute",
]


@dataclass(frozen=True)
class DpConfig:
    """Grid settings for threshold derivation.

    ``m`` uniform intervals; ``search_range`` pins the span, or None to infer
    it from the data with one grid step of margin on each side.
    """

    m: int = 200
    search_range: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.m < 3:
            raise ValueError("need at least 3 grid intervals")
        if self.search_range is not None and self.search_range[0] >= self.search_range[1]:
            raise ValueError("empty search range")


def round_to_symbols(estimates: np.ndarray, q: int) -> np.ndarray:
    """Nearest level index, clamped to [0, 2**q - 1]."""
    est = np.asarray(estimates, dtype=float)
    return np.clip(np.rint(est), 0, 2**q - 1).astype(np.int64)


def rnn_detect(
    params: NetworkParams, voltages: np.ndarray, q: int, window: int = 20
) -> np.ndarray:
    """Network estimates rounded to hard symbols.

    Voltages are consumed in non-overlapping windows; a final partial window
    is padded by repeating its last sample and the padded outputs dropped.
    """
    v = np.asarray(voltages, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("voltages must be a non-empty 1-D array")
    n = v.size
    n_windows = -(-n // window)
    padded = np.full(n_windows * window, v[-1])
    padded[:n] = v
    outputs = forward_many(params, padded.reshape(n_windows, window)).ravel()[:n]
    return round_to_symbols(outputs, q)


def threshold_detect(thresholds: ThresholdSet, voltages: np.ndarray) -> np.ndarray:
    """Symbol = number of thresholds at or below each voltage.

    A read exactly on a threshold resolves upward into the higher region.
    """
    v = np.asarray(voltages, dtype=float)
    return np.searchsorted(thresholds.values, v, side="right").astype(np.int64)


def hamming_cost(
    thresholds: ThresholdSet, voltages: np.ndarray, reference: np.ndarray
) -> int:
    """Disagreements between threshold decisions and reference symbols."""
    return int(np.count_nonzero(threshold_detect(thresholds, voltages) != reference))


def _grid_boundaries(voltages: np.ndarray, config: DpConfig) -> np.ndarray:
    """Interior boundaries b_1..b_{m-1} of m uniform intervals."""
    if config.search_range is not None:
        lo, hi = config.search_range
    else:
        vmin, vmax = float(voltages.min()), float(voltages.max())
        if vmax == vmin:
            raise ValueError("voltages span a single point; grid is undefined")
        step = (vmax - vmin) / (config.m - 2)
        lo, hi = vmin - step, vmax + step
    return np.linspace(lo, hi, config.m + 1)[1:-1]


def _interval_histogram(
    voltages: np.ndarray, reference: np.ndarray, boundaries: np.ndarray, n_states: int
) -> np.ndarray:
    """cum[j, s] = reference-s samples in intervals 0..j-1 (below b_j)."""
    m = boundaries.size + 1
    idx = np.searchsorted(boundaries, voltages, side="right")
    hist = np.zeros((m, n_states), dtype=np.int64)
    np.add.at(hist, (idx, reference), 1)
    return np.vstack([np.zeros((1, n_states), dtype=np.int64), np.cumsum(hist, axis=0)])


def _validate_dp_args(voltages, reference, config, n_states):
    v = np.asarray(voltages, dtype=float)
    ref = np.asarray(reference)
    if v.shape != ref.shape or v.ndim != 1 or v.size == 0:
        raise ValueError("voltages and reference must be matching non-empty 1-D arrays")
    if ref.min() < 0:
        raise ValueError("reference symbols must be non-negative")
    k = int(ref.max()) + 1 if n_states is None else int(n_states)
    if ref.max() >= k:
        raise ValueError("reference symbols exceed the state count")
    if k < 2:
        raise ValueError("threshold derivation needs at least two states")
    r = k - 1  # thresholds to place
    if config.m - 1 < r:
        raise ValueError(
            f"grid has {config.m - 1} candidate boundaries, fewer than the "
            f"{r} thresholds required"
        )
    return v, ref.astype(np.int64), k, r


def _center_ties(indices: list[int], cum: np.ndarray, m: int) -> list[int]:
    """Slide each boundary to the middle of its equal-cost run.

    With the other boundaries held fixed, only the tallies of the two
    regions touching a boundary depend on its position, so the cost along
    one coordinate is flat across any stretch of the grid the data leave
    empty.  The seed placement sits at the left edge of such a stretch;
    its midpoint keeps the cost bit-identical while sitting farther from
    both clusters, which carries better to reads the fit never saw.
    """
    centered = list(indices)
    r = len(indices)
    for j in range(r):
        left = centered[j - 1] if j else 0
        right = centered[j + 1] if j + 1 < r else m
        gain = cum[:, j] - cum[:, j + 1]
        p0 = centered[j]
        lo = p0
        while lo - 1 > left and gain[lo - 1] == gain[p0]:
            lo -= 1
        hi = p0
        while hi + 1 < right and gain[hi + 1] == gain[p0]:
            hi += 1
        centered[j] = (lo + hi) // 2
    return centered


def derive_thresholds_dp(
    voltages: np.ndarray,
    reference_symbols: np.ndarray,
    config: DpConfig = DpConfig(),
    n_states: int | None = None,
) -> ThresholdSet:
    """Grid thresholds best matching a reference decision rule.

    Builds per-interval symbol tallies, then a suffix table S[k][j] = best
    match count attainable right of boundary j with threshold k placed there.
    A forward pass re-reads the table to pick the lexicographically smallest
    optimal boundary indices, and each boundary is then centered within its
    equal-cost run (cost unchanged, deterministic).

    Parameters
    ----------
    voltages, reference_symbols : arrays of equal length
        The reads and the decisions to imitate (e.g. network round-offs).
    config : DpConfig
    n_states : int, optional
        Symbol alphabet size; defaults to ``max(reference_symbols) + 1``.

    Returns
    -------
    ThresholdSet with ``n_states - 1`` values on grid boundaries.
    """
    v, ref, k, r = _validate_dp_args(voltages, reference_symbols, config, n_states)
    boundaries = _grid_boundaries(v, config)
    cum = _interval_histogram(v, ref, boundaries, k)
    m = config.m
    # S[kk][j]: thresholds are 1-based kk in 1..r at boundary index j in 1..m-1.
    neg = np.iinfo(np.int64).min // 2
    s_next = cum[m, r] - cum[1 : m, r]  # S[r][j] over j=1..m-1
    tables = [s_next]
    for kk in range(r - 1, 0, -1):
        # S[kk][j] = max_{j' > j} cum[j', kk] - cum[j, kk] + S[kk+1][j']
        t = cum[1:m, kk] + s_next
        best_right = np.full(m - 1, neg, dtype=np.int64)
        running = neg
        for j in range(m - 2, 0, -1):
            running = max(running, t[j])  # candidates j' = j+1 .. m-1
            best_right[j - 1] = running
        s_next = best_right - cum[1:m, kk]
        tables.append(s_next)
    tables.reverse()  # tables[kk-1] = S[kk][...]

    indices = []
    prev = 0
    for kk in range(1, r + 1):
        scores = cum[1:m, kk - 1] - cum[prev, kk - 1] + tables[kk - 1]
        lo = prev + 1
        hi = m - 1 - (r - kk)  # leave room for the remaining thresholds
        window = scores[lo - 1 : hi]
        pick = lo + int(np.argmax(window))  # argmax takes the first maximum
        indices.append(pick)
        prev = pick
    indices = _center_ties(indices, cum, m)
    return ThresholdSet(boundaries[np.array(indices) - 1])


def derive_thresholds_brute(
    voltages: np.ndarray,
    reference_symbols: np.ndarray,
    config: DpConfig = DpConfig(),
    n_states: int | None = None,
) -> ThresholdSet:
    """Exhaustive version of `derive_thresholds_dp` for small grids.

    Same grid, same cost, first (lexicographically smallest) optimum kept,
    then the same equal-cost centering pass.
    """
    v, ref, k, r = _validate_dp_args(voltages, reference_symbols, config, n_states)
    boundaries = _grid_boundaries(v, config)
    cum = _interval_histogram(v, ref, boundaries, k)
    m = config.m
    best_matches = -1
    best: tuple[int, ...] | None = None
    for combo in combinations(range(1, m), r):
        edges = (0, *combo, m)
        matches = sum(cum[edges[s + 1], s] - cum[edges[s], s] for s in range(k))
        if matches > best_matches:
            best_matches = matches
            best = combo
    assert best is not None
    indices = _center_ties(list(best), cum, m)
    return ThresholdSet(boundaries[np.array(indices) - 1])
