"""Threshold-voltage model for q-bit-per-cell NAND flash.

A cell programmed to one of 2**q target levels is read back as an analog
voltage disturbed by three mechanisms: programming noise (wide for the erased
state, narrow plus a half-step ISPP offset for programmed states), wear-out
that grows with program/erase cycling, and retention drift whose mean shift
scales with the programmed level, the cycle count, and log retention time.
This module turns those mechanisms into per-state moments and seeded sample
streams.  Under the Gaussian family every mechanism is normal; under the
Gamma family the retention term is drawn from a mirrored Gamma instead, so
each state picks up a lower tail that grows heavier with aging while the
per-state mean and variance stay moment-matched to the Gaussian case.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

__all__ = [
    "NoiseFamily",
    "ChannelParams",
    "OperatingPoint",
    "StateMoments",
    "GrayMap",
    "DomainDataset",
    "retention_shift",
    "wearout_std",
    "state_moments",
    "sample_voltages",
    "make_dataset",
    "mlc_params",
    "tlc_params",
    "qlc_params",
    "load_channel_params",
    "save_channel_params",
]

# Nominal write voltages (volts), lowest level = erased state.
MLC_LEVELS = (1.4, 2.6, 3.2, 3.93)
TLC_LEVELS = (1.4, 2.2, 2.6, 3.0, 3.4, 3.8, 4.2, 4.6)
# No canonical 16-level set for this process; evenly spaced over the TLC span.
QLC_LEVELS = tuple(round(1.4 + i * (3.2 / 15), 6) for i in range(16))

# Bit patterns per level, erased state all-ones, adjacent levels differ by
# exactly one bit.
MLC_GRAY = ("11", "10", "00", "01")
TLC_GRAY = ("111", "110", "100", "000", "010", "011", "001", "101")


def _reflected_gray(q: int) -> tuple[str, ...]:
    """All-ones-first Gray sequence: complement of the reflected binary code."""
    codes = [i ^ (i >> 1) for i in range(2**q)]
    mask = 2**q - 1
    return tuple(format(c ^ mask, f"0{q}b") for c in codes)


QLC_GRAY = _reflected_gray(4)


class NoiseFamily(str, Enum):
    GAUSSIAN = "gaussian"
    GAMMA = "gamma"


@dataclass(frozen=True)
class ChannelParams:
    """Static cell parameters: level map plus noise/aging coefficients.

    Defaults are the MLC/TLC process values used throughout; ``gamma_shape``
    only matters when sampling the Gamma read-noise family.
    """

    q: int
    nominal_voltages: tuple[float, ...]
    delta_vpp: float = 0.2
    sigma_e: float = 0.35
    sigma_p: float = 0.05
    x0: float = 1.4
    a_t: float = 0.000035
    b_t: float = 0.000235
    alpha_i: float = 0.62
    alpha_o: float = 0.3
    wear_coeff: float = 0.00027
    wear_exp: float = 0.62
    gamma_shape: float = 6.0

    def __post_init__(self) -> None:
        if self.q < 1:
            raise ValueError(f"q must be positive, got {self.q}")
        if len(self.nominal_voltages) != 2**self.q:
            raise ValueError(
                f"expected {2**self.q} nominal voltages for q={self.q}, "
                f"got {len(self.nominal_voltages)}"
            )
        diffs = np.diff(self.nominal_voltages)
        if not np.all(diffs > 0):
            raise ValueError("nominal voltages must be strictly increasing")
        if self.sigma_e <= 0 or self.sigma_p <= 0:
            raise ValueError("noise widths must be positive")
        if self.gamma_shape <= 0:
            raise ValueError("gamma_shape must be positive")

    @property
    def n_states(self) -> int:
        return 2**self.q


@dataclass(frozen=True)
class OperatingPoint:
    """Aging condition of a read: cycle count, retention hours, noise family."""

    n_pe: float
    retention_hours: float
    noise_family: NoiseFamily = NoiseFamily.GAUSSIAN

    def __post_init__(self) -> None:
        if self.n_pe < 0 or self.retention_hours < 0:
            raise ValueError("operating point values must be non-negative")


@dataclass(frozen=True)
class StateMoments:
    """Per-state read-voltage mean/variance at one operating point.

    Carries the noise family so downstream benchmarks evaluate the matching
    densities without re-deriving channel context.  For the Gamma family,
    ``skew_variances`` says how much of each state's variance sits in the
    mirrored-Gamma component (the retention term when built by
    `state_moments`); the remainder is Gaussian.  Left as None it defaults to
    the full variance, i.e. a per-state distribution that is entirely
    mirrored Gamma.
    """

    means: np.ndarray
    variances: np.ndarray
    family: NoiseFamily = NoiseFamily.GAUSSIAN
    gamma_shape: float = 6.0
    skew_variances: np.ndarray | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "means", np.asarray(self.means, dtype=float))
        object.__setattr__(self, "variances", np.asarray(self.variances, dtype=float))
        if self.means.shape != self.variances.shape or self.means.ndim != 1:
            raise ValueError("means and variances must be 1-D arrays of equal length")
        if np.any(self.variances <= 0):
            raise ValueError("variances must be positive")
        skew = self.skew_variances
        skew = self.variances.copy() if skew is None else np.asarray(skew, dtype=float)
        object.__setattr__(self, "skew_variances", skew)
        if skew.shape != self.variances.shape:
            raise ValueError("skew_variances must match variances in shape")
        if np.any(skew < 0.0) or np.any(skew > self.variances * (1.0 + 1e-12)):
            raise ValueError("skew_variances must lie within [0, variances]")

    @property
    def n_states(self) -> int:
        return self.means.size

    @property
    def stds(self) -> np.ndarray:
        return np.sqrt(self.variances)


@dataclass(frozen=True)
class GrayMap:
    """Level-index-to-bit-pattern map with the one-bit-per-step property."""

    q: int
    patterns: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.patterns) != 2**self.q:
            raise ValueError("pattern count must be 2**q")
        if len(set(self.patterns)) != len(self.patterns):
            raise ValueError("bit patterns must be distinct")
        for p in self.patterns:
            if len(p) != self.q or set(p) - {"0", "1"}:
                raise ValueError(f"bad bit pattern {p!r}")
        for a, b in zip(self.patterns, self.patterns[1:]):
            if sum(x != y for x, y in zip(a, b)) != 1:
                raise ValueError(f"adjacent patterns {a!r},{b!r} differ in != 1 bit")

    @classmethod
    def for_q(cls, q: int) -> "GrayMap":
        table = {2: MLC_GRAY, 3: TLC_GRAY, 4: QLC_GRAY}
        if q not in table:
            raise ValueError(f"no built-in bit map for q={q}")
        return cls(q, table[q])

    def bits(self) -> np.ndarray:
        """Patterns as a (2**q, q) array of 0/1 ints."""
        return np.array([[int(b) for b in p] for p in self.patterns], dtype=np.int8)


@dataclass(frozen=True)
class DomainDataset:
    """Voltages read at one operating point.

    ``labels`` is None for unlabeled (target-domain) sets; ``truth`` keeps the
    written levels out-of-band so experiments can score detectors that never
    saw them.
    """

    voltages: np.ndarray
    labels: np.ndarray | None
    op_point: OperatingPoint
    truth: np.ndarray = dataclasses.field(repr=False, default=None)  # type: ignore[assignment]

    def __len__(self) -> int:
        return self.voltages.size


def retention_shift(
    params: ChannelParams, state_index: int, n_pe: float, retention_hours: float
) -> tuple[float, float]:
    """Mean/std of the retention drift for one state.

    The mean shift is ``(V - x0) * (a_t*N^alpha_i + b_t*N^alpha_o) * ln(1+T)``
    and the spread is 0.3 of its magnitude; the erased level sits at ``x0`` so
    its drift is zero.

    Parameters
    ----------
    state_index : int
        Level index, 0 = erased.
    n_pe : float
        Program/erase cycle count.
    retention_hours : float
        Time since programming, hours.

    Returns
    -------
    (mu, sigma) : tuple of float
        Drift mean and standard deviation, volts.
    """
    if not 0 <= state_index < params.n_states:
        raise ValueError(f"state index {state_index} out of range")
    if n_pe < 0 or retention_hours < 0:
        raise ValueError("n_pe and retention_hours must be non-negative")
    v = params.nominal_voltages[state_index]
    age = params.a_t * n_pe**params.alpha_i + params.b_t * n_pe**params.alpha_o
    mu = (v - params.x0) * age * math.log(1.0 + retention_hours)
    return mu, 0.3 * abs(mu)


def wearout_std(n_pe: float, coeff: float = 0.00027, exponent: float = 0.62) -> float:
    """Wear-out noise std in volts after ``n_pe`` program/erase cycles."""
    if n_pe < 0:
        raise ValueError("n_pe must be non-negative")
    return coeff * n_pe**exponent


def state_moments(params: ChannelParams, op_point: OperatingPoint) -> StateMoments:
    """Combine programming, wear-out, and retention terms into per-state moments.

    The erased state keeps its nominal level minus retention drift with the
    wide erase spread; programmed states gain the half ISPP step and the
    narrow program spread.  Variances add across the three mechanisms.
    """
    k = params.n_states
    means = np.empty(k)
    variances = np.empty(k)
    skew_variances = np.empty(k)
    sw2 = wearout_std(op_point.n_pe, params.wear_coeff, params.wear_exp) ** 2
    for i in range(k):
        mu_r, sigma_r = retention_shift(
            params, i, op_point.n_pe, op_point.retention_hours
        )
        base = params.nominal_voltages[i] - mu_r
        if i == 0:
            means[i] = base
            variances[i] = params.sigma_e**2 + sw2 + sigma_r**2
        else:
            means[i] = base + params.delta_vpp / 2.0
            variances[i] = params.sigma_p**2 + sw2 + sigma_r**2
        skew_variances[i] = sigma_r**2
    return StateMoments(
        means,
        variances,
        op_point.noise_family,
        params.gamma_shape,
        skew_variances=skew_variances,
    )


def _generator(seed: int | np.random.SeedSequence) -> np.random.Generator:
    # Counter-based stream so spawned children stay independent of draw order.
    return np.random.Generator(np.random.Philox(seed))


def sample_voltages(
    params: ChannelParams,
    labels: np.ndarray,
    op_point: OperatingPoint,
    seed: int | np.random.SeedSequence,
) -> np.ndarray:
    """Draw one read voltage per written level in ``labels``.

    Gaussian family: normal with that state's moments.  Gamma family: the
    retention share of the variance is drawn as a shifted, mirrored Gamma
    with shape ``params.gamma_shape`` (zero-mean, variance-matched, long tail
    down) on top of a normal carrying the rest, so per-state mean and
    variance equal the Gaussian family's.
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("labels must be non-empty")
    if labels.min() < 0 or labels.max() >= params.n_states:
        raise ValueError("labels out of range for this cell")
    mom = state_moments(params, op_point)
    rng = _generator(seed)
    mu = mom.means[labels]
    sigma = mom.stds[labels]
    if op_point.noise_family is NoiseFamily.GAUSSIAN:
        return mu + sigma * rng.standard_normal(labels.size)
    shape = params.gamma_shape
    sigma_skew = np.sqrt(mom.skew_variances)[labels]
    sigma_gauss = np.sqrt(mom.variances - mom.skew_variances)[labels]
    theta = sigma_skew / math.sqrt(shape)
    # theta*(shape - G) is zero-mean with variance sigma_skew**2; states with
    # no retention noise (theta = 0) stay purely Gaussian.
    return (
        mu
        + sigma_gauss * rng.standard_normal(labels.size)
        + theta * (shape - rng.standard_gamma(shape, labels.size))
    )


def make_dataset(
    params: ChannelParams,
    n: int,
    op_point: OperatingPoint,
    seed: int,
    labeled: bool = True,
) -> DomainDataset:
    """Uniform random levels plus their channel reads, as one dataset.

    When ``labeled`` is false the public ``labels`` field is None and the
    drawn levels are retained only in ``truth`` for scoring.
    """
    if n <= 0:
        raise ValueError("dataset size must be positive")
    root = np.random.SeedSequence(seed)
    label_seed, noise_seed = root.spawn(2)
    labels = _generator(label_seed).integers(0, params.n_states, size=n)
    voltages = sample_voltages(params, labels, op_point, noise_seed)
    return DomainDataset(
        voltages=voltages,
        labels=labels if labeled else None,
        op_point=op_point,
        truth=labels,
    )


def mlc_params(**overrides) -> ChannelParams:
    return ChannelParams(q=2, nominal_voltages=MLC_LEVELS, **overrides)


def tlc_params(**overrides) -> ChannelParams:
    return ChannelParams(q=3, nominal_voltages=TLC_LEVELS, **overrides)


def qlc_params(**overrides) -> ChannelParams:
    return ChannelParams(q=4, nominal_voltages=QLC_LEVELS, **overrides)


_CELL_BUILDERS = {"mlc": mlc_params, "tlc": tlc_params, "qlc": qlc_params}


def params_for_cell(cell: str, **overrides) -> ChannelParams:
    """Built-in parameter set by cell name ('mlc', 'tlc', 'qlc')."""
    try:
        builder = _CELL_BUILDERS[cell.lower()]
    except KeyError:
        raise ValueError(f"unknown cell type {cell!r}") from None
    return builder(**overrides)


_FLOAT_FIELDS = (
    "delta_vpp",
    "sigma_e",
    "sigma_p",
    "x0",
    "a_t",
    "b_t",
    "alpha_i",
    "alpha_o",
    "wear_coeff",
    "wear_exp",
    "gamma_shape",
)


def save_channel_params(params: ChannelParams, path: str | Path) -> None:
    """Write a parameter set as ``key = value`` lines."""
    lines = [f"q = {params.q}"]
    lines.append(
        "nominal_voltages = " + ", ".join(repr(v) for v in params.nominal_voltages)
    )
    for name in _FLOAT_FIELDS:
        lines.append(f"{name} = {getattr(params, name)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_channel_params(path: str | Path) -> ChannelParams:
    """Read a ``key = value`` parameter file written by save_channel_params."""
    fields: dict[str, object] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key == "q":
            fields["q"] = int(value)
        elif key == "nominal_voltages":
            fields["nominal_voltages"] = tuple(
                float(tok) for tok in value.replace(",", " ").split()
            )
        elif key in _FLOAT_FIELDS:
            fields[key] = float(value)
        else:
            raise ValueError(f"{path}:{lineno}: unknown channel parameter {key!r}")
    if "q" not in fields or "nominal_voltages" not in fields:
        raise ValueError(f"{path}: missing required keys 'q'/'nominal_voltages'")
    return ChannelParams(**fields)  # type: ignore[arg-type]
