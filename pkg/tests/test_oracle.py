"""Analytic error-rate and threshold oracles.

Expected values here are computed inline from scipy.special primitives
(independent arithmetic), by quadrature over the exported densities, or by
Monte Carlo with explicit binomial tolerances — never by calling the code
under test twice.
"""

import math

import numpy as np
import pytest
from scipy import integrate, special

from flashlab.channel import (
    GrayMap,
    NoiseFamily,
    OperatingPoint,
    StateMoments,
    make_dataset,
    mlc_params,
    state_moments,
    tlc_params,
)
from flashlab.detect import threshold_detect
from flashlab.oracle import (
    ErrorRates,
    ThresholdSet,
    ber_adjacent,
    ber_two_bit,
    error_rates,
    mmi_thresholds,
    mutual_information,
    optimal_thresholds,
    ser,
    state_cdf,
    state_pdf,
    state_sf,
)

Q1 = 0.15865525393145707  # standard normal tail at one sigma


def gaussian_moments(means, stds):
    means = np.asarray(means, dtype=float)
    variances = np.asarray(stds, dtype=float) ** 2
    return StateMoments(
        means=means, variances=variances, family=NoiseFamily.GAUSSIAN, gamma_shape=6.0
    )


def gamma_moments(means, stds, shape=6.0):
    means = np.asarray(means, dtype=float)
    variances = np.asarray(stds, dtype=float) ** 2
    return StateMoments(
        means=means, variances=variances, family=NoiseFamily.GAMMA, gamma_shape=shape
    )


def test_threshold_set_validation():
    with pytest.raises(ValueError):
        ThresholdSet(np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        ThresholdSet(np.array([2.0, 1.0]))
    assert len(ThresholdSet(np.array([1.0, 2.0, 3.0]))) == 3


def test_error_rates_validation():
    with pytest.raises(ValueError):
        ErrorRates(ser=1.5, ber_adjacent=0.1, ber_two_bit=0.1)


def test_gaussian_pdf_peak_and_symmetry():
    m = gaussian_moments([0.0, 3.0], [1.0, 0.5])
    assert state_pdf(m, 0, 0.0) == pytest.approx(1 / math.sqrt(2 * math.pi))
    assert state_pdf(m, 1, 3.0) == pytest.approx(1 / (0.5 * math.sqrt(2 * math.pi)))
    assert state_pdf(m, 0, 0.7) == pytest.approx(state_pdf(m, 0, -0.7))


@pytest.mark.parametrize("family", ["gaussian", "gamma"])
def test_pdf_normalization_by_quadrature(family):
    if family == "gaussian":
        m = gaussian_moments([2.0], [0.3])
    else:
        m = gamma_moments([2.0], [0.3])
    total, err = integrate.quad(lambda v: state_pdf(m, 0, v), -4.0, 8.0)
    assert total == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("family", ["gaussian", "gamma"])
def test_cdf_matches_pdf_quadrature(family):
    if family == "gaussian":
        m = gaussian_moments([1.5], [0.4])
    else:
        m = gamma_moments([1.5], [0.4])
    for v in (0.8, 1.3, 1.5, 1.9, 2.6):
        numeric, _ = integrate.quad(lambda u: state_pdf(m, 0, u), -6.0, v)
        assert state_cdf(m, 0, v) == pytest.approx(numeric, abs=1e-8)
        assert state_sf(m, 0, v) == pytest.approx(1 - numeric, abs=1e-8)


def test_gamma_moments_match_by_quadrature():
    m = gamma_moments([2.0], [0.25], shape=6.0)
    mean, _ = integrate.quad(lambda v: v * state_pdf(m, 0, v), -3.0, 4.0)
    var, _ = integrate.quad(lambda v: (v - 2.0) ** 2 * state_pdf(m, 0, v), -3.0, 4.0)
    assert mean == pytest.approx(2.0, abs=1e-8)
    assert var == pytest.approx(0.0625, abs=1e-8)


def mixed_moments(skew_fraction, mean=2.0, std=0.3, shape=6.0):
    """One state whose variance is split between normal and mirrored Gamma."""
    var = std**2
    return StateMoments(
        means=[mean],
        variances=[var],
        family=NoiseFamily.GAMMA,
        gamma_shape=shape,
        skew_variances=[skew_fraction * var],
    )


@pytest.mark.parametrize("fraction", [0.3, 0.5, 0.7])
def test_gamma_mixed_cdf_matches_independent_quadrature(fraction):
    # Reference route: condition on the Gamma(k, 1) draw and integrate its
    # density against the conditional normal CDF with scipy's adaptive quad.
    k, mean, var = 6.0, 2.0, 0.09
    skew = fraction * var
    theta = math.sqrt(skew / k)
    sigma_g = math.sqrt(var - skew)
    m = mixed_moments(fraction)

    def reference(v):
        def integrand(g):
            dens = math.exp((k - 1.0) * math.log(g) - g - math.lgamma(k))
            return dens * special.ndtr((v - mean - theta * (k - g)) / sigma_g)

        val, _ = integrate.quad(integrand, 0.0, k + 40.0 * math.sqrt(k), limit=200)
        return val

    for v in (1.2, 1.7, 2.0, 2.4, 3.1):
        assert float(state_cdf(m, 0, v)) == pytest.approx(reference(v), abs=1e-9)
        assert float(state_sf(m, 0, v)) == pytest.approx(1.0 - reference(v), abs=1e-9)


@pytest.mark.parametrize("fraction", [0.25, 0.85])
def test_gamma_mixed_pdf_normalizes_and_matches_moments(fraction):
    m = mixed_moments(fraction)
    total, _ = integrate.quad(lambda v: float(state_pdf(m, 0, v)), -1.0, 5.0, limit=200)
    mean, _ = integrate.quad(lambda v: v * float(state_pdf(m, 0, v)), -1.5, 5.5, limit=200)
    var, _ = integrate.quad(
        lambda v: (v - 2.0) ** 2 * float(state_pdf(m, 0, v)), -1.5, 5.5, limit=200
    )
    assert total == pytest.approx(1.0, abs=1e-7)
    assert mean == pytest.approx(2.0, abs=1e-7)
    assert var == pytest.approx(0.09, abs=1e-7)


def test_gamma_mixed_cdf_consistent_with_pdf():
    m = mixed_moments(0.6)
    for v in (1.4, 2.1, 2.6):
        numeric, _ = integrate.quad(
            lambda u: float(state_pdf(m, 0, u)), -2.0, v, limit=200
        )
        assert float(state_cdf(m, 0, v)) == pytest.approx(numeric, abs=1e-8)


def test_gamma_zero_skew_share_degenerates_to_gaussian():
    m = mixed_moments(0.0)
    g = gaussian_moments([2.0], [0.3])
    for v in (1.3, 2.0, 2.9):
        assert float(state_cdf(m, 0, v)) == pytest.approx(
            float(state_cdf(g, 0, v)), abs=1e-15
        )
        assert float(state_pdf(m, 0, v)) == pytest.approx(
            float(state_pdf(g, 0, v)), abs=1e-15
        )


def test_skew_variances_validation():
    with pytest.raises(ValueError):
        StateMoments(
            means=[1.0],
            variances=[0.04],
            family=NoiseFamily.GAMMA,
            skew_variances=[0.05],  # exceeds the total variance
        )
    with pytest.raises(ValueError):
        StateMoments(
            means=[1.0],
            variances=[0.04],
            family=NoiseFamily.GAMMA,
            skew_variances=[-0.01],
        )
    with pytest.raises(ValueError):
        StateMoments(
            means=[1.0, 2.0],
            variances=[0.04, 0.04],
            family=NoiseFamily.GAMMA,
            skew_variances=[0.04],  # wrong shape
        )


def test_ser_two_state_toy():
    m = gaussian_moments([0.0, 2.0], [1.0, 1.0])
    value = ser(m, ThresholdSet(np.array([1.0])))
    assert value == pytest.approx(Q1, rel=1e-12)


def test_ser_four_state_toy_inline_reference():
    means = [0.0, 2.0, 4.0, 6.0]
    m = gaussian_moments(means, [1.0] * 4)
    t = np.array([1.0, 3.0, 5.0])
    # escaped mass per state, by direct tail arithmetic
    def esc(mu, lo, hi):
        total = 0.0
        if lo is not None:
            total += special.ndtr((lo - mu) / 1.0)
        if hi is not None:
            total += 1.0 - special.ndtr((hi - mu) / 1.0)
        return total

    expected = (
        esc(0.0, None, 1.0) + esc(2.0, 1.0, 3.0) + esc(4.0, 3.0, 5.0) + esc(6.0, 5.0, None)
    ) / 4
    assert ser(m, ThresholdSet(t)) == pytest.approx(expected, rel=1e-12)


def test_ber_adjacent_is_ser_over_q():
    p = mlc_params()
    m = state_moments(p, OperatingPoint(2e3, 1e3, NoiseFamily.GAUSSIAN))
    t = optimal_thresholds(m)
    assert ber_adjacent(m, t) == pytest.approx(ser(m, t) / 2, rel=1e-12)


def test_ber_two_bit_four_state_inline_reference():
    means = np.array([0.0, 2.0, 4.0, 6.0])
    m = gaussian_moments(means, [1.0] * 4)
    t = np.array([1.0, 3.0, 5.0])
    gray = GrayMap.for_q(2)
    edges = np.concatenate([[-np.inf], t, [np.inf]])
    expected = 0.0
    for s in range(4):
        masses = np.diff(special.ndtr((edges - means[s]) / 1.0))
        e1 = sum(masses[r] for r in (s - 1, s + 1) if 0 <= r < 4)
        e2 = 1.0 - masses[s] - e1
        expected += (e1 / 2 + 2 * e2 / 2) / 4
    assert ber_two_bit(m, ThresholdSet(t), gray) == pytest.approx(expected, rel=1e-12)


def test_ber_two_bit_vanishes_without_overlap():
    m = gaussian_moments([0.0, 10.0, 20.0, 30.0], [1e-3] * 4)
    t = ThresholdSet(np.array([5.0, 15.0, 25.0]))
    assert ber_two_bit(m, t, GrayMap.for_q(2)) < 1e-15


def test_error_rate_ordering_on_sweep():
    p = tlc_params()
    gray = GrayMap.for_q(3)
    for n_pe in (0, 1e2, 1e3, 1e4):
        m = state_moments(p, OperatingPoint(n_pe, 1e4, NoiseFamily.GAUSSIAN))
        t = optimal_thresholds(m)
        r = error_rates(m, t, gray)
        assert 0.0 <= r.ber_adjacent <= r.ber_two_bit <= r.ser <= 1.0


def test_optimal_thresholds_equal_sigma_midpoint():
    m = gaussian_moments([0.0, 2.0], [0.7, 0.7])
    t = optimal_thresholds(m)
    assert t.values[0] == pytest.approx(1.0, abs=1e-6)


def test_optimal_thresholds_unequal_sigma_density_crossing():
    mu0, s0, mu1, s1 = 0.0, 1.0, 3.0, 0.25
    m = gaussian_moments([mu0, mu1], [s0, s1])
    t = optimal_thresholds(m)
    # crossing of the two densities between the means, from the quadratic
    a = 1 / (2 * s1**2) - 1 / (2 * s0**2)
    b = mu0 / s0**2 - mu1 / s1**2
    c = mu1**2 / (2 * s1**2) - mu0**2 / (2 * s0**2) - math.log(s0 / s1)
    roots = np.roots([a, b, c])
    root = next(r.real for r in roots if mu0 < r.real < mu1)
    assert t.values[0] == pytest.approx(root, abs=1e-5)


def test_optimal_thresholds_dominate_random_sets():
    p = mlc_params()
    m = state_moments(p, OperatingPoint(0, 0, NoiseFamily.GAUSSIAN))
    best = ser(m, optimal_thresholds(m))
    rng = np.random.default_rng(17)
    for _ in range(1000):
        cand = np.sort(rng.uniform(1.0, 4.4, size=3))
        if np.any(np.diff(cand) <= 0):
            continue
        assert best <= ser(m, ThresholdSet(cand)) + 1e-15


def test_optimal_thresholds_rejects_coincident_means():
    m = gaussian_moments([1.0, 1.0], [0.1, 0.2])
    with pytest.raises(ValueError):
        optimal_thresholds(m)


def test_optimal_thresholds_gamma_family_beats_gaussian_placement():
    p = mlc_params()
    op = OperatingPoint(1e4, 1e4, NoiseFamily.GAMMA)
    m = p and state_moments(p, op)
    t_gamma = optimal_thresholds(m)
    m_gauss = state_moments(p, OperatingPoint(1e4, 1e4, NoiseFamily.GAUSSIAN))
    t_gauss = optimal_thresholds(m_gauss)
    assert ser(m, t_gamma) <= ser(m, t_gauss) + 1e-12


def test_analytic_ser_matches_monte_carlo():
    p = mlc_params()
    op = OperatingPoint(1e3, 1e3, NoiseFamily.GAUSSIAN)
    m = state_moments(p, op)
    t = optimal_thresholds(m)
    analytic = ser(m, t)
    n = 1_000_000
    ds = make_dataset(p, n, op, seed=31)
    mc = np.mean(threshold_detect(t, ds.voltages) != ds.truth)
    assert abs(mc - analytic) <= 4 * math.sqrt(analytic * (1 - analytic) / n)


def test_mutual_information_clean_channel_is_q_bits():
    m = gaussian_moments([0.0, 10.0, 20.0, 30.0], [1e-4] * 4)
    t = ThresholdSet(np.array([5.0, 15.0, 25.0]))
    assert mutual_information(m, t) == pytest.approx(2.0, abs=1e-9)


def test_mutual_information_identical_states_is_zero():
    m = gaussian_moments([1.0, 1.0 + 1e-15], [0.5, 0.5])
    t = ThresholdSet(np.array([1.0]))
    assert mutual_information(m, t) == pytest.approx(0.0, abs=1e-9)


def test_mutual_information_binary_inline_reference():
    m = gaussian_moments([0.0, 2.0], [1.0, 1.0])
    t = ThresholdSet(np.array([1.0]))
    # BSC with crossover Q(1): MI = 1 - H2(Q1)
    h2 = -Q1 * math.log2(Q1) - (1 - Q1) * math.log2(1 - Q1)
    assert mutual_information(m, t) == pytest.approx(1 - h2, rel=1e-10)


def test_mmi_two_state_symmetric_midpoint():
    m = gaussian_moments([0.0, 2.0], [0.6, 0.6])
    t = mmi_thresholds(m)
    assert t.values[0] == pytest.approx(1.0, abs=1e-5)


def test_mmi_dominates_error_optimal_in_information():
    p = mlc_params()
    m = state_moments(p, OperatingPoint(1e4, 1.2e4, NoiseFamily.GAUSSIAN))
    t_err = optimal_thresholds(m)
    t_mmi = mmi_thresholds(m)
    assert mutual_information(m, t_mmi) >= mutual_information(m, t_err) - 1e-12
    assert np.all(np.diff(t_mmi.values) > 0)


def test_mmi_gamma_family_runs_and_dominates():
    p = mlc_params()
    m = state_moments(p, OperatingPoint(1e4, 1e4, NoiseFamily.GAMMA))
    t_err = optimal_thresholds(m)
    t_mmi = mmi_thresholds(m)
    assert mutual_information(m, t_mmi) >= mutual_information(m, t_err) - 1e-12


def test_reoptimization_never_hurts():
    p = mlc_params()
    t0 = optimal_thresholds(state_moments(p, OperatingPoint(0, 0, NoiseFamily.GAUSSIAN)))
    for n_pe, t_hours in ((1e3, 1e3), (5e3, 5e3), (1e4, 1.2e4)):
        m = state_moments(p, OperatingPoint(n_pe, t_hours, NoiseFamily.GAUSSIAN))
        assert ser(m, optimal_thresholds(m)) <= ser(m, t0) + 1e-15


def test_ser_monotone_in_retention():
    p = mlc_params()
    values = []
    for t_hours in (1e2, 1e3, 5e3, 1e4, 1.2e4):
        m = state_moments(p, OperatingPoint(5e3, t_hours, NoiseFamily.GAUSSIAN))
        values.append(ser(m, optimal_thresholds(m)))
    assert all(a < b for a, b in zip(values, values[1:]))


def test_solvers_deterministic():
    p = tlc_params()
    m = state_moments(p, OperatingPoint(8e3, 9e3, NoiseFamily.GAUSSIAN))
    a = optimal_thresholds(m)
    b = optimal_thresholds(m)
    assert np.array_equal(a.values, b.values)
    c = mmi_thresholds(m)
    d = mmi_thresholds(m)
    assert np.array_equal(c.values, d.values)
