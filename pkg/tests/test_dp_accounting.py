import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from polyveil.dp_accounting import (
    DpQuery,
    Framework,
    InfeasibleError,
    dp_table,
    epsilon_berry_esseen,
    evaluate,
    full_protocol_dp,
    gdp_delta,
    gdp_epsilon,
    gdp_mu,
    mmse_ratio,
    renyi,
    renyi_to_dp,
    shuffle_amplify,
    sigma_eta,
    sigma_eta_protocol,
    snr_suite,
    var_X,
    var_X_protocol,
    zcdp,
)
from polyveil.protocol import ProtocolParams, run_protocol
from polyveil.sampling import RngStream, fisher_yates_batch

A100 = 1 / 400


def test_var_x():
    assert var_X(100) == pytest.approx(0.4987, abs=5e-5)
    assert var_X(1) == 0.25
    assert abs(var_X(10**6) - 0.5) < 1e-6


@pytest.mark.parametrize("K, expected, tol", [(10, 0.2228, 5e-5), (1000, 0.02229, 1.5e-5)])
def test_sigma_eta_printed(K, expected, tol):
    assert sigma_eta(100, K, A100) == pytest.approx(expected, abs=tol)


def test_sigma_eta_single_decoy():
    assert sigma_eta(7, 1, 0.1) == pytest.approx(0.9 * math.sqrt(var_X(7)))


def test_snr_suite_values():
    # the "SNR about 1.5 at K = 9" figure is the Gaussian shift mu, not alpha* n / sigma_eta
    assert gdp_mu(100, 9, A100, leading_order=True) == pytest.approx(1.5)
    assert snr_suite(100, 10, A100)["snr"] == pytest.approx(1.12, abs=0.005)
    assert snr_suite(100, 10, A100)["snr_channel"] == pytest.approx(10 / 3190, abs=5e-5)
    assert snr_suite(100, 39602, 1.392e-10)["snr_entry"] == pytest.approx(3.93e-7, rel=2e-3)


@pytest.mark.parametrize("K, expected, tol", [(10, 13.1, 0.2), (100, 27.8, 0.3), (1000, 125.3, 0.5)])
def test_berry_esseen(K, expected, tol):
    assert epsilon_berry_esseen(100, K, A100, 1e-6)["epsilon"] == pytest.approx(expected, abs=tol)


def test_berry_esseen_beta_values():
    assert epsilon_berry_esseen(100, 10, A100, 1e-6)["beta"] == pytest.approx(3.16, abs=0.005)
    assert epsilon_berry_esseen(100, 1000, A100, 1e-6)["beta"] == pytest.approx(0.316, abs=0.0005)
    with pytest.raises(ValueError):
        epsilon_berry_esseen(3, 10, 0.1, 1e-6)


RENYI_ROWS = [
    (2, 8.44, 2.11, 3.96),
    (5, 5.70, 3.56, 6.51),
    (9, 4.51, 5.07, 9.01),
    (20, 3.35, 8.38, 14.3),
    (50, 2.49, 15.5, 24.8),
    (100, 2.05, 25.6, 38.8),
]


@pytest.mark.parametrize("K, a_opt, eps_a, eps", RENYI_ROWS)
def test_renyi_table(K, a_opt, eps_a, eps):
    r = renyi_to_dp(100, K, A100, 1e-6, leading_order=True)
    assert r["alpha_opt"] == pytest.approx(a_opt, abs=0.05)
    assert r["epsilon_alpha"] == pytest.approx(eps_a, abs=0.05)
    assert r["epsilon"] == pytest.approx(eps, abs=0.05)


def test_renyi_zero_shift_is_zero():
    # identical neighbours: the divergence is linear in mu^2 and vanishes with it
    assert renyi(1, 4, 1e-300, 3.0) == pytest.approx(0.0, abs=1e-300)
    with pytest.raises(ValueError):
        renyi(100, 9, A100, 1.0)


def test_zcdp_printed_point():
    r = zcdp(100, 9, A100, 1e-6, leading_order=True)
    assert r["rho"] == pytest.approx(1.125, abs=0.005)
    assert r["epsilon"] == pytest.approx(9.0, abs=0.05)


def test_zcdp_exact_keeps_alpha_factor():
    assert zcdp(100, 9, A100, 1e-6)["rho"] == pytest.approx(9 / (8 * (1 - A100) ** 2), rel=1e-12)
    assert zcdp(10**7, 8, 1 / (4 * 10**7), 1e-6)["rho"] == pytest.approx(1.0, abs=1e-6)


@given(st.integers(1, 1000), st.floats(1.0, 500.0), st.floats(1e-4, 0.5), st.floats(1e-12, 0.1))
def test_zcdp_equals_renyi_conversion(n, K, a, delta):
    for lo in (False, True):
        z = zcdp(n, K, a, delta, leading_order=lo)
        r = renyi_to_dp(n, K, a, delta, leading_order=lo)
        assert z["epsilon"] == pytest.approx(r["epsilon"], rel=1e-9, abs=1e-6)


@given(st.floats(1.01, 50.0))
def test_zcdp_rho_is_renyi_slope(order):
    rho = zcdp(100, 9, A100, 1e-6)["rho"]
    assert renyi(100, 9, A100, order) / order == pytest.approx(rho, rel=1e-12)


def test_gdp_mu():
    assert gdp_mu(100, 9, A100, leading_order=True) == pytest.approx(1.5)
    assert gdp_mu(100, 9, A100) == pytest.approx(1.5 / (1 - A100))


FDP_ROWS = [(7.0, 1.16e-5), (7.5, 2.62e-6), (7.8, 1.02e-6), (8.0, 5.34e-7), (9.0, 1.62e-8)]


@pytest.mark.parametrize("eps, delta", FDP_ROWS)
def test_fdp_table(eps, delta):
    assert gdp_delta(eps, 1.5) == pytest.approx(delta, rel=0.005)


def test_fdp_epsilon_at_one_in_a_million():
    assert gdp_epsilon(1e-6, 1.5) == pytest.approx(7.8, abs=0.05)
    assert gdp_delta(0.0, 1.5) == pytest.approx(norm.cdf(0.75) - norm.cdf(-0.75), abs=1e-12)


def test_gdp_delta_strictly_decreasing():
    for mu in (0.3, 1.5, 4.0):
        d = np.array([gdp_delta(e, mu) for e in np.linspace(0, 20, 400)])
        live = d > 1e-250
        assert np.all(np.diff(d[live]) < 0)
        assert np.all(np.diff(d) <= 0)


@given(st.floats(0.1, 5.0), st.floats(1e-10, 0.2))
def test_gdp_epsilon_inverts_delta(mu, delta):
    eps = gdp_epsilon(delta, mu)
    if eps > 0:
        assert gdp_delta(eps, mu) == pytest.approx(delta, rel=1e-6)


def test_gdp_epsilon_no_root():
    with pytest.raises(InfeasibleError):
        gdp_epsilon(1e-300, 60.0, upper=5.0)


@pytest.mark.parametrize("eps0, k, expected", [(8.0, 100, 0.89), (8.0, 1000, 0.37), (8.0, 10000, 0.13),
                                               (5.7, 100, 0.88), (23.2, 1000, 0.37)])
def test_shuffle_table(eps0, k, expected):
    assert shuffle_amplify(eps0, k, 1e-6) == pytest.approx(expected, abs=0.01)


def test_shuffle_zero_local_epsilon():
    assert shuffle_amplify(0.0, 50, 1e-6) == 0.0


@given(st.floats(0.0, 30.0), st.integers(1, 10**6))
def test_shuffle_monotone(eps0, k):
    assert shuffle_amplify(eps0, k + 1, 1e-6) <= shuffle_amplify(eps0, k, 1e-6)
    assert shuffle_amplify(eps0 + 0.5, k, 1e-6) >= shuffle_amplify(eps0, k, 1e-6)


@pytest.mark.parametrize("K, expected", [(10, 0.997), (1000, 0.761)])
def test_mmse(K, expected):
    assert mmse_ratio(100, K, A100) == pytest.approx(expected, abs=0.002)


def test_mmse_no_signal_limit():
    assert mmse_ratio(100, 10, 1e-300) == 1.0


def test_full_protocol_solver():
    r = full_protocol_dp(100, 1.0, 1e-6)
    assert r["K"] == 39602
    assert r["L_r"] == pytest.approx(5.748e9, rel=0.01)
    assert r["alpha_star"] == pytest.approx(1.392e-10, rel=0.01)
    assert r["sigma_K"] == pytest.approx(3.54e-4, rel=0.01)
    assert r["snr_entry"] == pytest.approx(3.93e-7, rel=0.02)


def test_full_protocol_infeasible():
    with pytest.raises(InfeasibleError):
        full_protocol_dp(100, 0.2, 1e-6)


# printed summary table; the last digit is allowed to differ by one unit
SUMMARY = [
    (2, 0.498, 0.50, 7.07, 0.999),
    (5, 0.316, 0.79, 4.47, 0.998),
    (10, 0.223, 1.12, 3.16, 0.997),
    (20, 0.158, 1.59, 2.24, 0.994),
    (50, 0.100, 2.51, 1.41, 0.985),
    (100, 0.071, 3.54, 1.00, 0.969),
    (500, 0.032, 7.94, 0.45, 0.864),
    (1000, 0.022, 11.2, 0.32, 0.761),
]


@pytest.mark.parametrize("K, sig, snr, beta, mmse", SUMMARY)
def test_summary_table_columns(K, sig, snr, beta, mmse):
    (row,) = dp_table(Framework.BE, [K])
    assert row["sigma_eta"] == pytest.approx(sig, abs=0.0015)
    assert row["snr"] == pytest.approx(snr, abs=0.015 if snr < 10 else 0.15)
    assert row["beta"] == pytest.approx(beta, abs=0.005)
    assert row["mmse_ratio"] == pytest.approx(mmse, abs=0.0015)


@pytest.mark.parametrize("K", [2, 5, 9, 10, 20])
def test_bound_progression_small_K(K):
    fdp = gdp_epsilon(1e-6, gdp_mu(100, K, A100))
    z = zcdp(100, K, A100, 1e-6)["epsilon"]
    be = epsilon_berry_esseen(100, K, A100, 1e-6)["epsilon"]
    assert fdp <= z <= be


def test_shuffle_table_shape():
    rows = dp_table(Framework.SHUFFLE, [100, 1000, 10000])
    assert [r["k"] for r in rows] == [100, 1000, 10000]


def test_evaluate_dispatch():
    rep = evaluate(DpQuery(n=100, K=9, alpha_star=A100, framework=Framework.FDP, epsilon=7.8, leading_order=True))
    assert rep.epsilon == pytest.approx(7.8066, abs=1e-4)
    assert rep.diagnostics["delta_at_epsilon"] == pytest.approx(1.02e-6, rel=0.005)
    with pytest.raises(ValueError):
        DpQuery(n=100, K=9, alpha_star=1.5)


def _within_block_noise(n, K, a, count, rng):
    perms = fisher_yates_batch(2 * n, count * K, rng).reshape(count, K, 2 * n)
    x = (perms[:, :, 0::2] == np.arange(1, 2 * n, 2)).sum(axis=2)
    return (1 - a) / K * x.sum(axis=1)


def test_sigma_eta_matches_within_block_noise_1e5():
    n, K, a, count = 10, 9, 0.1, 100_000
    etas = _within_block_noise(n, K, a, count, RngStream(3))
    se = sigma_eta(n, K, a) / math.sqrt(2 * (count - 1))
    assert abs(etas.std(ddof=1) - sigma_eta(n, K, a)) < 3 * se
    assert etas.mean() == pytest.approx((1 - a) / 2, abs=3 * sigma_eta(n, K, a) / math.sqrt(count))


@pytest.mark.parametrize("n", [1, 2, 5, 10])
def test_var_x_protocol_matches_enumeration(n):
    if n > 4:
        rng = RngStream(1, n)
        perms = fisher_yates_batch(2 * n, 200_000, rng)
        x = (perms[:, 0::2] % 2 == 1).sum(axis=1)
        assert x.var() == pytest.approx(var_X_protocol(n), rel=0.02)
    else:
        import itertools
        xs = [sum(p[i] % 2 for i in range(0, 2 * n, 2)) for p in itertools.permutations(range(2 * n))]
        assert np.var(xs) == pytest.approx(var_X_protocol(n), rel=1e-12)


def _protocol_etas(n, K, a, trials):
    params = ProtocolParams(n, 1, a, K, coefficients="uniform", variant="two-layer-compressed")
    return np.array([run_protocol([(0,) * n], params, 31, trial=i).H for i in range(trials)])


def test_sigma_eta_protocol_matches_protocol_noise():
    n, K, a, trials = 10, 9, 0.1, 10_000
    etas = _protocol_etas(n, K, a, trials)
    se = sigma_eta_protocol(n, K, a) / math.sqrt(2 * (trials - 1))
    assert abs(etas.std(ddof=1) - sigma_eta_protocol(n, K, a)) < 3 * se


@pytest.mark.xfail(strict=True, reason="closed-form sigma_eta describes the within-block count, not w^T P y")
def test_sigma_eta_closed_form_matches_protocol_noise():
    n, K, a, trials = 10, 9, 0.1, 5_000
    etas = _protocol_etas(n, K, a, trials)
    se = sigma_eta(n, K, a) / math.sqrt(2 * (trials - 1))
    assert abs(etas.std(ddof=1) - sigma_eta(n, K, a)) < 3 * se
