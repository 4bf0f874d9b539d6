import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polyveil.attacks import (
    GaussianNoise,
    HistogramNoise,
    bits_from_permutation,
    block_threshold_attack,
    deshuffle_attack,
    deshuffle_table,
    gaussian_map_attack,
    hungarian_attack,
    mc_density_estimate,
    scalar_posterior,
)
from polyveil.hardness_oracles import residual, worked_reduction_census
from polyveil.linalg_core import BitVector, Permutation, encode_bitstream
from polyveil.protocol import ProtocolParams, Variant, random_inputs, run_protocol
from polyveil.sampling import RngStream
from polyveil.sim_verify import sample_eta

F_WORKED = (1.2, 1.4, 0.65)
ETA_SHUFFLED = (0.8, 0.35, 0.9)


def masked(n, K, alpha_star, trial, seed=0):
    """One client's masked matrix and its bits."""
    bits = random_inputs(n, 1, RngStream(seed, 1 << 20, (trial,)))[0]
    tr = run_protocol([bits], ProtocolParams(n, 1, alpha_star, K), seed, trial=trial)
    return tr.aggregator_view.D[0], bits


def test_worked_deshuffle_unique():
    res = deshuffle_attack(F_WORKED, ETA_SHUFFLED, 0.3, 2, truth=(1, 2, 1))
    assert res.unique and res.correct_recovered
    assert res.passing_assignments == [((2, 0, 1), (1, 2, 1))]


def test_worked_deshuffle_table():
    expected = {
        (0.8, 0.35, 0.9): (1.33, 3.50, -0.83),
        (0.8, 0.9, 0.35): (1.33, 1.67, 1.00),
        (0.35, 0.8, 0.9): (2.83, 2.00, -0.83),
        (0.35, 0.9, 0.8): (2.83, 1.67, -0.50),
        (0.9, 0.35, 0.8): (1.00, 3.50, -0.50),
        (0.9, 0.8, 0.35): (1.00, 2.00, 1.00),
    }
    rows = deshuffle_table(F_WORKED, ETA_SHUFFLED, 0.3, 2)
    assert len(rows) == 6
    assert sum(ok for _, _, ok in rows) == 1
    for assignment, s_hat, ok in rows:
        eta = tuple(ETA_SHUFFLED[i] for i in assignment)
        assert np.round(s_hat, 2) == pytest.approx(expected[eta], abs=1e-9)
        assert ok == (eta == (0.9, 0.8, 0.35))


def test_single_client_trivially_unique():
    res = deshuffle_attack([0.3 * 3 + 0.417], [0.417], 0.3, 4, truth=(3,))
    assert res.unique and res.correct_recovered


def test_enumeration_cap_points_to_pruned():
    with pytest.raises(ValueError, match="pruned"):
        deshuffle_attack(np.zeros(11), np.zeros(11), 0.3, 2)
    with pytest.raises(ValueError):
        deshuffle_attack(np.zeros(21), np.zeros(21), 0.3, 2, method="pruned")


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(3, 7), st.integers(0, 2**31))
def test_true_assignment_always_passes_and_modes_agree(n, k, seed):
    params = ProtocolParams(n, k, 0.3, 4, variant=Variant.COMPRESSED)
    tr = run_protocol(random_inputs(n, k, RngStream(seed, 3)), params, seed)
    v = tr.server_view
    a = deshuffle_attack(v.f, v.shuffled_eta, 0.3, n, truth=tr.ground_truth_counts)
    b = deshuffle_attack(v.f, v.shuffled_eta, 0.3, n, method="pruned", truth=tr.ground_truth_counts)
    assert tr.ground_truth_counts in {s for _, s in a.passing_assignments}
    assert a.passing_assignments == b.passing_assignments
    if a.unique:
        assert sum(a.passing_assignments[0][1]) == tr.ground_truth_S


def test_pruned_mode_at_k_20():
    params = ProtocolParams(6, 20, 0.2, 5, variant=Variant.COMPRESSED)
    tr = run_protocol(random_inputs(6, 20, RngStream(8, 3)), params, 8)
    res = deshuffle_attack(tr.server_view.f, tr.server_view.shuffled_eta, 0.2, 6, method="pruned",
                           truth=tr.ground_truth_counts)
    assert res.unique and res.correct_recovered


def test_posterior_uniform_when_signal_vanishes():
    post = scalar_posterior(2.0, 1e-12, 6, GaussianNoise(2.0, 0.3))
    assert 0.5 * np.abs(post - 1 / 7).sum() < 1e-6


@pytest.mark.parametrize("s0", [0, 2, 5])
def test_posterior_mode_at_zero_residual(s0):
    noise = GaussianNoise(1.1, 0.2)
    post = scalar_posterior(0.4 * s0 + 1.1, 0.4, 5, noise)
    assert int(np.argmax(post)) == s0
    assert post.sum() == pytest.approx(1.0)


def test_posterior_degenerate_warns():
    with pytest.warns(RuntimeWarning):
        post = scalar_posterior(1e6, 0.5, 3, GaussianNoise(0.0, 1e-3))
    assert np.allclose(post, 0.25)


def test_gaussian_posterior_accuracy_matches_histogram_bayes():
    n, K, a = 4, 5, 0.5
    samples = sample_eta(n, K, a, 100_000, RngStream(21))
    hist = HistogramNoise.from_samples(samples, bins=100)
    gauss = GaussianNoise(float(samples.mean()), float(samples.std()))
    params = ProtocolParams(n, 1, a, K, variant=Variant.TWO_LAYER_COMPRESSED)
    hits_g = hits_h = 0
    trials = 10_000
    for i in range(trials):
        bits = random_inputs(n, 1, RngStream(22, 0, (i,)))
        tr = run_protocol(bits, params, 23, trial=i)
        f = tr.aggregator_view.f[0]
        s = bits[0].count()
        hits_g += int(np.argmax(scalar_posterior(f, a, n, gauss))) == s
        hits_h += int(np.argmax(scalar_posterior(f, a, n, hist))) == s
    assert abs(hits_g - hits_h) / trials <= 0.02


def test_gaussian_map_high_snr():
    wins = 0
    for t in range(100):
        D, bits = masked(2, 2, 0.9, t)
        wins += gaussian_map_attack(D, 0.9, 2, 2, truth=encode_bitstream(bits)).success
    assert wins == 100


def test_gaussian_map_tie_reports_zero_margin():
    M = encode_bitstream((0, 0))
    other = encode_bitstream((1, 0))
    a = 0.3
    D = a / 2 * (M.matrix() + other.matrix()) + (1 - a) / 4 * np.ones((4, 4))
    res = gaussian_map_attack(D, a, 2, 2)
    assert res.score == 0.0


def test_gaussian_map_block_agrees_with_full_on_block_truth():
    for t in range(20):
        D, bits = masked(2, 3, 0.6, t)
        full = gaussian_map_attack(D, 0.6, 2, 3, search="full")
        block = gaussian_map_attack(D, 0.6, 2, 3, search="block")
        if full.guess in {encode_bitstream(b) for b in itertools.product((0, 1), repeat=2)}:
            assert full.guess == block.guess


def test_gaussian_map_distance_matches_direct_formula():
    D, _ = masked(2, 3, 0.4, 1)
    res = gaussian_map_attack(D, 0.4, 2, 3)
    direct = min(
        np.linalg.norm(D - 0.4 * Permutation(s).matrix() - 0.6 / 4 * np.ones((4, 4)))
        for s in itertools.permutations(range(4))
    )
    assert res.extra["distance"] == pytest.approx(direct, abs=1e-12)


def test_gaussian_map_size_cap():
    with pytest.raises(ValueError):
        gaussian_map_attack(np.full((10, 10), 0.1), 0.3, 5, 3, search="full")


def test_hungarian_recovers_exact_permutation():
    P = Permutation((3, 0, 2, 5, 1, 4))
    assert hungarian_attack(P.matrix(), 1.0, truth=P).success


@pytest.mark.parametrize("seed", range(5))
def test_hungarian_matches_brute_force(seed):
    D = np.random.default_rng(seed).random((6, 6))
    best = max(itertools.permutations(range(6)), key=lambda s: D[np.arange(6), s].sum())
    assert hungarian_attack(D, 0.5).guess.map == best


def test_attacks_are_deterministic():
    D, _ = masked(4, 5, 0.3, 0)
    assert hungarian_attack(D, 0.3) == hungarian_attack(D, 0.3)
    assert block_threshold_attack(D, 0.3).guess == block_threshold_attack(D, 0.3).guess


def test_hungarian_high_snr():
    wins = sum(hungarian_attack(D, 0.9, truth=encode_bitstream(b)).success
               for D, b in (masked(8, 5, 0.9, t) for t in range(100)))
    assert wins >= 95


def test_block_threshold_exact_encoding():
    bits = (1, 0, 0, 1, 1)
    res = block_threshold_attack(encode_bitstream(bits).matrix(), 1.0, truth=bits)
    assert res.guess == BitVector(bits) and res.success


def test_block_threshold_mid_snr():
    acc = np.mean([block_threshold_attack(D, 0.5, truth=b.bits).score
                   for D, b in (masked(8, 5, 0.5, t) for t in range(100))])
    assert acc >= 0.9


def test_bits_from_permutation_round_trip():
    for bits in itertools.product((0, 1), repeat=4):
        assert bits_from_permutation(encode_bitstream(bits)).bits == bits


def test_mc_density_single_permutation_exhaustive():
    Q = Permutation((2, 0, 3, 1))
    res = mc_density_estimate(Q.matrix(), 1, 0.3, 0, exhaustive=True)
    assert res.samples == 24 and res.hit_count == 1
    assert res.feasible_examples[0][0] == (Q,)


def test_mc_density_single_permutation_sampled():
    Q = Permutation((2, 0, 3, 1))
    res = mc_density_estimate(Q.matrix(), 1, 0.3, 4800, RngStream(5))
    assert res.ci_low <= 1 / 24 <= res.ci_high


def test_mc_density_exhaustive_matches_census():
    D, bits = masked(2, 2, 0.3, 3)
    M = encode_bitstream(bits)
    census = worked_reduction_census(D, 0.3)[M]
    res = mc_density_estimate(residual(D, M, 0.3), 2, 0.3, 0, exhaustive=True)
    assert res.samples == 576
    assert res.hit_count == census.count


def test_mc_density_interior_target_is_rare():
    rng = RngStream(9)
    R = np.full((6, 6), 1 / 6)
    res = mc_density_estimate(R, 3, 0.2, 2000, rng)
    assert res.hit_count == 0


def test_mc_density_rejects_non_stochastic_target():
    with pytest.raises(ValueError):
        mc_density_estimate(np.eye(4) * 0.5, 2, 0.3, 10, RngStream(0))
