import numpy as np
import pytest

from rldp.analysis import (
    MarkovModel,
    copy_pmf,
    delivery_from_full_rank,
    delivery_rates,
    delivery_table,
    effective_omega,
    expected_delivery_rlnc,
    expected_delivery_xor,
    fit_phi,
    mc_copy_distribution,
    total_variation,
    transition_matrix,
    validate_stratum,
)

from oracles import process_delivery, rank_process


# -- copy pmf -------------------------------------------------------------------


def test_pmf_worked_example():
    p = copy_pmf(0.1, 0.5, 2)
    assert p.masses == pytest.approx([0.325, 0.45, 0.225], abs=1e-15)


def test_pmf_worked_example_monte_carlo():
    rng = np.random.default_rng(0)
    y = np.where(rng.random(10**6) < 0.1, 0, 2)
    x = rng.binomial(y, 0.5)
    emp = np.bincount(x, minlength=3) / x.size
    assert emp == pytest.approx([0.325, 0.45, 0.225], abs=0.002)


@pytest.mark.parametrize("phi", [0.0, 0.3, 0.8])
def test_pmf_full_forwarding_is_two_point(phi):
    p = copy_pmf(phi, 1.0, 5)
    assert p[0] == pytest.approx(phi) and p[5] == pytest.approx(1 - phi)
    assert p.masses[1:5] == pytest.approx(0.0)


def test_pmf_total_suppression():
    assert copy_pmf(1.0, 0.4, 7)[0] == 1.0


@pytest.mark.parametrize("phi, w, n", [(0.1, 0.5, 2), (0.37, 0.81, 14), (0.0, 0.2, 0), (0.9, 0.05, 30)])
def test_pmf_normalised(phi, w, n):
    p = copy_pmf(phi, w, n)
    assert abs(p.masses.sum() - 1.0) < 1e-12 and (p.masses >= 0).all()
    assert p.tail(0) == pytest.approx(1.0)


@pytest.mark.parametrize("args", [(-0.1, 0.5, 2), (0.1, 1.2, 2), (0.1, 0.5, -1)])
def test_pmf_domain_errors(args):
    with pytest.raises(ValueError):
        copy_pmf(*args)


def test_effective_omega():
    assert effective_omega(0.9, 0.2) == pytest.approx(0.72)
    assert effective_omega(0.9) == 0.9


# -- fitting and d_TV -----------------------------------------------------------


def test_fit_phi_examples():
    assert fit_phi(0.5**3, 0.5, 3) == pytest.approx(0.0, abs=1e-15)
    assert fit_phi(1.0, 0.5, 3) == 1.0
    assert fit_phi(0.325, 0.5, 2) == pytest.approx(0.1)
    assert fit_phi(0.0, 0.5, 2) == 0.0  # clamped


def test_fit_phi_degenerate():
    with pytest.raises(ValueError):
        fit_phi(0.3, 0.0, 4)


def test_total_variation():
    assert total_variation([0.2, 0.8], [0.2, 0.8]) == 0.0
    assert total_variation([1, 0], [0, 1]) == 1.0
    assert total_variation([0.5, 0.5], [0.6, 0.4]) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        total_variation([1.0], [0.5, 0.5])


# -- Markov chain ---------------------------------------------------------------


def test_transition_identity_beyond_generation():
    assert np.array_equal(transition_matrix(31, copy_pmf(0.1, 0.8, 4), 30), np.eye(31))


def test_transition_first_step():
    p = copy_pmf(0.2, 0.6, 3)
    pi = transition_matrix(1, p, 5)
    assert pi[0, 0] == pytest.approx(p[0])
    assert pi[0, 1] == pytest.approx(1 - p[0])
    assert np.array_equal(pi[1:], np.eye(6)[1:])


def test_transition_entries_against_direct_formula():
    p = copy_pmf(0.15, 0.7, 3)
    g, k = 8, 6
    pi = transition_matrix(k, p, g)
    for i in range(k):
        for j in range(g + 1):
            if j < i or j > k:
                want = 0.0
            elif j < k:
                want = p[j - i] if j - i <= 3 else 0.0
            else:
                want = sum(p[w] for w in range(k - i, 4))
            assert pi[i, j] == pytest.approx(want, abs=1e-15)


@pytest.mark.parametrize("phi, w, n, g", [(0.1, 0.72, 4, 30), (0.3, 0.5, 1, 10), (0.0, 1.0, 6, 12)])
def test_rows_stochastic_and_rank_bounded(phi, w, n, g):
    p = copy_pmf(phi, w, n)
    for k in range(1, g + 2):
        assert np.abs(transition_matrix(k, p, g).sum(axis=1) - 1).max() < 1e-12
    marg = MarkovModel.build(p, g).marginals
    assert np.abs(marg.sum(axis=1) - 1).max() < 1e-12
    for k in range(g + 1):
        assert marg[k, k + 1 :].sum() == pytest.approx(0.0, abs=1e-15)


def test_marginals_match_simulated_process():
    rng = np.random.default_rng(1)
    p = copy_pmf(0.2, 0.8, 3)
    g, trials = 12, 200_000
    z = rank_process(0.2, 0.8, 3, g, trials, rng)
    marg = MarkovModel.build(p, g).marginals
    for k in range(1, g + 1):
        emp = np.bincount(z[:, k - 1], minlength=g + 1) / trials
        assert np.abs(emp - marg[k]).max() < 0.005


# -- delivery rates -------------------------------------------------------------


def test_delivery_certain_reception():
    d_r, d_x = delivery_rates(0.0, 1.0, 0.0, 3, 30)
    assert d_r == pytest.approx(1.0) and d_x == pytest.approx(1.0)


def test_delivery_total_suppression():
    d_r, d_x = delivery_rates(1.0, 1.0, 0.0, 3, 30)
    assert d_r == 0.0 and d_x == 0.0


def test_xor_delivery_example():
    assert expected_delivery_xor(copy_pmf(0.1, 0.5, 2)) == pytest.approx(0.675)


def test_delivery_combination_by_hand():
    # g = 2: D = (2 p2 + 1 p1 (1 - p2)) / 2
    assert delivery_from_full_rank([0.5, 0.4]) == pytest.approx((0.8 + 0.5 * 0.6) / 2)


def test_rlnc_delivery_against_process_oracle():
    rng = np.random.default_rng(2)
    model = MarkovModel.build(copy_pmf(0.1, effective_omega(1.0, 0.2), 4), 30)
    oracle = process_delivery(0.1, 0.8, 4, 30, 200_000, rng)
    assert abs(expected_delivery_rlnc(model) - oracle) <= 0.006


def test_delivery_table_rows():
    rows = delivery_table([0.1], [1.0, 0.5], [0.0], [2, 3], 10)
    assert len(rows) == 4
    assert set(rows[0]) == {"phi", "omega", "rho", "n", "g", "D_R", "D_X"}
    assert all(0 <= r["D_R"] <= 1 and 0 <= r["D_X"] <= 1 for r in rows)


# -- copy-count Monte-Carlo -----------------------------------------------------


def test_mc_zero_forwarding_gives_no_copies_beyond_one_hop():
    strata = mc_copy_distribution(4.0, 0.0, 0.0, 200, np.random.default_rng(3), n_nodes=40)
    far = [st for (h, _), st in strata.items() if h >= 2]
    assert far and all(st.counts[1:].sum() == 0 for st in far)


def test_mc_total_loss_gives_no_copies():
    strata = mc_copy_distribution(4.0, 0.9, 1.0, 100, np.random.default_rng(4), n_nodes=40)
    assert all(st.counts[1:].sum() == 0 for st in strata.values())


def test_mc_single_destination_mode():
    strata = mc_copy_distribution(4.0, 0.9, 0.0, 300, np.random.default_rng(5), n_nodes=40, all_destinations=False)
    assert sum(st.samples for st in strata.values()) <= 300


def test_validate_stratum_small_run():
    strata = mc_copy_distribution(4.0, 0.9, 0.0, 2000, np.random.default_rng(6))
    st = strata[(2, 6)]
    v = validate_stratum(st)
    assert 0.0 <= v.d_tv <= 1.0 and 0.0 <= v.phi <= 1.0
    assert v.empirical.sum() == pytest.approx(1.0)
    assert v.d_tv < 0.08
