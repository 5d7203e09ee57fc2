import math

import numpy as np
import pytest

from marketlab.errors import InternalCheckError
from marketlab.strategic import (
    Certification,
    EquilibriumReport,
    GameContext,
    LearningConfig,
    ScalingGrid,
    _FastRound,
    best_response_dynamics,
    check_price_bracket,
    check_price_floor,
    check_smooth_bound,
    exhaustive_equilibria,
    ratio_bound_log,
    ratio_bound_sqrt,
    run_learning,
    worst_equilibrium,
)
from marketlab.supply import BinomialCounts, FixedCounts
from marketlab.valuations import KDemand, UnitDemand, scale_bid, value
from marketlab.walrasian import run_mechanism

from oracles import random_market


def unit(vals):
    return tuple(UnitDemand((v,)) for v in vals)


# -- grids -------------------------------------------------------------------


def test_grid_requires_truthful_entry():
    ScalingGrid((0.0, 1.0))
    with pytest.raises(ValueError):
        ScalingGrid((0.0, 2.0))
    with pytest.raises(ValueError):
        ScalingGrid((1.0,), offsets=(0.5,))
    with pytest.raises(ValueError):
        ScalingGrid((1.0, -0.5))
    with pytest.raises(ValueError):
        ScalingGrid((1.0, 1.0))


def test_grid_strategy_order_is_scale_major():
    g = ScalingGrid((0.0, 1.0), offsets=(0.0, 2.0))
    assert g.strategies == ((0.0, 0.0), (0.0, 2.0), (1.0, 0.0), (1.0, 2.0))


# -- the bullying equilibrium ------------------------------------------------
# One copy, values 10 and 1.  The low bidder shades up to 10 and the high
# bidder drops to 0: ties go to the later owner, so no deviation by the high
# bidder wins anything at positive surplus, and welfare sticks at 1/10 of
# optimum.


def bully_context():
    vals = unit((10.0, 1.0))
    grids = [ScalingGrid((0.0, 1.0)), ScalingGrid((0.0, 1.0, 10.0))]
    return GameContext(vals, grids, FixedCounts((1,)), rule="english")


def test_bully_profile_is_exact_nash_at_ratio_one_tenth():
    ctx = bully_context()
    profile = (0, 2)  # scales (0, 10): bids 0 and 10
    cert = ctx.certify(profile)
    assert cert.kind == "exact-nash"
    rep = ctx.report(profile, cert)
    assert rep.sw_true_expected == 1.0
    assert rep.sw_opt_expected == 10.0
    assert rep.ratio == 0.1


def test_bully_truthful_profile_is_also_nash_at_ratio_one():
    ctx = bully_context()
    profile = (1, 1)
    cert = ctx.certify(profile)
    assert cert.kind == "exact-nash"
    assert ctx.report(profile, cert).ratio == 1.0


def test_bully_worst_equilibrium_is_found_exhaustively():
    ctx = bully_context()
    worst, reports, complete = worst_equilibrium(ctx, np.random.default_rng(0))
    assert complete
    assert worst.ratio == 0.1
    assert {r.ratio for r in reports} >= {0.1, 1.0}


def test_certify_flags_profitable_deviation():
    ctx = bully_context()
    # High bidder at 0 against a truthful low bidder: switching to scale 1
    # wins the copy at price 1... at price 1 surplus is 9, a clear deviation.
    cert = ctx.certify((0, 1))
    assert cert.kind == "not-equilibrium"
    assert cert.witness[0] == 0
    assert cert.max_gain == pytest.approx(9.0)


# -- best responses ----------------------------------------------------------


def test_best_response_breaks_ties_toward_larger_scale():
    vals = unit((5.0,))
    ctx = GameContext(
        vals, ScalingGrid((0.0, 1.0, 2.0)), FixedCounts((1,)), rule="english"
    )
    s, u = ctx.best_response((0,), 0)
    # Alone, any positive bid wins the copy for free; ties resolve upward.
    assert ctx.menu[0][s] == (2.0, 0.0)
    assert u == pytest.approx(5.0)


def test_best_response_against_fixed_opponent():
    vals = unit((10.0, 1.0))
    grids = [ScalingGrid((0.0, 1.0)), ScalingGrid((0.0, 1.0, 10.0))]
    ctx = GameContext(vals, grids, FixedCounts((1,)), rule="english")
    # Against a bully bid of 10, the high bidder's best reply yields zero
    # utility; the tie rule then prefers the larger scale.
    s, u = ctx.best_response((1, 2), 0)
    assert u == pytest.approx(0.0)
    assert ctx.menu[0][s] == (1.0, 0.0)


def test_best_response_dynamics_reaches_certified_fixed_points():
    vals = unit((10.0, 1.0))
    grids = [ScalingGrid((0.0, 1.0)), ScalingGrid((0.0, 1.0, 10.0))]
    ctx = GameContext(vals, grids, FixedCounts((1,)), rule="english")
    reports = best_response_dynamics(ctx, np.random.default_rng(7), restarts=16)
    assert reports
    for rep in reports:
        assert rep.certification.kind == "exact-nash"
    exhaustive = {r.profile for r in exhaustive_equilibria(ctx)}
    assert {r.profile for r in reports} <= exhaustive


def test_report_rejects_ratio_above_one():
    cert = Certification("exact-nash", 0.0, None)
    with pytest.raises(InternalCheckError):
        EquilibriumReport((0,), ((1.0, 0.0),), 2.0, 1.0, 2.0, cert)


# -- fast path against the engine ---------------------------------------------


def test_fast_stats_match_engine_stats():
    rng = np.random.default_rng(42)
    for _ in range(12):
        n_players = int(rng.integers(2, 5))
        vals = unit(rng.uniform(0.5, 1.0, n_players))
        grid = ScalingGrid((0.3, 0.7, 1.0))
        for rule, lam in (("english", None), ("dutch", None), ("mix", 0.3)):
            model = BinomialCounts(1, int(rng.integers(1, 6)), 0.5)
            ctx = GameContext(vals, grid, model, rule=rule, lam=lam)
            assert ctx._fast
            profile = tuple(int(rng.integers(0, 3)) for _ in range(n_players))
            fast = ctx._fast_stats(profile)
            slow = ctx._slow_stats(profile)
            assert fast.sw_true == pytest.approx(slow.sw_true, abs=1e-12)
            for a, b in zip(fast.utils, slow.utils):
                assert a == pytest.approx(b, abs=1e-12)


def test_fast_round_counterfactuals_match_engine():
    rng = np.random.default_rng(9)
    for _ in range(10):
        n_players = int(rng.integers(2, 6))
        vals = unit(rng.uniform(0.5, 1.0, n_players))
        menu = [ScalingGrid((0.0, 0.6, 1.0)).strategies] * n_players
        fr = _FastRound(vals, menu)
        actions = tuple(int(rng.integers(0, 3)) for _ in range(n_players))
        bids_vec = np.array([fr.cand[i, s] for i, s in enumerate(actions)])
        if fr.has_cross_ties(bids_vec):
            continue
        for rule, lam in (("english", None), ("dutch", None), ("mix", 0.4)):
            for n in range(0, n_players + 2):
                table = fr.utilities(bids_vec, n, rule, lam)
                for i in range(n_players):
                    for s in range(3):
                        trial = tuple(
                            s if h == i else a for h, a in enumerate(actions)
                        )
                        bids = tuple(
                            scale_bid(vals[h], *menu[h][a])
                            for h, a in enumerate(trial)
                        )
                        out = run_mechanism(bids, (n,), rule, lam)
                        want = value(vals[i], out.allocation[i]) - out.payments[i]
                        assert table[i, s] == pytest.approx(want, abs=1e-12), (
                            rule,
                            n,
                            i,
                            s,
                        )


def test_fast_round_detects_cross_player_ties():
    vals = unit((2.0, 1.0))
    menu = [ScalingGrid((0.5, 1.0)).strategies] * 2
    fr = _FastRound(vals, menu)
    # Player 0 at half scale bids 1.0, colliding with player 1's truthful bid.
    assert fr.has_cross_ties(np.array([2.0, 1.0]))
    assert not fr.has_cross_ties(np.array([2.0, 0.9]))


def test_fast_round_realized_welfare_counts_true_values():
    vals = unit((3.0, 2.0, 1.0))
    menu = [ScalingGrid((0.0, 1.0)).strategies] * 3
    fr = _FastRound(vals, menu)
    bids = np.array([0.0, 2.0, 1.0])
    assert fr.realized_welfare(bids, 2) == 3.0  # winners hold true values 2, 1
    assert fr.realized_welfare(bids, 5) == 3.0  # zero bid never fills a slot


# -- Monte Carlo mode ----------------------------------------------------------


def test_monte_carlo_stats_are_deterministic_and_close_to_exact():
    vals = unit((1.0, 0.8, 0.6))
    grid = ScalingGrid((0.5, 1.0))
    model = BinomialCounts(1, 3, 0.5)
    exact = GameContext(vals, grid, model)
    mc_a = GameContext(vals, grid, model, exact_limit=2, mc_draws=4000, seed=11)
    mc_b = GameContext(vals, grid, model, exact_limit=2, mc_draws=4000, seed=11)
    assert not mc_a.exact
    profile = (1, 1, 0)
    assert mc_a.stats(profile) == mc_b.stats(profile)
    assert mc_a.stats(profile).sw_true == pytest.approx(
        exact.stats(profile).sw_true, abs=0.1
    )


def test_monte_carlo_certification_reports_interval():
    vals = unit((10.0, 1.0))
    grids = [ScalingGrid((0.0, 1.0)), ScalingGrid((0.0, 1.0, 10.0))]
    ctx = GameContext(
        vals, grids, FixedCounts((1,)), exact_limit=0, mc_draws=500, seed=3
    )
    cert = ctx.certify((0, 2))
    assert cert.kind == "eps-nash"
    assert cert.ci99 is not None
    # Degenerate supply: every draw is identical, so the interval collapses.
    assert cert.ci99[0] == pytest.approx(cert.ci99[1])
    bad = ctx.certify((0, 1))
    assert bad.kind == "not-equilibrium"
    assert bad.ci99[0] > 0


# -- ratio bounds --------------------------------------------------------------


def test_ratio_bound_sqrt_frozen_value():
    # ball = C(3,1) = 3; 3k zeta m / rho = 1/16; sqrt(3 * 0.0625 * 3) = 0.75.
    got = ratio_bound_sqrt(1, 1, 1.0, 48.0, 0.0625)
    assert got == pytest.approx(1.0 - 0.75 / 16.0)


def test_ratio_bound_log_frozen_value():
    # Y = 2 * 1 * 0.0625 * C(3,1) = 0.375, two halving steps.
    got = ratio_bound_log(1, 1, 1.0, 48.0, 0.0625)
    assert got == pytest.approx(1.0 - 0.125 * 0.375 * 2)


def test_ratio_bound_log_vacuous_when_mass_reaches_one():
    assert ratio_bound_log(1, 1, 1.0, 48.0, 0.5) == -math.inf
    assert ratio_bound_log(2, 2, 1.0, 10.0, 0.9) == -math.inf


def test_bounds_decrease_with_peak_mass():
    lo = ratio_bound_sqrt(1, 1, 1.0, 48.0, 0.01)
    hi = ratio_bound_sqrt(1, 1, 1.0, 48.0, 0.09)
    assert lo > hi


# -- price floor / bracket / smooth checks -------------------------------------


def test_price_floor_holds_on_random_markets():
    rng = np.random.default_rng(5)
    for _ in range(40):
        bids, supply = random_market(rng)
        for rule, lam in (("english", None), ("dutch", None), ("mix", 0.5)):
            for i in range(len(bids)):
                verdict = check_price_floor(bids, i, supply, rule, lam)
                assert verdict.ok, verdict.detail


def test_price_floor_hand_case():
    bids = unit((5.0, 3.0))
    assert check_price_floor(bids, 0, (1,)).ok
    assert check_price_floor(bids, 1, (1,), rule="dutch").ok


def test_bracket_gate_rejects_scarce_supply():
    vals = unit((1.0, 0.9))
    bids = tuple(scale_bid(v, 0.5) for v in vals)
    verdict = check_price_bracket(vals, bids, 0, (2,), 1, 0.05, 1.0)
    assert not verdict.applied
    assert verdict.ok


def test_bracket_and_smooth_hold_on_abundant_stable_market():
    vals = unit((1.0, 0.9, 0.8))
    bids = tuple(scale_bid(v, 0.5) for v in vals)
    # Supply beyond every demand: prices vanish on both profiles and the
    # distance probe sees no movement anywhere near the support.
    supply = (10,)
    bracket = check_price_bracket(vals, bids, 0, supply, 1, 0.05, 1.0)
    assert bracket.applied and bracket.ok
    smooth = check_smooth_bound(vals, bids, 0, supply, 1, 0.05, 1.0)
    assert smooth.applied and smooth.ok


def test_smooth_gate_requires_ceiling_above_item_values():
    vals = unit((1.0, 0.9, 0.8))
    bids = tuple(scale_bid(v, 0.5) for v in vals)
    verdict = check_smooth_bound(vals, bids, 0, (10,), 1, 0.05, 0.5)
    assert not verdict.applied


def test_bracket_and_smooth_random_corpus():
    rng = np.random.default_rng(17)
    applied = 0
    for _ in range(30):
        n_players = int(rng.integers(2, 5))
        cap = int(rng.integers(1, 3))
        vals = tuple(
            KDemand((float(rng.uniform(0.2, 1.0)),), cap) for _ in range(n_players)
        )
        bids = tuple(scale_bid(v, float(rng.uniform(0.3, 1.0))) for v in vals)
        supply = (int(rng.integers(cap + 2, n_players * cap + 4)),)
        ceiling = 1.0
        threshold = float(rng.uniform(0.05, 0.5))
        for i in range(n_players):
            b = check_price_bracket(vals, bids, i, supply, cap, threshold, ceiling)
            s = check_smooth_bound(vals, bids, i, supply, cap, threshold, ceiling)
            assert b.ok, b.detail
            assert s.ok, s.detail
            applied += b.applied + s.applied
    assert applied > 0  # the gate must not filter everything


# -- learning dynamics ----------------------------------------------------------


def test_learning_is_deterministic_under_seed():
    vals = unit((1.0, 0.7, 0.4))
    grid = ScalingGrid((0.0, 0.5, 1.0))
    cfg = LearningConfig(rounds=300)
    a = run_learning(vals, grid, BinomialCounts(1, 3, 0.5), cfg, seed=123)
    b = run_learning(vals, grid, BinomialCounts(1, 3, 0.5), cfg, seed=123)
    assert a == b
    c = run_learning(vals, grid, BinomialCounts(1, 3, 0.5), cfg, seed=124)
    assert a != c


def test_learning_regret_stays_within_budget():
    vals = unit((1.0, 0.8, 0.6, 0.4))
    grid = ScalingGrid((0.0, 0.5, 1.0))
    cfg = LearningConfig(rounds=2000)
    res = run_learning(vals, grid, BinomialCounts(1, 4, 0.5), cfg, seed=7)
    for r, budget in zip(res.regrets, res.regret_budgets):
        assert r <= budget
    assert res.rounds == 2000
    assert 0.0 < res.average_welfare <= res.expected_opt + 1e-9


def test_learning_payoff_bound_is_enforced():
    vals = unit((10.0, 1.0))
    grid = ScalingGrid((0.0, 1.0))
    cfg = LearningConfig(rounds=50, payoff_bound=0.5)
    with pytest.raises(ValueError):
        run_learning(vals, grid, FixedCounts((1,)), cfg, seed=0)


def test_learning_single_bidder_learns_to_take_the_copy():
    vals = unit((1.0,))
    grid = ScalingGrid((0.0, 1.0))
    cfg = LearningConfig(rounds=800)
    res = run_learning(vals, grid, FixedCounts((1,)), cfg, seed=2)
    # Bidding truthfully wins the lone copy for free every round.
    assert res.mixtures[0][1] > 0.9
    assert res.average_welfare > 0.9


def test_learning_bandit_mode_reports_regret_without_assert():
    vals = unit((1.0, 0.6))
    grid = ScalingGrid((0.0, 0.5, 1.0))
    cfg = LearningConfig(rounds=400, feedback="bandit")
    res = run_learning(vals, grid, BinomialCounts(1, 2, 0.5), cfg, seed=5)
    assert len(res.regrets) == 2
    assert all(math.isfinite(r) for r in res.regrets)


def test_learning_general_path_matches_on_multi_good():
    vals = (KDemand((1.0, 0.8), 2), KDemand((0.9, 0.3), 1))
    grid = ScalingGrid((0.5, 1.0))
    cfg = LearningConfig(rounds=60, payoff_bound=2.0)
    res = run_learning(vals, grid, FixedCounts((1, 1)), cfg, seed=8)
    assert res.rounds == 60
    for r, budget in zip(res.regrets, res.regret_budgets):
        assert r <= budget


def test_learning_config_validation():
    with pytest.raises(ValueError):
        LearningConfig(rounds=0)
    with pytest.raises(ValueError):
        LearningConfig(rounds=10, feedback="oracle")
    with pytest.raises(ValueError):
        LearningConfig(rounds=10, payoff_bound=0.0)
