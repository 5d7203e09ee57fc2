import math

import numpy as np
import pytest

from marketlab.errors import SolverError
from marketlab.fisher import (
    FisherMarket,
    audit_scaling,
    compress_prices,
    market_poa_search,
    perturbed_reports,
    rescale_to_unit,
    reserve_poa_search,
    run_market_learning,
    solve_market,
    strategic_outcome,
    verify_price_shift,
    verify_utility_floor,
)
from marketlab.valuations import CES, CobbDouglas, Linear, utility

from oracles import eg_grid_oracle, eg_objective


def cd(*weights, scale=1.0):
    return CobbDouglas(tuple(weights), scale)


# -- closed form and frozen examples ------------------------------------------


def test_separable_cobb_douglas_splits_cleanly():
    market = FisherMarket((1.0, 1.0), (cd(1.0, 0.0), cd(0.0, 1.0)))
    eq = solve_market(market)
    assert eq.prices == pytest.approx((1.0, 1.0))
    assert eq.allocation[0] == pytest.approx((1.0, 0.0))
    assert eq.allocation[1] == pytest.approx((0.0, 1.0))


def test_shared_cobb_douglas_prices_follow_budget_mass():
    market = FisherMarket((2.0, 1.0), (cd(0.5, 0.5), cd(0.5, 0.5)))
    eq = solve_market(market)
    assert eq.prices == pytest.approx((1.5, 1.5))
    assert eq.allocation[0] == pytest.approx((2 / 3, 2 / 3))
    assert eq.allocation[1] == pytest.approx((1 / 3, 1 / 3))


def test_linear_single_desired_good_splits_evenly():
    market = FisherMarket((1.0, 1.0), (Linear((1.0, 0.0)), Linear((1.0, 0.0))))
    eq = solve_market(market)
    assert eq.prices[0] == pytest.approx(2.0)
    assert eq.prices[1] <= 1e-10  # nobody wants it; floored and flagged
    assert eq.floored == (1,)
    assert eq.allocation[0][0] == pytest.approx(0.5, abs=1e-6)
    assert eq.allocation[1][0] == pytest.approx(0.5, abs=1e-6)


def test_reserve_floor_inactive_when_demand_covers_it():
    market = FisherMarket((1.0,), (Linear((1.0,)),), reserves=(0.2,))
    eq = solve_market(market)
    assert eq.prices == pytest.approx((1.0,))
    assert eq.allocation[0] == pytest.approx((1.0,))
    assert eq.unsold == pytest.approx((0.0,))


def test_reserve_floor_binds_and_leaves_supply_unsold():
    market = FisherMarket(
        (1.0, 1.0),
        (cd(0.9, 0.1), cd(0.95, 0.05)),
        reserves=(0.0, 0.5),
    )
    eq = solve_market(market)
    # Budget mass on the second good is 0.15 < 0.5, so the floor holds.
    assert eq.prices == pytest.approx((1.85, 0.5))
    assert eq.unsold[1] == pytest.approx(0.7)
    assert eq.allocation[0][1] == pytest.approx(0.2)
    # The grid maximizer of the reserve objective agrees.
    obj = eg_objective(market.budgets, market.utilities, np.asarray(eq.allocation), market.reserves)
    oracle_obj, _ = eg_grid_oracle(market.budgets, market.utilities, market.reserves)
    assert obj >= oracle_obj - 1e-5


def test_closed_form_beats_grid_oracle_on_random_instances():
    rng = np.random.default_rng(31)
    for _ in range(6):
        n = int(rng.integers(2, 4))
        m = int(rng.integers(2, 4))
        budgets = tuple(float(b) for b in rng.uniform(0.5, 2.0, n))
        utils = []
        for _ in range(n):
            w = rng.uniform(0.2, 1.0, m)
            utils.append(cd(*(w / w.sum())))
        market = FisherMarket(budgets, tuple(utils))
        eq = solve_market(market)
        got = eg_objective(budgets, tuple(utils), np.asarray(eq.allocation))
        want, _ = eg_grid_oracle(budgets, tuple(utils))
        assert got >= want - 1e-5


def test_proportional_response_matches_grid_oracle():
    rng = np.random.default_rng(12)
    for _ in range(4):
        budgets = (1.0, float(rng.uniform(0.5, 2.0)))
        utils = (
            Linear((1.0, float(rng.uniform(0.2, 0.9)))),
            Linear((float(rng.uniform(0.2, 0.9)), 1.0)),
        )
        market = FisherMarket(budgets, utils)
        eq = solve_market(market)
        assert eq.iterations < 10_000
        assert max(abs(z) for z in eq.excess) <= 1e-6
        got = eg_objective(budgets, utils, np.asarray(eq.allocation))
        want, _ = eg_grid_oracle(budgets, utils)
        assert got >= want - 1e-5


def test_ces_price_adjustment_clears_the_market():
    market = FisherMarket(
        (1.0, 2.0),
        (CES((0.6, 0.4), 0.5), CES((0.3, 0.7), 0.5)),
    )
    eq = solve_market(market)
    assert max(abs(z) for z in eq.excess) <= 1e-6
    assert sum(eq.prices) == pytest.approx(3.0, abs=1e-5)
    got = eg_objective(market.budgets, market.utilities, np.asarray(eq.allocation))
    want, _ = eg_grid_oracle(market.budgets, market.utilities)
    assert got >= want - 1e-4


def test_budget_homogeneity_scales_prices_not_bundles():
    base = FisherMarket(
        (1.0, 2.0, 0.5),
        (cd(0.5, 0.5), cd(0.8, 0.2), cd(0.3, 0.7)),
    )
    ref = solve_market(base)
    for alpha in (0.5, 3.0):
        scaled = FisherMarket(
            tuple(alpha * e for e in base.budgets), base.utilities
        )
        eq = solve_market(scaled)
        for p, p0 in zip(eq.prices, ref.prices):
            assert p == pytest.approx(alpha * p0, abs=1e-8)
        for row, row0 in zip(eq.allocation, ref.allocation):
            assert row == pytest.approx(row0, abs=1e-8)


def test_market_validation():
    with pytest.raises(ValueError):
        FisherMarket((), ())
    with pytest.raises(ValueError):
        FisherMarket((1.0, -1.0), (cd(1.0), cd(1.0)))
    with pytest.raises(ValueError):
        FisherMarket((1.0,), (cd(0.5, 0.5),), reserves=(0.1,))
    with pytest.raises(SolverError):
        solve_market(
            FisherMarket((1.0, 1.0), (Linear((1.0, 0.5)), cd(0.5, 0.5)))
        )
    market = FisherMarket((2.0, 6.0), (cd(1.0), cd(1.0)))
    assert market.largeness == pytest.approx(8 / 6)


# -- strategic outcomes ---------------------------------------------------------


def test_truthful_reports_reproduce_equilibrium_utilities():
    market = FisherMarket((2.0, 1.0), (cd(0.5, 0.5), cd(0.2, 0.8)))
    eq = solve_market(market)
    _, utils = strategic_outcome(market, market.utilities)
    assert utils == pytest.approx(eq.utilities)


def test_misreport_payoff_follows_closed_form():
    # Buyer 1 tilts toward the good buyer 2 barely wants; prices come from
    # the reported mass, the bundle is valued truthfully.
    market = FisherMarket((1.0, 1.0), (cd(0.5, 0.5), cd(0.9, 0.1)))
    report = cd(0.3, 0.7)
    eq, utils = strategic_outcome(market, (report, market.utilities[1]))
    assert eq.prices == pytest.approx((1.2, 0.8))
    x0 = (0.3 / 1.2, 0.7 / 0.8)
    assert eq.allocation[0] == pytest.approx(x0)
    assert utils[0] == pytest.approx(utility(market.utilities[0], np.asarray(x0)))


def test_single_buyer_takes_everything_under_any_report():
    market = FisherMarket((3.0,), (cd(0.4, 0.6),))
    _, truthful = strategic_outcome(market, market.utilities)
    for report in perturbed_reports(market.utilities[0]):
        _, utils = strategic_outcome(market, (report,))
        assert utils[0] == pytest.approx(truthful[0])


# -- scaling --------------------------------------------------------------------


def test_rescaled_market_hits_unit_ratio():
    market = FisherMarket((2.0, 1.0), (cd(0.5, 0.5), cd(0.2, 0.8)))
    before = audit_scaling(market)
    assert not before.consistent
    scaled = rescale_to_unit(market)
    after = audit_scaling(scaled)
    assert after.consistent
    assert after.t == pytest.approx(1.0)
    assert solve_market(scaled).prices == pytest.approx(solve_market(market).prices)


# -- report grids ----------------------------------------------------------------


def test_perturbed_reports_collapse_on_one_good():
    assert perturbed_reports(Linear((1.0,))) == (Linear((1.0,)),)


def test_perturbed_reports_cover_both_shifts():
    menu = perturbed_reports(cd(0.5, 0.5), deltas=(0.2,))
    assert len(menu) == 5  # truth + 2 goods x 2 signs
    assert menu[0] == cd(0.5, 0.5)
    for rep in menu:
        assert sum(rep.a) == pytest.approx(1.0)


# -- price of anarchy -------------------------------------------------------------


def test_truthful_only_grid_gives_ratio_one():
    market = FisherMarket((1.0, 1.0), (cd(1.0), cd(1.0)))
    out = market_poa_search(market, deltas=())
    assert out.gm_ratio == pytest.approx(1.0)
    assert out.sum_ratio == pytest.approx(1.0)


def test_identical_buyers_stay_above_the_welfare_floor():
    market = FisherMarket(
        tuple([1.0] * 8), tuple([cd(0.5, 0.5)] * 8)
    )
    out = market_poa_search(market, deltas=(0.2,), rng=np.random.default_rng(3))
    assert out.bound == pytest.approx(math.exp(-0.25))
    assert out.gm_ratio >= out.bound - 1e-9
    assert out.sum_ratio >= out.bound - 1e-9
    assert out.equilibria >= 1


def test_poa_search_rejects_reserve_markets():
    market = FisherMarket((1.0,), (cd(1.0),), reserves=(0.1,))
    with pytest.raises(ValueError):
        market_poa_search(market)


# -- price shift lemmas -----------------------------------------------------------


def test_price_shift_checks_on_random_markets():
    rng = np.random.default_rng(23)
    for _ in range(30):
        n = int(rng.integers(2, 5))
        m = int(rng.integers(1, 4))
        budgets = tuple(float(b) for b in rng.uniform(0.5, 2.0, n))
        if rng.random() < 0.5:
            utils = []
            for _ in range(n):
                w = rng.uniform(0.1, 1.0, m)
                utils.append(cd(*(w / w.sum())))
            utils = tuple(utils)
        else:
            utils = tuple(
                Linear(tuple(float(x) for x in rng.uniform(0.1, 1.0, m)))
                for _ in range(n)
            )
        market = FisherMarket(budgets, utils)
        i = int(rng.integers(0, n))
        menu = perturbed_reports(utils[i])
        report = menu[int(rng.integers(0, len(menu)))]
        reports = tuple(report if h == i else u for h, u in enumerate(utils))
        verdict = verify_price_shift(market, reports, i)
        assert verdict.ok, verdict.detail


def test_price_shift_single_buyer_edge():
    market = FisherMarket((1.5,), (cd(0.5, 0.5),))
    assert verify_price_shift(market, market.utilities, 0).ok


def test_utility_floor_truthful_has_slack():
    market = FisherMarket((1.0, 2.0), (cd(0.5, 0.5), cd(0.3, 0.7)))
    verdict = verify_utility_floor(market, market.utilities)
    assert verdict.ok
    assert "slack" in verdict.detail


def test_utility_floor_on_random_misreports():
    rng = np.random.default_rng(29)
    for _ in range(20):
        n = int(rng.integers(2, 5))
        budgets = tuple(float(b) for b in rng.uniform(0.5, 2.0, n))
        utils = []
        for _ in range(n):
            w = rng.uniform(0.1, 1.0, 2)
            utils.append(cd(*(w / w.sum())))
        market = FisherMarket(budgets, tuple(utils))
        reports = []
        for u in utils:
            menu = perturbed_reports(u)
            reports.append(menu[int(rng.integers(0, len(menu)))])
        verdict = verify_utility_floor(market, tuple(reports))
        assert verdict.ok, verdict.detail


# -- compressed prices -------------------------------------------------------------


def test_compression_waterfills_the_example():
    prices, t = compress_prices((0.2, 1.8), (1.0, 1.0), 0.5, 2.0)
    assert prices == pytest.approx((0.5, 1.5), abs=1e-9)
    assert t == pytest.approx(1.5, abs=1e-9)


def test_compression_fixes_equilibrium_prices():
    prices, t = compress_prices((1.0, 1.0), (1.0, 1.0), 0.25, 2.0)
    assert prices == pytest.approx((1.0, 1.0))
    assert t == pytest.approx(1.0)


def test_compression_single_good_is_forced():
    prices, _ = compress_prices((3.0,), (3.0,), 0.5, 3.0)
    assert prices == pytest.approx((3.0,))


def test_compression_random_invariants():
    rng = np.random.default_rng(41)
    for _ in range(50):
        m = int(rng.integers(1, 6))
        ps = rng.uniform(0.2, 2.0, m)
        total = float(ps.sum())
        q = rng.uniform(0.05, 1.0, m)
        q *= total / q.sum()
        low = float(rng.uniform(0.05, 0.8))
        prices, t = compress_prices(tuple(q), tuple(ps), low, total)
        assert sum(prices) == pytest.approx(total, abs=1e-10 * max(1.0, total))
        assert t >= 1.0
        for p, p_star in zip(prices, ps):
            assert low * p_star - 1e-12 <= p <= t * p_star + 1e-12


def test_compression_rejects_totals_it_cannot_reach():
    with pytest.raises(SolverError):
        compress_prices((0.5, 1.5), (5.0, 5.0), 0.9, 2.0)
    with pytest.raises(ValueError):
        compress_prices((0.5, 1.0), (1.0, 1.0), 0.5, 2.0)
    with pytest.raises(SolverError):
        compress_prices((2.0, 0.0), (0.0, 2.0), 0.5, 2.0)


# -- reserve price of anarchy --------------------------------------------------------


def test_reserve_poa_single_good_is_trivially_safe():
    market = FisherMarket(
        tuple([1.0] * 10), tuple([Linear((1.0,))] * 10), reserves=(2.5,)
    )
    out = reserve_poa_search(market)
    assert out.bound == pytest.approx(math.exp(-0.2))
    assert out.stated_bound == pytest.approx(math.exp(-0.04))
    assert out.sum_ratio == pytest.approx(1.0)  # one-good grids collapse to truth


def test_reserve_poa_two_goods_above_floor():
    market = FisherMarket(
        tuple([1.0] * 4), tuple([cd(0.5, 0.5)] * 4), reserves=(0.5, 0.5)
    )
    out = reserve_poa_search(market, deltas=(0.2,), rng=np.random.default_rng(5))
    assert out.bound == pytest.approx(math.exp(-1.0))
    assert out.sum_ratio >= out.bound - 1e-9


def test_reserve_poa_rejects_oversized_reserves():
    market = FisherMarket(
        tuple([1.0] * 10), tuple([Linear((1.0,))] * 10), reserves=(3.0,)
    )
    with pytest.raises(ValueError):
        reserve_poa_search(market)
    with pytest.raises(ValueError):
        reserve_poa_search(FisherMarket((1.0,), (Linear((1.0,)),)))


# -- learning --------------------------------------------------------------------


def test_market_learning_holds_the_regret_adjusted_floor():
    market = FisherMarket(
        (1.0, 1.0),
        (Linear((0.7, 0.3)), Linear((0.4, 0.6))),
        reserves=(0.2, 0.2),
    )
    res = run_market_learning(market, rounds=300, deltas=(0.2,), seed=4)
    assert res.holds
    assert res.average_welfare >= res.rhs
    assert res.lambda_cap >= 4.0  # reserves at or below a quarter of prices
    assert all(r >= -1e-9 for r in res.regrets)


def test_market_learning_is_deterministic():
    market = FisherMarket(
        (1.0, 2.0),
        (cd(0.5, 0.5), cd(0.3, 0.7)),
        reserves=(0.2, 0.2),
    )
    a = run_market_learning(market, rounds=150, deltas=(0.1,), seed=9)
    b = run_market_learning(market, rounds=150, deltas=(0.1,), seed=9)
    assert a == b


def test_market_learning_rejects_bad_reserves():
    plain = FisherMarket((1.0, 1.0), (cd(0.5, 0.5), cd(0.5, 0.5)))
    with pytest.raises(ValueError):
        run_market_learning(plain, rounds=10)
    oversized = FisherMarket(
        plain.budgets, plain.utilities, reserves=(0.9, 0.9)
    )
    with pytest.raises(ValueError):
        run_market_learning(oversized, rounds=10)
