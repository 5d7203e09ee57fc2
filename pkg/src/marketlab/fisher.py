"""Fisher market equilibria from budget-weighted log-utility maximization,
the strategic reporting game on top of them, welfare-ratio searches with and
without reserve prices, and the no-regret reporting loop.

Every good has unit supply.  Buyers spend fixed budgets; prices clear the
market where they exceed the reserve floor (zero without reserves), and the
seller keeps the remainder at reserve-priced goods.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import InternalCheckError, SolverError
from .valuations import CES, CobbDouglas, FisherUtility, Linear, fisher_demand, utility

__all__ = [
    "FisherMarket",
    "MarketEquilibrium",
    "solve_market",
    "strategic_outcome",
    "ScalingAudit",
    "audit_scaling",
    "rescale_to_unit",
    "perturbed_reports",
    "PoAOutcome",
    "market_poa_search",
    "reserve_poa_search",
    "PriceShiftVerdict",
    "verify_price_shift",
    "verify_utility_floor",
    "compress_prices",
    "FisherLearningResult",
    "run_market_learning",
]

PRICE_FLOOR = 1e-12
CLEAR_TOL = 1e-6
GAP_TOL = 1e-8
GAP_ACCEPT = 1e-6  # residual gap tolerable when the round budget runs out
GAIN_TOL = 1e-9


@dataclass(frozen=True)
class FisherMarket:
    """Budgets, true utilities, and an optional reserve-price floor."""

    budgets: tuple[float, ...]
    utilities: tuple[FisherUtility, ...]
    reserves: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        budgets = tuple(float(e) for e in self.budgets)
        object.__setattr__(self, "budgets", budgets)
        object.__setattr__(self, "utilities", tuple(self.utilities))
        if not budgets:
            raise ValueError("need at least one buyer")
        if any(e <= 0 for e in budgets):
            raise ValueError("budgets must be positive")
        if len(budgets) != len(self.utilities):
            raise ValueError("one utility per buyer")
        m = self.utilities[0].m
        if any(u.m != m for u in self.utilities):
            raise ValueError("buyers disagree on the number of goods")
        if self.reserves is not None:
            reserves = tuple(float(r) for r in self.reserves)
            object.__setattr__(self, "reserves", reserves)
            if len(reserves) != m:
                raise ValueError("one reserve per good")
            if any(r < 0 for r in reserves):
                raise ValueError("reserves must be nonnegative")

    @property
    def m(self) -> int:
        return self.utilities[0].m

    @property
    def buyers(self) -> int:
        return len(self.budgets)

    @property
    def largeness(self) -> float:
        return sum(self.budgets) / max(self.budgets)


@dataclass(frozen=True)
class MarketEquilibrium:
    prices: tuple[float, ...]
    allocation: tuple[tuple[float, ...], ...]  # buyers x goods
    unsold: tuple[float, ...]
    excess: tuple[float, ...]
    utilities: tuple[float, ...]  # of the report used to solve
    floored: tuple[int, ...]  # goods priced at the degeneracy floor
    iterations: int

    def price_array(self) -> np.ndarray:
        return np.asarray(self.prices)

    def alloc_array(self) -> np.ndarray:
        return np.asarray(self.allocation)


def _family_name(u: FisherUtility) -> str:
    if isinstance(u, CobbDouglas):
        return "cobb-douglas"
    if isinstance(u, Linear):
        return "linear"
    return "ces"


def _check_equilibrium(budgets, reserves, prices, alloc, floored) -> None:
    """Solver postconditions; a violation is a solver bug, not bad input."""
    e = np.asarray(budgets)
    p = np.asarray(prices)
    x = np.asarray(alloc)
    r = np.zeros_like(p) if reserves is None else np.asarray(reserves)
    sold = x.sum(axis=0)
    if np.any(sold > 1.0 + CLEAR_TOL):
        raise InternalCheckError(f"over-allocation: {sold}")
    live = (p > r + CLEAR_TOL) & (p > PRICE_FLOOR * 10)
    live &= np.asarray([j not in floored for j in range(p.size)])
    if np.any(np.abs(sold[live] - 1.0) > CLEAR_TOL):
        raise InternalCheckError(f"market fails to clear: z={sold - 1.0}")
    spend = x @ p
    if np.any(np.abs(spend - e) > CLEAR_TOL * np.maximum(1.0, e)):
        raise InternalCheckError(f"budgets not exhausted: {spend} vs {e}")
    if reserves is None and not floored:
        if abs(p.sum() - e.sum()) > CLEAR_TOL * max(1.0, e.sum()):
            raise InternalCheckError(f"price sum {p.sum()} != budget sum {e.sum()}")


def _finish(budgets, reserves, prices, alloc, reports, floored, iters) -> MarketEquilibrium:
    p = np.maximum(np.asarray(prices, dtype=float), PRICE_FLOOR)
    x = np.maximum(np.asarray(alloc, dtype=float), 0.0)
    # Clip per-good rounding overshoot so allocations stay feasible.
    over = x.sum(axis=0)
    scale = np.where(over > 1.0, 1.0 / np.maximum(over, 1e-300), 1.0)
    x = x * scale
    sold = x.sum(axis=0)
    _check_equilibrium(budgets, reserves, p, x, floored)
    return MarketEquilibrium(
        prices=tuple(float(v) for v in p),
        allocation=tuple(tuple(float(v) for v in row) for row in x),
        unsold=tuple(float(max(0.0, 1.0 - s)) for s in sold),
        excess=tuple(float(s - 1.0) for s in sold),
        utilities=tuple(float(utility(u, row)) for u, row in zip(reports, x)),
        floored=tuple(floored),
        iterations=iters,
    )


def _solve_cobb_douglas(budgets, reports, reserves) -> MarketEquilibrium:
    e = np.asarray(budgets)
    a = np.asarray([u.a for u in reports])
    r = np.zeros(a.shape[1]) if reserves is None else np.asarray(reserves)
    mass = e @ a
    p = np.maximum(mass, r)
    floored = [int(j) for j in np.flatnonzero(p <= PRICE_FLOOR)]
    p = np.maximum(p, PRICE_FLOOR)
    x = (e[:, None] * a) / p[None, :]
    return _finish(budgets, reserves, p, x, reports, floored, 0)


def _linear_dual(e, weights, scales, p) -> float:
    # sup over allocations of the budget-weighted log objective at prices p
    best = np.max(np.where(weights > 0, weights / p[None, :], 0.0), axis=1)
    return float(p.sum() + np.sum(e * (np.log(e * scales * best) - 1.0)))


def _solve_linear(budgets, reports, reserves, cap=10_000) -> MarketEquilibrium:
    e = np.asarray(budgets)
    weights = np.asarray([u.a for u in reports])
    scales = np.asarray([u.scale for u in reports])
    m = weights.shape[1]
    r = np.zeros(m) if reserves is None else np.asarray(reserves)
    dead = weights.sum(axis=0) <= 0.0  # demanded by nobody
    row_mass = weights.sum(axis=1, keepdims=True)
    spend = e[:, None] * weights / row_mass
    gap = math.inf
    for it in range(cap):
        p = np.maximum(spend.sum(axis=0), r)
        p_safe = np.maximum(p, PRICE_FLOOR)
        x = spend / p_safe[None, :]
        vals = (weights * x).sum(axis=1) * scales
        primal = float(e @ np.log(np.maximum(vals, 1e-300)))
        if reserves is not None:
            primal += float(np.maximum(1.0 - x.sum(axis=0), 0.0) @ r)
        gap = _linear_dual(e, weights, scales, p_safe) - primal
        # Each update spends every budget in full, so the market clears
        # identically at every round; a run that exhausts the budget of
        # rounds with a small residual gap is still usable.
        if gap <= GAP_TOL or (it + 1 == cap and gap <= GAP_ACCEPT):
            floored = [int(j) for j in np.flatnonzero(dead & (p <= np.maximum(r, PRICE_FLOOR)))]
            return _finish(budgets, reserves, p_safe, x, reports, floored, it + 1)
        contrib = weights * x
        spend = e[:, None] * contrib / np.maximum(
            contrib.sum(axis=1, keepdims=True), 1e-300
        )
    raise SolverError(
        f"proportional response failed to converge in {cap} rounds: "
        f"duality gap {gap:.3e}"
    )


def _solve_tatonnement(budgets, reports, reserves, cap=200_000) -> MarketEquilibrium:
    e = np.asarray(budgets)
    m = reports[0].m
    r = np.zeros(m) if reserves is None else np.asarray(reserves)
    mass = np.asarray([u.a for u in reports]).sum(axis=0)
    dead = mass <= 0.0
    p = np.maximum(np.full(m, e.sum() / m), np.maximum(r, PRICE_FLOOR))
    step = 0.1
    last = math.inf
    for it in range(cap):
        x = np.stack([fisher_demand(u, p, b) for u, b in zip(reports, e)])
        z = x.sum(axis=0) - 1.0
        # At reserve-floored goods only excess demand counts against us.
        at_floor = p <= np.maximum(r, PRICE_FLOOR) * (1.0 + 1e-12)
        resid = np.where(at_floor, np.maximum(z, 0.0), np.abs(z))
        resid[dead] = 0.0
        worst = float(resid.max()) if m else 0.0
        if worst <= CLEAR_TOL:
            floored = [int(j) for j in np.flatnonzero(dead)]
            p = np.where(dead, np.maximum(r, PRICE_FLOOR), p)
            return _finish(budgets, reserves, p, x, reports, floored, it + 1)
        p = np.maximum(p * (1.0 + step * np.clip(z, -0.9, 0.9)), np.maximum(r, PRICE_FLOOR))
        if worst < last:
            step = min(step * 1.05, 0.5)
        else:
            step = max(step * 0.5, 1e-4)
        last = worst
    raise SolverError(
        f"price adjustment failed to converge in {cap} rounds: max residual {last:.3e}"
    )


def solve_market(market: FisherMarket, reports: Optional[Sequence[FisherUtility]] = None) -> MarketEquilibrium:
    """Equilibrium prices and allocation for the reported utilities.

    Cobb-Douglas markets solve in closed form, linear markets by proportional
    response to a tight duality gap, and CES (or CES/Cobb-Douglas mixtures) by
    damped price adjustment on excess demand.
    """
    reports = market.utilities if reports is None else tuple(reports)
    if len(reports) != market.buyers:
        raise ValueError("one report per buyer")
    if any(u.m != market.m for u in reports):
        raise ValueError("report good-count mismatch")
    kinds = {_family_name(u) for u in reports}
    if kinds == {"cobb-douglas"}:
        return _solve_cobb_douglas(market.budgets, reports, market.reserves)
    if kinds == {"linear"}:
        return _solve_linear(market.budgets, reports, market.reserves)
    if "linear" in kinds:
        raise SolverError("linear reports cannot be mixed with other families")
    return _solve_tatonnement(market.budgets, reports, market.reserves)


def strategic_outcome(
    market: FisherMarket, reports: Sequence[FisherUtility]
) -> tuple[MarketEquilibrium, tuple[float, ...]]:
    """Clear the market on the reports; value each bundle truthfully."""
    eq = solve_market(market, reports)
    true_utils = tuple(
        float(utility(v, np.asarray(row)))
        for v, row in zip(market.utilities, eq.allocation)
    )
    return eq, true_utils


# ---------------------------------------------------------------------------
# Consistent scaling.


@dataclass(frozen=True)
class ScalingAudit:
    t: float
    ratios: tuple[float, ...]
    consistent: bool


def audit_scaling(market: FisherMarket) -> ScalingAudit:
    """Truthful utility per unit budget; consistent when all buyers match."""
    eq = solve_market(market)
    ratios = tuple(u / e for u, e in zip(eq.utilities, market.budgets))
    t = sum(u for u in eq.utilities) / sum(market.budgets)
    consistent = all(abs(x - t) <= 1e-6 * max(1.0, abs(t)) for x in ratios)
    return ScalingAudit(t, ratios, consistent)


def rescale_to_unit(market: FisherMarket) -> FisherMarket:
    """Rescale each utility so its truthful equilibrium utility equals its
    budget.  Demands, prices, and allocations are unchanged."""
    eq = solve_market(market)
    scaled = []
    for u, e, got in zip(market.utilities, market.budgets, eq.utilities):
        if got <= 0:
            raise SolverError("cannot rescale a buyer with zero truthful utility")
        scaled.append(replace(u, scale=u.scale * e / got))
    return FisherMarket(market.budgets, tuple(scaled), market.reserves)


# ---------------------------------------------------------------------------
# Report grids and equilibrium search.


def _reweighted(u: FisherUtility, weights) -> FisherUtility:
    total = sum(weights)
    if total <= 0:
        raise ValueError("degenerate weights")
    if isinstance(u, CobbDouglas):
        return CobbDouglas(tuple(w / total for w in weights), u.scale)
    norm = tuple(w / total for w in weights)
    if isinstance(u, Linear):
        return Linear(norm, u.scale)
    return CES(norm, u.rho, u.scale)


def perturbed_reports(
    u: FisherUtility, deltas: Sequence[float] = (0.05, 0.10, 0.20)
) -> tuple[FisherUtility, ...]:
    """Truth plus single-good weight shifts of +-delta, renormalized.

    Duplicates collapse, so a one-good market has only the truthful report.
    """
    base = _reweighted(u, u.a)
    menu = [base]
    for d in deltas:
        for j in range(u.m):
            if u.a[j] <= 0:
                continue
            for sign in (1.0, -1.0):
                w = list(u.a)
                w[j] *= 1.0 + sign * d
                if w[j] <= 0:
                    continue
                cand = _reweighted(u, w)
                if cand not in menu:
                    menu.append(cand)
    return tuple(menu)


class _ReportGame:
    """True-utility payoff table over finite report menus, cached per profile."""

    def __init__(self, market: FisherMarket, menus: Sequence[Sequence[FisherUtility]]):
        self.market = market
        self.menus = [tuple(m) for m in menus]
        if len(self.menus) != market.buyers:
            raise ValueError("one menu per buyer")
        for v, menu in zip(market.utilities, self.menus):
            if _reweighted(v, v.a) not in menu:
                raise ValueError("every menu must contain the truthful report")
        self._cache: dict[tuple[int, ...], tuple[float, ...]] = {}

    def truthful_profile(self) -> tuple[int, ...]:
        return tuple(
            menu.index(_reweighted(v, v.a))
            for v, menu in zip(self.market.utilities, self.menus)
        )

    def utils(self, profile) -> tuple[float, ...]:
        key = tuple(profile)
        hit = self._cache.get(key)
        if hit is None:
            reports = tuple(self.menus[i][s] for i, s in enumerate(key))
            _, hit = strategic_outcome(self.market, reports)
            self._cache[key] = hit
        return hit

    def best_response(self, profile, i) -> int:
        trial = list(profile)
        best_s, best_u = trial[i], -math.inf
        for s in range(len(self.menus[i])):
            trial[i] = s
            got = self.utils(trial)[i]
            if got > best_u + GAIN_TOL:
                best_s, best_u = s, got
        return best_s

    def is_nash(self, profile) -> tuple[bool, float]:
        base = self.utils(profile)
        worst = 0.0
        trial = list(profile)
        for i in range(self.market.buyers):
            for s in range(len(self.menus[i])):
                if s == profile[i]:
                    continue
                trial[i] = s
                worst = max(worst, self.utils(trial)[i] - base[i])
                if worst > GAIN_TOL:
                    return False, worst
            trial[i] = profile[i]
        return True, worst

    def find_equilibria(self, rng: np.random.Generator, restarts=8, max_sweeps=100):
        seeds = [self.truthful_profile()] + [
            tuple(int(rng.integers(0, len(m))) for m in self.menus)
            for _ in range(restarts)
        ]
        found = {}
        for start in seeds:
            profile = list(start)
            for _ in range(max_sweeps):
                changed = False
                for i in range(self.market.buyers):
                    s = self.best_response(profile, i)
                    if s != profile[i]:
                        profile[i] = s
                        changed = True
                if not changed:
                    break
            else:
                continue
            key = tuple(profile)
            if key not in found:
                ok, _ = self.is_nash(key)
                if ok:
                    found[key] = self.utils(key)
        return found


@dataclass(frozen=True)
class PoAOutcome:
    gm_ratio: float
    sum_ratio: float
    bound: float
    stated_bound: Optional[float]
    worst_profile: tuple[int, ...]
    equilibria: int


def _ratio_pair(market, truthful_utils, ne_utils) -> tuple[float, float]:
    e = np.asarray(market.budgets)
    num = np.asarray(ne_utils)
    den = np.asarray(truthful_utils)
    if np.any(num <= 0) or np.any(den <= 0):
        raise SolverError("zero utility in a ratio; degenerate instance")
    gm = float(np.exp((e * np.log(num / den)).sum() / e.sum()))
    return gm, float(num.sum() / den.sum())


def market_poa_search(
    market: FisherMarket,
    deltas: Sequence[float] = (0.05, 0.10, 0.20),
    rng: Optional[np.random.Generator] = None,
    restarts: int = 8,
) -> PoAOutcome:
    """Worst certified reporting equilibrium versus the e^(-m/L) floor.

    Both the budget-weighted geometric-mean ratio and the plain sum ratio
    must stay above the floor at any certified equilibrium; a violation
    falsifies the solver (the sum form additionally presumes consistent
    scaling, which is audited).
    """
    if market.reserves is not None:
        raise ValueError("reserve markets use reserve_poa_search")
    rng = rng or np.random.default_rng(0)
    game = _ReportGame(market, [perturbed_reports(v, deltas) for v in market.utilities])
    truthful = game.utils(game.truthful_profile())
    scaling_ok = audit_scaling(market).consistent
    bound = math.exp(-market.m / market.largeness)
    found = game.find_equilibria(rng, restarts=restarts)
    worst_gm, worst_sum, worst_key = math.inf, math.inf, game.truthful_profile()
    for key, utils in found.items():
        gm, sm = _ratio_pair(market, truthful, utils)
        if gm < worst_gm:
            worst_gm, worst_key = gm, key
        worst_sum = min(worst_sum, sm)
        if gm < bound - 1e-9:
            raise InternalCheckError(
                f"certified equilibrium ratio {gm} beats the floor {bound}"
            )
        if scaling_ok and sm < bound - 1e-9:
            raise InternalCheckError(
                f"certified equilibrium sum ratio {sm} beats the floor {bound}"
            )
    return PoAOutcome(worst_gm, worst_sum, bound, None, worst_key, len(found))


def reserve_poa_search(
    market: FisherMarket,
    deltas: Sequence[float] = (0.05, 0.10, 0.20),
    rng: Optional[np.random.Generator] = None,
    restarts: int = 8,
) -> PoAOutcome:
    """Worst certified equilibrium of the reserve market versus e^(-2m/L).

    The floor asserted is the one the underlying additive bound supports;
    the sharper constant in the source statement is reported alongside for
    reference, never enforced.
    """
    if market.reserves is None:
        raise ValueError("market has no reserves")
    plain = FisherMarket(market.budgets, market.utilities)
    p_star = np.asarray(solve_market(plain).prices)
    r = np.asarray(market.reserves)
    if np.any(r > p_star / 4.0 + 1e-12):
        raise ValueError(
            f"reserves exceed a quarter of truthful prices: r={market.reserves}, "
            f"p*={tuple(p_star)}"
        )
    rng = rng or np.random.default_rng(0)
    game = _ReportGame(market, [perturbed_reports(v, deltas) for v in market.utilities])
    truthful = game.utils(game.truthful_profile())
    L = market.largeness
    bound = math.exp(-2.0 * market.m / L)
    stated = math.exp(-2.0 * market.m / (5.0 * L))
    found = game.find_equilibria(rng, restarts=restarts)
    worst_gm, worst_sum, worst_key = math.inf, math.inf, game.truthful_profile()
    for key, utils in found.items():
        gm, sm = _ratio_pair(market, truthful, utils)
        worst_gm = min(worst_gm, gm)
        if sm < worst_sum:
            worst_sum, worst_key = sm, key
        if sm < bound - 1e-9:
            raise InternalCheckError(
                f"certified reserve equilibrium sum ratio {sm} beats {bound}"
            )
    return PoAOutcome(worst_gm, worst_sum, bound, stated, worst_key, len(found))


# ---------------------------------------------------------------------------
# Price perturbation and utility-floor inequalities.


@dataclass(frozen=True)
class PriceShiftVerdict:
    ok: bool
    detail: str = ""


def verify_price_shift(
    market: FisherMarket,
    reports: Sequence[FisherUtility],
    i: int,
    tol: float = 1e-8,
) -> PriceShiftVerdict:
    """Three componentwise price comparisons around one buyer:

    dropping the buyer never raises prices; adding them raises each price by
    at most their budget; and switching them to truth raises each price by at
    most the largest budget.
    """
    reports = tuple(reports)
    p_hat = np.asarray(solve_market(market, reports).prices)
    if market.buyers > 1:
        rest = FisherMarket(
            tuple(e for h, e in enumerate(market.budgets) if h != i),
            tuple(u for h, u in enumerate(market.utilities) if h != i),
            market.reserves,
        )
        p_wo = np.asarray(
            solve_market(rest, tuple(u for h, u in enumerate(reports) if h != i)).prices
        )
    else:
        p_wo = np.zeros(market.m)
    hybrid = tuple(
        market.utilities[h] if h == i else u for h, u in enumerate(reports)
    )
    p_tru = np.asarray(solve_market(market, hybrid).prices)
    e_i = market.budgets[i]
    e_max = max(market.budgets)
    checks = [
        ("drop lowers prices", p_wo, p_hat + tol),
        ("budget caps the lift", p_hat, p_wo + e_i + tol),
        ("truthful switch is bounded", p_tru, p_hat + e_max + tol),
    ]
    for name, lhs, rhs in checks:
        if np.any(lhs > rhs):
            j = int(np.argmax(lhs - rhs))
            return PriceShiftVerdict(False, f"{name}: good {j}, {lhs[j]} > {rhs[j]}")
    return PriceShiftVerdict(True)


def verify_utility_floor(
    market: FisherMarket,
    reports: Sequence[FisherUtility],
    tol: float = 1e-9,
) -> PriceShiftVerdict:
    """Budget-weighted log utilities of unilateral truthful switches sit at
    most m * max budget below the truthful profile's."""
    reports = tuple(reports)
    e = market.budgets
    lhs = 0.0
    for i in range(market.buyers):
        hybrid = tuple(market.utilities[h] if h == i else u for h, u in enumerate(reports))
        _, utils = strategic_outcome(market, hybrid)
        if utils[i] <= 0:
            return PriceShiftVerdict(False, f"buyer {i} starves under the hybrid")
        lhs += e[i] * math.log(utils[i])
    truthful = solve_market(market)
    rhs = sum(
        b * math.log(u) for b, u in zip(e, truthful.utilities)
    ) - market.m * max(e)
    if lhs < rhs - tol:
        return PriceShiftVerdict(False, f"floor broken: {lhs} < {rhs}")
    return PriceShiftVerdict(True, f"slack {lhs - rhs:.6g}")


# ---------------------------------------------------------------------------
# Compressed prices.


def compress_prices(
    q, p_star, low: float, total: float, tol: float = 1e-10
) -> tuple[tuple[float, ...], float]:
    """Squeeze the price ratios q/p* into [low, t], preserving the total.

    Ratios below ``low`` are lifted to low * p*; a threshold t > 1, found by
    bisection, caps the rest so the sum stays at ``total``.  Conventions for
    zero prices: 0/0 counts as ratio 1, positive/0 as infinite.
    """
    q = np.asarray(q, dtype=float)
    ps = np.asarray(p_star, dtype=float)
    if not 0.0 < low <= 1.0:
        raise ValueError("compression level must lie in (0, 1]")
    if abs(q.sum() - total) > 1e-9 * max(1.0, total):
        raise ValueError(f"prices sum to {q.sum()}, expected {total}")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(ps > 0, q / np.where(ps > 0, ps, 1.0), np.where(q > 0, np.inf, 1.0))

    if np.any(np.isinf(ratio)):
        raise SolverError("positive price on a worthless good cannot be compressed")

    def compressed_sum(t: float) -> float:
        capped = np.minimum(np.maximum(ratio, low), t)
        return float(np.where(ps > 0, capped * ps, q).sum())

    hi = float(max(2.0, np.max(ratio, initial=2.0) + 1.0))
    if compressed_sum(hi) < total - tol:
        raise SolverError(
            f"every ratio at or below the floor {low}; no threshold restores the total"
        )
    lo_t = 1.0
    if compressed_sum(lo_t) >= total - tol:
        t = lo_t
    else:
        for _ in range(200):
            mid = 0.5 * (lo_t + hi)
            if compressed_sum(mid) < total:
                lo_t = mid
            else:
                hi = mid
            if hi - lo_t <= 1e-15 * hi:
                break
        t = hi
    capped = np.minimum(np.maximum(ratio, low), t)
    out = np.where(ps > 0, capped * ps, q)
    if abs(out.sum() - total) > max(tol, 1e-10) * max(1.0, total):
        raise SolverError(f"compression missed the total: {out.sum()} vs {total}")
    return tuple(float(v) for v in out), float(t)


# ---------------------------------------------------------------------------
# No-regret reporting dynamics.


@dataclass(frozen=True)
class FisherLearningResult:
    rounds: int
    average_welfare: float
    truthful_total: float
    bound_factor: float
    rhs: float
    lambda_cap: float
    regrets: tuple[float, ...]
    phi_measured: tuple[float, ...]
    holds: bool


def run_market_learning(
    market: FisherMarket,
    rounds: int,
    deltas: Sequence[float] = (0.05, 0.10, 0.20),
    seed: int = 0,
) -> FisherLearningResult:
    """Multiplicative-weights reporting in the reserve market.

    Requires strictly positive reserves at or below a quarter of the truthful
    prices.  Realized average welfare must clear the reserve welfare floor
    minus the measured regret deficit; that inequality is arithmetic once the
    per-round floor holds, so a violation raises.
    """
    if market.reserves is None or any(r <= 0 for r in market.reserves):
        raise ValueError("learning floor needs strictly positive reserves")
    plain = FisherMarket(market.budgets, market.utilities)
    p_star = np.asarray(solve_market(plain).prices)
    r = np.asarray(market.reserves)
    if np.any(r > p_star / 4.0 + 1e-12):
        raise ValueError("reserves exceed a quarter of truthful prices")
    lam = float(np.max(p_star / r))

    game = _ReportGame(market, [perturbed_reports(v, deltas) for v in market.utilities])
    sizes = [len(m) for m in game.menus]
    n = market.buyers
    truthful_profile = game.truthful_profile()
    truthful_utils = game.utils(truthful_profile)
    if any(u <= 0 for u in truthful_utils):
        raise SolverError("degenerate truthful utilities")
    chi = [lam * u for u in truthful_utils]

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    T = rounds
    etas = [math.sqrt(8.0 * math.log(k) / T) if k > 1 else 0.0 for k in sizes]
    scores = [np.zeros(k) for k in sizes]
    cum_counter = [np.zeros(k) for k in sizes]
    cum_realized = np.zeros(n)
    welfare_sum = 0.0

    for _ in range(T):
        actions = []
        for i in range(n):
            z = scores[i] - scores[i].max()
            w = np.exp(etas[i] * z)
            sigma = w / w.sum()
            actions.append(int(rng.choice(sizes[i], p=sigma)))
        actions = tuple(actions)
        round_utils = np.zeros(n)
        for i in range(n):
            row = np.zeros(sizes[i])
            for s in range(sizes[i]):
                trial = tuple(s if h == i else a for h, a in enumerate(actions))
                row[s] = game.utils(trial)[i]
            if np.any(row > chi[i] + 1e-6 * max(1.0, chi[i])):
                raise InternalCheckError(
                    f"buyer {i} payoff exceeds the reserve cap {chi[i]}: {row.max()}"
                )
            scores[i] += row / chi[i]
            cum_counter[i] += row
            round_utils[i] = row[actions[i]]
        cum_realized += round_utils
        welfare_sum += float(round_utils.sum())

    regrets = tuple(
        float(cum_counter[i].max() - cum_realized[i]) for i in range(n)
    )
    phi = tuple(reg / c for reg, c in zip(regrets, chi))
    truthful_total = float(sum(truthful_utils))
    bound_factor = math.exp(-2.0 * market.m / market.largeness) - max(phi) / T * lam
    rhs = bound_factor * truthful_total
    avg = welfare_sum / T
    holds = avg >= rhs - 1e-9 * max(1.0, abs(rhs))
    if not holds:
        raise InternalCheckError(
            f"average welfare {avg} fell below the regret-adjusted floor {rhs}"
        )
    return FisherLearningResult(
        rounds=T,
        average_welfare=avg,
        truthful_total=truthful_total,
        bound_factor=bound_factor,
        rhs=rhs,
        lambda_cap=lam,
        regrets=regrets,
        phi_measured=phi,
        holds=holds,
    )
