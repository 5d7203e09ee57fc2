"""Strategy grids, equilibrium search, learning dynamics, and welfare ratios
for the auction game.

Players submit scaled copies of their true valuations.  The tools here
evaluate expected outcomes over the copy-count distribution, find and
certify equilibria on the finite strategy grid, run no-regret dynamics,
and check the price-comparison and utility-floor inequalities that drive
the welfare guarantees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Optional, Sequence

import numpy as np
from scipy import stats as _stats

from .errors import InternalCheckError
from .sensitivity import deficit_ball_bound, instability_mass, is_unstable_within
from .supply import MultiplicityModel, iter_support, sample, support_size
from .valuations import (
    UnitDemand,
    best_utility,
    minimal_equivalent_bundle,
    max_item_value,
    scale_bid,
    value,
)
from .walrasian import WelfareOracle, run_mechanism

__all__ = [
    "ScalingGrid",
    "Certification",
    "EquilibriumReport",
    "GameContext",
    "best_response_dynamics",
    "exhaustive_equilibria",
    "worst_equilibrium",
    "ratio_bound_sqrt",
    "ratio_bound_log",
    "LemmaVerdict",
    "check_price_floor",
    "check_price_bracket",
    "check_smooth_bound",
    "LearningConfig",
    "LearningResult",
    "run_learning",
]

GAIN_TOL = 1e-9
Z99 = float(_stats.norm.ppf(0.995))


@dataclass(frozen=True)
class ScalingGrid:
    """Finite bid menu: every (scale, offset) pair applied weight-wise to the
    player's true valuation.  Truthful play (1, 0) is always a member."""

    scales: tuple[float, ...]
    offsets: tuple[float, ...] = (0.0,)

    def __post_init__(self):
        scales = tuple(float(g) for g in self.scales)
        offsets = tuple(float(d) for d in self.offsets)
        object.__setattr__(self, "scales", scales)
        object.__setattr__(self, "offsets", offsets)
        if any(g < 0 for g in scales) or any(d < 0 for d in offsets):
            raise ValueError("scales and offsets must be nonnegative")
        if 1.0 not in scales or 0.0 not in offsets:
            raise ValueError("the truthful strategy (scale 1, offset 0) is required")
        if len(set(scales)) != len(scales) or len(set(offsets)) != len(offsets):
            raise ValueError("duplicate grid entries")

    @property
    def strategies(self) -> tuple[tuple[float, float], ...]:
        return tuple((g, d) for g in self.scales for d in self.offsets)


@dataclass(frozen=True)
class Certification:
    kind: str  # "exact-nash" | "eps-nash" | "not-equilibrium"
    max_gain: float
    witness: Optional[tuple[int, int]]  # (player, strategy index)
    ci99: Optional[tuple[float, float]] = None


@dataclass(frozen=True)
class EquilibriumReport:
    profile: tuple[int, ...]
    strategies: tuple[tuple[float, float], ...]
    sw_true_expected: float
    sw_opt_expected: float
    ratio: float
    certification: Certification

    def __post_init__(self):
        if not -1e-9 <= self.ratio <= 1.0 + 1e-9:
            raise InternalCheckError(f"welfare ratio {self.ratio} outside [0, 1]")


@dataclass(frozen=True)
class _Stats:
    utils: tuple[float, ...]
    sw_true: float


class GameContext:
    """Expected-outcome evaluator for one auction game.

    Expectations over the copy-count model are exact when the support is
    small, otherwise Monte Carlo over a common set of draws shared by every
    profile so deviation comparisons are paired.
    """

    def __init__(
        self,
        true_values,
        grids,
        model: MultiplicityModel,
        rule: str = "english",
        lam: Optional[float] = None,
        exact_limit: int = 10_000,
        mc_draws: int = 2000,
        seed: int = 0,
    ):
        self.true_values = tuple(true_values)
        self.players = len(self.true_values)
        if isinstance(grids, ScalingGrid):
            grids = [grids] * self.players
        self.grids = tuple(grids)
        if len(self.grids) != self.players:
            raise ValueError("need one grid per player")
        self.menu = tuple(g.strategies for g in self.grids)
        self.model = model
        if rule not in ("english", "dutch", "mix"):
            raise ValueError(f"unknown rule {rule!r}")
        if rule == "mix" and (lam is None or not 0.0 <= lam <= 1.0):
            raise ValueError("mix rule needs a blend weight in [0, 1]")
        self.rule = rule
        self.lam = lam
        self.exact = support_size(model) <= exact_limit
        if self.exact:
            atoms = list(iter_support(model))
        else:
            rng = np.random.default_rng(np.random.SeedSequence(seed))
            weight = 1.0 / mc_draws
            atoms = [(sample(model, rng), weight) for _ in range(mc_draws)]
        self._atom_counts = tuple(c for c, _ in atoms)
        self._atom_probs = np.array([p for _, p in atoms])
        self._true_oracle = WelfareOracle(self.true_values)
        self._opt = np.array(
            [self._true_oracle.welfare(c) for c in self._atom_counts]
        )
        self._goods = model.goods
        self._fast = self._goods == 1 and all(
            isinstance(v, UnitDemand) for v in self.true_values
        )
        if self._goods == 1:
            self._ns = np.fromiter((c[0] for c in self._atom_counts), int)
        self._stats_cache: dict[tuple[int, ...], _Stats] = {}
        self._truthful = tuple(
            self.menu[i].index((1.0, 0.0)) for i in range(self.players)
        )

    # -- profile plumbing ---------------------------------------------------

    def truthful_profile(self) -> tuple[int, ...]:
        return self._truthful

    def bid_for(self, i: int, strategy_index: int):
        g, d = self.menu[i][strategy_index]
        return scale_bid(self.true_values[i], g, d)

    def profile_bids(self, profile) -> tuple:
        return tuple(self.bid_for(i, s) for i, s in enumerate(profile))

    def expected_opt(self) -> float:
        return float(self._opt @ self._atom_probs)

    # -- expected statistics ------------------------------------------------

    def stats(self, profile) -> _Stats:
        key = tuple(profile)
        hit = self._stats_cache.get(key)
        if hit is None:
            hit = self._fast_stats(key) if self._fast else self._slow_stats(key)
            self._stats_cache[key] = hit
        return hit

    def _fast_stats(self, profile) -> _Stats:
        util, sw = self._m1_tables(self.profile_bids(profile))
        utils = util[:, self._ns] @ self._atom_probs
        sw_true = float(sw[self._ns] @ self._atom_probs)
        return _Stats(tuple(float(u) for u in utils), sw_true)

    def _m1_tables(self, bids) -> tuple[np.ndarray, np.ndarray]:
        """Single-good tables util[i, n] and sw_true[n] for n = 0..max.

        Slots sort exactly as the engine sorts them (weight descending,
        later owner first on ties), so the canonical allocation, and hence
        every utility, matches run_mechanism to the last bit.
        """
        weights, owners, true_w = [], [], []
        for i, (b, v) in enumerate(zip(bids, self.true_values)):
            bw = sorted(b.weights, reverse=True)
            tw = sorted(v.weights, reverse=True)
            weights.extend(bw)
            owners.extend([i] * len(bw))
            true_w.extend(tw)
        w = np.array(weights)
        own = np.array(owners)
        tw = np.array(true_w)
        order = np.lexsort((-own, -w))
        w, own, tw = w[order], own[order], tw[order]
        slots = w.size
        nz = int(np.count_nonzero(w > 0.0))

        max_n = max((c[0] for c in self._atom_counts), default=0)
        ns = np.arange(max_n + 1)
        q = np.minimum(ns, nz)

        wpad = np.concatenate([w, np.zeros(max_n + 2)])
        if self.rule == "english":
            price = wpad[ns]
        elif self.rule == "dutch":
            price = np.concatenate([[np.inf], wpad[ns[1:] - 1]])
        else:
            low = wpad[ns]
            high = np.concatenate([[np.inf], wpad[ns[1:] - 1]])
            price = low if self.lam == 0.0 else (1.0 - self.lam) * low + self.lam * high

        onehot = np.zeros((self.players, slots + 1))
        val_steps = np.zeros((self.players, slots + 1))
        if slots:
            onehot[own, np.arange(slots) + 1] = 1.0
            val_steps[own, np.arange(slots) + 1] = tw
        cnt = np.cumsum(onehot, axis=1)
        cval = np.cumsum(val_steps, axis=1)

        cnt_q = cnt[:, q]
        pay = np.where(cnt_q > 0, cnt_q * np.where(np.isfinite(price), price, 0.0), 0.0)
        util = cval[:, q] - pay
        sw_true = cval[:, q].sum(axis=0)
        return util, sw_true

    def _slow_stats(self, profile) -> _Stats:
        bids = self.profile_bids(profile)
        oracle = WelfareOracle(bids)
        utils = np.zeros(self.players)
        sw = 0.0
        for (counts, p) in zip(self._atom_counts, self._atom_probs):
            out = run_mechanism(bids, counts, self.rule, self.lam, oracle=oracle)
            for i in range(self.players):
                u = value(self.true_values[i], out.allocation[i]) - out.payments[i]
                utils[i] += p * u
                sw += p * value(self.true_values[i], out.allocation[i])
        return _Stats(tuple(float(u) for u in utils), float(sw))

    def _atom_utility(self, profile, i: int) -> np.ndarray:
        """Per-atom utility of player i, for paired Monte Carlo comparisons."""
        bids = self.profile_bids(profile)
        if self._fast:
            util, _ = self._m1_tables(bids)
            return util[i, self._ns]
        oracle = WelfareOracle(bids)
        out = np.zeros(len(self._atom_counts))
        for t, counts in enumerate(self._atom_counts):
            o = run_mechanism(bids, counts, self.rule, self.lam, oracle=oracle)
            out[t] = value(self.true_values[i], o.allocation[i]) - o.payments[i]
        return out

    # -- equilibrium machinery ----------------------------------------------

    def best_response(self, profile, i: int) -> tuple[int, float]:
        """Best grid reply for player i, ties toward the largest entry."""
        profile = list(profile)
        best_s, best_u = None, None
        for s in range(len(self.menu[i])):
            profile[i] = s
            u = self.stats(profile).utils[i]
            if best_u is None or u > best_u + GAIN_TOL or (
                abs(u - best_u) <= GAIN_TOL
                and self.menu[i][s] > self.menu[i][best_s]
            ):
                best_s, best_u = s, u
        return best_s, best_u

    def certify(self, profile, tol: float = GAIN_TOL) -> Certification:
        profile = tuple(profile)
        base = self.stats(profile)
        worst_gain = -math.inf
        witness = None
        for i in range(self.players):
            trial = list(profile)
            for s in range(len(self.menu[i])):
                if s == profile[i]:
                    continue
                trial[i] = s
                gain = self.stats(trial).utils[i] - base.utils[i]
                if gain > worst_gain:
                    worst_gain, witness = gain, (i, s)
            trial[i] = profile[i]
        if witness is None:
            return Certification("exact-nash", 0.0, None)
        if self.exact:
            if worst_gain <= tol:
                return Certification("exact-nash", max(worst_gain, 0.0), None)
            return Certification("not-equilibrium", worst_gain, witness)
        i, s = witness
        trial = list(profile)
        trial[i] = s
        diffs = self._atom_utility(trial, i) - self._atom_utility(profile, i)
        half = Z99 * float(diffs.std(ddof=1)) / math.sqrt(diffs.size)
        lo, hi = float(diffs.mean() - half), float(diffs.mean() + half)
        if lo > tol:
            return Certification("not-equilibrium", worst_gain, witness, (lo, hi))
        return Certification("eps-nash", max(worst_gain, 0.0), witness, (lo, hi))

    def report(self, profile, certification=None) -> EquilibriumReport:
        profile = tuple(profile)
        cert = certification or self.certify(profile)
        s = self.stats(profile)
        opt = self.expected_opt()
        ratio = s.sw_true / opt if opt > 0 else 1.0
        return EquilibriumReport(
            profile,
            tuple(self.menu[i][s_] for i, s_ in enumerate(profile)),
            s.sw_true,
            opt,
            ratio,
            cert,
        )


def best_response_dynamics(
    ctx: GameContext,
    rng: np.random.Generator,
    restarts: int = 32,
    max_sweeps: int = 200,
) -> list[EquilibriumReport]:
    """Round-robin best-reply walks from random profiles; returns a report
    for every fixed point reached (certified exactly by construction)."""
    found: dict[tuple[int, ...], EquilibriumReport] = {}
    for _ in range(restarts):
        profile = [int(rng.integers(0, len(ctx.menu[i]))) for i in range(ctx.players)]
        for _ in range(max_sweeps):
            changed = False
            for i in range(ctx.players):
                s, _ = ctx.best_response(profile, i)
                if s != profile[i]:
                    profile[i] = s
                    changed = True
            if not changed:
                break
        else:
            continue
        key = tuple(profile)
        if key not in found:
            cert = ctx.certify(key)
            if cert.kind != "not-equilibrium":
                found[key] = ctx.report(key, cert)
    return list(found.values())


def exhaustive_equilibria(ctx: GameContext, limit: int = 100_000) -> list[EquilibriumReport]:
    """Every exact grid equilibrium, by full profile enumeration."""
    sizes = [len(m) for m in ctx.menu]
    total = math.prod(sizes)
    if total > limit:
        raise ValueError(f"profile space {total} exceeds enumeration limit {limit}")
    out = []
    for profile in product(*(range(s) for s in sizes)):
        cert = ctx.certify(profile)
        if cert.kind != "not-equilibrium":
            out.append(ctx.report(profile, cert))
    return out


def worst_equilibrium(
    ctx: GameContext,
    rng: np.random.Generator,
    restarts: int = 32,
    exhaustive_limit: int = 100_000,
) -> tuple[Optional[EquilibriumReport], list[EquilibriumReport], bool]:
    """Lowest-welfare certified equilibrium found; exhaustive when the
    profile space is small enough, otherwise a best-response search whose
    result is a lower-bound witness, not a proven worst case."""
    sizes = math.prod(len(m) for m in ctx.menu)
    if sizes <= exhaustive_limit:
        reports = exhaustive_equilibria(ctx, exhaustive_limit)
        complete = True
    else:
        reports = best_response_dynamics(ctx, rng, restarts=restarts)
        complete = False
    worst = min(reports, key=lambda r: r.ratio) if reports else None
    return worst, reports, complete


# ---------------------------------------------------------------------------
# Welfare-ratio lower bounds.


def ratio_bound_sqrt(
    goods: int, max_items: int, value_cap: float, welfare_rate: float, peak: float
) -> float:
    """Square-root form of the equilibrium welfare floor."""
    k = max_items
    ball = deficit_ball_bound(goods, k + 1)
    return 1.0 - (3.0 * k * value_cap * goods / welfare_rate) * math.sqrt(
        (k + 2) * goods * peak * ball
    )


def ratio_bound_log(
    goods: int, max_items: int, value_cap: float, welfare_rate: float, peak: float
) -> float:
    """Geometric-schedule form of the floor; vacuous (-inf) once the
    instability mass reaches 1, where its log factor would flip sign."""
    k = max_items
    y = instability_mass(goods, k, peak)
    if y >= 1.0:
        return -math.inf
    steps = math.ceil(math.log2(1.0 / y))
    return 1.0 - (3.0 * k * (k + 1) * value_cap * goods / welfare_rate) * y * steps


# ---------------------------------------------------------------------------
# Inequality checks gated on price stability.


@dataclass(frozen=True)
class LemmaVerdict:
    applied: bool
    ok: bool
    detail: str = ""


def _stable_everywhere(oracle, supply, slack, threshold, ceiling) -> bool:
    return all(
        not is_unstable_within(oracle, supply, j, slack, threshold, ceiling)
        for j in range(oracle.m)
    )


def check_price_floor(bids, bidder: int, supply, rule="english", lam=None) -> LemmaVerdict:
    """Low-end prices without one bidder never exceed the mechanism's prices
    with that bidder present."""
    rest = tuple(b for i, b in enumerate(bids) if i != bidder)
    without = WelfareOracle(rest).english(supply)
    with_all = WelfareOracle(bids).prices(supply, rule, lam)
    gap = without - with_all
    bad = np.flatnonzero(gap > 1e-9)
    if bad.size:
        j = int(bad[0])
        return LemmaVerdict(
            True, False, f"good {j}: {without[j]} > {with_all[j]} without bidder {bidder}"
        )
    return LemmaVerdict(True, True)


def check_price_bracket(
    true_values,
    bids,
    bidder: int,
    supply,
    max_items: int,
    threshold: float,
    ceiling: float,
    rule="english",
    lam=None,
    tol: float = 1e-9,
) -> LemmaVerdict:
    """Truncated prices under a truthful unilateral switch stay within
    (max_items + 1) * threshold above the as-bid prices, provided the supply
    is price-stable with that much headroom and no good is scarce."""
    supply = tuple(int(c) for c in supply)
    oracle = WelfareOracle(bids)
    if min(supply) <= max_items + 1 or not _stable_everywhere(
        oracle, supply, max_items + 1, threshold, ceiling
    ):
        return LemmaVerdict(False, True, "precondition not met")
    floor = check_price_floor(bids, bidder, supply, rule, lam)
    if not floor.ok:
        return LemmaVerdict(True, False, f"floor: {floor.detail}")
    hybrid = tuple(
        true_values[i] if i == bidder else b for i, b in enumerate(bids)
    )
    p_truth = WelfareOracle(hybrid).prices(supply, rule, lam)
    p_bid = oracle.prices(supply, rule, lam)
    slackp = (max_items + 1) * threshold
    for j in range(oracle.m):
        lhs = min(p_truth[j], ceiling)
        rhs = min(p_bid[j], ceiling) + slackp
        if lhs > rhs + tol:
            return LemmaVerdict(True, False, f"good {j}: {lhs} > {rhs}")
    return LemmaVerdict(True, True)


def check_smooth_bound(
    true_values,
    bids,
    bidder: int,
    supply,
    max_items: int,
    threshold: float,
    ceiling: float,
    rule="english",
    lam=None,
    tol: float = 1e-9,
) -> LemmaVerdict:
    """Utility floor for a truthful unilateral switch: at least the truthful
    optimum's value minus as-bid prices on that bundle, minus the stability
    slack on its essential items."""
    supply = tuple(int(c) for c in supply)
    v_i = true_values[bidder]
    if ceiling < max_item_value(v_i) - 1e-12:
        return LemmaVerdict(False, True, "ceiling below an item value")
    oracle = WelfareOracle(bids)
    if min(supply) <= max_items + 1 or not _stable_everywhere(
        oracle, supply, max_items + 1, threshold, ceiling
    ):
        return LemmaVerdict(False, True, "precondition not met")

    hybrid = tuple(true_values[i] if i == bidder else b for i, b in enumerate(bids))
    out = run_mechanism(hybrid, supply, rule, lam)
    u_truthful = value(v_i, out.allocation[bidder]) - out.payments[bidder]

    truthful_alloc = WelfareOracle(true_values).allocation(supply)[bidder]
    essential = minimal_equivalent_bundle(v_i, truthful_alloc)
    p_bid = oracle.prices(supply, rule, lam)
    bundle_cost = float(
        sum(c * p for c, p in zip(truthful_alloc, p_bid) if c)
    )
    overlap = sum(min(a, b) for a, b in zip(truthful_alloc, essential))
    rhs = (
        value(v_i, truthful_alloc)
        - bundle_cost
        - overlap * (max_items + 1) * threshold
    )
    if u_truthful < rhs - tol:
        return LemmaVerdict(
            True, False, f"bidder {bidder}: utility {u_truthful} below floor {rhs}"
        )
    return LemmaVerdict(True, True)


# ---------------------------------------------------------------------------
# No-regret dynamics.


@dataclass(frozen=True)
class LearningConfig:
    rounds: int
    feedback: str = "full"  # "full" | "bandit"
    payoff_bound: float = 1.0
    regret_scale: float = 2.0  # budget constant c in c * sqrt(T ln K) * bound

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("need at least one round")
        if self.feedback not in ("full", "bandit"):
            raise ValueError("feedback must be 'full' or 'bandit'")
        if self.payoff_bound <= 0:
            raise ValueError("payoff bound must be positive")


@dataclass(frozen=True)
class LearningResult:
    average_welfare: float
    expected_opt: float
    regrets: tuple[float, ...]
    regret_budgets: tuple[float, ...]
    mixtures: tuple[tuple[float, ...], ...]
    play_counts: tuple[tuple[int, ...], ...]
    rounds: int


class _FastRound:
    """Vectorized single-good unit-demand counterfactuals for one round.

    For every player and menu entry: does that bid win at the realized
    supply, and at what price, holding the other realized bids fixed.
    Exact order statistics; positive cross-player bid ties are routed to
    the exact engine by the caller, so none are handled here.
    """

    def __init__(self, true_values, menu):
        self.n_players = len(true_values)
        self.tv = np.array([v.weights[0] for v in true_values])
        self.kmax = max(len(m) for m in menu)
        self.cand = np.zeros((self.n_players, self.kmax))
        self.mask = np.zeros((self.n_players, self.kmax), dtype=bool)
        for i, m in enumerate(menu):
            for s, (g, d) in enumerate(m):
                self.cand[i, s] = g * self.tv[i] + d
                self.mask[i, s] = True

    def has_cross_ties(self, bids: np.ndarray) -> bool:
        pos = np.sort(bids[bids > 0])
        if pos.size > 1 and np.any(np.diff(pos) == 0):
            return True
        # A candidate equal to someone else's realized positive bid also
        # collides once substituted in.
        for i in range(self.n_players):
            others = np.delete(bids, i)
            others = others[others > 0]
            if others.size and np.any(np.isin(self.cand[i][self.mask[i]], others)):
                return True
        return False

    def utilities(self, bids: np.ndarray, n: int, rule: str, lam) -> np.ndarray:
        """util[i, s] of player i switching to menu entry s; NaN off-menu."""
        N = self.n_players
        order = np.lexsort((-np.arange(N), -bids))
        ws = bids[order]  # weights sorted descending, later owner first on ties
        rank_of = np.empty(N, dtype=int)
        rank_of[order] = np.arange(N)

        x = self.cand  # (N, K)
        # Strictly-greater counts among others; no positive ties by contract.
        ws_asc = ws[::-1]
        gt_all = N - np.searchsorted(ws_asc, x.ravel(), side="right").reshape(x.shape)
        gt = gt_all - (bids[:, None] > x)
        wins = (x > 0) & (gt <= n - 1)

        # Price: order statistic of the merged multiset (others + candidate).
        if n == 0:
            return np.where(self.mask, 0.0, np.nan)
        q_eng = n  # 0-based index of the (n+1)-th largest
        q_dut = n - 1

        def merged_stat(q: int) -> np.ndarray:
            if q >= N:
                return np.zeros(x.shape)
            # others' q-th largest, skipping own realized slot
            idx = q + (q >= rank_of[:, None])
            a_q = np.where(idx < N, ws[np.minimum(idx, N - 1)], 0.0)
            idx_m1 = (q - 1) + ((q - 1) >= rank_of[:, None])
            a_qm1 = np.where(
                (q - 1 >= 0) & (idx_m1 < N), ws[np.minimum(np.maximum(idx_m1, 0), N - 1)], 0.0
            )
            ins = gt  # candidate insertion position among others
            return np.where(q < ins, a_q, np.where(q == ins, x, a_qm1))

        if rule == "english":
            price = merged_stat(q_eng)
        elif rule == "dutch":
            price = merged_stat(q_dut)
        else:
            price = (1.0 - lam) * merged_stat(q_eng) + lam * merged_stat(q_dut)
        util = np.where(wins, self.tv[:, None] - price, 0.0)
        return np.where(self.mask, util, np.nan)

    def realized_welfare(self, bids: np.ndarray, n: int) -> float:
        order = np.lexsort((-np.arange(self.n_players), -bids))
        ws = bids[order]
        take = min(n, int(np.count_nonzero(bids > 0)))
        return float(self.tv[order][:take].sum())


def run_learning(
    true_values,
    grids,
    model: MultiplicityModel,
    config: LearningConfig,
    rule: str = "english",
    lam: Optional[float] = None,
    seed: int = 0,
) -> LearningResult:
    """Simultaneous no-regret play over the strategy grids.

    Full-information mode runs multiplicative weights on payoffs normalized
    from [-bound, bound] to [0, 1]; each player's measured regret (on their
    own mixture, against the best fixed menu entry in hindsight) must stay
    within the documented budget, or the run raises: the bound is a theorem
    for correctly computed payoffs.  Bandit mode runs importance-weighted
    updates from own realized payoffs only; its regret is reported, not
    asserted.  A fresh copy-count draw is made every round.
    """
    players = len(true_values)
    if rule not in ("english", "dutch", "mix"):
        raise ValueError(f"unknown rule {rule!r}")
    if rule == "mix" and (lam is None or not 0.0 <= lam <= 1.0):
        raise ValueError("mix rule needs a blend weight in [0, 1]")
    if isinstance(grids, ScalingGrid):
        grids = [grids] * players
    menu = [g.strategies for g in grids]
    sizes = [len(m) for m in menu]
    T = config.rounds
    chi = config.payoff_bound
    rng = np.random.default_rng(np.random.SeedSequence(seed))

    fast_ok = model.goods == 1 and all(isinstance(v, UnitDemand) for v in true_values)
    fast = _FastRound(true_values, menu) if fast_ok else None
    engine_cache: dict = {}

    def counterfactuals(actions, n) -> list[np.ndarray]:
        """uts[i][s] = utility of player i playing s against others' actions."""
        bids_vec = None
        if fast is not None:
            bids_vec = np.array(
                [fast.cand[i, s] for i, s in enumerate(actions)]
            )
            if not fast.has_cross_ties(bids_vec):
                table = fast.utilities(bids_vec, n[0], rule, lam)
                return [table[i, : sizes[i]] for i in range(players)]
        out = []
        for i in range(players):
            row = np.zeros(sizes[i])
            for s in range(sizes[i]):
                trial = tuple(s if h == i else a for h, a in enumerate(actions))
                key = (trial, n)
                utilv = engine_cache.get(key)
                if utilv is None:
                    bids = tuple(
                        scale_bid(true_values[h], *menu[h][a])
                        for h, a in enumerate(trial)
                    )
                    o = run_mechanism(bids, n, rule, lam)
                    utilv = tuple(
                        value(true_values[h], o.allocation[h]) - o.payments[h]
                        for h in range(players)
                    )
                    if len(engine_cache) < 200_000:
                        engine_cache[key] = utilv
                row[s] = utilv[i]
            out.append(row)
        return out

    etas = [math.sqrt(8.0 * math.log(k) / T) if k > 1 else 0.0 for k in sizes]
    explore = [
        min(1.0, math.sqrt(k * math.log(k) / ((math.e - 1.0) * T))) if k > 1 else 0.0
        for k in sizes
    ]
    scores = [np.zeros(k) for k in sizes]  # cumulative normalized payoffs
    cum_counter = [np.zeros(k) for k in sizes]  # per-strategy counterfactual sums
    cum_mixture = np.zeros(players)
    counts = [np.zeros(k, dtype=int) for k in sizes]
    welfare_sum = 0.0

    opt_atoms = list(iter_support(model)) if support_size(model) <= 10_000 else None
    if opt_atoms is not None:
        true_oracle = WelfareOracle(true_values)
        expected_opt = math.fsum(p * true_oracle.welfare(c) for c, p in opt_atoms)
    else:
        sample_rng = np.random.default_rng(np.random.SeedSequence((seed, 1)))
        true_oracle = WelfareOracle(true_values)
        expected_opt = float(
            np.mean(
                [true_oracle.welfare(sample(model, sample_rng)) for _ in range(2000)]
            )
        )

    for _ in range(T):
        n_t = sample(model, rng)
        mixtures = []
        for i in range(players):
            z = scores[i] - scores[i].max()
            wts = np.exp(etas[i] * z)
            sigma = wts / wts.sum()
            if config.feedback == "bandit":
                sigma = (1.0 - explore[i]) * sigma + explore[i] / sizes[i]
            mixtures.append(sigma)
        u = rng.random(players)
        actions = tuple(
            int(np.searchsorted(np.cumsum(mixtures[i]), u[i], side="right"))
            for i in range(players)
        )
        actions = tuple(min(a, sizes[i] - 1) for i, a in enumerate(actions))

        uts = counterfactuals(actions, n_t)
        for i in range(players):
            if np.any(np.abs(uts[i]) > chi + 1e-9):
                raise ValueError(
                    f"payoff bound {chi} does not cover player {i}'s payoffs"
                )
            norm = (uts[i] + chi) / (2.0 * chi)
            if config.feedback == "full":
                scores[i] += norm
            else:
                est = np.zeros(sizes[i])
                est[actions[i]] = norm[actions[i]] / mixtures[i][actions[i]]
                scores[i] += est
            cum_counter[i] += uts[i]
            cum_mixture[i] += float(mixtures[i] @ uts[i])
            counts[i][actions[i]] += 1

        if fast is not None:
            bids_vec = np.array([fast.cand[i, s] for i, s in enumerate(actions)])
            welfare_sum += fast.realized_welfare(bids_vec, n_t[0])
        else:
            bids = tuple(
                scale_bid(true_values[h], *menu[h][a]) for h, a in enumerate(actions)
            )
            o = run_mechanism(bids, n_t, rule, lam)
            welfare_sum += sum(
                value(true_values[h], o.allocation[h]) for h in range(players)
            )

    regrets = tuple(
        float(cum_counter[i].max() - cum_mixture[i]) for i in range(players)
    )
    budgets = tuple(
        config.regret_scale * math.sqrt(T * math.log(max(k, 2))) * chi for k in sizes
    )
    if config.feedback == "full":
        for i, (r, b) in enumerate(zip(regrets, budgets)):
            if r > b + 1e-9:
                raise InternalCheckError(
                    f"player {i} measured regret {r} exceeds budget {b}"
                )
    final_mix = []
    for i in range(players):
        z = scores[i] - scores[i].max()
        wts = np.exp(etas[i] * z)
        final_mix.append(tuple(float(x) for x in wts / wts.sum()))
    return LearningResult(
        average_welfare=welfare_sum / T,
        expected_opt=expected_opt,
        regrets=regrets,
        regret_budgets=budgets,
        mixtures=tuple(final_mix),
        play_counts=tuple(tuple(int(c) for c in cnt) for cnt in counts),
        rounds=T,
    )
