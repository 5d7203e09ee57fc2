"""Scenario-driven experiment runner behind the command line interface.

A run file is JSON with a versioned schema: ``{"schema_version": 1,
"scenarios": [...]}``.  Each scenario names a setting (walrasian or fisher),
a mode, a sweep (auction sizes N, market largeness L, or instance counts,
depending on the mode), and a list of seeds.  Every (sweep value, seed) pair
becomes one task.  Tasks are pure functions of (scenario, sweep index, seed),
with per-task generators derived as

    SeedSequence(entropy=seed, spawn_key=(scenario_index, sweep_index))

so identical configs produce byte-identical CSVs, serial or parallel.

Each scenario writes one CSV with a fixed column order (documented in the
README) plus an entry in ``summary.json``.  A theorem or lemma check coming
out false is not an exception in the plumbing sense: the run completes, the
failing record lands in the summary, and the process exits 1.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckFailure, InternalCheckError, ScenarioError, SolverError
from .fisher import (
    FisherMarket,
    compress_prices,
    market_poa_search,
    rescale_to_unit,
    reserve_poa_search,
    run_market_learning,
    solve_market,
)
from .sensitivity import (
    ProbeParams,
    count_unstable_slice,
    default_threshold,
    unstable_event_probability,
)
from .strategic import (
    GameContext,
    LearningConfig,
    ScalingGrid,
    check_price_bracket,
    check_price_floor,
    check_smooth_bound,
    ratio_bound_log,
    ratio_bound_sqrt,
    run_learning,
    worst_equilibrium,
)
from .supply import (
    BinomialCounts,
    FixedCounts,
    floor_rate,
    max_point_mass,
    mean_counts,
    sample,
    std_counts,
)
from .valuations import (
    CES,
    CobbDouglas,
    KDemand,
    Linear,
    UnitDemand,
    bundles_upto,
    scale_bid,
    value,
)
from .walrasian import (
    WelfareOracle,
    max_welfare,
    run_mechanism,
    validate_outcome,
)

SCHEMA_VERSION = 1
OUT_ENV = "MARKETLAB_OUT"
BOUND_TOL = 1e-9

_WAL_MODES = ("poa_sweep", "validity", "lemmas", "bullying", "regret", "oracle")
_FISHER_MODES = ("poa", "reserve", "regret")
_LEMMAS = (
    "unstable-count",
    "within-count",
    "event-probability",
    "price-floor",
    "price-bracket",
    "smooth",
)

_COLUMNS = {
    ("walrasian", "poa_sweep"): (
        "scenario", "N", "seed", "rule", "ratio",
        "bound_sqrt", "bound_log", "certification", "regret",
    ),
    ("walrasian", "bullying"): (
        "scenario", "N", "seed", "rule", "ratio",
        "bound_sqrt", "bound_log", "certification", "regret",
    ),
    ("walrasian", "regret"): (
        "scenario", "N", "seed", "rule", "ratio",
        "bound_sqrt", "bound_log", "certification", "regret",
    ),
    ("walrasian", "validity"): (
        "scenario", "N", "seed", "rule", "instances", "violations",
    ),
    ("walrasian", "lemmas"): (
        "scenario", "N", "seed", "lemma", "instances", "applied", "violations",
    ),
    ("walrasian", "oracle"): (
        "scenario", "N", "seed", "instances", "mismatches",
    ),
    ("fisher", "poa"): (
        "scenario", "L", "m", "seed", "family",
        "ratio_gm", "ratio_sum", "bound", "equilibria",
    ),
    ("fisher", "reserve"): (
        "scenario", "L", "m", "seed", "family",
        "ratio_sum", "bound", "stated_bound", "compress_trials", "violations",
    ),
    ("fisher", "regret"): (
        "scenario", "L", "m", "seed", "family", "rounds",
        "avg_welfare", "truthful_welfare", "bound_factor", "max_phi", "holds",
    ),
}


# -- schema ---------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    index: int
    id: str
    setting: str
    mode: str
    sweep: tuple[int, ...]
    seeds: tuple[int, ...]
    csv: str
    spec: dict


def _fail(path: str, msg: str):
    raise ScenarioError(f"{path}: {msg}")


def _need(obj: dict, path: str, key: str, kinds, check=None):
    if key not in obj:
        _fail(path, f"missing required key '{key}'")
    return _typed(obj[key], f"{path}.{key}", kinds, check)


def _opt(obj: dict, path: str, key: str, kinds, default, check=None):
    if key not in obj:
        return default
    return _typed(obj[key], f"{path}.{key}", kinds, check)


def _typed(val, path: str, kinds, check):
    if kinds is bool:
        ok = isinstance(val, bool)
    elif kinds is int:
        ok = isinstance(val, int) and not isinstance(val, bool)
    elif kinds is float:
        ok = isinstance(val, (int, float)) and not isinstance(val, bool)
        val = float(val) if ok else val
    else:
        ok = isinstance(val, kinds)
    if not ok:
        name = kinds.__name__ if hasattr(kinds, "__name__") else str(kinds)
        _fail(path, f"expected {name}, got {type(val).__name__}")
    if check is not None:
        err = check(val)
        if err:
            _fail(path, err)
    return val


def _no_extras(obj: dict, path: str, allowed):
    for key in obj:
        if key not in allowed:
            _fail(path, f"unknown key '{key}'")


def _int_list(obj, path, key, minimum, required=True):
    if key not in obj:
        if required:
            _fail(path, f"missing required key '{key}'")
        return None
    vals = _typed(obj[key], f"{path}.{key}", list, None)
    if not vals:
        _fail(f"{path}.{key}", "must be non-empty")
    out = []
    for i, v in enumerate(vals):
        out.append(_typed(v, f"{path}.{key}[{i}]", int, None))
        if out[-1] < minimum:
            _fail(f"{path}.{key}[{i}]", f"must be >= {minimum}")
    return tuple(out)


def _float_list(obj, path, key, default, lo, hi):
    if key not in obj:
        return default
    vals = _typed(obj[key], f"{path}.{key}", list, None)
    out = []
    for i, v in enumerate(vals):
        x = _typed(v, f"{path}.{key}[{i}]", float, None)
        if not lo < x < hi:
            _fail(f"{path}.{key}[{i}]", f"must lie in ({lo}, {hi})")
        out.append(x)
    return tuple(out)


def _check_values_block(vb: dict, path: str):
    kind = _need(vb, path, "kind", str, lambda k: None if k in ("uniform", "pareto") else "must be 'uniform' or 'pareto'")
    if kind == "uniform":
        _no_extras(vb, path, ("kind", "low", "high"))
        low = _need(vb, path, "low", float, lambda x: None if x > 0 else "must be > 0")
        high = _need(vb, path, "high", float, lambda x: None if x > 0 else "must be > 0")
        if high < low:
            _fail(f"{path}.high", "must be >= low")
    else:
        _no_extras(vb, path, ("kind", "shape", "scale"))
        _need(vb, path, "shape", float, lambda x: None if x > 1 else "must be > 1 for a finite mean")
        _need(vb, path, "scale", float, lambda x: None if x > 0 else "must be > 0")


def _check_auction_generator(gen: dict, path: str):
    _no_extras(gen, path, ("family", "cap", "goods", "bidders", "values", "supply"))
    family = _need(gen, path, "family", str, lambda f: None if f in ("unit", "kdemand") else "must be 'unit' or 'kdemand'")
    goods = _need(gen, path, "goods", int, lambda g: None if g >= 1 else "must be >= 1")
    cap = _opt(gen, path, "cap", int, 1, lambda c: None if c >= 1 else "must be >= 1")
    if family == "unit" and cap != 1:
        _fail(f"{path}.cap", "unit-demand bidders hold one item")
    bidders = gen.get("bidders", "sweep")
    if bidders != "sweep":
        _typed(bidders, f"{path}.bidders", int, lambda b: None if b >= 1 else "must be >= 1")
    vb = _need(gen, path, "values", dict, None)
    _check_values_block(vb, f"{path}.values")
    sup = _need(gen, path, "supply", dict, None)
    kind = _need(sup, f"{path}.supply", "kind", str, lambda k: None if k in ("binomial", "fixed") else "must be 'binomial' or 'fixed'")
    if kind == "binomial":
        _no_extras(sup, f"{path}.supply", ("kind", "prob"))
        _need(sup, f"{path}.supply", "prob", float, lambda p: None if 0 < p < 1 else "must lie in (0, 1)")
    else:
        _no_extras(sup, f"{path}.supply", ("kind", "counts"))
        counts = _int_list(sup, f"{path}.supply", "counts", 0)
        if len(counts) != goods:
            _fail(f"{path}.supply.counts", f"needs one count per good ({goods})")


def _check_corpus_block(gen: dict, path: str, defaults: dict):
    allowed = ("max_bidders", "max_goods", "max_cap", "max_copies", "low", "high")
    _no_extras(gen, path, allowed)
    out = dict(defaults)
    for key in ("max_bidders", "max_goods", "max_cap", "max_copies"):
        out[key] = _opt(gen, path, key, int, defaults[key], lambda v: None if v >= 1 else "must be >= 1")
    out["low"] = _opt(gen, path, "low", float, defaults["low"], lambda v: None if v > 0 else "must be > 0")
    out["high"] = _opt(gen, path, "high", float, defaults["high"], lambda v: None if v > 0 else "must be > 0")
    if out["high"] < out["low"]:
        _fail(f"{path}.high", "must be >= low")
    return out


def _check_assumptions_block(blk: dict, path: str):
    _no_extras(blk, path, ("zeta", "rho_prime"))
    _need(blk, path, "zeta", float, lambda z: None if z > 0 else "must be > 0")
    _need(blk, path, "rho_prime", float, lambda r: None if r > 0 else "must be > 0")


def _check_grid_block(grid: dict, path: str):
    _no_extras(grid, path, ("scales", "offsets"))
    scales = grid.get("scales")
    if not isinstance(scales, list) or not scales:
        _fail(f"{path}.scales", "must be a non-empty list")
    vals = []
    for i, s in enumerate(scales):
        vals.append(_typed(s, f"{path}.scales[{i}]", float, lambda x: None if x >= 0 else "must be >= 0"))
    if 1.0 not in vals:
        _fail(f"{path}.scales", "must include the truthful scale 1.0")
    if "offsets" in grid:
        offs = _typed(grid["offsets"], f"{path}.offsets", list, None)
        ovals = [
            _typed(o, f"{path}.offsets[{i}]", float, lambda x: None if x >= 0 else "must be >= 0")
            for i, o in enumerate(offs)
        ]
        if 0.0 not in ovals:
            _fail(f"{path}.offsets", "must include the zero offset")


def _check_rule(spec: dict, path: str):
    rule = _opt(spec, path, "rule", str, "english", lambda r: None if r in ("english", "dutch", "mix") else "must be english, dutch, or mix")
    if rule == "mix":
        _need(spec, path, "lam", float, lambda x: None if 0 <= x <= 1 else "must lie in [0, 1]")
    elif "lam" in spec:
        _fail(f"{path}.lam", "only the mix rule takes a blend weight")


_COMMON_KEYS = ("id", "setting", "mode", "sweep", "seeds", "csv")


def _validate_scenario(raw: dict, path: str, index: int) -> Scenario:
    _typed(raw, path, dict, None)
    sid = _need(raw, path, "id", str, lambda s: None if s and all(c.isalnum() or c == "_" for c in s) else "must be non-empty [a-z0-9_]")
    setting = _need(raw, path, "setting", str, lambda s: None if s in ("walrasian", "fisher") else "must be 'walrasian' or 'fisher'")
    modes = _WAL_MODES if setting == "walrasian" else _FISHER_MODES
    mode = _need(raw, path, "mode", str, lambda m: None if m in modes else f"must be one of {modes} for setting '{setting}'")
    sweep = _int_list(raw, path, "sweep", 1)
    seeds = _int_list(raw, path, "seeds", 0)
    csv_name = _opt(raw, path, "csv", str, sid + ".csv", None)

    spec = {k: v for k, v in raw.items() if k not in _COMMON_KEYS}
    sp = path
    if setting == "walrasian":
        if mode == "poa_sweep":
            _no_extras(spec, sp, ("generator", "assumptions", "grid", "restarts", "trend_check", "rule", "lam"))
            _check_auction_generator(_need(spec, sp, "generator", dict, None), f"{sp}.generator")
            _check_assumptions_block(_need(spec, sp, "assumptions", dict, None), f"{sp}.assumptions")
            _check_grid_block(_need(spec, sp, "grid", dict, None), f"{sp}.grid")
            _opt(spec, sp, "restarts", int, 32, lambda r: None if r >= 1 else "must be >= 1")
            _opt(spec, sp, "trend_check", bool, False, None)
            _check_rule(spec, sp)
            if spec["generator"]["supply"]["kind"] != "binomial":
                _fail(f"{sp}.generator.supply.kind", "poa_sweep sweeps binomial trial counts")
        elif mode == "validity":
            _no_extras(spec, sp, ("generator", "mix_weight"))
            spec["generator"] = _check_corpus_block(
                _opt(spec, sp, "generator", dict, {}, None), f"{sp}.generator",
                {"max_bidders": 5, "max_goods": 3, "max_cap": 2, "max_copies": 4, "low": 0.1, "high": 1.0},
            )
            _opt(spec, sp, "mix_weight", float, 0.5, lambda x: None if 0 <= x <= 1 else "must lie in [0, 1]")
        elif mode == "lemmas":
            _no_extras(spec, sp, ("generator", "lemmas", "min_applied"))
            spec["generator"] = _check_corpus_block(
                _opt(spec, sp, "generator", dict, {}, None), f"{sp}.generator",
                {"max_bidders": 5, "max_goods": 2, "max_cap": 2, "max_copies": 8, "low": 0.3, "high": 1.0},
            )
            lemmas = spec.get("lemmas", list(_LEMMAS))
            _typed(lemmas, f"{sp}.lemmas", list, None)
            for i, name in enumerate(lemmas):
                _typed(name, f"{sp}.lemmas[{i}]", str, lambda n: None if n in _LEMMAS else f"must be one of {_LEMMAS}")
            spec["lemmas"] = list(lemmas)
            _opt(spec, sp, "min_applied", int, 0, lambda v: None if v >= 0 else "must be >= 0")
        elif mode == "bullying":
            _no_extras(spec, sp, ())
        elif mode == "regret":
            _no_extras(spec, sp, ("generator", "assumptions", "grid", "players", "rounds", "feedback", "rule", "lam"))
            _check_auction_generator(_need(spec, sp, "generator", dict, None), f"{sp}.generator")
            _check_assumptions_block(_need(spec, sp, "assumptions", dict, None), f"{sp}.assumptions")
            _check_grid_block(_need(spec, sp, "grid", dict, None), f"{sp}.grid")
            _need(spec, sp, "players", int, lambda p: None if p >= 1 else "must be >= 1")
            _need(spec, sp, "rounds", int, lambda t: None if t >= 1 else "must be >= 1")
            _opt(spec, sp, "feedback", str, "full", lambda f: None if f in ("full", "bandit") else "must be 'full' or 'bandit'")
            _check_rule(spec, sp)
            if spec["generator"].get("bidders", "sweep") != "sweep":
                _fail(f"{sp}.generator.bidders", "regret mode sizes the market by 'players'")
        elif mode == "oracle":
            _no_extras(spec, sp, ("generator",))
            spec["generator"] = _check_corpus_block(
                _opt(spec, sp, "generator", dict, {}, None), f"{sp}.generator",
                {"max_bidders": 4, "max_goods": 3, "max_cap": 2, "max_copies": 3, "low": 0.1, "high": 1.0},
            )
    else:
        gen = _need(spec, sp, "generator", dict, None)
        gp = f"{sp}.generator"
        _no_extras(gen, gp, ("goods", "family", "rho", "budgets", "weight_low", "weight_high"))
        _need(gen, gp, "goods", int, lambda g: None if g >= 1 else "must be >= 1")
        family = _need(gen, gp, "family", str, lambda f: None if f in ("cobb_douglas", "linear", "ces") else "must be cobb_douglas, linear, or ces")
        if family == "ces":
            _need(gen, gp, "rho", float, lambda r: None if 0 < r < 1 else "must lie in (0, 1)")
        elif "rho" in gen:
            _fail(f"{gp}.rho", "only the ces family takes a curvature parameter")
        wl = _opt(gen, gp, "weight_low", float, 0.2, lambda v: None if v > 0 else "must be > 0")
        wh = _opt(gen, gp, "weight_high", float, 1.0, lambda v: None if v > 0 else "must be > 0")
        if wh < wl:
            _fail(f"{gp}.weight_high", "must be >= weight_low")
        if "budgets" in gen:
            budgets = _typed(gen["budgets"], f"{gp}.budgets", list, None)
            if not budgets:
                _fail(f"{gp}.budgets", "must be non-empty")
            for i, b in enumerate(budgets):
                _typed(b, f"{gp}.budgets[{i}]", float, lambda x: None if x > 0 else "must be > 0")
            if len(sweep) != 1:
                _fail(f"{gp}.budgets", "an explicit budget list fixes the market; use a single sweep value")
        spec["deltas"] = _float_list(spec, sp, "deltas", (0.05, 0.1, 0.2), 0.0, 1.0)
        _opt(spec, sp, "restarts", int, 8, lambda r: None if r >= 1 else "must be >= 1")
        if mode == "poa":
            _no_extras(spec, sp, ("generator", "deltas", "restarts", "rescale"))
            _opt(spec, sp, "rescale", bool, True, None)
        elif mode == "reserve":
            _no_extras(spec, sp, ("generator", "deltas", "restarts", "reserve_fraction", "compress_trials"))
            _opt(spec, sp, "reserve_fraction", float, 0.25, lambda x: None if 0 < x <= 0.25 else "must lie in (0, 0.25]")
            _opt(spec, sp, "compress_trials", int, 10, lambda v: None if v >= 0 else "must be >= 0")
        elif mode == "regret":
            _no_extras(spec, sp, ("generator", "deltas", "rounds", "reserve_fraction"))
            _need(spec, sp, "rounds", int, lambda t: None if t >= 1 else "must be >= 1")
            _opt(spec, sp, "reserve_fraction", float, 0.25, lambda x: None if 0 < x <= 0.25 else "must lie in (0, 0.25]")

    return Scenario(index, sid, setting, mode, sweep, seeds, csv_name, spec)


def parse_config(cfg) -> list[Scenario]:
    """Validate a parsed JSON document and return the scenario list."""
    _typed(cfg, "config", dict, None)
    _no_extras(cfg, "config", ("schema_version", "scenarios"))
    version = _need(cfg, "config", "schema_version", int, None)
    if version != SCHEMA_VERSION:
        _fail("config.schema_version", f"this build reads version {SCHEMA_VERSION}, got {version}")
    raw = _need(cfg, "config", "scenarios", list, None)
    if not raw:
        _fail("config.scenarios", "must be non-empty")
    scenarios = [
        _validate_scenario(entry, f"config.scenarios[{i}]", i) for i, entry in enumerate(raw)
    ]
    seen = {}
    for i, sc in enumerate(scenarios):
        if sc.id in seen:
            _fail(f"config.scenarios[{i}].id", f"duplicate id '{sc.id}' (also scenarios[{seen[sc.id]}])")
        seen[sc.id] = i
    return scenarios


def load_config(source: str) -> dict:
    """Read a config from a filesystem path or a bundled scenario name."""
    path = Path(source)
    if not path.is_file():
        name = source[:-5] if source.endswith(".json") else source
        bundled = Path(__file__).parent / "scenarios" / f"{name}.json"
        if not bundled.is_file():
            raise ScenarioError(
                f"config: '{source}' is neither a file nor a bundled scenario name"
            )
        path = bundled
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e


def bundled_scenarios() -> tuple[str, ...]:
    folder = Path(__file__).parent / "scenarios"
    return tuple(sorted(p.stem for p in folder.glob("*.json")))


# -- instance generators ----------------------------------------------------------


def _task_seq(sc: Scenario, sweep_idx: int, seed: int, tag: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed, spawn_key=(sc.index, sweep_idx, tag))


def _draw_item_weights(rng, vb: dict, goods: int) -> tuple[float, ...]:
    if vb["kind"] == "uniform":
        return tuple(float(x) for x in rng.uniform(vb["low"], vb["high"], goods))
    return tuple(float(vb["scale"] * (1.0 + x)) for x in rng.pareto(vb["shape"], goods))


def _draw_bidders(rng, gen: dict, count: int):
    out = []
    for _ in range(count):
        w = _draw_item_weights(rng, gen["values"], gen["goods"])
        if gen["family"] == "unit":
            out.append(UnitDemand(w))
        else:
            out.append(KDemand(w, gen.get("cap", 1)))
    return tuple(out)


def _build_model(gen: dict, sweep_n: int):
    sup = gen["supply"]
    if sup["kind"] == "binomial":
        return BinomialCounts(gen["goods"], sweep_n, sup["prob"])
    return FixedCounts(tuple(sup["counts"]))


def _random_gs_market(rng, gen: dict):
    """Random weighted-matroid-rank market for the validity/oracle corpora."""
    bidders = int(rng.integers(1, gen["max_bidders"] + 1))
    goods = int(rng.integers(1, gen["max_goods"] + 1))
    bids = []
    for _ in range(bidders):
        w = rng.uniform(gen["low"], gen["high"], goods)
        w[rng.random(goods) < 0.15] = 0.0
        cap = int(rng.integers(1, gen["max_cap"] + 1))
        if cap == 1:
            bids.append(UnitDemand(tuple(float(x) for x in w)))
        else:
            bids.append(KDemand(tuple(float(x) for x in w), cap))
    supply = tuple(int(c) for c in rng.integers(0, gen["max_copies"] + 1, goods))
    return tuple(bids), supply


# -- assumption audit --------------------------------------------------------------


@dataclass(frozen=True)
class AssumptionAudit:
    """Per-sweep-point empirical check of the four market assumptions.

    Bound columns in the CSV are suppressed (N/A) whenever the bounded-value
    or market-welfare assumption fails, or the supply has a unit point mass
    (no multiplicity uncertainty, so the uncertainty-driven bounds do not
    apply).
    """

    sweep: int
    zeta: float
    zeta_hat: float
    bounded_value_ok: bool
    rho_prime: float
    best_item_hat: float
    value_floor_ok: bool
    spread_slack: float
    copies_share: float
    size_ok: bool
    welfare_rate: float
    sw_opt_hat: float
    welfare_ok: bool
    item_expectation_cap_ok: bool
    point_mass: float
    point_mass_flag: bool
    suppress_bounds: bool


def audit_assumptions(
    gen: dict, assumptions: dict, sweep_n: int, bidders: int, seq, samples: int = 400
) -> AssumptionAudit:
    """Estimate the assumption constants for one generator at one sweep point."""
    rng = np.random.default_rng(seq)
    zeta = assumptions["zeta"]
    rho_prime = assumptions["rho_prime"]
    goods = gen["goods"]

    draws = np.array([_draw_item_weights(rng, gen["values"], goods) for _ in range(samples)])
    per_item = draws.mean(axis=0)
    per_item_se = draws.std(axis=0, ddof=1) / math.sqrt(samples)
    zeta_hat = float(per_item.max())
    slack = 3.0 * float(per_item_se.max())
    bounded_value_ok = zeta_hat <= zeta + slack
    best_item_hat = zeta_hat
    value_floor_ok = best_item_hat >= rho_prime - slack
    best_draw = draws.max(axis=1)
    cap_hat = float(best_draw.mean())
    cap_se = float(best_draw.std(ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0
    item_expectation_cap_ok = cap_hat <= goods * zeta + 3.0 * cap_se

    model = _build_model(gen, sweep_n)
    mu = mean_counts(model)
    sd = std_counts(model)
    if np.any(mu <= 0):
        spread_slack, copies_share, size_ok = 0.0, 0.0, False
    else:
        spread_slack = float(np.min(1.0 - sd / mu))
        copies_share = float(np.min(mu / sweep_n))
        size_ok = spread_slack > 0.0 and copies_share > 0.0

    if size_ok:
        welfare_rate = floor_rate(spread_slack, copies_share, rho_prime)
    else:
        welfare_rate = 0.0
    sw_draws = []
    for _ in range(200):
        vals = _draw_bidders(rng, gen, bidders)
        counts = sample(model, rng)
        sw_draws.append(WelfareOracle(vals).welfare(counts))
    sw = np.array(sw_draws)
    sw_opt_hat = float(sw.mean())
    sw_se = float(sw.std(ddof=1) / math.sqrt(sw.size))
    welfare_ok = size_ok and sw_opt_hat >= welfare_rate * sweep_n - 3.0 * sw_se

    peak = max_point_mass(model)
    flag = peak >= 1.0 - 1e-12
    suppress = (not bounded_value_ok) or (not welfare_ok) or flag
    return AssumptionAudit(
        sweep=sweep_n,
        zeta=zeta,
        zeta_hat=zeta_hat,
        bounded_value_ok=bounded_value_ok,
        rho_prime=rho_prime,
        best_item_hat=best_item_hat,
        value_floor_ok=value_floor_ok,
        spread_slack=spread_slack,
        copies_share=copies_share,
        size_ok=size_ok,
        welfare_rate=welfare_rate,
        sw_opt_hat=sw_opt_hat,
        welfare_ok=welfare_ok,
        item_expectation_cap_ok=item_expectation_cap_ok,
        point_mass=peak,
        point_mass_flag=flag,
        suppress_bounds=suppress,
    )


# -- task execution ----------------------------------------------------------------


@dataclass(frozen=True)
class Check:
    scenario: str
    name: str
    passed: bool
    detail: str


@dataclass
class _TaskOut:
    rows: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    audit: AssumptionAudit | None = None
    seconds: float = 0.0


def _grid_from_spec(spec: dict) -> ScalingGrid:
    scales = tuple(float(s) for s in spec["grid"]["scales"])
    offsets = tuple(float(o) for o in spec["grid"].get("offsets", [0.0]))
    return ScalingGrid(scales, offsets)


def _bounds_for(gen: dict, audit: AssumptionAudit, sweep_n: int):
    if audit.suppress_bounds:
        return None, None
    cap = gen.get("cap", 1)
    peak = max_point_mass(_build_model(gen, sweep_n))
    sqrt_b = ratio_bound_sqrt(gen["goods"], cap, audit.zeta, audit.welfare_rate, peak)
    log_b = ratio_bound_log(gen["goods"], cap, audit.zeta, audit.welfare_rate, peak)
    return sqrt_b, log_b


def _rule_label(spec: dict) -> str:
    rule = spec.get("rule", "english")
    if rule == "mix":
        return f"mix({spec['lam']:g})"
    return rule


def _task_poa_sweep(sc: Scenario, sweep_idx: int, n: int, seed_idx: int, seed: int) -> _TaskOut:
    out = _TaskOut()
    spec = sc.spec
    gen = spec["generator"]
    rng = np.random.default_rng(_task_seq(sc, sweep_idx, seed))
    bidders = n if gen.get("bidders", "sweep") == "sweep" else gen["bidders"]
    values = _draw_bidders(rng, gen, bidders)
    model = _build_model(gen, n)
    grid = _grid_from_spec(spec)
    ctx_seed = int(_task_seq(sc, sweep_idx, seed, tag=1).generate_state(1)[0])
    ctx = GameContext(
        values, grid, model, rule=spec.get("rule", "english"),
        lam=spec.get("lam"), seed=ctx_seed,
    )
    worst, reports, _complete = worst_equilibrium(ctx, rng, restarts=spec.get("restarts", 32))

    audit = audit_assumptions(
        gen, spec["assumptions"], n, bidders, _task_seq(sc, sweep_idx, sc.seeds[0], tag=2)
    )
    if seed_idx == 0:
        out.audit = audit
    sqrt_b, log_b = _bounds_for(gen, audit, n)
    floor = max(0.0, sqrt_b if sqrt_b is not None else 0.0, log_b if log_b is not None else 0.0)

    exact = [r for r in reports if r.certification.kind == "exact-nash"]
    below = [r for r in exact if r.ratio < floor - BOUND_TOL]
    if below:
        r = below[0]
        out.checks.append(Check(
            sc.id, "poa-bound", False,
            f"N={n} seed={seed} profile={r.profile}: ratio {r.ratio:.6f} < bound {floor:.6f}"
            f" ({len(below)} of {len(exact)} below)",
        ))
    else:
        out.checks.append(Check(
            sc.id, "poa-bound", True,
            f"N={n} seed={seed}: {len(exact)} exact equilibria above max(0, bounds)",
        ))
    if worst is None:
        out.checks.append(Check(sc.id, "certified-equilibrium", False, f"N={n} seed={seed}: search certified no equilibrium"))
        ratio, cert = None, "none"
    else:
        ratio, cert = worst.ratio, worst.certification.kind
    out.rows.append((sc.id, n, seed, _rule_label(spec), ratio, sqrt_b, log_b, cert, None))
    return out


def _task_bullying(sc: Scenario, sweep_idx: int, n: int, seed_idx: int, seed: int) -> _TaskOut:
    out = _TaskOut()
    values = (UnitDemand((10.0,)), UnitDemand((1.0,)))
    grids = [ScalingGrid((0.0, 1.0)), ScalingGrid((0.0, 1.0, 10.0))]
    model = FixedCounts((1,))
    ctx = GameContext(values, grids, model, rule="english", seed=seed)
    profile = (0, 2)  # high bidder silent, low bidder bids ten times value
    cert = ctx.certify(profile)
    rep = ctx.report(profile, cert)
    ok = cert.kind == "exact-nash" and rep.ratio == 0.1
    out.checks.append(Check(
        sc.id, "bullying-nash", ok,
        f"certification={cert.kind} ratio={rep.ratio!r} (want exact-nash at exactly 0.1)",
    ))
    out.rows.append((sc.id, n, seed, "english", rep.ratio, None, None, cert.kind, None))
    if seed_idx == 0:
        gen = {
            "family": "unit", "goods": 1, "cap": 1,
            "values": {"kind": "uniform", "low": 1.0, "high": 10.0},
            "supply": {"kind": "fixed", "counts": [1]},
        }
        out.audit = audit_assumptions(
            gen, {"zeta": 10.0, "rho_prime": 1.0}, n, 2, _task_seq(sc, sweep_idx, sc.seeds[0], tag=2)
        )
    return out


def _task_wal_regret(sc: Scenario, sweep_idx: int, n: int, seed_idx: int, seed: int) -> _TaskOut:
    out = _TaskOut()
    spec = sc.spec
    gen = spec["generator"]
    rng = np.random.default_rng(_task_seq(sc, sweep_idx, seed))
    players = spec["players"]
    values = _draw_bidders(rng, gen, players)
    model = _build_model(gen, n)
    grid = _grid_from_spec(spec)
    goods, cap = gen["goods"], gen.get("cap", 1)

    full_box = (cap,) * goods
    vmax = [value(v, full_box) for v in values]
    gamma = max(grid.scales)
    delta = max(grid.offsets)
    chi = max(max(vm, gamma * vm + delta) for vm in vmax)
    config = LearningConfig(
        rounds=spec["rounds"], feedback=spec.get("feedback", "full"), payoff_bound=chi
    )
    lseed = int(_task_seq(sc, sweep_idx, seed, tag=1).generate_state(1)[0])
    res = run_learning(
        values, grid, model, config, rule=spec.get("rule", "english"),
        lam=spec.get("lam"), seed=lseed,
    )
    out.checks.append(Check(
        sc.id, "regret-budget", True,
        f"N={n} seed={seed}: max regret {max(res.regrets):.3f} within "
        f"{min(res.regret_budgets):.3f}",
    ))

    audit = audit_assumptions(
        gen, spec["assumptions"], n, players, _task_seq(sc, sweep_idx, sc.seeds[0], tag=2)
    )
    if seed_idx == 0:
        out.audit = audit
    sqrt_b, log_b = _bounds_for(gen, audit, n)
    ratio = res.average_welfare / res.expected_opt if res.expected_opt > 0 else 1.0
    if log_b is None:
        display = None
    else:
        caps = [gamma * vm + delta for vm in vmax]
        phi = max(
            (r / c if c > 0 else 0.0) for r, c in zip(res.regrets, caps)
        )
        deficit = phi * (cap * goods * audit.zeta * gamma + delta) / (
            audit.welfare_rate * res.rounds
        )
        display = log_b - deficit
        holds = res.average_welfare >= display * res.expected_opt - BOUND_TOL
        out.checks.append(Check(
            sc.id, "regret-display", holds,
            f"N={n} seed={seed}: avg welfare {res.average_welfare:.4f} vs "
            f"factor {display:.4g} * opt {res.expected_opt:.4f} (measured phi {phi:.3f})",
        ))
    out.rows.append((
        sc.id, n, seed, _rule_label(spec), ratio, sqrt_b, log_b,
        "no-regret", max(res.regrets),
    ))
    return out


def _task_validity(sc: Scenario, sweep_idx: int, n: int, seed_idx: int, seed: int) -> _TaskOut:
    out = _TaskOut()
    gen = sc.spec["generator"]
    lam = sc.spec.get("mix_weight", 0.5)
    rng = np.random.default_rng(_task_seq(sc, sweep_idx, seed))
    rules = (("english", None), ("dutch", None), ("mix", lam))
    violations = {label: 0 for label, _ in rules}
    violations["lattice"] = 0
    violations["monotone"] = 0
    for _ in range(n):
        bids, supply = _random_gs_market(rng, gen)
        oracle = WelfareOracle(bids)
        for label, this_lam in rules:
            outcome = run_mechanism(bids, supply, label, this_lam, oracle=oracle)
            ok, _ = validate_outcome(bids, outcome)
            if not ok:
                violations[label] += 1
        low = oracle.prices(supply, "english")
        high = oracle.prices(supply, "dutch")
        if np.any(low > high + 1e-9):
            violations["lattice"] += 1
        j = int(rng.integers(0, len(supply)))
        bumped = tuple(c + 1 if h == j else c for h, c in enumerate(supply))
        if np.any(oracle.prices(bumped, "english") > low + 1e-9) or np.any(
            oracle.prices(bumped, "dutch") > high + 1e-9
        ):
            violations["monotone"] += 1
    for label in ("english", "dutch", "mix", "lattice", "monotone"):
        count = violations["mix" if label == "mix" else label]
        shown = f"mix({lam:g})" if label == "mix" else label
        out.rows.append((sc.id, n, seed, shown, n, count))
        out.checks.append(Check(
            sc.id, f"validity-{label}", count == 0,
            f"N={n} seed={seed}: {count} violations in {n} instances",
        ))
    return out


def _lemma_market(rng, gen: dict):
    """Market for the price/smoothness lemmas: one good, generous supply."""
    bidders = int(rng.integers(2, gen["max_bidders"] + 1))
    cap = int(rng.integers(1, gen["max_cap"] + 1))
    vals = []
    for _ in range(bidders):
        w = float(rng.uniform(gen["low"], gen["high"]))
        vals.append(KDemand((w,), cap) if cap > 1 else UnitDemand((w,)))
    scarce = rng.random() < 0.2
    if scarce:
        supply = (int(rng.integers(0, cap + 2)),)
    else:
        supply = (int(rng.integers(cap + 2, gen["max_copies"] + cap + 2)),)
    return tuple(vals), supply, cap


def _task_lemmas(sc: Scenario, sweep_idx: int, n: int, seed_idx: int, seed: int) -> _TaskOut:
    out = _TaskOut()
    gen = sc.spec["generator"]
    rng = np.random.default_rng(_task_seq(sc, sweep_idx, seed))
    for lemma in sc.spec["lemmas"]:
        applied = 0
        violations = 0
        if lemma in ("unstable-count", "within-count"):
            for _ in range(n):
                goods = int(rng.integers(1, gen["max_goods"] + 1))
                bidders = int(rng.integers(2, gen["max_bidders"] + 1))
                bids = tuple(
                    UnitDemand(tuple(float(x) for x in rng.uniform(gen["low"], gen["high"], goods)))
                    for _ in range(bidders)
                )
                oracle = WelfareOracle(bids)
                ceiling = max(max(b.weights) for b in bids)
                params = ProbeParams(
                    threshold=float(rng.uniform(0.05, 0.3)),
                    ceiling=ceiling,
                    slack=int(rng.integers(0, 2)),
                    search_box=bidders + 2,
                )
                good = int(rng.integers(0, goods))
                rest = tuple(int(c) for c in rng.integers(0, 3, goods - 1))
                count_unstable_slice(oracle, rest, good, params)  # raises on violation
                applied += 1
        elif lemma == "event-probability":
            for _ in range(n):
                bidders = int(rng.integers(2, gen["max_bidders"] + 1))
                bids = tuple(
                    UnitDemand((float(rng.uniform(gen["low"], gen["high"])),))
                    for _ in range(bidders)
                )
                model = BinomialCounts(1, bidders + 2, 0.5)
                ceiling = max(max(b.weights) for b in bids)
                params = ProbeParams(
                    threshold=float(rng.uniform(0.05, 0.3)),
                    ceiling=ceiling,
                    slack=1,
                    search_box=bidders + 4,
                )
                unstable_event_probability(bids, model, params)  # raises on violation
                applied += 1
        else:
            for _ in range(n):
                vals, supply, cap = _lemma_market(rng, gen)
                i = int(rng.integers(0, len(vals)))
                gamma = float(rng.uniform(0.3, 1.2))
                bids = tuple(
                    scale_bid(v, gamma) if h == i else v for h, v in enumerate(vals)
                )
                ceiling = max(
                    max(max(v.weights) for v in vals),
                    max(max(b.weights) for b in bids),
                )
                _, eps = default_threshold(1, 0.25, cap + 1, ceiling)
                if lemma == "price-floor":
                    verdict = check_price_floor(bids, i, supply)
                elif lemma == "price-bracket":
                    verdict = check_price_bracket(vals, bids, i, supply, cap, eps, ceiling)
                else:
                    verdict = check_smooth_bound(vals, bids, i, supply, cap, eps, ceiling)
                if verdict.applied:
                    applied += 1
                    if not verdict.ok:
                        violations += 1
        out.rows.append((sc.id, n, seed, lemma, n, applied, violations))
        out.checks.append(Check(
            sc.id, f"lemma-{lemma}", violations == 0,
            f"N={n} seed={seed}: {violations} violations in {applied} applied of {n}",
        ))
    return out


def _enumerated_welfare(bids, supply) -> float:
    """Exhaustive optimal welfare for tiny instances (the slow oracle)."""
    m = len(supply)
    menus = []
    for b in bids:
        cap = getattr(b, "cap", 1)
        menus.append([w for w in bundles_upto(m, cap) if all(x <= s for x, s in zip(w, supply))])
    best = 0.0

    def rec(i: int, remaining: tuple[int, ...], acc: float):
        nonlocal best
        if i == len(bids):
            best = max(best, acc)
            return
        for bundle in menus[i]:
            if all(x <= r for x, r in zip(bundle, remaining)):
                rec(
                    i + 1,
                    tuple(r - x for r, x in zip(remaining, bundle)),
                    acc + value(bids[i], bundle),
                )

    rec(0, tuple(supply), 0.0)
    return best


def _task_oracle(sc: Scenario, sweep_idx: int, n: int, seed_idx: int, seed: int) -> _TaskOut:
    out = _TaskOut()
    gen = sc.spec["generator"]
    rng = np.random.default_rng(_task_seq(sc, sweep_idx, seed))
    mismatches = 0
    for _ in range(n):
        bids, supply = _random_gs_market(rng, gen)
        fast = max_welfare(bids, supply)[0]
        slow = _enumerated_welfare(bids, supply)
        if abs(fast - slow) > 1e-9:
            mismatches += 1
    out.rows.append((sc.id, n, seed, n, mismatches))
    out.checks.append(Check(
        sc.id, "oracle-equivalence", mismatches == 0,
        f"N={n} seed={seed}: {mismatches} mismatches in {n} instances",
    ))
    return out


def _draw_fisher_market(rng, gen: dict, buyers: int) -> FisherMarket:
    goods = gen["goods"]
    wl, wh = gen.get("weight_low", 0.2), gen.get("weight_high", 1.0)
    if "budgets" in gen:
        budgets = tuple(float(b) for b in gen["budgets"])
        buyers = len(budgets)
    else:
        budgets = tuple([1.0] * buyers)
    utils = []
    for _ in range(buyers):
        w = rng.uniform(wl, wh, goods)
        if gen["family"] == "cobb_douglas":
            utils.append(CobbDouglas(tuple(float(x) for x in w / w.sum()), 1.0))
        elif gen["family"] == "linear":
            utils.append(Linear(tuple(float(x) for x in w), 1.0))
        else:
            utils.append(CES(tuple(float(x) for x in w / w.sum()), gen["rho"], 1.0))
    return FisherMarket(budgets, tuple(utils))


def _task_fisher_poa(sc: Scenario, sweep_idx: int, L: int, seed_idx: int, seed: int) -> _TaskOut:
    out = _TaskOut()
    spec = sc.spec
    rng = np.random.default_rng(_task_seq(sc, sweep_idx, seed))
    market = _draw_fisher_market(rng, spec["generator"], L)
    if spec.get("rescale", True):
        market = rescale_to_unit(market)
    res = market_poa_search(
        market, deltas=spec["deltas"], rng=rng, restarts=spec.get("restarts", 8)
    )
    ok = res.gm_ratio >= res.bound - BOUND_TOL and res.sum_ratio >= res.bound - BOUND_TOL
    out.checks.append(Check(
        sc.id, "fisher-poa-bound", ok,
        f"L={L} seed={seed}: gm {res.gm_ratio:.4f}, sum {res.sum_ratio:.4f} vs bound {res.bound:.4f}",
    ))
    out.rows.append((
        sc.id, L, market.m, seed, spec["generator"]["family"],
        res.gm_ratio, res.sum_ratio, res.bound, res.equilibria,
    ))
    return out


def _task_fisher_reserve(sc: Scenario, sweep_idx: int, L: int, seed_idx: int, seed: int) -> _TaskOut:
    out = _TaskOut()
    spec = sc.spec
    rng = np.random.default_rng(_task_seq(sc, sweep_idx, seed))
    plain = _draw_fisher_market(rng, spec["generator"], L)
    pstar = np.asarray(solve_market(plain).prices)
    fraction = spec.get("reserve_fraction", 0.25)
    market = FisherMarket(
        plain.budgets, plain.utilities, reserves=tuple(float(x) for x in fraction * pstar)
    )
    res = reserve_poa_search(
        market, deltas=spec["deltas"], rng=rng, restarts=spec.get("restarts", 8)
    )
    ok = res.sum_ratio >= res.bound - BOUND_TOL
    out.checks.append(Check(
        sc.id, "reserve-poa-bound", ok,
        f"L={L} seed={seed}: sum {res.sum_ratio:.4f} vs bound {res.bound:.4f}",
    ))

    trials = spec.get("compress_trials", 10)
    bad = 0
    total = float(sum(plain.budgets))
    for _ in range(trials):
        q = rng.uniform(0.05, 1.0, market.m)
        q = q * (total / q.sum())
        low = float(rng.uniform(0.1, 0.9))
        try:
            prices, t = compress_prices(
                tuple(float(x) for x in q), tuple(float(x) for x in pstar), low, total
            )
        except SolverError:
            bad += 1
            continue
        if abs(sum(prices) - total) > 1e-10 * max(1.0, total):
            bad += 1
            continue
        if any(
            p < low * ps - 1e-12 or p > t * ps + 1e-12 for p, ps in zip(prices, pstar)
        ):
            bad += 1
    if trials:
        out.checks.append(Check(
            sc.id, "compressed-prices", bad == 0,
            f"L={L} seed={seed}: {bad} invariant failures in {trials} random price vectors",
        ))
    out.rows.append((
        sc.id, L, market.m, seed, spec["generator"]["family"],
        res.sum_ratio, res.bound, res.stated_bound, trials, bad,
    ))
    return out


def _task_fisher_regret(sc: Scenario, sweep_idx: int, L: int, seed_idx: int, seed: int) -> _TaskOut:
    out = _TaskOut()
    spec = sc.spec
    rng = np.random.default_rng(_task_seq(sc, sweep_idx, seed))
    plain = _draw_fisher_market(rng, spec["generator"], L)
    pstar = np.asarray(solve_market(plain).prices)
    fraction = spec.get("reserve_fraction", 0.25)
    market = FisherMarket(
        plain.budgets, plain.utilities, reserves=tuple(float(x) for x in fraction * pstar)
    )
    lseed = int(_task_seq(sc, sweep_idx, seed, tag=1).generate_state(1)[0])
    res = run_market_learning(
        market, rounds=spec["rounds"], deltas=spec["deltas"], seed=lseed
    )
    out.checks.append(Check(
        sc.id, "fisher-regret-display", res.holds,
        f"L={L} seed={seed}: avg welfare {res.average_welfare:.4f} vs rhs {res.rhs:.4f} "
        f"(max phi {max(res.phi_measured):.2f})",
    ))
    out.rows.append((
        sc.id, L, market.m, seed, spec["generator"]["family"], res.rounds,
        res.average_welfare, res.truthful_total, res.bound_factor,
        max(res.phi_measured), int(res.holds),
    ))
    return out


_RUNNERS = {
    ("walrasian", "poa_sweep"): _task_poa_sweep,
    ("walrasian", "bullying"): _task_bullying,
    ("walrasian", "regret"): _task_wal_regret,
    ("walrasian", "validity"): _task_validity,
    ("walrasian", "lemmas"): _task_lemmas,
    ("walrasian", "oracle"): _task_oracle,
    ("fisher", "poa"): _task_fisher_poa,
    ("fisher", "reserve"): _task_fisher_reserve,
    ("fisher", "regret"): _task_fisher_regret,
}


def _run_task(args) -> _TaskOut:
    sc, sweep_idx, sweep_val, seed_idx, seed = args
    runner = _RUNNERS[(sc.setting, sc.mode)]
    start = time.perf_counter()
    try:
        result = runner(sc, sweep_idx, sweep_val, seed_idx, seed)
    except (InternalCheckError, SolverError) as e:
        result = _TaskOut(checks=[Check(
            sc.id, f"{sc.mode}-internal", False,
            f"sweep={sweep_val} seed={seed}: {type(e).__name__}: {e}",
        )])
    result.seconds = time.perf_counter() - start
    return result


# -- output ------------------------------------------------------------------------


def _fmt(cell) -> str:
    if cell is None:
        return "N/A"
    if isinstance(cell, bool):
        return str(int(cell))
    if isinstance(cell, float):
        return "%.12g" % cell
    return str(cell)


def _write_csv(path: Path, columns, rows):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(c) for c in row])


@dataclass
class ScenarioReport:
    id: str
    csv_path: str
    rows: int
    passed: bool
    checks: list
    audits: list
    seconds: float


@dataclass
class RunReport:
    passed: bool
    scenarios: list
    out_dir: str
    summary_path: str

    def failed_checks(self):
        return [c for s in self.scenarios for c in s.checks if not c.passed]


def _scenario_level_checks(sc: Scenario, rows: list) -> list:
    checks = []
    if sc.setting == "walrasian" and sc.mode == "poa_sweep" and sc.spec.get("trend_check"):
        by_n = {}
        for row in rows:
            n, ratio = row[1], row[4]
            if ratio is not None:
                by_n.setdefault(n, []).append(ratio)
        if len(by_n) >= 2:
            lo_n, hi_n = min(by_n), max(by_n)
            worst_lo, worst_hi = min(by_n[lo_n]), min(by_n[hi_n])
            ok = worst_hi >= worst_lo + 0.02 or (worst_lo > 0.95 and worst_hi > 0.95)
            checks.append(Check(
                sc.id, "ratio-trend", ok,
                f"worst ratio {worst_lo:.4f} at N={lo_n} vs {worst_hi:.4f} at N={hi_n}",
            ))
    if sc.setting == "walrasian" and sc.mode == "lemmas" and sc.spec.get("min_applied", 0) > 0:
        floor = sc.spec["min_applied"]
        totals = {}
        for row in rows:
            totals[row[3]] = totals.get(row[3], 0) + row[5]
        for lemma in sc.spec["lemmas"]:
            got = totals.get(lemma, 0)
            checks.append(Check(
                sc.id, f"coverage-{lemma}", got >= floor,
                f"{got} precondition-passing instances (need {floor})",
            ))
    return checks


def run_config(
    source: str,
    out_dir: str | None = None,
    seed_override: int | None = None,
    jobs: int = 1,
    only: str | None = None,
) -> RunReport:
    """Execute every scenario in a config; raises CheckFailure if any check fails.

    The report (CSV files plus summary.json) is fully written before the
    failure is raised, so a red run still leaves its evidence on disk.
    """
    scenarios = parse_config(load_config(source))
    if only is not None:
        scenarios = [sc for sc in scenarios if sc.id == only]
        if not scenarios:
            raise ScenarioError(f"--filter: no scenario with id '{only}'")
    if seed_override is not None:
        if seed_override < 0:
            raise ScenarioError("--seed-override: must be >= 0")
        scenarios = [
            Scenario(sc.index, sc.id, sc.setting, sc.mode, sc.sweep, (seed_override,), sc.csv, sc.spec)
            for sc in scenarios
        ]

    out = Path(out_dir or os.environ.get(OUT_ENV) or "results")
    out.mkdir(parents=True, exist_ok=True)

    tasks = []
    for sc in scenarios:
        for sweep_idx, sweep_val in enumerate(sc.sweep):
            for seed_idx, seed in enumerate(sc.seeds):
                tasks.append((sc, sweep_idx, sweep_val, seed_idx, seed))

    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=1))
    else:
        results = [_run_task(t) for t in tasks]

    reports = []
    passed = True
    for sc in scenarios:
        rows, checks, audits, seconds = [], [], [], 0.0
        for task, res in zip(tasks, results):
            if task[0].index != sc.index:
                continue
            rows.extend(res.rows)
            checks.extend(res.checks)
            seconds += res.seconds
            if res.audit is not None:
                audits.append(res.audit)
        checks.extend(_scenario_level_checks(sc, rows))
        csv_path = out / sc.csv
        _write_csv(csv_path, _COLUMNS[(sc.setting, sc.mode)], rows)
        ok = all(c.passed for c in checks)
        passed = passed and ok
        reports.append(ScenarioReport(
            id=sc.id, csv_path=str(csv_path), rows=len(rows), passed=ok,
            checks=checks, audits=audits, seconds=seconds,
        ))

    summary = {
        "schema_version": SCHEMA_VERSION,
        "passed": passed,
        "scenarios": [
            {
                "id": rep.id,
                "csv": rep.csv_path,
                "rows": rep.rows,
                "passed": rep.passed,
                "wall_time_s": round(rep.seconds, 3),
                "checks": [
                    {"name": c.name, "passed": c.passed, "detail": c.detail}
                    for c in rep.checks
                ],
                "audits": [asdict(a) for a in rep.audits],
            }
            for rep in reports
        ],
    }
    summary_path = out / "summary.json"
    with open(summary_path, "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2)
        f.write("\n")

    report = RunReport(passed=passed, scenarios=reports, out_dir=str(out), summary_path=str(summary_path))
    if not passed:
        first = report.failed_checks()[0]
        exc = CheckFailure(f"{first.scenario}/{first.name}: {first.detail}")
        exc.report = report
        raise exc
    return report
