"""Problem definition and standing-assumption validators.

A :class:`ProblemSpec` bundles everything that defines one switching-game
instance on ``[0, T] x R^k``: mode sets for the two players, diffusion
coefficients ``b`` and ``sigma``, jump amplitude ``beta`` and per-mode jump
weights ``gamma``, drivers ``g^{ij}``, switching costs (lower costs for the
maximizer, upper costs for the minimizer), terminal data ``h^{ij}``, the
jump measure, and a polynomial growth bound used for extrapolation beyond a
truncated domain.

Validators check the standing assumptions by finite sampling (the
coefficient expressions are opaque, so nothing is proved symbolically):

* non-free-loop property: no cycle of switches has zero net cost,
* terminal consistency: ``max_k (h^{kj} - lower_ik(T)) <= h^{ij}
  <= min_l (h^{il} + upper_jl(T))``,
* coefficient bounds: non-negative costs, ``0 <= gamma <= C (1 ^ |e|)``,
  ``|beta| <= K (1 ^ |e|)``, and monotonicity probes of the drivers in the
  jump argument and in the off-diagonal value entries (probe failures are
  reported as warnings, they do not block a solve).

ProblemSpec instances are immutable after construction and safe to share
across workers; every validator is a pure function.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import exprdsl
from .exprdsl import Expr, NumericDomainError, evaluate, parse

__all__ = [
    "ModeSet",
    "GrowthBound",
    "LevyMeasureSpec",
    "ProblemSpec",
    "ValidationReport",
    "CapacityError",
    "MalformedSpecError",
    "validate_non_free_loop",
    "validate_terminal_consistency",
    "validate_coefficient_bounds",
    "eval_obstacles",
    "obstacles_for_field",
    "eval_penalized_driver",
    "eval_f_ij",
    "neg_part",
    "pos_part",
    "driver_variable",
    "load_problem",
    "load_builtin_problem",
    "builtin_problem_names",
]

MAX_MODE_PAIRS = 36
MAX_ENUMERATED_LOOPS = 200_000

DRIFT_SCHEMA = ("t", "x")
COST_SCHEMA = ("t", "x")
TERMINAL_SCHEMA = ("x",)
JUMP_SCHEMA = ("x", "e")
DENSITY_SCHEMA = ("e",)


class CapacityError(ValueError):
    """A desk-scale cap was exceeded (mode pairs, loop enumeration, ...)."""


class MalformedSpecError(ValueError):
    """A problem definition is structurally broken or fails to evaluate."""


def driver_variable(i: int, j: int) -> str:
    """DSL variable name bound to the value-matrix entry for mode pair (i, j)."""
    return f"y_{i}_{j}"


def neg_part(x):
    """(-x) v 0, elementwise."""
    return np.maximum(-x, 0.0)


def pos_part(x):
    """x v 0, elementwise."""
    return np.maximum(x, 0.0)


@dataclass(frozen=True)
class ModeSet:
    """Mode counts for the two players; indices run 0..m1-1 and 0..m2-1."""

    m1: int
    m2: int

    def __post_init__(self):
        if self.m1 < 1 or self.m2 < 1:
            raise MalformedSpecError(f"mode counts must be >= 1, got ({self.m1}, {self.m2})")
        if self.m1 * self.m2 > MAX_MODE_PAIRS:
            raise CapacityError(
                f"m1*m2 = {self.m1 * self.m2} exceeds the supported cap of {MAX_MODE_PAIRS} mode pairs"
            )

    def pairs(self) -> Iterable[tuple[int, int]]:
        for i in range(self.m1):
            for j in range(self.m2):
                yield (i, j)


@dataclass(frozen=True)
class GrowthBound:
    """Polynomial growth envelope ``|v| <= coeff * (1 + |x|^exponent)``.

    Drives off-grid extrapolation of value surfaces.  ``coeff = 0`` selects a
    plain clamp to the boundary value.
    """

    coeff: float = 0.0
    exponent: float = 0.0

    def __post_init__(self):
        if self.coeff < 0 or self.exponent < 0:
            raise MalformedSpecError("growth bound requires coeff >= 0 and exponent >= 0")


@dataclass(frozen=True)
class LevyMeasureSpec:
    """Jump measure: either a finite atom list or a density with truncation.

    ``cutoff`` is the small-jump threshold; marks below it are replaced by a
    matched diffusion correction when the quadrature is built.
    """

    atoms: tuple[tuple[float, float], ...] | None = None
    density: Expr | None = None
    radius: float | None = None
    cutoff: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.cutoff < 1.0):
            raise MalformedSpecError(f"cutoff must lie in [0, 1), got {self.cutoff}")
        if self.atoms is None and self.density is None:
            object.__setattr__(self, "atoms", ())
        if self.atoms is not None and self.density is not None:
            raise MalformedSpecError("give either atoms or a density, not both")
        if self.atoms is not None:
            for e, w in self.atoms:
                if not (math.isfinite(e) and math.isfinite(w)) or w <= 0:
                    raise MalformedSpecError(f"atom ({e}, {w}) must have finite mark and weight > 0")
        if self.density is not None:
            if self.radius is None or not (self.radius > self.cutoff > 0.0):
                raise MalformedSpecError("a density descriptor requires radius > cutoff > 0")

    @staticmethod
    def from_dict(d: Mapping) -> "LevyMeasureSpec":
        if "density" in d:
            dens = d["density"]
            expr = parse(dens, DENSITY_SCHEMA) if isinstance(dens, str) else dens
            return LevyMeasureSpec(
                atoms=None,
                density=expr,
                radius=float(d["radius"]),
                cutoff=float(d.get("cutoff", 0.0)),
            )
        atoms = tuple((float(e), float(w)) for e, w in d.get("atoms", []))
        return LevyMeasureSpec(atoms=atoms, cutoff=float(d.get("cutoff", 0.0)))


def _as_expr(value, schema: Sequence[str]) -> Expr:
    if isinstance(value, str):
        return parse(value, schema)
    if isinstance(value, (int, float)):
        return exprdsl.Num(float(value))
    return value  # already an Expr


def _pair_map(raw: Mapping, pairs: Iterable[tuple[int, int]], schema: Sequence[str], what: str) -> dict:
    """Normalize {"i,j": expr} / {(i,j): expr} maps; 'default' fills gaps."""
    parsed: dict[tuple[int, int], Expr] = {}
    default = raw.get("default") if isinstance(raw, Mapping) else None
    for key, value in raw.items():
        if key == "default":
            continue
        if isinstance(key, str):
            a, b = key.split(",")
            pair = (int(a), int(b))
        else:
            pair = (int(key[0]), int(key[1]))
        parsed[pair] = _as_expr(value, schema)
    out = {}
    for pair in pairs:
        if pair in parsed:
            out[pair] = parsed[pair]
        elif default is not None:
            out[pair] = _as_expr(default, schema)
        else:
            raise MalformedSpecError(f"missing {what} entry for mode pair {pair}")
    return out


@dataclass(frozen=True)
class ProblemSpec:
    """One switching-game instance; all coefficients are parsed DSL trees."""

    modes: ModeSet
    horizon: float
    drift: Expr
    vol: Expr
    jump_amplitude: Expr
    jump_weights: Mapping[tuple[int, int], Expr]
    drivers: Mapping[tuple[int, int], Expr]
    lower_costs: Mapping[tuple[int, int], Expr]
    upper_costs: Mapping[tuple[int, int], Expr]
    terminal: Mapping[tuple[int, int], Expr]
    levy: LevyMeasureSpec
    growth: GrowthBound = GrowthBound()
    dim: int = 1
    name: str = ""

    def __post_init__(self):
        if self.horizon <= 0:
            raise MalformedSpecError(f"horizon must be positive, got {self.horizon}")
        if self.dim != 1:
            raise CapacityError("only state dimension 1 is supported by this solver suite")
        m1, m2 = self.modes.m1, self.modes.m2
        pairs = set(self.modes.pairs())
        for label, mapping, keys in (
            ("driver", self.drivers, pairs),
            ("jump weight", self.jump_weights, pairs),
            ("terminal", self.terminal, pairs),
            ("lower cost", self.lower_costs, {(i, k) for i in range(m1) for k in range(m1) if i != k}),
            ("upper cost", self.upper_costs, {(j, l) for j in range(m2) for l in range(m2) if j != l}),
        ):
            missing = keys - set(mapping)
            if missing:
                raise MalformedSpecError(f"missing {label} entries for {sorted(missing)}")
        for name in ("jump_weights", "drivers", "lower_costs", "upper_costs", "terminal"):
            object.__setattr__(self, name, MappingProxyType(dict(getattr(self, name))))

    # --- construction -------------------------------------------------

    @staticmethod
    def from_dict(d: Mapping) -> "ProblemSpec":
        try:
            modes = ModeSet(int(d["modes"]["m1"]), int(d["modes"]["m2"]))
            pairs = list(modes.pairs())
            driver_schema = ("t", "x", "z", "q") + tuple(driver_variable(i, j) for i, j in pairs)
            lower_keys = [(i, k) for i in range(modes.m1) for k in range(modes.m1) if i != k]
            upper_keys = [(j, l) for j in range(modes.m2) for l in range(modes.m2) if j != l]
            return ProblemSpec(
                modes=modes,
                horizon=float(d["horizon"]),
                drift=_as_expr(d.get("drift", "0"), DRIFT_SCHEMA),
                vol=_as_expr(d.get("vol", "0"), DRIFT_SCHEMA),
                jump_amplitude=_as_expr(d.get("jump_amplitude", "0"), JUMP_SCHEMA),
                jump_weights=_pair_map(d.get("jump_weights", {"default": "0"}), pairs, JUMP_SCHEMA, "jump weight"),
                drivers=_pair_map(d["drivers"], pairs, driver_schema, "driver"),
                lower_costs=_pair_map(d.get("lower_costs", {}), lower_keys, COST_SCHEMA, "lower cost"),
                upper_costs=_pair_map(d.get("upper_costs", {}), upper_keys, COST_SCHEMA, "upper cost"),
                terminal=_pair_map(d["terminal"], pairs, TERMINAL_SCHEMA, "terminal"),
                levy=LevyMeasureSpec.from_dict(d.get("levy", {})),
                growth=GrowthBound(float(d.get("growth", {}).get("C", 0.0)), float(d.get("growth", {}).get("gamma", 0.0))),
                name=str(d.get("name", "")),
            )
        except (KeyError, TypeError) as exc:
            raise MalformedSpecError(f"problem definition is missing or mistypes a field: {exc}") from exc

    def driver_schema(self) -> tuple[str, ...]:
        return ("t", "x", "z", "q") + tuple(driver_variable(i, j) for i, j in self.modes.pairs())

    # --- coefficient evaluation ----------------------------------------
    # Every helper broadcasts a constant expression to the shape of x.

    def _field(self, expr: Expr, ctx: Mapping, x) -> np.ndarray:
        val = evaluate(expr, ctx)
        arr = np.asarray(val, dtype=float)
        x = np.asarray(x, dtype=float)
        if arr.shape != x.shape:
            arr = np.broadcast_to(arr, x.shape).copy()
        return arr

    def eval_drift(self, t: float, x) -> np.ndarray:
        return self._field(self.drift, {"t": t, "x": np.asarray(x, dtype=float)}, x)

    def eval_vol(self, t: float, x) -> np.ndarray:
        return self._field(self.vol, {"t": t, "x": np.asarray(x, dtype=float)}, x)

    def eval_beta(self, x, e: float) -> np.ndarray:
        return self._field(self.jump_amplitude, {"x": np.asarray(x, dtype=float), "e": e}, x)

    def eval_gamma(self, pair: tuple[int, int], x, e: float) -> np.ndarray:
        return self._field(self.jump_weights[pair], {"x": np.asarray(x, dtype=float), "e": e}, x)

    def eval_lower_cost(self, i: int, k: int, t: float, x) -> np.ndarray:
        return self._field(self.lower_costs[(i, k)], {"t": t, "x": np.asarray(x, dtype=float)}, x)

    def eval_upper_cost(self, j: int, l: int, t: float, x) -> np.ndarray:
        return self._field(self.upper_costs[(j, l)], {"t": t, "x": np.asarray(x, dtype=float)}, x)

    def eval_terminal(self, pair: tuple[int, int], x) -> np.ndarray:
        return self._field(self.terminal[pair], {"x": np.asarray(x, dtype=float)}, x)

    def eval_driver(self, pair: tuple[int, int], t: float, x, y_entries: Mapping[str, object], z, q) -> np.ndarray:
        ctx = {"t": t, "x": np.asarray(x, dtype=float), "z": z, "q": q}
        ctx.update(y_entries)
        return self._field(self.drivers[pair], ctx, x)

    def lower_cost_table(self, t: float, x) -> np.ndarray:
        """(m1, m1, ...) array of lower switching costs at (t, x); diagonal 0."""
        x = np.asarray(x, dtype=float)
        m1 = self.modes.m1
        out = np.zeros((m1, m1) + x.shape)
        for i in range(m1):
            for k in range(m1):
                if i != k:
                    out[i, k] = self.eval_lower_cost(i, k, t, x)
        return out

    def upper_cost_table(self, t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        m2 = self.modes.m2
        out = np.zeros((m2, m2) + x.shape)
        for j in range(m2):
            for l in range(m2):
                if j != l:
                    out[j, l] = self.eval_upper_cost(j, l, t, x)
        return out


# --- obstacles ---------------------------------------------------------


def eval_obstacles(y: np.ndarray, lower_costs: np.ndarray, upper_costs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Interconnected obstacles built from a value matrix.

    ``L[i,j] = max_{k != i} (y[k,j] - lower_costs[i,k])`` and
    ``U[i,j] = min_{l != j} (y[i,l] + upper_costs[j,l])``.  When a player has
    a single mode the corresponding obstacle is the sentinel -inf / +inf,
    which makes downstream penalties and projections vanish.

    ``y`` may carry trailing axes (e.g. grid nodes); costs broadcast along
    them.
    """
    m1, m2 = y.shape[0], y.shape[1]
    tail = y.shape[2:]
    L = np.full((m1, m2) + tail, -np.inf)
    U = np.full((m1, m2) + tail, np.inf)
    for i in range(m1):
        for j in range(m2):
            if m1 > 1:
                cands = [y[k, j] - lower_costs[i, k] for k in range(m1) if k != i]
                L[i, j] = np.max(np.stack(cands), axis=0) if tail else max(cands)
            if m2 > 1:
                cands = [y[i, l] + upper_costs[j, l] for l in range(m2) if l != j]
                U[i, j] = np.min(np.stack(cands), axis=0) if tail else min(cands)
    return L, U


def obstacles_for_field(values: np.ndarray, lower_costs: np.ndarray, upper_costs: np.ndarray):
    """Alias of :func:`eval_obstacles` for (m1, m2, nodes) value fields."""
    return eval_obstacles(values, lower_costs, upper_costs)


# --- penalized driver and integral driver --------------------------------


def eval_penalized_driver(
    spec: ProblemSpec,
    pair: tuple[int, int],
    n: float,
    m: float,
    t: float,
    x: float,
    y: np.ndarray,
    z: float,
    q: float,
) -> float:
    """Driver of the doubly-penalized system at one point.

    Returns ``g^{ij}(t,x,y,z,q) + n*(y_ij - L_ij)^- - m*(y_ij - U_ij)^+``.
    Absent obstacles (single-mode players) contribute nothing.
    """
    if not (math.isfinite(n) and math.isfinite(m)) or n < 0 or m < 0:
        raise NumericDomainError(f"penalty parameters must be finite and non-negative, got ({n}, {m})", "n, m")
    for label, v in (("t", t), ("x", x), ("z", z), ("q", q)):
        if not math.isfinite(v):
            raise NumericDomainError(f"non-finite input {label}={v}", label)
    if not np.all(np.isfinite(y)):
        raise NumericDomainError("non-finite value matrix", "y")
    lc = spec.lower_cost_table(t, np.asarray(x, dtype=float))
    uc = spec.upper_cost_table(t, np.asarray(x, dtype=float))
    L, U = eval_obstacles(np.asarray(y, dtype=float), lc, uc)
    i, j = pair
    entries = {driver_variable(p, l): float(y[p, l]) for p, l in spec.modes.pairs()}
    g = float(spec.eval_driver(pair, t, np.asarray(x, dtype=float), entries, z, q))
    return g + n * float(neg_part(y[i, j] - L[i, j])) - m * float(pos_part(y[i, j] - U[i, j]))


def eval_f_ij(spec: ProblemSpec, pair: tuple[int, int], t: float, x: float, y: np.ndarray, z: float, u, quadrature) -> float:
    """Driver with the jump argument integrated: ``g(t,x,y,z, sum_k u(e_k) gamma(x,e_k) w_k)``."""
    q = 0.0
    for e_k, w_k in zip(quadrature.marks, quadrature.weights):
        q += float(u(e_k)) * float(spec.eval_gamma(pair, np.asarray(x, dtype=float), float(e_k))) * float(w_k)
    entries = {driver_variable(p, l): float(y[p, l]) for p, l in spec.modes.pairs()}
    return float(spec.eval_driver(pair, t, np.asarray(x, dtype=float), entries, z, q))


# --- validation ----------------------------------------------------------


@dataclass
class ValidationReport:
    """Outcome of one validator: hard violations block, warnings do not."""

    name: str
    passed: bool
    violations: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "violations": self.violations,
            "warnings": self.warnings,
            "details": self.details,
        }


def _simple_loops(m1: int, m2: int, moves: str = "both") -> list[list[tuple[int, int]]]:
    """All directed simple loops in the mode-pair graph.

    A loop is a pair sequence returning to its start, visiting distinct pairs
    in between, each step changing exactly one coordinate.  ``moves``
    restricts steps to player 1 ('lower'), player 2 ('upper') or both.
    Canonical form: the loop starts at its smallest pair, so rotations are
    not re-enumerated (both traversal directions are kept, their cost sums
    differ).
    """
    if m1 * m2 > MAX_MODE_PAIRS:
        raise CapacityError(f"loop enumeration supports at most {MAX_MODE_PAIRS} mode pairs")
    nodes = [(i, j) for i in range(m1) for j in range(m2)]
    index = {p: n for n, p in enumerate(nodes)}

    def neighbors(p):
        i, j = p
        if moves in ("both", "lower"):
            for k in range(m1):
                if k != i:
                    yield (k, j)
        if moves in ("both", "upper"):
            for l in range(m2):
                if l != j:
                    yield (i, l)

    loops: list[list[tuple[int, int]]] = []

    def extend(start, path, visited):
        if len(loops) > MAX_ENUMERATED_LOOPS:
            raise CapacityError(f"loop enumeration exceeded {MAX_ENUMERATED_LOOPS} loops; reduce the mode sets")
        for nxt in neighbors(path[-1]):
            if nxt == start and len(path) >= 2:
                loops.append(path + [start])
            elif nxt not in visited and index[nxt] > index[start]:
                visited.add(nxt)
                extend(start, path + [nxt], visited)
                visited.discard(nxt)

    for start in nodes:
        extend(start, [start], {start})
    return loops


def validate_non_free_loop(
    spec: ProblemSpec,
    sample_points: Sequence[tuple[float, float]],
    tol: float = 1e-9,
    moves: str = "both",
) -> ValidationReport:
    """Check that every simple switching loop has a nonvanishing cost sum.

    Each loop leg contributes ``-lower_cost`` when player 1 switches and
    ``+upper_cost`` when player 2 switches.  A loop whose sum is within
    ``tol`` (relative to the leg magnitudes) of zero at any sample point is
    reported as a violation.
    """
    if not sample_points:
        raise MalformedSpecError("sample_points must be non-empty")
    try:
        loops = _simple_loops(spec.modes.m1, spec.modes.m2, moves=moves)
    except CapacityError:
        raise
    ts = np.array([p[0] for p in sample_points], dtype=float)
    xs = np.array([p[1] for p in sample_points], dtype=float)

    cost_cache: dict[tuple[str, int, int], np.ndarray] = {}

    def leg_cost(p, q_):
        (i1, j1), (i2, j2) = p, q_
        if i1 != i2:
            key = ("low", i1, i2)
            if key not in cost_cache:
                vals = np.array([float(spec.eval_lower_cost(i1, i2, float(t), np.asarray(x))) for t, x in zip(ts, xs)])
                cost_cache[key] = vals
            return -cost_cache[key]
        key = ("up", j1, j2)
        if key not in cost_cache:
            vals = np.array([float(spec.eval_upper_cost(j1, j2, float(t), np.asarray(x))) for t, x in zip(ts, xs)])
            cost_cache[key] = vals
        return cost_cache[key]

    violations = []
    try:
        for loop in loops:
            total = np.zeros(len(sample_points))
            scale = np.ones(len(sample_points))
            for a, b in zip(loop[:-1], loop[1:]):
                leg = leg_cost(a, b)
                total = total + leg
                scale = np.maximum(scale, np.abs(leg))
            bad = np.abs(total) < tol * scale
            if np.any(bad):
                w = int(np.argmax(bad))
                violations.append(
                    {
                        "loop": [list(p) for p in loop],
                        "point": [float(ts[w]), float(xs[w])],
                        "loop_sum": float(total[w]),
                    }
                )
    except exprdsl.ExprError as exc:
        raise MalformedSpecError(f"cost expression failed to evaluate: {exc}") from exc

    return ValidationReport(
        name="non_free_loop",
        passed=not violations,
        violations=violations,
        details={"loops_checked": len(loops), "points_checked": len(sample_points), "moves": moves},
    )


def validate_terminal_consistency(spec: ProblemSpec, sample_xs: Sequence[float], tol: float = 1e-12) -> ValidationReport:
    """Check the terminal sandwich against switching costs at expiry."""
    xs = np.asarray(list(sample_xs), dtype=float)
    T = spec.horizon
    m1, m2 = spec.modes.m1, spec.modes.m2
    h = np.stack([np.stack([spec.eval_terminal((i, j), xs) for j in range(m2)]) for i in range(m1)])
    lc = spec.lower_cost_table(T, xs)
    uc = spec.upper_cost_table(T, xs)
    L, U = eval_obstacles(h, lc, uc)
    low_viol = neg_part(h - L)  # L > h
    up_viol = pos_part(h - U)  # h > U
    worst = max(float(np.max(low_viol)), float(np.max(up_viol)))
    violations = []
    if worst > tol:
        side = "lower" if np.max(low_viol) >= np.max(up_viol) else "upper"
        viol = low_viol if side == "lower" else up_viol
        flat = int(np.argmax(viol))
        i, j, w = np.unravel_index(flat, viol.shape)
        violations.append(
            {
                "pair": [int(i), int(j)],
                "x": float(xs[w]),
                "side": side,
                "magnitude": float(viol[i, j, w]),
            }
        )
    return ValidationReport(
        name="terminal_consistency",
        passed=not violations,
        violations=violations,
        details={"worst_violation": worst, "points_checked": len(xs)},
    )


def validate_coefficient_bounds(
    spec: ProblemSpec,
    sample_ts: Sequence[float],
    sample_xs: Sequence[float],
    sample_es: Sequence[float] = (-1.0, -0.5, -0.1, 0.1, 0.5, 1.0),
    tol: float = 1e-12,
) -> ValidationReport:
    """Probe cost non-negativity, gamma/beta envelopes and driver monotonicity.

    Sampling can only certify, never prove: the report records the inferred
    envelope constants.  Monotonicity probe failures (driver decreasing in
    the jump argument or in an off-diagonal value entry) are warnings; they
    flag an instance the comparison structure may not cover, but do not
    block a solve.
    """
    xs = np.asarray(list(sample_xs), dtype=float)
    violations: list = []
    warnings: list = []
    details: dict = {}

    for t in sample_ts:
        for (i, k), _ in spec.lower_costs.items():
            vals = spec.eval_lower_cost(i, k, float(t), xs)
            if np.min(vals) < -tol:
                violations.append({"what": f"lower_cost[{i},{k}]", "t": float(t), "min": float(np.min(vals))})
        for (j, l), _ in spec.upper_costs.items():
            vals = spec.eval_upper_cost(j, l, float(t), xs)
            if np.min(vals) < -tol:
                violations.append({"what": f"upper_cost[{j},{l}]", "t": float(t), "min": float(np.min(vals))})

    gamma_ratio = 0.0
    beta_ratio = 0.0
    for e in sample_es:
        cap = min(1.0, abs(float(e)))
        beta_vals = spec.eval_beta(xs, float(e))
        beta_ratio = max(beta_ratio, float(np.max(np.abs(beta_vals))) / cap)
        for pair in spec.modes.pairs():
            g_vals = spec.eval_gamma(pair, xs, float(e))
            if np.min(g_vals) < -tol:
                violations.append({"what": f"gamma[{pair}]", "e": float(e), "min": float(np.min(g_vals))})
            gamma_ratio = max(gamma_ratio, float(np.max(g_vals)) / cap)
    details["gamma_envelope_constant"] = gamma_ratio
    details["beta_envelope_constant"] = beta_ratio

    # driver monotonicity probes: q and off-diagonal y entries
    h_probe = 1e-4
    y0 = np.zeros((spec.modes.m1, spec.modes.m2))
    probe_x = xs[:: max(1, len(xs) // 8)]
    for t in sample_ts:
        for pair in spec.modes.pairs():
            entries = {driver_variable(p, l): float(y0[p, l]) for p, l in spec.modes.pairs()}
            base = spec.eval_driver(pair, float(t), probe_x, entries, 0.0, 0.0)
            bumped = spec.eval_driver(pair, float(t), probe_x, entries, 0.0, h_probe)
            if np.min(bumped - base) < -tol:
                warnings.append({"what": f"driver[{pair}] decreasing in q", "t": float(t)})
            for other in spec.modes.pairs():
                if other == pair:
                    continue
                entries2 = dict(entries)
                entries2[driver_variable(*other)] = h_probe
                bumped_y = spec.eval_driver(pair, float(t), probe_x, entries2, 0.0, 0.0)
                if np.min(bumped_y - base) < -tol:
                    warnings.append({"what": f"driver[{pair}] decreasing in y[{other}]", "t": float(t)})

    return ValidationReport(
        name="coefficient_bounds",
        passed=not violations,
        violations=violations,
        warnings=warnings,
        details=details,
    )


# --- shipped problems -----------------------------------------------------


def load_problem(source) -> ProblemSpec:
    """Build a ProblemSpec from a dict, a JSON string or a file path."""
    if isinstance(source, Mapping):
        return ProblemSpec.from_dict(source)
    text = str(source)
    if text.strip().startswith("{"):
        return ProblemSpec.from_dict(json.loads(text))
    with open(text, "r", encoding="utf-8") as fh:
        return ProblemSpec.from_dict(json.load(fh))


def builtin_problem_names() -> list[str]:
    files = resources.files("switchvi.problems")
    return sorted(p.name[: -len(".json")] for p in files.iterdir() if p.name.endswith(".json"))


def load_builtin_problem(name: str) -> ProblemSpec:
    ref = resources.files("switchvi.problems").joinpath(f"{name}.json")
    return ProblemSpec.from_dict(json.loads(ref.read_text(encoding="utf-8")))
