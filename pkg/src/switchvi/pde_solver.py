"""Backward-in-time monotone finite-difference solvers.

Four related systems are solved on the same grid, all driven by the same
explicit monotone step (optionally with implicit diffusion):

* the doubly penalized system: both obstacles replaced by penalty terms
  ``+ n (v - L[v])^-`` and ``- m (v - U[v])^+`` with all terms lagged to the
  previous time level;
* the lower-reflected system: upper obstacle penalized with strength ``m``,
  lower obstacle enforced exactly by Gauss-Seidel projection sweeps
  ``v_ij <- max(v_ij, max_{k != i} (v_kj - lower_ik))`` after each step;
* the upper-reflected system: mirror image, implemented by a sign-flip
  reduction: transpose the mode matrix, swap the cost families, negate
  terminal data and conjugate the drivers, solve the lower-reflected system,
  and negate back;
* the bilateral systems: backward induction with the bilateral projection
  swept to a fixed point each step.  The projection order encodes obstacle
  priority: ``max(L, min(U, .))`` gives the min-max system (lower obstacle
  wins), ``min(U, max(L, .))`` the max-min system.  Both can also be reached
  as limits of the one-sided solvers along a penalty schedule.

Monotonicity is the load-bearing property: with the CFL guard satisfied,
each step output is non-decreasing in every input node value, which
transfers the comparison structure of the continuous systems to the grid
(penalty-parameter monotonicity, ordering of the two bilateral solutions,
terminal-data comparison).  Large penalties force small steps because ``n``
and ``m`` enter the CFL bound linearly; that trade-off is inherent to the
explicit treatment.

Within one backward step node updates only read the previous level, so they
are order-independent; obstacle sweeps run sequentially over mode pairs
(lexicographic order, direction alternating each sweep) but are vectorized
over nodes.  Identical inputs give bitwise-identical results.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from . import exprdsl
from .discretization import (
    LevyQuadrature,
    SpatialGrid,
    TimeGrid,
    ValueField,
    beta_slope_at_zero,
    second_derivative_surface,
)
from .model import (
    ModeSet,
    ProblemSpec,
    driver_variable,
    eval_obstacles,
    neg_part,
    pos_part,
    validate_non_free_loop,
    validate_terminal_consistency,
)

__all__ = [
    "SchemeConfig",
    "SolverReport",
    "Trajectory",
    "CflViolationError",
    "SweepNonConvergenceError",
    "ScheduleNonConvergenceError",
    "AssumptionViolationError",
    "compute_cfl_bound",
    "estimate_driver_lipschitz",
    "step_penalized",
    "solve_penalized",
    "solve_lower_reflected",
    "solve_upper_reflected",
    "solve_minmax",
    "solve_maxmin",
    "residual_report",
    "negated_transposed_spec",
    "DEFAULT_PENALTY_SCHEDULE",
]

DEFAULT_PENALTY_SCHEDULE = (1, 2, 4, 8, 16, 32, 64, 128, 256)


class CflViolationError(ValueError):
    """Explicit step rejected: the stability bound exceeds the safety factor."""


class SweepNonConvergenceError(RuntimeError):
    def __init__(self, worst_residual: float, sweeps: int):
        self.worst_residual = worst_residual
        self.sweeps = sweeps
        super().__init__(
            f"obstacle sweeps did not stabilize within {sweeps} passes "
            f"(worst residual {worst_residual:.3e}); check the non-free-loop "
            f"property or loosen the sweep tolerance"
        )


class ScheduleNonConvergenceError(RuntimeError):
    def __init__(self, gaps: list, trajectory=None, report=None):
        self.gaps = gaps
        self.trajectory = trajectory
        self.report = report
        tail = gaps[-2:] if len(gaps) >= 2 else gaps
        super().__init__(f"penalty schedule did not converge; last gaps: {tail}")


class AssumptionViolationError(ValueError):
    def __init__(self, report):
        self.report = report
        super().__init__(f"standing assumption '{report.name}' violated: {report.violations[:1]}")


@dataclass(frozen=True)
class SchemeConfig:
    """Stepping configuration shared by all solvers.

    ``mode`` is ``"explicit"`` or ``"imex"`` (diffusion implicit via a
    tridiagonal solve, everything else explicit).  ``sweep_tol = 0`` runs
    obstacle sweeps to bitwise stabilization, which finitely many passes
    reach under the non-free-loop property.
    """

    mode: str = "explicit"
    cfl_factor: float = 1.0
    sweep_tol: float = 0.0
    max_sweeps: int = 500
    allow_terminal_inconsistency: bool = False

    def __post_init__(self):
        if self.mode not in ("explicit", "imex"):
            raise ValueError(f"unknown scheme mode '{self.mode}'")
        if not (0.0 < self.cfl_factor <= 1.0):
            raise ValueError("cfl_factor must lie in (0, 1]")


@dataclass
class SolverReport:
    """Diagnostics for one backward solve."""

    system: str
    dt: float
    n_steps: int
    cfl_bound: float = 0.0
    cfl_terms: dict = field(default_factory=dict)
    update_norms: list = field(default_factory=list)
    obstacle_lower_violation: list = field(default_factory=list)
    obstacle_upper_violation: list = field(default_factory=list)
    sweep_counts: list = field(default_factory=list)
    residual_norms: dict = field(default_factory=dict)
    schedule: list = field(default_factory=list)
    schedule_gaps: list = field(default_factory=list)
    converged: bool = True
    terminal_inconsistency: float = 0.0
    wall_clock_s: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "system": self.system,
            "dt": self.dt,
            "n_steps": self.n_steps,
            "cfl_bound": self.cfl_bound,
            "cfl_terms": self.cfl_terms,
            "update_norms": [float(v) for v in self.update_norms],
            "obstacle_lower_violation": [float(v) for v in self.obstacle_lower_violation],
            "obstacle_upper_violation": [float(v) for v in self.obstacle_upper_violation],
            "sweep_counts": [int(c) for c in self.sweep_counts],
            "residual_norms": self.residual_norms,
            "schedule": list(self.schedule),
            "schedule_gaps": [float(g) for g in self.schedule_gaps],
            "converged": self.converged,
            "terminal_inconsistency": float(self.terminal_inconsistency),
            "wall_clock_s": self.wall_clock_s,
            "extra": self.extra,
        }


@dataclass
class Trajectory:
    """Value surfaces at every time level, index 0 = initial time, -1 = expiry."""

    times: np.ndarray  # (n_levels,)
    values: np.ndarray  # (n_levels, m1, m2, n_nodes)
    grid: SpatialGrid
    tgrid: TimeGrid

    def level(self, k: int) -> ValueField:
        return ValueField(self.values[k], float(self.times[k]))

    @property
    def n_levels(self) -> int:
        return int(self.values.shape[0])

    def sup_distance(self, other: "Trajectory") -> float:
        return float(np.max(np.abs(self.values - other.values)))


# --- CFL ------------------------------------------------------------------


def estimate_driver_lipschitz(spec: ProblemSpec, grid: SpatialGrid, tgrid: TimeGrid) -> float:
    """Probe the drivers' joint Lipschitz constant in (y, z, q) by finite differences.

    Sampling cannot certify a bound; the estimate feeds the CFL guard, which
    already carries a safety factor.
    """
    x = grid.axis()
    probe_x = x[:: max(1, len(x) // 8)]
    ts = (0.0, 0.5 * tgrid.horizon, tgrid.horizon)
    h = 1e-5
    pairs = list(spec.modes.pairs())
    bases = [np.zeros((spec.modes.m1, spec.modes.m2))]
    term = np.array([[float(np.mean(spec.eval_terminal((i, j), probe_x))) for j in range(spec.modes.m2)] for i in range(spec.modes.m1)])
    bases.append(term)
    worst = 0.0
    for t in ts:
        for pair in pairs:
            for y0 in bases:
                entries = {driver_variable(p, l): float(y0[p, l]) for p, l in pairs}
                base = spec.eval_driver(pair, float(t), probe_x, entries, 0.0, 0.0)
                sq = np.zeros_like(probe_x)
                for other in pairs:
                    bumped = dict(entries)
                    bumped[driver_variable(*other)] = float(y0[other]) + h
                    dy = (spec.eval_driver(pair, float(t), probe_x, bumped, 0.0, 0.0) - base) / h
                    sq = sq + dy**2
                dz = (spec.eval_driver(pair, float(t), probe_x, entries, h, 0.0) - base) / h
                dq = (spec.eval_driver(pair, float(t), probe_x, entries, 0.0, h) - base) / h
                worst = max(worst, float(np.max(np.sqrt(sq + dz**2 + dq**2))))
    return worst


def compute_cfl_bound(
    spec: ProblemSpec,
    grid: SpatialGrid,
    tgrid: TimeGrid,
    quad: LevyQuadrature,
    n: float,
    m: float,
    lip_g: float | None = None,
) -> tuple[float, dict]:
    """Stability number of the explicit step.

    ``dt * (2 ||sigma sigma^T||/dx^2 + ||b||/dx + Lambda + n + m + Lip_g)``
    with ``Lambda = sum_k w_k sup gamma + sum_k w_k``.  The diffusion norm
    includes the small-jump surrogate and the drift norm the compensator
    drift ``sum_k w_k sup|beta|``; both act on the grid exactly like the
    coefficients they augment, so leaving them out would understate the
    bound.
    """
    grid.require_1d()
    x = grid.axis()
    dx = grid.spacing[0]
    dt = tgrid.dt
    ts = (0.0, 0.5 * tgrid.horizon, tgrid.horizon)
    sig2_max = max(float(np.max(spec.eval_vol(t, x) ** 2)) for t in ts)
    b_max = max(float(np.max(np.abs(spec.eval_drift(t, x)))) for t in ts)
    if quad.small_jump_second_moment > 0.0:
        slope = beta_slope_at_zero(lambda xx, e: spec.eval_beta(xx, e), x)
        sig2_max += quad.small_jump_second_moment * float(np.max(slope**2))
    beta_drift = 0.0
    gamma_sup = 0.0
    for e_k, w_k in zip(quad.marks, quad.weights):
        beta_drift += float(w_k) * float(np.max(np.abs(spec.eval_beta(x, float(e_k)))))
        for pair in spec.modes.pairs():
            gamma_sup = max(gamma_sup, float(np.max(spec.eval_gamma(pair, x, float(e_k)))))
    total_w = quad.total_weight
    lam = total_w * gamma_sup + total_w
    lip = estimate_driver_lipschitz(spec, grid, tgrid) if lip_g is None else lip_g
    terms = {
        "diffusion": dt * 2.0 * sig2_max / dx**2,
        "drift": dt * (b_max + beta_drift) / dx,
        "jump_intensity": dt * lam,
        "penalties": dt * (n + m),
        "driver_lipschitz": dt * lip,
    }
    return float(sum(terms.values())), terms


# --- precomputed stepping workspace -----------------------------------------


class _Workspace:
    """Per-(spec, grids, quadrature) tables shared by all backward steps."""

    def __init__(self, spec: ProblemSpec, grid: SpatialGrid, tgrid: TimeGrid, quad: LevyQuadrature, config: SchemeConfig):
        grid.require_1d()
        self.spec = spec
        self.grid = grid
        self.tgrid = tgrid
        self.quad = quad
        self.config = config
        self.x = grid.axis()
        self.dx = grid.spacing[0]
        self.dt = tgrid.dt
        self.n_nodes = grid.n_nodes[0]
        self.m1, self.m2 = spec.modes.m1, spec.modes.m2
        self.pairs = list(spec.modes.pairs())
        self.growth = spec.growth

        # jump tables: destinations, interpolation indices, growth data
        n = self.n_nodes
        x0, x1 = grid.x_min[0], grid.x_max[0]
        self.beta = np.empty((quad.n_atoms, n))
        self.lo = np.empty((quad.n_atoms, n), dtype=int)
        self.theta = np.empty((quad.n_atoms, n))
        self.below = np.empty((quad.n_atoms, n), dtype=bool)
        self.above = np.empty((quad.n_atoms, n), dtype=bool)
        self.bidx = np.empty((quad.n_atoms, n), dtype=int)
        self.ginc = np.zeros((quad.n_atoms, n))
        self.gcap = np.zeros((quad.n_atoms, n))
        for a, e_k in enumerate(quad.marks):
            disp = np.broadcast_to(np.asarray(spec.eval_beta(self.x, float(e_k)), dtype=float), self.x.shape)
            self.beta[a] = disp
            xq = self.x + disp
            pos = (xq - x0) / self.dx
            snapped = np.rint(pos)
            pos = np.where(np.abs(pos - snapped) < 1e-9, snapped, pos)
            self.lo[a] = np.clip(np.floor(pos), 0, n - 2).astype(int)
            self.theta[a] = pos - self.lo[a]
            self.below[a] = xq < x0
            self.above[a] = xq > x1
            self.bidx[a] = np.where(self.below[a], 0, n - 1)
            if self.growth.coeff > 0.0:
                xb = np.where(self.below[a], x0, x1)
                self.ginc[a] = self.growth.coeff * (np.abs(xq) ** self.growth.exponent - np.abs(xb) ** self.growth.exponent)
                self.gcap[a] = self.growth.coeff * (1.0 + np.abs(xq) ** self.growth.exponent)
        self.any_outside = bool(np.any(self.below | self.above))

        # gamma(x, e_k) per pair and atom
        self.gamma = np.empty((self.m1, self.m2, quad.n_atoms, n))
        for i, j in self.pairs:
            for a, e_k in enumerate(quad.marks):
                self.gamma[i, j, a] = np.broadcast_to(
                    np.asarray(spec.eval_gamma((i, j), self.x, float(e_k)), dtype=float), self.x.shape
                )

        # small-jump diffusion surrogate coefficient
        if quad.small_jump_second_moment > 0.0:
            slope = beta_slope_at_zero(lambda xx, e: spec.eval_beta(xx, e), self.x)
            self.corr_coeff = 0.5 * quad.small_jump_second_moment * slope**2
        else:
            self.corr_coeff = np.zeros(n)

        self.lip_g = estimate_driver_lipschitz(spec, grid, tgrid)

    # -- pieces ------------------------------------------------------------

    def offgrid(self, surface: np.ndarray, a: int) -> np.ndarray:
        """Surface values at the jump destinations of atom ``a``."""
        vals = (1.0 - self.theta[a]) * surface[self.lo[a]] + self.theta[a] * surface[self.lo[a] + 1]
        out = self.below[a] | self.above[a]
        if np.any(out):
            vb = surface[self.bidx[a][out]]
            if self.growth.coeff == 0.0:
                vals[out] = vb
            else:
                ext = vb + np.sign(vb) * self.ginc[a][out]
                vals[out] = np.clip(ext, -self.gcap[a][out], self.gcap[a][out])
        return vals

    def cfl(self, n: float, m: float) -> tuple[float, dict]:
        value, terms = compute_cfl_bound(self.spec, self.grid, self.tgrid, self.quad, n, m, lip_g=self.lip_g)
        if self.config.mode == "imex":
            value = value - terms["diffusion"]
            terms = dict(terms, diffusion=0.0)
        return value, terms

    def check_cfl(self, n: float, m: float) -> tuple[float, dict]:
        value, terms = self.cfl(n, m)
        if value > self.config.cfl_factor + 1e-12:
            raise CflViolationError(
                f"stability number {value:.4f} exceeds the safety factor "
                f"{self.config.cfl_factor} (terms: { {k: round(v, 4) for k, v in terms.items()} }); "
                f"reduce dt, coarsen penalties or switch to imex"
            )
        return value, terms

    def terminal_values(self) -> np.ndarray:
        out = np.empty((self.m1, self.m2, self.n_nodes))
        for i, j in self.pairs:
            out[i, j] = np.broadcast_to(np.asarray(self.spec.eval_terminal((i, j), self.x), dtype=float), self.x.shape)
        return out

    def cost_tables(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        return self.spec.lower_cost_table(t, self.x), self.spec.upper_cost_table(t, self.x)

    # -- the explicit / imex step ------------------------------------------

    def step(self, values: np.ndarray, t_next: float, n: float, m: float) -> np.ndarray:
        """One backward step; all coupling terms read the previous level."""
        spec = self.spec
        dx, dt = self.dx, self.dt
        b = np.broadcast_to(np.asarray(spec.eval_drift(t_next, self.x), dtype=float), self.x.shape)
        sig = np.broadcast_to(np.asarray(spec.eval_vol(t_next, self.x), dtype=float), self.x.shape)
        a_diff = 0.5 * sig**2 + self.corr_coeff
        bp = np.maximum(b, 0.0)
        bm = np.minimum(b, 0.0)
        if n > 0.0 or m > 0.0:
            lc, uc = self.cost_tables(t_next)
            L, U = eval_obstacles(values, lc, uc)
        y_entries = {driver_variable(i, j): values[i, j] for i, j in self.pairs}

        out = np.empty_like(values)
        for i, j in self.pairs:
            s = values[i, j]
            grad = np.gradient(s, dx)
            d2 = second_derivative_surface(s, self.grid)
            fwd = np.zeros_like(s)
            bwd = np.zeros_like(s)
            fwd[:-1] = (s[1:] - s[:-1]) / dx
            bwd[1:] = (s[1:] - s[:-1]) / dx
            drift_term = bp * fwd + bm * bwd

            jump_gen = np.zeros_like(s)
            q = np.zeros_like(s)
            for a, w_k in enumerate(self.quad.weights):
                vals = self.offgrid(s, a)
                dshift = vals - s
                jump_gen = jump_gen + w_k * (dshift - grad * self.beta[a])
                q = q + w_k * self.gamma[i, j, a] * dshift

            z = sig * grad
            g = spec.eval_driver((i, j), t_next, self.x, y_entries, z, q)

            rhs = drift_term + jump_gen + g
            if self.config.mode == "explicit":
                rhs = rhs + a_diff * d2
            if n > 0.0:
                rhs = rhs + n * neg_part(s - L[i, j])
            if m > 0.0:
                rhs = rhs - m * pos_part(s - U[i, j])
            out[i, j] = s + dt * rhs

        if self.config.mode == "imex":
            out = self._implicit_diffusion(out, a_diff)
        if not np.all(np.isfinite(out)):
            bad = np.argwhere(~np.isfinite(out))[0]
            raise FloatingPointError(
                f"non-finite update at mode pair ({bad[0]}, {bad[1]}), node {bad[2]} (t_next={t_next})"
            )
        return out

    def _implicit_diffusion(self, values: np.ndarray, a_diff: np.ndarray) -> np.ndarray:
        """Solve (I - dt * a * D2) v = rhs per surface; clamped ghost rows."""
        n = self.n_nodes
        r = self.dt * a_diff / self.dx**2
        ab = np.zeros((3, n))
        ab[0, 1:] = -r[:-1]  # superdiagonal
        ab[2, :-1] = -r[1:]  # subdiagonal
        ab[1] = 1.0 + 2.0 * r
        ab[1, 0] = 1.0 + r[0]
        ab[1, -1] = 1.0 + r[-1]
        out = np.empty_like(values)
        for i, j in self.pairs:
            out[i, j] = scipy.linalg.solve_banded((1, 1), ab, values[i, j])
        return out


# --- obstacle sweeps --------------------------------------------------------


def _pair_order(pairs: list, sweep_index: int) -> list:
    return pairs if sweep_index % 2 == 0 else list(reversed(pairs))


def _lower_candidate(values: np.ndarray, lc: np.ndarray, i: int, j: int) -> np.ndarray:
    m1 = values.shape[0]
    cands = [values[k, j] - lc[i, k] for k in range(m1) if k != i]
    return np.max(np.stack(cands), axis=0)


def _upper_candidate(values: np.ndarray, uc: np.ndarray, i: int, j: int) -> np.ndarray:
    m2 = values.shape[1]
    cands = [values[i, l] + uc[j, l] for l in range(m2) if l != j]
    return np.min(np.stack(cands), axis=0)


def _sweep_lower(values: np.ndarray, lc: np.ndarray, config: SchemeConfig, pairs: list) -> int:
    """Gauss-Seidel projection onto the lower obstacle; returns changed-pass count."""
    if values.shape[0] == 1:
        return 0
    changed_passes = 0
    worst = np.inf
    for sweep in range(config.max_sweeps):
        worst = 0.0
        for i, j in _pair_order(pairs, sweep):
            cand = _lower_candidate(values, lc, i, j)
            new = np.maximum(values[i, j], cand)
            delta = float(np.max(np.abs(new - values[i, j])))
            if delta > 0.0:
                values[i, j] = new
                worst = max(worst, delta)
        if worst > config.sweep_tol:
            changed_passes += 1
        else:
            return changed_passes
    raise SweepNonConvergenceError(worst, config.max_sweeps)


def _sweep_bilateral(
    values: np.ndarray,
    pde_values: np.ndarray,
    lc: np.ndarray,
    uc: np.ndarray,
    priority: str,
    config: SchemeConfig,
    pairs: list,
) -> int:
    """Fixed point of the bilateral projection; ``priority`` picks the order."""
    m1, m2 = values.shape[0], values.shape[1]
    changed_passes = 0
    worst = np.inf
    for sweep in range(config.max_sweeps):
        worst = 0.0
        for i, j in _pair_order(pairs, sweep):
            L = _lower_candidate(values, lc, i, j) if m1 > 1 else np.full_like(values[i, j], -np.inf)
            U = _upper_candidate(values, uc, i, j) if m2 > 1 else np.full_like(values[i, j], np.inf)
            if priority == "minmax":
                new = np.maximum(L, np.minimum(U, pde_values[i, j]))
            else:
                new = np.minimum(U, np.maximum(L, pde_values[i, j]))
            delta = float(np.max(np.abs(new - values[i, j])))
            if delta > 0.0:
                values[i, j] = new
                worst = max(worst, delta)
        if worst > config.sweep_tol:
            changed_passes += 1
        else:
            return changed_passes
    raise SweepNonConvergenceError(worst, config.max_sweeps)


# --- assumption gates -------------------------------------------------------


def _gate_terminal(spec: ProblemSpec, grid: SpatialGrid, config: SchemeConfig, report: SolverReport) -> None:
    check = validate_terminal_consistency(spec, grid.axis())
    report.terminal_inconsistency = float(check.details["worst_violation"])
    if not check.passed and not config.allow_terminal_inconsistency:
        raise AssumptionViolationError(check)


def _gate_loops(spec: ProblemSpec, grid: SpatialGrid, tgrid: TimeGrid, moves: str) -> None:
    x = grid.axis()
    xs = [float(x[0]), float(x[len(x) // 2]), float(x[-1])]
    pts = [(t, xx) for t in (0.0, 0.5 * tgrid.horizon, tgrid.horizon) for xx in xs]
    check = validate_non_free_loop(spec, pts, moves=moves)
    if not check.passed:
        raise AssumptionViolationError(check)


# --- backward solves --------------------------------------------------------


def step_penalized(
    field: ValueField,
    n: float,
    m: float,
    spec: ProblemSpec,
    grid: SpatialGrid,
    tgrid: TimeGrid,
    quad: LevyQuadrature,
    config: SchemeConfig | None = None,
) -> ValueField:
    """One backward step of the doubly penalized system (CFL-guarded)."""
    config = config or SchemeConfig()
    ws = _Workspace(spec, grid, tgrid, quad, config)
    ws.check_cfl(n, m)
    new_values = ws.step(np.asarray(field.values, dtype=float), field.t, n, m)
    return ValueField(new_values, field.t - tgrid.dt)


def _record_obstacles(report: SolverReport, ws: _Workspace, values: np.ndarray, t: float) -> None:
    lc, uc = ws.cost_tables(t)
    L, U = eval_obstacles(values, lc, uc)
    low = float(np.max(neg_part(values - L))) if ws.m1 > 1 else 0.0
    up = float(np.max(pos_part(values - U))) if ws.m2 > 1 else 0.0
    report.obstacle_lower_violation.append(low)
    report.obstacle_upper_violation.append(up)


def _solve_backward(ws: _Workspace, n: float, m: float, projection: str | None, system: str) -> tuple[Trajectory, SolverReport]:
    t_start = time.perf_counter()
    report = SolverReport(system=system, dt=ws.dt, n_steps=ws.tgrid.n_steps)
    report.cfl_bound, report.cfl_terms = ws.check_cfl(n, m)
    _gate_terminal(ws.spec, ws.grid, ws.config, report)

    times = ws.tgrid.times()
    n_levels = ws.tgrid.n_steps + 1
    values = np.empty((n_levels, ws.m1, ws.m2, ws.n_nodes))
    values[-1] = ws.terminal_values()
    _record_obstacles(report, ws, values[-1], float(times[-1]))

    for k in range(ws.tgrid.n_steps - 1, -1, -1):
        t_next = float(times[k + 1])
        t_here = float(times[k])
        new = ws.step(values[k + 1], t_next, n, m)
        sweeps = 0
        if projection == "lower" and ws.m1 > 1:
            lc, _ = ws.cost_tables(t_here)
            sweeps = _sweep_lower(new, lc, ws.config, ws.pairs)
        elif projection in ("minmax", "maxmin"):
            lc, uc = ws.cost_tables(t_here)
            pde = new.copy()
            sweeps = _sweep_bilateral(new, pde, lc, uc, projection, ws.config, ws.pairs)
        values[k] = new
        report.update_norms.append(float(np.max(np.abs(values[k] - values[k + 1]))))
        report.sweep_counts.append(sweeps)
        _record_obstacles(report, ws, values[k], t_here)

    report.update_norms.reverse()
    report.sweep_counts.reverse()
    report.obstacle_lower_violation.reverse()
    report.obstacle_upper_violation.reverse()
    report.wall_clock_s = time.perf_counter() - t_start
    traj = Trajectory(times=times, values=values, grid=ws.grid, tgrid=ws.tgrid)
    return traj, report


def solve_penalized(
    spec: ProblemSpec,
    grid: SpatialGrid,
    tgrid: TimeGrid,
    quad: LevyQuadrature,
    n: float,
    m: float,
    config: SchemeConfig | None = None,
) -> tuple[Trajectory, SolverReport]:
    """Backward solve of the doubly penalized system from expiry to time 0."""
    config = config or SchemeConfig()
    ws = _Workspace(spec, grid, tgrid, quad, config)
    traj, report = _solve_backward(ws, n, m, None, system=f"penalized(n={n}, m={m})")
    report.extra["penalties"] = {"n": n, "m": m}
    return traj, report


def solve_lower_reflected(
    spec: ProblemSpec,
    grid: SpatialGrid,
    tgrid: TimeGrid,
    quad: LevyQuadrature,
    m: float,
    config: SchemeConfig | None = None,
) -> tuple[Trajectory, SolverReport]:
    """Lower obstacle by projection sweeps, upper obstacle penalized with ``m``."""
    config = config or SchemeConfig()
    if spec.modes.m1 > 1:
        _gate_loops(spec, grid, tgrid, moves="lower")
    ws = _Workspace(spec, grid, tgrid, quad, config)
    traj, report = _solve_backward(ws, 0.0, m, "lower", system=f"lower_reflected(m={m})")
    report.extra["penalties"] = {"m": m}
    return traj, report


def negated_transposed_spec(spec: ProblemSpec) -> ProblemSpec:
    """Sign-flip conjugate: swap the players, negate data and drivers.

    The upper-reflected system for ``spec`` equals the negative transpose of
    the lower-reflected system for the returned spec (the upper projection
    turns into a lower one and the lower penalty into an upper one).
    """
    m1, m2 = spec.modes.m1, spec.modes.m2
    mapping = {"z": exprdsl.Neg(exprdsl.Var("z")), "q": exprdsl.Neg(exprdsl.Var("q"))}
    for i in range(m1):
        for j in range(m2):
            mapping[driver_variable(i, j)] = exprdsl.Neg(exprdsl.Var(driver_variable(j, i)))
    drivers = {}
    terminal = {}
    weights = {}
    for i in range(m1):
        for j in range(m2):
            drivers[(j, i)] = exprdsl.Neg(exprdsl.substitute(spec.drivers[(i, j)], mapping))
            terminal[(j, i)] = exprdsl.Neg(spec.terminal[(i, j)])
            weights[(j, i)] = spec.jump_weights[(i, j)]
    return ProblemSpec(
        modes=ModeSet(m2, m1),
        horizon=spec.horizon,
        drift=spec.drift,
        vol=spec.vol,
        jump_amplitude=spec.jump_amplitude,
        jump_weights=weights,
        drivers=drivers,
        lower_costs=dict(spec.upper_costs),
        upper_costs=dict(spec.lower_costs),
        terminal=terminal,
        levy=spec.levy,
        growth=spec.growth,
        name=f"{spec.name}:conjugate" if spec.name else "conjugate",
    )


def solve_upper_reflected(
    spec: ProblemSpec,
    grid: SpatialGrid,
    tgrid: TimeGrid,
    quad: LevyQuadrature,
    n: float,
    config: SchemeConfig | None = None,
) -> tuple[Trajectory, SolverReport]:
    """Upper obstacle by projection, lower obstacle penalized with ``n``.

    Solved through the sign-flip reduction; the returned surfaces and report
    are expressed in the original problem's orientation.
    """
    config = config or SchemeConfig()
    if spec.modes.m2 > 1:
        _gate_loops(spec, grid, tgrid, moves="upper")
    conj = negated_transposed_spec(spec)
    traj_c, report = _solve_backward(
        _Workspace(conj, grid, tgrid, quad, config), 0.0, n, "lower", system=f"upper_reflected(n={n})"
    )
    values = -np.transpose(traj_c.values, (0, 2, 1, 3))
    traj = Trajectory(times=traj_c.times, values=values, grid=grid, tgrid=tgrid)
    # re-express the obstacle diagnostics against the original costs
    report.obstacle_lower_violation.clear()
    report.obstacle_upper_violation.clear()
    x = grid.axis()
    for k, t in enumerate(traj.times):
        lc = spec.lower_cost_table(float(t), x)
        uc = spec.upper_cost_table(float(t), x)
        L, U = eval_obstacles(values[k], lc, uc)
        report.obstacle_lower_violation.append(float(np.max(neg_part(values[k] - L))) if spec.modes.m1 > 1 else 0.0)
        report.obstacle_upper_violation.append(float(np.max(pos_part(values[k] - U))) if spec.modes.m2 > 1 else 0.0)
    report.extra["penalties"] = {"n": n}
    return traj, report


def _solve_limit(
    one_sided,
    spec: ProblemSpec,
    grid: SpatialGrid,
    tgrid: TimeGrid,
    quad: LevyQuadrature,
    config: SchemeConfig,
    schedule: Sequence[float],
    gap_tol: float | None,
    raise_on_nonconvergence: bool,
    system: str,
) -> tuple[Trajectory, SolverReport]:
    ws_probe = _Workspace(spec, grid, tgrid, quad, config)
    gaps: list[float] = []
    used: list[float] = []
    prev: Trajectory | None = None
    last_report: SolverReport | None = None
    converged = False
    for p in schedule:
        try:
            ws_probe.check_cfl(0.0, p)
        except CflViolationError:
            break
        traj, rep = one_sided(spec, grid, tgrid, quad, p, config)
        used.append(p)
        last_report = rep
        if prev is not None:
            gap = traj.sup_distance(prev)
            gaps.append(gap)
            tol = gap_tol if gap_tol is not None else 1e-6 * (1.0 + float(np.max(np.abs(traj.values))))
            if gap < tol:
                prev = traj
                converged = True
                break
        prev = traj
    if prev is None:
        raise ScheduleNonConvergenceError(gaps)
    report = last_report if last_report is not None else SolverReport(system=system, dt=tgrid.dt, n_steps=tgrid.n_steps)
    report.system = system
    report.schedule = used
    report.schedule_gaps = gaps
    report.converged = converged
    if not converged and raise_on_nonconvergence:
        raise ScheduleNonConvergenceError(gaps, trajectory=prev, report=report)
    return prev, report


def solve_minmax(
    spec: ProblemSpec,
    grid: SpatialGrid,
    tgrid: TimeGrid,
    quad: LevyQuadrature,
    mode: str = "direct",
    config: SchemeConfig | None = None,
    schedule: Sequence[float] = DEFAULT_PENALTY_SCHEDULE,
    gap_tol: float | None = None,
    raise_on_nonconvergence: bool = True,
) -> tuple[Trajectory, SolverReport]:
    """Bilateral system with lower-obstacle priority.

    ``direct`` does backward induction with the projection
    ``v <- max(L[v], min(U[v], v_pde))`` swept to a fixed point each step;
    ``limit`` runs the lower-reflected solver along an increasing upper
    penalty schedule until successive solutions agree (the schedule stops
    early if the next penalty would break the CFL guard).
    """
    config = config or SchemeConfig()
    if spec.modes.m1 > 1 or spec.modes.m2 > 1:
        _gate_loops(spec, grid, tgrid, moves="both")
    if mode == "direct":
        ws = _Workspace(spec, grid, tgrid, quad, config)
        traj, report = _solve_backward(ws, 0.0, 0.0, "minmax", system="minmax(direct)")
        return traj, report
    if mode != "limit":
        raise ValueError(f"unknown mode '{mode}'")
    return _solve_limit(
        solve_lower_reflected, spec, grid, tgrid, quad, config, schedule, gap_tol, raise_on_nonconvergence, "minmax(limit)"
    )


def solve_maxmin(
    spec: ProblemSpec,
    grid: SpatialGrid,
    tgrid: TimeGrid,
    quad: LevyQuadrature,
    mode: str = "direct",
    config: SchemeConfig | None = None,
    schedule: Sequence[float] = DEFAULT_PENALTY_SCHEDULE,
    gap_tol: float | None = None,
    raise_on_nonconvergence: bool = True,
) -> tuple[Trajectory, SolverReport]:
    """Bilateral system with upper-obstacle priority (mirror of solve_minmax)."""
    config = config or SchemeConfig()
    if spec.modes.m1 > 1 or spec.modes.m2 > 1:
        _gate_loops(spec, grid, tgrid, moves="both")
    if mode == "direct":
        ws = _Workspace(spec, grid, tgrid, quad, config)
        traj, report = _solve_backward(ws, 0.0, 0.0, "maxmin", system="maxmin(direct)")
        return traj, report
    if mode != "limit":
        raise ValueError(f"unknown mode '{mode}'")
    return _solve_limit(
        solve_upper_reflected, spec, grid, tgrid, quad, config, schedule, gap_tol, raise_on_nonconvergence, "maxmin(limit)"
    )


# --- residuals ---------------------------------------------------------------


def residual_report(
    trajectory: Trajectory,
    spec: ProblemSpec,
    grid: SpatialGrid,
    tgrid: TimeGrid,
    quad: LevyQuadrature,
    system: str,
    n: float = 0.0,
    m: float = 0.0,
    config: SchemeConfig | None = None,
) -> SolverReport:
    """Recompute the discrete equation residual at every interior level.

    ``system`` is ``"penalized"``, ``"lower"``, ``"minmax"`` or ``"maxmin"``.
    At a converged solution every fixed-point identity below holds exactly,
    so residuals of a fresh trajectory sit at rounding level:

    * penalized: ``v_k = step(v_{k+1})``
    * lower-reflected: ``v_k = max(step(v_{k+1}), L[v_k])``
    * bilateral: ``v_k = max(L[v_k], min(U[v_k], step(v_{k+1})))`` (or the
      mirrored order)
    """
    config = config or SchemeConfig()
    ws = _Workspace(spec, grid, tgrid, quad, config)
    report = SolverReport(system=f"residual({system})", dt=ws.dt, n_steps=tgrid.n_steps)
    per_pair = {f"{i},{j}": 0.0 for i, j in ws.pairs}
    x = grid.axis()
    for k in range(tgrid.n_steps - 1, -1, -1):
        t_next = float(trajectory.times[k + 1])
        t_here = float(trajectory.times[k])
        if system == "penalized":
            candidate = ws.step(trajectory.values[k + 1], t_next, n, m)
        else:
            pde = ws.step(trajectory.values[k + 1], t_next, 0.0, m if system == "lower" else 0.0)
            vk = trajectory.values[k]
            lc = spec.lower_cost_table(t_here, x)
            uc = spec.upper_cost_table(t_here, x)
            L, U = eval_obstacles(vk, lc, uc)
            if system == "lower":
                candidate = np.maximum(pde, L)
            elif system == "minmax":
                candidate = np.maximum(L, np.minimum(U, pde))
            elif system == "maxmin":
                candidate = np.minimum(U, np.maximum(L, pde))
            else:
                raise ValueError(f"unknown system '{system}'")
        resid = np.abs(trajectory.values[k] - candidate)
        report.update_norms.append(float(np.max(resid)))
        for i, j in ws.pairs:
            per_pair[f"{i},{j}"] = max(per_pair[f"{i},{j}"], float(np.max(resid[i, j])))
    report.update_norms.reverse()
    terminal_resid = float(np.max(np.abs(trajectory.values[-1] - ws.terminal_values())))
    report.residual_norms = {"per_pair_max": per_pair, "terminal": terminal_resid, "overall": max(per_pair.values(), default=0.0)}
    return report
