"""Brute-force cross-check: the explicit scheme as a discrete-state game.

The explicit monotone step is, node by node, a convex combination of the
previous level plus a running reward.  This module rebuilds that object
literally: a dense per-step transition matrix over grid nodes (diffusion,
upwind drift, jump redistribution, compensator and small-jump surrogate
weights, all normalized by dt) and a plain dynamic-programming recursion
with the bilateral projection applied at each level.  Transition rows must
be probability vectors; a negative entry is exactly a CFL violation and
aborts the build.

Everything here is written independently of the finite-difference solver
(explicit Python loops, no shared stepping code) so that agreement between
the two is evidence, not tautology.  Deliberately naive and single-threaded;
meant for small instances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .discretization import LevyQuadrature, SpatialGrid, TimeGrid
from .model import CapacityError, ProblemSpec, driver_variable
from .pde_solver import CflViolationError, SchemeConfig

__all__ = ["DiscreteGame", "build_discrete_game", "backward_induction", "InductionResult"]

MAX_ORACLE_STATES = 20_000


@dataclass
class DiscreteGame:
    """Explicit transition tables plus the data needed to roll rewards."""

    spec: ProblemSpec
    grid: SpatialGrid
    tgrid: TimeGrid
    quad: LevyQuadrature
    kernels: np.ndarray  # (n_steps, N, N); kernels[k] maps level k+1 to level k
    terminal: np.ndarray  # (m1, m2, N)
    config: SchemeConfig = field(default_factory=SchemeConfig)


def _interp_weights(grid: SpatialGrid, xq: float) -> list[tuple[int, float]]:
    """Linear interpolation weights of one query point, clamped outside."""
    x0, x1 = grid.x_min[0], grid.x_max[0]
    n = grid.n_nodes[0]
    dx = grid.spacing[0]
    if xq < x0:
        return [(0, 1.0)]
    if xq > x1:
        return [(n - 1, 1.0)]
    pos = (xq - x0) / dx
    snapped = round(pos)
    if abs(pos - snapped) < 1e-9:
        pos = float(snapped)
    lo = int(min(max(np.floor(pos), 0), n - 2))
    theta = pos - lo
    return [(lo, 1.0 - theta), (lo + 1, theta)]


def _beta_slope0(spec: ProblemSpec, xi: float, h: float = 1e-6) -> float:
    xa = np.asarray(xi, dtype=float)
    return (float(spec.eval_beta(xa, h)) - float(spec.eval_beta(xa, -h))) / (2.0 * h)


def build_discrete_game(
    spec: ProblemSpec,
    grid: SpatialGrid,
    tgrid: TimeGrid,
    quad: LevyQuadrature,
    config: SchemeConfig | None = None,
    stencil_perturbation: tuple[int, int, int, float] | None = None,
) -> DiscreteGame:
    """Assemble per-step transition matrices for the explicit scheme.

    ``stencil_perturbation = (step, row, col, amount)`` is a test hook that
    deliberately corrupts one kernel weight; cross-checks against the solver
    must then fail (negative control).
    """
    grid.require_1d()
    config = config or SchemeConfig()
    if config.mode != "explicit":
        raise ValueError("the discrete game mirrors the explicit scheme only")
    if spec.growth.coeff != 0.0:
        raise CapacityError(
            "the discrete game needs clamp extrapolation (growth coefficient 0); "
            "growth extrapolation is not a linear map of node values"
        )
    n = grid.n_nodes[0]
    if n * spec.modes.m1 * spec.modes.m2 > MAX_ORACLE_STATES:
        raise CapacityError(f"instance exceeds the oracle cap of {MAX_ORACLE_STATES} states")
    x = grid.axis()
    dx = grid.spacing[0]
    dt = tgrid.dt
    times = tgrid.times()

    kernels = np.zeros((tgrid.n_steps, n, n))
    for k in range(tgrid.n_steps):
        t = float(times[k + 1])
        P = kernels[k]
        for i in range(n):
            P[i, i] += 1.0
            xi = float(x[i])
            b = float(spec.eval_drift(t, np.asarray(xi)))
            sig = float(spec.eval_vol(t, np.asarray(xi)))
            a = 0.5 * sig * sig
            if quad.small_jump_second_moment > 0.0:
                a += 0.5 * quad.small_jump_second_moment * _beta_slope0(spec, xi) ** 2
            # diffusion, clamped ghost at the boundary
            if i + 1 < n:
                w = dt * a / dx**2
                P[i, i + 1] += w
                P[i, i] -= w
            if i - 1 >= 0:
                w = dt * a / dx**2
                P[i, i - 1] += w
                P[i, i] -= w
            # upwind drift; outward difference vanishes at the boundary
            if b > 0.0 and i + 1 < n:
                w = dt * b / dx
                P[i, i + 1] += w
                P[i, i] -= w
            elif b < 0.0 and i - 1 >= 0:
                w = dt * (-b) / dx
                P[i, i - 1] += w
                P[i, i] -= w
            # jumps: redistribute to the destination, subtract the mass,
            # and take out the compensator through the gradient stencil
            for e_k, w_k in zip(quad.marks, quad.weights):
                beta = float(spec.eval_beta(np.asarray(xi), float(e_k)))
                for idx, wgt in _interp_weights(grid, xi + beta):
                    P[i, idx] += dt * w_k * wgt
                P[i, i] -= dt * w_k
                c = dt * w_k * beta
                if 0 < i < n - 1:
                    P[i, i + 1] -= c / (2.0 * dx)
                    P[i, i - 1] += c / (2.0 * dx)
                elif i == 0:
                    P[i, 1] -= c / dx
                    P[i, 0] += c / dx
                else:
                    P[i, n - 1] -= c / dx
                    P[i, n - 2] += c / dx

    if stencil_perturbation is not None:
        k, r, cc, amount = stencil_perturbation
        kernels[k, r, cc] += amount

    min_weight = float(np.min(kernels))
    if min_weight < -1e-12:
        bad = np.argwhere(kernels < -1e-12)[0]
        raise CflViolationError(
            f"transition weight {min_weight:.3e} at step {bad[0]}, node {bad[1]} -> {bad[2]} "
            f"is negative; the explicit scheme is not monotone at this resolution"
        )

    m1, m2 = spec.modes.m1, spec.modes.m2
    terminal = np.empty((m1, m2, n))
    for i in range(m1):
        for j in range(m2):
            for p in range(n):
                terminal[i, j, p] = float(spec.eval_terminal((i, j), np.asarray(float(x[p]))))
    return DiscreteGame(spec=spec, grid=grid, tgrid=tgrid, quad=quad, kernels=kernels, terminal=terminal, config=config or SchemeConfig())


@dataclass
class InductionResult:
    times: np.ndarray
    values: np.ndarray  # (n_levels, m1, m2, N)
    switch_decisions: list  # per level: dict pair -> target mode index arrays (inspection only)
    grid: SpatialGrid
    tgrid: TimeGrid

    def as_trajectory(self):
        """View as a solver trajectory, e.g. for the shared CSV exporters."""
        from .pde_solver import Trajectory

        return Trajectory(times=self.times, values=self.values, grid=self.grid, tgrid=self.tgrid)


def _reward(game: DiscreteGame, values: np.ndarray, t: float) -> np.ndarray:
    """Running reward from the lagged level: the driver with its own gradient
    and jump-sum loops (independent of the solver's vectorized versions)."""
    spec = game.spec
    grid = game.grid
    x = grid.axis()
    n = grid.n_nodes[0]
    dx = grid.spacing[0]
    m1, m2 = spec.modes.m1, spec.modes.m2
    out = np.empty_like(values)
    for i in range(m1):
        for j in range(m2):
            s = values[i, j]
            grad = np.empty(n)
            for p in range(n):
                if p == 0:
                    grad[p] = (s[1] - s[0]) / dx
                elif p == n - 1:
                    grad[p] = (s[n - 1] - s[n - 2]) / dx
                else:
                    grad[p] = (s[p + 1] - s[p - 1]) / (2.0 * dx)
            for p in range(n):
                xp = float(x[p])
                q = 0.0
                for e_k, w_k in zip(game.quad.marks, game.quad.weights):
                    beta = float(spec.eval_beta(np.asarray(xp), float(e_k)))
                    dest_val = 0.0
                    for idx, wgt in _interp_weights(grid, xp + beta):
                        dest_val += wgt * s[idx]
                    gam = float(spec.eval_gamma((i, j), np.asarray(xp), float(e_k)))
                    q += float(w_k) * gam * (dest_val - s[p])
                z = float(spec.eval_vol(t, np.asarray(xp))) * grad[p]
                entries = {driver_variable(a, bb): float(values[a, bb, p]) for a in range(m1) for bb in range(m2)}
                out[i, j, p] = float(spec.eval_driver((i, j), t, np.asarray(xp), entries, z, q))
    return out


def backward_induction(game: DiscreteGame, order: str = "minmax") -> InductionResult:
    """Exact dynamic programming over the discrete game.

    At each level: continuation = kernel @ next + dt * reward(next), then the
    bilateral projection (priority given by ``order``) iterated to its fixed
    point with the same pair ordering the solver uses.
    """
    if order not in ("minmax", "maxmin"):
        raise ValueError(f"unknown order '{order}'")
    spec = game.spec
    grid = game.grid
    x = grid.axis()
    n = grid.n_nodes[0]
    m1, m2 = spec.modes.m1, spec.modes.m2
    times = game.tgrid.times()
    n_steps = game.tgrid.n_steps
    dt = game.tgrid.dt
    values = np.empty((n_steps + 1, m1, m2, n))
    values[-1] = game.terminal.copy()
    decisions: list = [None] * (n_steps + 1)

    pairs = [(i, j) for i in range(m1) for j in range(m2)]
    for k in range(n_steps - 1, -1, -1):
        t_next = float(times[k + 1])
        t_here = float(times[k])
        nxt = values[k + 1]
        reward = _reward(game, nxt, t_next)
        cont = np.empty((m1, m2, n))
        for i, j in pairs:
            cont[i, j] = game.kernels[k] @ nxt[i, j] + dt * reward[i, j]

        lc = spec.lower_cost_table(t_here, x)
        uc = spec.upper_cost_table(t_here, x)
        cur = cont.copy()
        for sweep in range(game.config.max_sweeps):
            worst = 0.0
            ordered = pairs if sweep % 2 == 0 else list(reversed(pairs))
            for i, j in ordered:
                L = np.full(n, -np.inf)
                U = np.full(n, np.inf)
                if m1 > 1:
                    L = np.max(np.stack([cur[p, j] - lc[i, p] for p in range(m1) if p != i]), axis=0)
                if m2 > 1:
                    U = np.min(np.stack([cur[i, l] + uc[j, l] for l in range(m2) if l != j]), axis=0)
                if order == "minmax":
                    new = np.maximum(L, np.minimum(U, cont[i, j]))
                else:
                    new = np.minimum(U, np.maximum(L, cont[i, j]))
                worst = max(worst, float(np.max(np.abs(new - cur[i, j]))))
                cur[i, j] = new
            if worst <= game.config.sweep_tol:
                break
        values[k] = cur

        # argmax / argmin switching suggestions, inspection only
        level_dec = {}
        for i, j in pairs:
            best_k = np.full(n, -1, dtype=int)
            best_l = np.full(n, -1, dtype=int)
            if m1 > 1:
                stack = np.stack([cur[p, j] - lc[i, p] for p in range(m1) if p != i])
                others = [p for p in range(m1) if p != i]
                hit = np.isclose(cur[i, j], np.max(stack, axis=0), rtol=0.0, atol=1e-12)
                best_k = np.where(hit, np.asarray(others)[np.argmax(stack, axis=0)], -1)
            if m2 > 1:
                stack = np.stack([cur[i, l] + uc[j, l] for l in range(m2) if l != j])
                others = [l for l in range(m2) if l != j]
                hit = np.isclose(cur[i, j], np.min(stack, axis=0), rtol=0.0, atol=1e-12)
                best_l = np.where(hit, np.asarray(others)[np.argmin(stack, axis=0)], -1)
            level_dec[(i, j)] = (best_k, best_l)
        decisions[k] = level_dec

    return InductionResult(times=times, values=values, switch_decisions=decisions, grid=grid, tgrid=game.tgrid)
