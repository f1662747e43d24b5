"""Grids, Lévy quadrature and discrete local / non-local operators.

The jump measure is approximated by finitely many atoms with mark ``|e| >=
cutoff``; mass below the cutoff is replaced by its second moment ``s_delta``
and re-enters the generator as a matched diffusion correction
``0.5 * s_delta * (d beta/d e)(x,0)^2 * v''(x)``.  This keeps the small-jump
part of the non-local integral bounded while preserving its infinitesimal
variance.

Stencil conventions (shared with the dynamic-programming cross-check, which
re-implements them independently):

* first derivative surfaces: central differences inside, one-sided
  first-order at the two boundary nodes;
* drift term: upwind in the sign of ``b``; when the upwind neighbour falls
  outside the grid the directional difference is zero (ghost node clamped to
  the boundary value, consistent with clamp extrapolation);
* second derivative: central inside, clamped ghost at the boundary (so the
  boundary row reduces to a one-sided single difference).

Off-grid evaluation is linear inside the box.  Beyond it the value is the
boundary value plus, when the growth bound has a positive coefficient, a
growth increment ``sign(v_b) * C * (|x|^gamma - |x_b|^gamma)`` clipped to the
envelope ``C * (1 + |x|^gamma)``; with ``C = 0`` it is a plain clamp.

Grids and quadratures are immutable; operator evaluations at distinct nodes
are independent, and per-node sums run over atoms in fixed order, so results
do not depend on any parallel schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .exprdsl import evaluate
from .model import CapacityError, GrowthBound, LevyMeasureSpec, MalformedSpecError

__all__ = [
    "SpatialGrid",
    "TimeGrid",
    "LevyQuadrature",
    "ValueField",
    "build_levy_quadrature",
    "NonIntegrableDensityError",
    "interpolate",
    "offgrid_eval",
    "gradient_surface",
    "second_derivative_surface",
    "local_generator",
    "nonlocal_generator",
    "nonlocal_driver_term",
    "beta_slope_at_zero",
]

ATOM_WEIGHT_FLOOR = 1e-14
_NODE_SNAP = 1e-9  # relative tolerance for snapping a query onto a grid node


class NonIntegrableDensityError(ValueError):
    """The quadrature of a jump density produced a divergent moment sum."""


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform box grid; per-dimension bounds and node counts, row-major layout."""

    x_min: tuple[float, ...]
    x_max: tuple[float, ...]
    n_nodes: tuple[int, ...]

    def __post_init__(self):
        for lo, hi, n in zip(self.x_min, self.x_max, self.n_nodes):
            if n < 3:
                raise MalformedSpecError(f"need at least 3 nodes per dimension, got {n}")
            if not hi > lo:
                raise MalformedSpecError(f"empty spatial box [{lo}, {hi}]")

    @staticmethod
    def line(x_min: float, x_max: float, n_nodes: int) -> "SpatialGrid":
        return SpatialGrid((float(x_min),), (float(x_max),), (int(n_nodes),))

    @property
    def dim(self) -> int:
        return len(self.n_nodes)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((hi - lo) / (n - 1) for lo, hi, n in zip(self.x_min, self.x_max, self.n_nodes))

    def axis(self, d: int = 0) -> np.ndarray:
        return np.linspace(self.x_min[d], self.x_max[d], self.n_nodes[d])

    def require_1d(self) -> None:
        if self.dim != 1:
            raise CapacityError("finite-difference operators support only 1-D grids")


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise MalformedSpecError("need at least one time step")
        if self.horizon <= 0:
            raise MalformedSpecError("time horizon must be positive")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_steps + 1)


@dataclass(frozen=True)
class LevyQuadrature:
    """Finite-atom jump measure with a small-jump diffusion surrogate."""

    marks: np.ndarray
    weights: np.ndarray
    cutoff: float = 0.0
    small_jump_second_moment: float = 0.0

    def __post_init__(self):
        marks = np.asarray(self.marks, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "weights", weights)
        if marks.shape != weights.shape:
            raise MalformedSpecError("marks and weights must align")
        if marks.size and np.min(np.abs(marks)) < self.cutoff - 1e-15:
            raise MalformedSpecError("quadrature atoms must satisfy |e| >= cutoff")
        if np.any(weights <= 0):
            raise MalformedSpecError("quadrature weights must be positive")
        moment = float(np.sum(weights * np.minimum(1.0, marks**2))) if marks.size else 0.0
        if not math.isfinite(moment) or not math.isfinite(self.small_jump_second_moment):
            raise NonIntegrableDensityError("quadrature moment sum is not finite")

    @property
    def n_atoms(self) -> int:
        return int(self.marks.size)

    @property
    def total_weight(self) -> float:
        return float(np.sum(self.weights))


def build_levy_quadrature(
    measure: LevyMeasureSpec,
    n_atoms: int = 64,
    radius: float | None = None,
) -> LevyQuadrature:
    """Turn a jump-measure description into a finite quadrature.

    Atom lists pass through; atoms with ``|e| < cutoff`` are folded into the
    small-jump second moment.  A density is integrated by the midpoint rule
    on ``cutoff <= |e| <= radius`` (two-sided, ``n_atoms`` cells total) and
    its small-jump part by a fixed fine midpoint rule on ``|e| < cutoff``.
    Atoms with weight below 1e-14 are dropped.
    """
    delta = measure.cutoff
    if measure.atoms is not None:
        marks, weights = [], []
        s_small = 0.0
        for e, w in measure.atoms:
            if w < ATOM_WEIGHT_FLOOR:
                continue
            if abs(e) >= delta:
                marks.append(e)
                weights.append(w)
            else:
                s_small += w * e * e
        return LevyQuadrature(
            marks=np.asarray(marks, dtype=float),
            weights=np.asarray(weights, dtype=float),
            cutoff=delta,
            small_jump_second_moment=s_small,
        )

    R = float(radius if radius is not None else measure.radius)
    if not R > delta > 0.0:
        raise MalformedSpecError("density quadrature requires radius > cutoff > 0")
    n_half = max(1, int(n_atoms) // 2)

    def side(lo: float, hi: float):
        edges = np.linspace(lo, hi, n_half + 1)
        centers = 0.5 * (edges[:-1] + edges[1:])
        de = edges[1] - edges[0]
        dens = np.asarray(evaluate(measure.density, {"e": centers}), dtype=float)
        dens = np.broadcast_to(dens, centers.shape)
        if np.any(dens < 0):
            raise NonIntegrableDensityError("jump density is negative on the quadrature cells")
        return centers, dens * de

    c_neg, w_neg = side(-R, -delta)
    c_pos, w_pos = side(delta, R)
    marks = np.concatenate([c_neg, c_pos])
    weights = np.concatenate([w_neg, w_pos])
    keep = weights >= ATOM_WEIGHT_FLOOR
    marks, weights = marks[keep], weights[keep]
    if not np.all(np.isfinite(weights)) or not math.isfinite(float(np.sum(weights * np.minimum(1.0, marks**2)))):
        raise NonIntegrableDensityError("density quadrature diverges")

    # small-jump second moment on |e| < cutoff, midpoint with 512 cells per side
    n_fine = 512
    s_small = 0.0
    for lo, hi in ((-delta, 0.0), (0.0, delta)):
        edges = np.linspace(lo, hi, n_fine + 1)
        centers = 0.5 * (edges[:-1] + edges[1:])
        de = edges[1] - edges[0]
        dens = np.asarray(evaluate(measure.density, {"e": centers}), dtype=float)
        dens = np.broadcast_to(dens, centers.shape)
        s_small += float(np.sum(dens * centers**2 * de))
    if not math.isfinite(s_small):
        raise NonIntegrableDensityError("small-jump second moment diverges")
    return LevyQuadrature(marks=marks, weights=weights, cutoff=delta, small_jump_second_moment=s_small)


@dataclass
class ValueField:
    """Value surfaces for every mode pair at one time level."""

    values: np.ndarray  # (m1, m2, n_nodes)
    t: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim < 3:
            raise MalformedSpecError("value field must have shape (m1, m2, nodes...)")
        if not np.all(np.isfinite(self.values)):
            raise MalformedSpecError("value field contains non-finite entries")

    @property
    def n_pairs(self) -> int:
        return self.values.shape[0] * self.values.shape[1]

    def surface(self, i: int, j: int) -> np.ndarray:
        return self.values[i, j]


# --- off-grid evaluation ---------------------------------------------------


def offgrid_eval(surface: np.ndarray, grid: SpatialGrid, xq: np.ndarray, growth: GrowthBound | None = None) -> np.ndarray:
    """Evaluate a node-value surface at arbitrary 1-D query points.

    Linear between nodes (exact on nodes, queries snap onto nodes within a
    1e-9 relative tolerance), clamp or growth-bounded extrapolation outside.
    """
    grid.require_1d()
    x0, x1 = grid.x_min[0], grid.x_max[0]
    n = grid.n_nodes[0]
    dx = grid.spacing[0]
    xq = np.asarray(xq, dtype=float)
    scalar = xq.ndim == 0
    xq = np.atleast_1d(xq)

    pos = (xq - x0) / dx
    snapped = np.rint(pos)
    snap = np.abs(pos - snapped) < _NODE_SNAP
    pos = np.where(snap, snapped, pos)
    lo = np.clip(np.floor(pos), 0, n - 2).astype(int)
    theta = pos - lo
    vals = (1.0 - theta) * surface[lo] + theta * surface[lo + 1]

    below = xq < x0
    above = xq > x1
    outside = below | above
    if np.any(outside):
        bidx = np.where(below, 0, n - 1)[outside]
        vb = surface[bidx]
        if growth is None or growth.coeff == 0.0:
            out_vals = vb
        else:
            xb = np.where(below, x0, x1)[outside]
            inc = growth.coeff * (np.abs(xq[outside]) ** growth.exponent - np.abs(xb) ** growth.exponent)
            out_vals = vb + np.sign(vb) * inc
            cap = growth.coeff * (1.0 + np.abs(xq[outside]) ** growth.exponent)
            out_vals = np.clip(out_vals, -cap, cap)
        vals[outside] = out_vals
    return float(vals[0]) if scalar else vals


def interpolate(field: ValueField, pair: tuple[int, int], x_query: float, grid: SpatialGrid, growth: GrowthBound | None = None) -> float:
    """Value of surface (i, j) at an arbitrary point."""
    return float(offgrid_eval(field.surface(*pair), grid, np.asarray(x_query, dtype=float), growth))


# --- derivative surfaces ---------------------------------------------------


def gradient_surface(surface: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    """Central differences inside, one-sided first order at the boundary."""
    grid.require_1d()
    return np.gradient(surface, grid.spacing[0])


def second_derivative_surface(surface: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    """Central second difference with clamped ghost nodes at the boundary."""
    grid.require_1d()
    dx2 = grid.spacing[0] ** 2
    out = np.empty_like(surface)
    out[1:-1] = (surface[2:] - 2.0 * surface[1:-1] + surface[:-2]) / dx2
    out[0] = (surface[1] - surface[0]) / dx2
    out[-1] = (surface[-2] - surface[-1]) / dx2
    return out


def local_generator(
    surface: np.ndarray,
    grid: SpatialGrid,
    drift_values: np.ndarray,
    vol_values: np.ndarray,
    node: int | None = None,
):
    """Drift-upwinded first derivative plus central diffusion term.

    Returns ``b * D_upwind v + 0.5 * sigma^2 * D2 v`` at every node (or one
    node).  Outward upwind differences vanish at the boundary; the diffusion
    stencil clamps its ghost node, both consistent with clamp extrapolation.
    """
    grid.require_1d()
    dx = grid.spacing[0]
    fwd = np.zeros_like(surface)
    bwd = np.zeros_like(surface)
    fwd[:-1] = (surface[1:] - surface[:-1]) / dx
    bwd[1:] = (surface[1:] - surface[:-1]) / dx
    drift_term = np.maximum(drift_values, 0.0) * fwd + np.minimum(drift_values, 0.0) * bwd
    diff_term = 0.5 * vol_values**2 * second_derivative_surface(surface, grid)
    out = drift_term + diff_term
    return out if node is None else float(out[node])


# --- non-local operators ----------------------------------------------------


def beta_slope_at_zero(beta_of: Callable[[np.ndarray, float], np.ndarray], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """d beta / d e at e = 0 by a central difference (drives the small-jump surrogate)."""
    return (np.asarray(beta_of(x, h)) - np.asarray(beta_of(x, -h))) / (2.0 * h)


def nonlocal_generator(
    surface: np.ndarray,
    grad: np.ndarray,
    grid: SpatialGrid,
    quad: LevyQuadrature,
    beta_of: Callable[[np.ndarray, float], np.ndarray],
    growth: GrowthBound | None = None,
    second_deriv: np.ndarray | None = None,
    node: int | None = None,
    split: bool = False,
):
    """Compensated jump part of the generator.

    ``I2 = sum_k w_k [ v(x + beta(x,e_k)) - v(x) - Dv(x) beta(x,e_k) ]`` over
    the quadrature atoms plus the small-jump diffusion surrogate
    ``I1 = 0.5 * s_delta * (d_e beta(x,0))^2 * v''(x)``.  With ``split=True``
    the pair ``(I1, I2)`` is returned, otherwise their sum.  The split is
    exact by construction: atoms live on ``|e| >= cutoff`` and the surrogate
    carries everything below.
    """
    grid.require_1d()
    x = grid.axis()
    acc = np.zeros_like(surface)
    for e_k, w_k in zip(quad.marks, quad.weights):
        disp = np.asarray(beta_of(x, float(e_k)), dtype=float)
        disp = np.broadcast_to(disp, x.shape)
        vals = offgrid_eval(surface, grid, x + disp, growth)
        acc = acc + w_k * (vals - surface - grad * disp)
    if quad.small_jump_second_moment > 0.0:
        if second_deriv is None:
            second_deriv = second_derivative_surface(surface, grid)
        slope = beta_slope_at_zero(beta_of, x)
        corr = 0.5 * quad.small_jump_second_moment * slope**2 * second_deriv
    else:
        corr = np.zeros_like(surface)
    if split:
        if node is None:
            return corr, acc
        return float(corr[node]), float(acc[node])
    total = corr + acc
    return total if node is None else float(total[node])


def nonlocal_driver_term(
    surface: np.ndarray,
    grid: SpatialGrid,
    quad: LevyQuadrature,
    beta_of: Callable[[np.ndarray, float], np.ndarray],
    gamma_of: Callable[[np.ndarray, float], np.ndarray],
    growth: GrowthBound | None = None,
    node: int | None = None,
    split: bool = False,
):
    """Jump argument of the driver: ``sum_k w_k gamma(x,e_k) [v(x+beta) - v(x)]``.

    With ``split=True`` returns the (small-jump, large-jump) pair; the
    small-jump half is identically zero at the quadrature level because the
    first-order mass below the cutoff is dropped (it vanishes with the
    cutoff, unlike the generator's second-order part).
    """
    grid.require_1d()
    x = grid.axis()
    acc = np.zeros_like(surface)
    for e_k, w_k in zip(quad.marks, quad.weights):
        disp = np.broadcast_to(np.asarray(beta_of(x, float(e_k)), dtype=float), x.shape)
        gam = np.broadcast_to(np.asarray(gamma_of(x, float(e_k)), dtype=float), x.shape)
        vals = offgrid_eval(surface, grid, x + disp, growth)
        acc = acc + w_k * gam * (vals - surface)
    if split:
        zero = np.zeros_like(surface)
        if node is None:
            return zero, acc
        return 0.0, float(acc[node])
    return acc if node is None else float(acc[node])
