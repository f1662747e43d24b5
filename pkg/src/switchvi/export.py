"""Artifact writers: CSV surfaces, plot data, JSON reports, binary snapshots.

Floats are written with shortest round-trip ``repr``, so identical runs give
byte-identical files.

Binary snapshot layout (little-endian):

    magic     8 bytes   b"SVITRAJ1"
    m1, m2    uint32 each
    n_nodes   uint32
    x_min     float64
    x_max     float64
    n_levels  uint32
    times     float64[n_levels]
    values    float64[n_levels * m1 * m2 * n_nodes], row-major in
              (level, i, j, node) order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .discretization import SpatialGrid, TimeGrid, ValueField
from .model import ProblemSpec, eval_obstacles
from .pde_solver import Trajectory

__all__ = [
    "fmt_float",
    "value_field_csv",
    "trajectory_csv_files",
    "plotdata_csv",
    "write_json",
    "write_binary_snapshot",
    "read_binary_snapshot",
]

_MAGIC = b"SVITRAJ1"


def fmt_float(v: float) -> str:
    return repr(float(v))


def value_field_csv(field: ValueField, grid: SpatialGrid) -> str:
    """Columns: node coordinate, one value column per mode pair."""
    m1, m2 = field.values.shape[0], field.values.shape[1]
    x = grid.axis()
    header = ["x"] + [f"v_{i}_{j}" for i in range(m1) for j in range(m2)]
    lines = [",".join(header)]
    for p in range(len(x)):
        row = [fmt_float(x[p])] + [fmt_float(field.values[i, j, p]) for i in range(m1) for j in range(m2)]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def trajectory_csv_files(trajectory: Trajectory, out_dir: Path, stem: str, levels: list[int] | None = None) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    idxs = levels if levels is not None else list(range(trajectory.n_levels))
    for k in idxs:
        field = trajectory.level(k)
        path = out_dir / f"{stem}_level{k:04d}.csv"
        path.write_text(value_field_csv(field, trajectory.grid), encoding="utf-8")
        written.append(path)
    return written


def plotdata_csv(trajectory: Trajectory, spec: ProblemSpec, level: int = 0) -> str:
    """Level slice with obstacle columns: x, v_ij, L_ij, U_ij per pair."""
    field = trajectory.level(level)
    x = trajectory.grid.axis()
    t = float(trajectory.times[level])
    lc = spec.lower_cost_table(t, x)
    uc = spec.upper_cost_table(t, x)
    L, U = eval_obstacles(field.values, lc, uc)
    m1, m2 = field.values.shape[0], field.values.shape[1]
    header = ["x"]
    for i in range(m1):
        for j in range(m2):
            header += [f"v_{i}_{j}", f"L_{i}_{j}", f"U_{i}_{j}"]
    lines = [",".join(header)]
    for p in range(len(x)):
        row = [fmt_float(x[p])]
        for i in range(m1):
            for j in range(m2):
                row += [fmt_float(field.values[i, j, p]), fmt_float(L[i, j, p]), fmt_float(U[i, j, p])]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def write_json(obj, path: Path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_binary_snapshot(trajectory: Trajectory, path: Path) -> None:
    m1, m2, n = trajectory.values.shape[1:]
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", m1, m2, n))
        fh.write(struct.pack("<dd", trajectory.grid.x_min[0], trajectory.grid.x_max[0]))
        fh.write(struct.pack("<I", trajectory.n_levels))
        fh.write(np.ascontiguousarray(trajectory.times, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(trajectory.values, dtype="<f8").tobytes())


def read_binary_snapshot(path: Path) -> Trajectory:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError("not a trajectory snapshot")
    off = 8
    m1, m2, n = struct.unpack_from("<III", raw, off)
    off += 12
    x_min, x_max = struct.unpack_from("<dd", raw, off)
    off += 16
    (n_levels,) = struct.unpack_from("<I", raw, off)
    off += 4
    times = np.frombuffer(raw, dtype="<f8", count=n_levels, offset=off).copy()
    off += 8 * n_levels
    values = np.frombuffer(raw, dtype="<f8", count=n_levels * m1 * m2 * n, offset=off).copy()
    values = values.reshape(n_levels, m1, m2, n)
    grid = SpatialGrid.line(x_min, x_max, n)
    tgrid = TimeGrid(horizon=float(times[-1]) if times[-1] > 0 else 1.0, n_steps=max(1, n_levels - 1))
    return Trajectory(times=times, values=values, grid=grid, tgrid=tgrid)
