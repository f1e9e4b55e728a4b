'''
# Summary
Finite-volume solver for the kinetic Fokker-Planck-Alignment equation on a periodic 1D x 1D
phase-space grid, by Strang splitting of free transport and the alignment/force collision operator.

    - init_state:      Preset initial densities (equilibrium, shifted_maxwellian, two_bump, perturbed, from_file).
    - transport_step:  Conservative periodic shift x -> x - v dt per velocity row.
    - collision_step:  Chang-Cooper / implicit Euler drift-diffusion in v per x-cell.
    - strang_step:     Half transport, macro refresh, collision, half transport.
    - run:             Integrates to time T, emitting diagnostics records and snapshots.
'''

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import StrEnum
from functools import cached_property
from typing import TYPE_CHECKING

import numpy as np
from numpy.typing import NDArray
from scipy import linalg

from . import common
from . import constants
from .averaging import AveragingModel
from .force_potential import EquilibriumTable, ForceParams, equilibrium

if TYPE_CHECKING:
    from .averaging import AssumptionReport
    from .diagnostics import DiagnosticsRecord, MacroFields

# region Data

class CFLError(common.FpaError, ValueError):
    '''Finite-volume transport was asked to move mass more than one cell per step.'''

class TridiagonalError(common.NumericError):
    '''The banded collision solve broke down in one x-cell.'''
    def __init__(self, message: str, cell: int) -> None:
        super().__init__(message)
        self.cell = cell

class NumericAbort(common.NumericError):
    '''A step produced non-finite values; carries the last good state.'''
    def __init__(self, message: str, last_good: KineticState) -> None:
        super().__init__(message)
        self.last_good = last_good

class AssumptionGateError(common.FpaError):
    '''A hard-gated assumption check failed during a run.'''
    def __init__(self, message: str, report: AssumptionReport, result: RunResult) -> None:
        super().__init__(message)
        self.report = report
        self.result = result

class SnapshotFormatError(common.FpaError, ValueError):
    '''A snapshot file does not follow the FPA1 layout.'''

class Preset(StrEnum):
    EQUILIBRIUM        = 'equilibrium'
    SHIFTED_MAXWELLIAN = 'shifted_maxwellian'
    TWO_BUMP           = 'two_bump'
    PERTURBED          = 'perturbed'
    FROM_FILE          = 'from_file'

class TransportMode(StrEnum):
    SEMI_LAGRANGIAN = 'semi_lagrangian'
    FINITE_VOLUME   = 'finite_volume'

class RunStatus(StrEnum):
    COMPLETED = 'completed'
    GATED     = 'gated'
    ABORTED   = 'aborted'

@dataclass(frozen=True)
class Grid:
    '''Periodic x cells on [0, L) and velocity cells on [-Vmax, Vmax], symmetric about v = 0.'''
    Nx: int = constants.DEFAULT_NX
    Nv: int = constants.DEFAULT_NV
    L: float = constants.DEFAULT_L
    Vmax: float = constants.DEFAULT_VMAX

    def __post_init__(self) -> None:
        if self.Nx < 3:
            raise common.ConfigError('grid.Nx', f"must be >= 3, got {self.Nx}")
        if self.Nv < 2 or self.Nv % 2:
            raise common.ConfigError('grid.Nv', f"must be even and >= 2, got {self.Nv}")
        if self.L <= 0:
            raise common.ConfigError('grid.L', f"must be > 0, got {self.L}")
        if self.Vmax <= 0:
            raise common.ConfigError('grid.Vmax', f"must be > 0, got {self.Vmax}")

    @property
    def dx(self) -> float:
        return self.L / self.Nx

    @property
    def dv(self) -> float:
        return 2.0 * self.Vmax / self.Nv

    @property
    def cell_volume(self) -> float:
        return self.dx * self.dv

    @cached_property
    def x(self) -> NDArray[np.float64]:
        centers = (np.arange(self.Nx) + 0.5) * self.dx
        centers.setflags(write=False)
        return centers

    @cached_property
    def v(self) -> NDArray[np.float64]:
        # integer-plus-half offsets make v[Nv - 1 - j] == -v[j] exactly
        centers = (np.arange(self.Nv) + 0.5 - 0.5 * self.Nv) * self.dv
        centers.setflags(write=False)
        return centers

@dataclass
class KineticState:
    '''Phase-space density f[i, j] at (x_i, v_j) and its time.'''
    f: NDArray[np.float64]
    t: float = 0.0

    def mass(self, grid: Grid) -> float:
        return float(np.sum(self.f) * grid.cell_volume)

    def copy(self) -> KineticState:
        return KineticState(f=self.f.copy(), t=self.t)

@dataclass(frozen=True)
class SolverSetup:
    '''Everything a step needs besides the state.'''
    grid: Grid
    force: ForceParams
    model: AveragingModel
    table: EquilibriumTable
    transport: TransportMode = TransportMode.SEMI_LAGRANGIAN
    threads: int = 1

@dataclass
class RunOptions:
    dt: float = constants.DEFAULT_DT
    T: float = 1.0
    record_every: int = 10
    snapshot_every: int = 0  # 0: final state only
    hard_gate: bool = False
    gap_subspace: str = 'mean_zero'

@dataclass
class RunResult:
    records: list[DiagnosticsRecord] = field(default_factory=list)
    reports: list[AssumptionReport] = field(default_factory=list)
    snapshots: list[KineticState] = field(default_factory=list)
    final: KineticState | None = None
    status: RunStatus = RunStatus.COMPLETED
    steps: int = 0
    clipped_mass: float = 0.0
    max_step_change: float = 0.0

# endregion

# region Setup

def make_setup(grid: Grid, force: ForceParams, model: AveragingModel,
               transport: str=TransportMode.SEMI_LAGRANGIAN, threads: int=1) -> SolverSetup:
    '''Validates the grid against the model and tabulates the equilibrium.'''
    if model.kernel.Nx != grid.Nx or not math.isclose(model.kernel.L, grid.L, rel_tol=1e-12):
        raise common.ConfigError('averaging', f"kernel grid (Nx={model.kernel.Nx}, L={model.kernel.L}) "
                                              f"does not match solver grid (Nx={grid.Nx}, L={grid.L})")
    table = equilibrium(grid, force)
    return SolverSetup(grid=grid, force=force, model=model, table=table,
                       transport=TransportMode(transport), threads=threads)

def _normalize(f: NDArray[np.float64], grid: Grid) -> NDArray[np.float64]:
    mass = float(np.sum(f) * grid.cell_volume)
    if not mass > 0:
        raise ValueError(f"initial density has non-positive mass {mass}")
    return f / mass

def maxwellian(v: NDArray[np.float64], drift: float, temperature: float) -> NDArray[np.float64]:
    return np.exp(-(v - drift) ** 2 / (2.0 * temperature)) / math.sqrt(2.0 * math.pi * temperature)

def init_state(setup: SolverSetup, preset: str, drift: float=0.5, temperature: float=1.0,
               amplitude: float=0.1, path: str | None=None) -> KineticState:
    '''Builds a non-negative unit-mass initial state.

    Args:
        preset: One of the Preset values.
        drift: Mean velocity of shifted_maxwellian.
        temperature: Variance of shifted_maxwellian.
        amplitude: Relative amplitude of the perturbed preset.
        path: FPA1 snapshot for from_file.
    '''
    grid, table = setup.grid, setup.table
    kind = Preset(preset)
    if kind == Preset.EQUILIBRIUM:
        return KineticState(f=np.tile(table.f_inf, (grid.Nx, 1)))

    if kind == Preset.SHIFTED_MAXWELLIAN:
        if temperature <= 0:
            raise common.ConfigError('io.temperature', f"must be > 0, got {temperature}")
        row = maxwellian(grid.v, drift, temperature)
        return KineticState(f=_normalize(np.tile(row, (grid.Nx, 1)), grid))

    if kind == Preset.TWO_BUMP:
        # odd modulation built by reflection so f(-x, -v) = f(x, v) holds exactly
        wave = np.sin(2.0 * np.pi * grid.x / grid.L)
        wave = 0.5 * (wave - wave[::-1])
        right = maxwellian(grid.v, 1.5, 0.5)
        left = maxwellian(grid.v, -1.5, 0.5)
        f = (1.0 + 0.5 * wave)[:, None] * right[None, :] + (1.0 - 0.5 * wave)[:, None] * left[None, :]
        return KineticState(f=_normalize(f, grid))

    if kind == Preset.PERTURBED:
        if abs(amplitude) >= 1:
            raise common.ConfigError('io.amplitude', f"must satisfy |amplitude| < 1, got {amplitude}")
        wave = 1.0 + amplitude * np.cos(2.0 * np.pi * grid.x / grid.L)
        return KineticState(f=_normalize(wave[:, None] * table.f_inf[None, :], grid))

    if path is None:
        raise common.ConfigError('io.snapshot_path', 'from_file preset needs a snapshot path')
    file_grid, state = read_snapshot(path)
    if (file_grid.Nx, file_grid.Nv) != (grid.Nx, grid.Nv) \
            or not math.isclose(file_grid.L, grid.L, rel_tol=1e-12) \
            or not math.isclose(file_grid.Vmax, grid.Vmax, rel_tol=1e-12):
        raise SnapshotFormatError(f"snapshot grid {file_grid} does not match configured grid {grid}")
    return state

# endregion

# region Transport

def _minmod(a: NDArray[np.float64], b: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.where(a * b > 0.0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)

def transport_step(state: KineticState, setup: SolverSetup, dt: float) -> KineticState:
    '''Shifts every velocity row by v dt in conservative flux form.

    Each row moves by n = floor(v dt/dx) whole cells, then by the fraction alpha through the
    upwind flux alpha (f_i + slope_i dx (1 - alpha)/2).

    Semi-Lagrangian mode uses centered slopes: second order for any dt, not monotone at jumps.
    Finite-volume mode limits the slopes with minmod and holds the Courant number to 1, so no new
    extrema appear.

    Raises:
        CFLError: in finite-volume mode when |v| dt/dx > 1 for some row.
    '''
    grid = setup.grid
    shift = grid.v * dt / grid.dx
    limited = setup.transport == TransportMode.FINITE_VOLUME
    if limited:
        courant = float(np.max(np.abs(shift)))
        if courant > 1.0:
            raise CFLError(f"CFL number {courant:.4f} > 1 (Vmax={grid.Vmax}, dt={dt}, dx={grid.dx})")
    whole = np.floor(shift).astype(np.int64)
    alpha = shift - whole

    rows = np.arange(grid.Nv)
    source = (np.arange(grid.Nx)[:, None] - whole[None, :]) % grid.Nx
    g = state.f[source, rows[None, :]]

    forward = np.roll(g, -1, axis=0) - g
    backward = g - np.roll(g, 1, axis=0)
    if limited:
        half_slope = 0.5 * _minmod(forward, backward)
    else:
        half_slope = 0.25 * (forward + backward)
    flux = alpha[None, :] * (g + half_slope * (1.0 - alpha[None, :]))
    f = g - (flux - np.roll(flux, 1, axis=0))
    return KineticState(f=f, t=state.t + dt)

# endregion

# region Collision

def bernoulli(x: NDArray[np.float64]) -> NDArray[np.float64]:
    '''B(x) = x / (e^x - 1), with B(0) = 1.'''
    small = np.abs(x) < 1e-10
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 - 0.5 * x, safe / np.expm1(safe))

def collision_matrix(V: NDArray[np.float64], average: float, strength: float,
                     dv: float, dt: float) -> NDArray[np.float64]:
    '''Banded (1, 1) implicit Euler matrix of d/dv (s (df/dv + W' f)) with W = V - average v.

    Fluxes use the local Gibbs ratio, so exp(-W) is the exact discrete stationary state,
    with zero flux through v = +-Vmax.
    '''
    jump = np.diff(V) - average * dv
    forward = bernoulli(-jump)   # couples f_{j+1}
    backward = bernoulli(jump)   # couples f_j
    c = dt * strength / dv ** 2
    n = len(V)
    banded = np.zeros((3, n))
    banded[1, :] = 1.0
    banded[1, :-1] += c * backward
    banded[1, 1:] += c * forward
    banded[0, 1:] = -c * forward
    banded[2, :-1] = -c * backward
    return banded

def _collide_cells(f: NDArray[np.float64], out: NDArray[np.float64], cells: range, V: NDArray[np.float64],
                   macro: MacroFields, dv: float, dt: float) -> None:
    for cell in cells:
        banded = collision_matrix(V, float(macro.average[cell]), float(macro.strength[cell]), dv, dt)
        try:
            out[cell] = linalg.solve_banded((1, 1), banded, f[cell], check_finite=False)
        except (linalg.LinAlgError, ValueError) as e:
            message = f"tridiagonal collision solve failed in x-cell {cell}: {e}"
            logging.error(message)
            raise TridiagonalError(message, cell) from e

def collision_step(state: KineticState, setup: SolverSetup, macro: MacroFields, dt: float) -> KineticState:
    '''Advances the velocity drift-diffusion of every x-cell by one implicit Euler step.

    Macro fields are frozen over the step. Cells are independent and split across
    setup.threads workers.
    '''
    grid = setup.grid
    V = setup.table.V
    out = np.empty_like(state.f)
    workers = max(1, min(setup.threads, grid.Nx))
    if workers == 1:
        _collide_cells(state.f, out, range(grid.Nx), V, macro, grid.dv, dt)
    else:
        bounds = np.linspace(0, grid.Nx, workers + 1).astype(int)
        chunks = [range(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:])]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_collide_cells, state.f, out, chunk, V, macro, grid.dv, dt) for chunk in chunks]
            for future in futures:
                future.result()
    return KineticState(f=out, t=state.t)

# endregion

# region Splitting

def clip_negative(state: KineticState, grid: Grid) -> float:
    '''Zeroes negative cells in place and returns the mass they carried.'''
    negative = state.f < 0
    if not np.any(negative):
        return 0.0
    clipped = float(-np.sum(state.f[negative]) * grid.cell_volume)
    if float(np.min(state.f)) < constants.NEGATIVE_FLOOR:
        logging.debug(f"clipping {int(np.count_nonzero(negative))} negative cells, mass {clipped:.3e}, min {float(np.min(state.f)):.3e}")
    state.f[negative] = 0.0
    return clipped

def strang_step(state: KineticState, setup: SolverSetup, dt: float) -> tuple[KineticState, MacroFields]:
    '''Half transport, macro refresh, full collision, half transport.

    Returns the advanced state and the macro fields used by the collision.
    '''
    from . import diagnostics

    half = transport_step(state, setup, 0.5 * dt)
    macro = diagnostics.macro_fields(half, setup)
    collided = collision_step(half, setup, macro, dt)
    advanced = transport_step(collided, setup, 0.5 * dt)
    return advanced, macro

def _step_count(options: RunOptions) -> tuple[int, float]:
    if options.dt <= 0:
        raise common.ConfigError('solver.dt', f"must be > 0, got {options.dt}")
    if options.T < 0:
        raise common.ConfigError('solver.T', f"must be >= 0, got {options.T}")
    steps = int(round(options.T / options.dt))
    if steps == 0:
        return 0, options.dt
    return steps, options.T / steps

def run(state: KineticState, setup: SolverSetup, options: RunOptions) -> RunResult:
    '''Integrates from state to time T.

    Records diagnostics at step 0, every record_every steps and at the final step; each record
    carries an assumption audit of its density. Snapshots are copies taken every snapshot_every
    steps (0: final state only).

    Raises:
        AssumptionGateError: when hard_gate is set and a recorded audit fails.
        NumericAbort: when a step produces non-finite values.
    '''
    from . import diagnostics

    grid = setup.grid
    steps, dt = _step_count(options)
    result = RunResult()
    mass0 = state.mass(grid)
    current = state.copy()
    logging.info(f"run: {steps} steps of dt={dt} to T={options.T} on Nx={grid.Nx}, Nv={grid.Nv}, "
                 f"variant={setup.model.variant}, kernel={setup.model.kernel.shape}, threads={setup.threads}")

    def record(snapshot: KineticState) -> None:
        entry, report = diagnostics.build_record(snapshot, setup, options.gap_subspace)
        result.records.append(entry)
        result.reports.append(report)
        edge = float((np.sum(snapshot.f[:, 0]) + np.sum(snapshot.f[:, -1])) * grid.cell_volume)
        if edge > constants.TAIL_RATIO:
            logging.warning(f"t={snapshot.t:.6g}: mass {edge:.3e} in the boundary velocity cells")
        if not report.passed:
            failed = [name for name in ('i', 'ii', 'iii', 'iv') if not getattr(report, f"pass_{name}")]
            message = f"assumption check failed at t={snapshot.t:.6g}: ({', '.join(failed)}) {report.to_dict()}"
            if options.hard_gate:
                logging.error(message)
                result.status = RunStatus.GATED
                result.final = snapshot.copy()
                raise AssumptionGateError(message, report, result)
            logging.warning(message)

    record(current)
    if options.snapshot_every > 0:
        result.snapshots.append(current.copy())

    for step in range(1, steps + 1):
        advanced, _ = strang_step(current, setup, dt)
        if not np.all(np.isfinite(advanced.f)):
            message = f"non-finite density at step {step} (t={advanced.t:.6g}); last good state at t={current.t:.6g}"
            logging.error(message)
            result.status = RunStatus.ABORTED
            result.final = current
            raise NumericAbort(message, current)
        result.clipped_mass += clip_negative(advanced, grid)
        scale = float(np.max(np.abs(current.f)))
        result.max_step_change = max(result.max_step_change,
                                     float(np.max(np.abs(advanced.f - current.f))) / scale if scale > 0 else 0.0)
        current = advanced
        result.steps = step

        if step % options.record_every == 0 or step == steps:
            record(current)
        if options.snapshot_every > 0 and step % options.snapshot_every == 0:
            result.snapshots.append(current.copy())

    if not result.snapshots or result.snapshots[-1].t != current.t:
        result.snapshots.append(current.copy())
    result.final = current
    drift = abs(current.mass(grid) - mass0) / mass0
    logging.info(f"run finished at t={current.t:.6g}: relative mass drift {drift:.3e}, "
                 f"clipped mass {result.clipped_mass:.3e}, max relative step change {result.max_step_change:.3e}")
    return result

# endregion

# region File I/O

def format_snapshot(state: KineticState, grid: Grid) -> str:
    lines = [constants.MAGIC_SNAPSHOT,
             ' '.join([str(grid.Nx), str(grid.Nv), common.format_float(grid.L),
                       common.format_float(grid.Vmax), common.format_float(state.t)])]
    lines.extend(' '.join(common.format_float(value) for value in row) for row in state.f)
    return '\n'.join(lines) + '\n'

def write_snapshot(path: str, state: KineticState, grid: Grid) -> None:
    '''Writes the FPA1 text snapshot atomically.'''
    common.write_atomic(path, format_snapshot(state, grid))

def read_snapshot(path: str) -> tuple[Grid, KineticState]:
    '''Parses an FPA1 snapshot into its grid and state.

    Raises:
        SnapshotFormatError: on a wrong magic, header, cell count, or negative values.
    '''
    if not os.path.exists(path):
        raise FileNotFoundError(f"snapshot '{path}' does not exist")
    with open(path, encoding='utf-8') as file:
        lines = file.read().split('\n')
    if not lines or lines[0].strip() != constants.MAGIC_SNAPSHOT:
        raise SnapshotFormatError(f"'{path}': missing magic '{constants.MAGIC_SNAPSHOT}'")
    try:
        header = lines[1].split()
        Nx, Nv = int(header[0]), int(header[1])
        L, Vmax, t = float(header[2]), float(header[3]), float(header[4])
        values = np.array([float(token) for token in ' '.join(lines[2:]).split()])
    except (IndexError, ValueError) as e:
        raise SnapshotFormatError(f"'{path}': malformed header or values: {e}") from e
    if values.size != Nx * Nv:
        raise SnapshotFormatError(f"'{path}': expected {Nx * Nv} values, found {values.size}")
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise SnapshotFormatError(f"'{path}': density values must be finite and non-negative")
    try:
        grid = Grid(Nx=Nx, Nv=Nv, L=L, Vmax=Vmax)
    except common.ConfigError as e:
        raise SnapshotFormatError(f"'{path}': invalid grid header: {e}") from e
    return grid, KineticState(f=values.reshape(Nx, Nv), t=t)

# endregion
