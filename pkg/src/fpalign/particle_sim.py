'''
# Summary
Euler-Maruyama simulation of the interacting agent system behind the kinetic equation: Cucker-Smale
alignment with kernel weights, Rayleigh friction / self-propulsion and state-dependent noise.

    - cs_drift:           Strength s_i and local average velocity [v]_i for every agent.
    - em_step:            One Euler-Maruyama step with counter-based Gaussian noise.
    - sample_ensemble:    Agents drawn from a kinetic state (mean-field initialization).
    - empirical_density:  Mass-weighted phase-space histogram, optionally smoothed.
    - empirical_moments:  Momentum, kinetic energy, max speed and speed histogram.
    - simulate:           Runs em_step to time T, collecting moment rows and snapshots.
'''

import logging
import math
import os
from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np
from numpy.typing import NDArray
from scipy import ndimage

from . import common
from . import constants
from .averaging import KernelShape
from .force_potential import ForceParams, force_1d
from .kinetic_solver import Grid, KineticState

# region Data

SAMPLING_COUNTER = 1 << 255  # counter block reserved for initial sampling, disjoint from step blocks
DIRECT_BLOCK     = 2048      # agents per block in the pairwise sum

class IsolatedAgentError(common.NumericError):
    '''An agent has no mass inside its kernel footprint.'''

class EnsembleFormatError(common.FpaError, ValueError):
    '''An ensemble file does not follow the FPP1 layout.'''

class ForceCoupling(StrEnum):
    DISPLAYED = 'displayed'  # F_det as written for the agent system
    KINETIC   = 'kinetic'    # F_det scaled by s_i, matching the kinetic collision operator

@dataclass(frozen=True)
class ParticleKernel:
    '''Continuous communication kernel with unit integral over the line (tent) or the period (global).'''
    shape: KernelShape
    L: float
    r0: float

    def __call__(self, distance: NDArray[np.float64]) -> NDArray[np.float64]:
        if self.shape == KernelShape.GLOBAL:
            return np.full(np.shape(distance), 1.0 / self.L)
        return np.maximum(1.0 - distance / self.r0, 0.0) / self.r0

def make_particle_kernel(shape: str, L: float, r0: float | None=None) -> ParticleKernel:
    kernel_shape = KernelShape(shape)
    if kernel_shape == KernelShape.GLOBAL:
        return ParticleKernel(shape=kernel_shape, L=L, r0=0.5 * L)
    if r0 is None or not 0 < r0 <= 0.5 * L:
        raise common.ConfigError('averaging.r0', f"tent kernel needs 0 < r0 <= L/2, got {r0}")
    return ParticleKernel(shape=kernel_shape, L=L, r0=r0)

@dataclass
class ParticleEnsemble:
    '''Agents on the periodic line [0, L). step counts completed steps and keys the noise stream.'''
    x: NDArray[np.float64]
    v: NDArray[np.float64]
    m: NDArray[np.float64]
    L: float
    seed: int
    t: float = 0.0
    step: int = 0

    @property
    def N(self) -> int:
        return len(self.x)

    def copy(self) -> 'ParticleEnsemble':
        return ParticleEnsemble(x=self.x.copy(), v=self.v.copy(), m=self.m.copy(),
                                L=self.L, seed=self.seed, t=self.t, step=self.step)

@dataclass(frozen=True)
class SdeParams:
    dt: float
    kernel: ParticleKernel
    force: ForceParams
    noise_on: bool = True
    force_coupling: ForceCoupling = ForceCoupling.DISPLAYED

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise common.ConfigError('particles.dt', f"must be > 0, got {self.dt}")

@dataclass
class Moments:
    t: float
    momentum: float
    kinetic_energy: float
    max_speed: float
    speed_counts: NDArray[np.float64]
    speed_edges: NDArray[np.float64]

    def row(self) -> list[float]:
        return [self.t, self.momentum, self.kinetic_energy, self.max_speed]

@dataclass
class EmpiricalDensity:
    state: KineticState
    bandwidth_x: float
    bandwidth_v: float
    lost_mass: float

@dataclass
class ParticleRun:
    moments: list[Moments] = field(default_factory=list)
    snapshots: list[ParticleEnsemble] = field(default_factory=list)
    densities: list[EmpiricalDensity] = field(default_factory=list)
    final: ParticleEnsemble | None = None

# endregion

# region Random Numbers

def generator(seed: int, counter: int) -> np.random.Generator:
    '''Philox stream keyed by seed and positioned at counter.'''
    return np.random.Generator(np.random.Philox(key=seed, counter=counter))

def step_normals(seed: int, step: int, N: int) -> NDArray[np.float64]:
    '''Standard normals for one step: agent i uses uniforms i and N + i of the (seed, step) block.'''
    uniforms = generator(seed, step << 128).random(2 * N)
    radius = np.sqrt(-2.0 * np.log(1.0 - uniforms[:N]))
    return radius * np.cos(2.0 * np.pi * uniforms[N:])

# endregion

# region Drift

def periodic_distance(a: NDArray[np.float64], b: NDArray[np.float64], L: float) -> NDArray[np.float64]:
    gap = np.abs(a - b)
    return np.minimum(gap, L - gap)

def _finish_drift(weight: NDArray[np.float64], flux: NDArray[np.float64]) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    low = float(np.min(weight)) if weight.size else 0.0
    if low < constants.STRENGTH_FLOOR:
        agent = int(np.argmin(weight))
        message = f"agent {agent} is isolated: s_i = {low:.3e}"
        logging.error(message)
        raise IsolatedAgentError(message)
    return weight, flux / weight

def cs_drift_direct(ensemble: ParticleEnsemble, kernel: ParticleKernel) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    '''Pairwise O(N^2) sum of s_i and [v]_i, evaluated in agent blocks.'''
    weight = np.empty(ensemble.N)
    flux = np.empty(ensemble.N)
    mv = ensemble.m * ensemble.v
    for start in range(0, ensemble.N, DIRECT_BLOCK):
        stop = min(start + DIRECT_BLOCK, ensemble.N)
        phi = kernel(periodic_distance(ensemble.x[start:stop, None], ensemble.x[None, :], ensemble.L))
        weight[start:stop] = phi @ ensemble.m
        flux[start:stop] = phi @ mv
    return _finish_drift(weight, flux)

def cs_drift(ensemble: ParticleEnsemble, kernel: ParticleKernel) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    '''s_i = sum_j m_j phi(d_ij) and [v]_i = sum_j m_j phi(d_ij) v_j / s_i.

    The global kernel is O(N). Compact kernels use a cell list with cells no narrower than r0,
    so each agent only meets agents in its own and the two adjacent cells; with fewer than
    three cells the pairwise sum is used.

    Raises:
        IsolatedAgentError: when some s_i falls below the strength floor.
    '''
    N, L = ensemble.N, ensemble.L
    if kernel.shape == KernelShape.GLOBAL:
        total = float(np.sum(ensemble.m))
        weight = np.full(N, total / L)
        flux = np.full(N, float(np.sum(ensemble.m * ensemble.v)) / L)
        return _finish_drift(weight, flux)

    n_cells = int(math.floor(L / kernel.r0))
    if n_cells < 3:
        return cs_drift_direct(ensemble, kernel)

    width = L / n_cells
    cell = np.minimum((ensemble.x / width).astype(np.int64), n_cells - 1)
    order = np.argsort(cell, kind='stable')
    sorted_cell = cell[order]
    starts = np.searchsorted(sorted_cell, np.arange(n_cells), side='left')
    stops = np.searchsorted(sorted_cell, np.arange(n_cells), side='right')
    x, m = ensemble.x[order], ensemble.m[order]
    mv = m * ensemble.v[order]

    weight = np.zeros(N)
    flux = np.zeros(N)
    for c in range(n_cells):
        own = slice(starts[c], stops[c])
        if own.start == own.stop:
            continue
        neighbours = np.concatenate([np.arange(starts[(c + k) % n_cells], stops[(c + k) % n_cells]) for k in (-1, 0, 1)])
        phi = kernel(periodic_distance(x[own, None], x[None, neighbours], L))
        weight[own] = phi @ m[neighbours]
        flux[own] = phi @ mv[neighbours]

    result_weight = np.empty(N)
    result_flux = np.empty(N)
    result_weight[order] = weight
    result_flux[order] = flux
    return _finish_drift(result_weight, result_flux)

# endregion

# region Stepping

def deterministic_force(v: NDArray[np.float64], force: ForceParams) -> NDArray[np.float64]:
    '''sigma (1 - |v|^p) v / eta(|v|), the agent-level force.'''
    return -force_1d(v, force)

def em_step(ensemble: ParticleEnsemble, params: SdeParams) -> ParticleEnsemble:
    '''x += v dt (mod L); v += s([v] - v) dt + F_det dt + sqrt(2 s dt) xi.'''
    dt = params.dt
    strength, average = cs_drift(ensemble, params.kernel)
    drive = deterministic_force(ensemble.v, params.force)
    if params.force_coupling == ForceCoupling.KINETIC:
        drive = strength * drive
    v = ensemble.v + strength * (average - ensemble.v) * dt + drive * dt
    if params.noise_on:
        v = v + np.sqrt(2.0 * strength * dt) * step_normals(ensemble.seed, ensemble.step, ensemble.N)
    x = np.mod(ensemble.x + ensemble.v * dt, ensemble.L)
    x = np.where(x >= ensemble.L, 0.0, x)
    return ParticleEnsemble(x=x, v=v, m=ensemble.m, L=ensemble.L, seed=ensemble.seed,
                            t=ensemble.t + dt, step=ensemble.step + 1)

# endregion

# region Sampling

def make_ensemble(x: NDArray[np.float64], v: NDArray[np.float64], L: float, seed: int,
                  m: NDArray[np.float64] | None=None, t: float=0.0) -> ParticleEnsemble:
    '''Builds an ensemble with positions reduced mod L and masses defaulting to 1/N.'''
    N = len(x)
    if N == 0 or len(v) != N:
        raise ValueError(f"ensemble needs matching non-empty x and v, got {len(x)} and {len(v)}")
    masses = np.full(N, 1.0 / N) if m is None else np.asarray(m, dtype=np.float64)
    if np.any(masses <= 0):
        raise ValueError('agent masses must be positive')
    if abs(float(np.sum(masses)) - 1.0) > 1e-12:
        raise ValueError(f"agent masses must sum to 1, got {float(np.sum(masses))}")
    positions = np.mod(np.asarray(x, dtype=np.float64), L)
    positions = np.where(positions >= L, 0.0, positions)
    return ParticleEnsemble(x=positions, v=np.asarray(v, dtype=np.float64).copy(), m=masses, L=L, seed=seed, t=t)

def sample_ensemble(state: KineticState, grid: Grid, N: int, seed: int) -> ParticleEnsemble:
    '''Draws N equal-mass agents from f: a cell with probability f dx dv, then uniformly inside it.'''
    weights = np.clip(state.f, 0.0, None).ravel()
    total = float(np.sum(weights))
    if not total > 0:
        raise ValueError('cannot sample agents from a density with no mass')
    rng = generator(seed, SAMPLING_COUNTER)
    cells = rng.choice(weights.size, size=N, p=weights / total)
    offsets = rng.random((2, N)) - 0.5
    row, column = np.divmod(cells, grid.Nv)
    x = grid.x[row] + offsets[0] * grid.dx
    v = grid.v[column] + offsets[1] * grid.dv
    logging.debug(f"sampled {N} agents from the kinetic state at t={state.t}")
    return make_ensemble(x, v, grid.L, seed, t=state.t)

# endregion

# region Statistics

def _weighted_std(values: NDArray[np.float64], weights: NDArray[np.float64]) -> float:
    mean = float(np.sum(weights * values) / np.sum(weights))
    return math.sqrt(float(np.sum(weights * (values - mean) ** 2) / np.sum(weights)))

def empirical_density(ensemble: ParticleEnsemble, grid: Grid, smooth: bool=False,
                      bandwidth: tuple[float, float] | None=None) -> EmpiricalDensity:
    '''Mass-weighted histogram on the phase-space grid, normalized to unit mass.

    With smooth set, a Gaussian filter (periodic in x, nearest-edge in v) is applied with
    the given per-axis bandwidth, default Scott's rule std * N^(-1/6).
    '''
    counts, _, _ = np.histogram2d(ensemble.x, ensemble.v, bins=[grid.Nx, grid.Nv],
                                  range=[[0.0, grid.L], [-grid.Vmax, grid.Vmax]], weights=ensemble.m)
    captured = float(np.sum(counts))
    lost = float(np.sum(ensemble.m)) - captured
    if lost > 0:
        logging.warning(f"{lost:.3e} of the agent mass lies outside |v| <= {grid.Vmax}")
    hx, hv = 0.0, 0.0
    if smooth:
        if bandwidth is None:
            factor = ensemble.N ** (-1.0 / 6.0)
            hx = _weighted_std(ensemble.x, ensemble.m) * factor
            hv = _weighted_std(ensemble.v, ensemble.m) * factor
        else:
            hx, hv = bandwidth
        counts = ndimage.gaussian_filter(counts, sigma=(hx / grid.dx, hv / grid.dv), mode=('wrap', 'nearest'))
    if not float(np.sum(counts)) > 0:
        raise ValueError('no agent mass falls inside the velocity window')
    f = counts / (float(np.sum(counts)) * grid.cell_volume)
    return EmpiricalDensity(state=KineticState(f=f, t=ensemble.t), bandwidth_x=hx, bandwidth_v=hv, lost_mass=lost)

def empirical_moments(ensemble: ParticleEnsemble, bins: int=50) -> Moments:
    '''Mass-weighted momentum and kinetic energy, max speed and a speed histogram.'''
    speeds = np.abs(ensemble.v)
    top = float(np.max(speeds))
    counts, edges = np.histogram(speeds, bins=bins, range=(0.0, top if top > 0 else 1.0), weights=ensemble.m)
    return Moments(t=ensemble.t,
                   momentum=float(np.sum(ensemble.m * ensemble.v)),
                   kinetic_energy=float(np.sum(0.5 * ensemble.m * ensemble.v ** 2)),
                   max_speed=top,
                   speed_counts=counts,
                   speed_edges=edges)

# endregion

# region Simulation

def simulate(ensemble: ParticleEnsemble, params: SdeParams, T: float, record_every: int=10,
             snapshot_every: int=0, grid: Grid | None=None) -> ParticleRun:
    '''Advances to time T, recording moments every record_every steps and at the end.

    Snapshots (and, with a grid, histogram densities) are taken every snapshot_every steps
    and at the end; snapshot_every = 0 keeps the final ensemble only.
    '''
    if record_every < 1:
        raise common.ConfigError('particles.record_every', f"must be >= 1, got {record_every}")
    steps = int(round(T / params.dt))
    result = ParticleRun()
    current = ensemble

    def keep(snapshot: ParticleEnsemble) -> None:
        result.snapshots.append(snapshot.copy())
        if grid is not None:
            result.densities.append(empirical_density(snapshot, grid))

    logging.info(f"particles: N={ensemble.N}, {steps} steps of dt={params.dt}, kernel={params.kernel.shape}, "
                 f"noise={'on' if params.noise_on else 'off'}, coupling={params.force_coupling}")
    result.moments.append(empirical_moments(current))
    if snapshot_every > 0:
        keep(current)
    for step in range(1, steps + 1):
        current = em_step(current, params)
        if not np.all(np.isfinite(current.v)):
            message = f"non-finite agent velocity at step {step} (t={current.t:.6g})"
            logging.error(message)
            raise common.NumericError(message)
        if step % record_every == 0 or step == steps:
            result.moments.append(empirical_moments(current))
        if snapshot_every > 0 and step % snapshot_every == 0:
            keep(current)
    if not result.snapshots or result.snapshots[-1].t != current.t:
        keep(current)
    result.final = current
    logging.info(f"particles finished at t={current.t:.6g}: momentum {result.moments[-1].momentum:.6g}, "
                 f"kinetic energy {result.moments[-1].kinetic_energy:.6g}, max speed {result.moments[-1].max_speed:.4g}")
    return result

# endregion

# region File I/O

def format_ensemble(ensemble: ParticleEnsemble) -> str:
    lines = [constants.MAGIC_ENSEMBLE,
             ' '.join([str(ensemble.N), common.format_float(ensemble.L),
                       common.format_float(ensemble.t), str(ensemble.seed)])]
    lines.extend(f"{common.format_float(m)} {common.format_float(x)} {common.format_float(v)}"
                 for m, x, v in zip(ensemble.m, ensemble.x, ensemble.v))
    return '\n'.join(lines) + '\n'

def write_ensemble(path: str, ensemble: ParticleEnsemble) -> None:
    '''Writes the FPP1 text ensemble atomically.'''
    common.write_atomic(path, format_ensemble(ensemble))

def format_moments(rows: list[Moments]) -> str:
    lines = [','.join(constants.MOMENT_COLUMNS)]
    lines.extend(','.join(common.format_float(value) for value in moments.row()) for moments in rows)
    return '\n'.join(lines) + '\n'

def write_moments(path: str, rows: list[Moments]) -> None:
    common.write_atomic(path, format_moments(rows))

def read_ensemble(path: str) -> ParticleEnsemble:
    '''Parses an FPP1 ensemble file.

    Raises:
        EnsembleFormatError: on a wrong magic, header, agent count, or invalid masses.
    '''
    if not os.path.exists(path):
        raise FileNotFoundError(f"ensemble '{path}' does not exist")
    with open(path, encoding='utf-8') as file:
        lines = [line for line in file.read().split('\n') if line.strip()]
    if not lines or lines[0].strip() != constants.MAGIC_ENSEMBLE:
        raise EnsembleFormatError(f"'{path}': missing magic '{constants.MAGIC_ENSEMBLE}'")
    try:
        header = lines[1].split()
        N, L, t, seed = int(header[0]), float(header[1]), float(header[2]), int(header[3])
        table = np.array([[float(token) for token in line.split()] for line in lines[2:]])
    except (IndexError, ValueError) as e:
        raise EnsembleFormatError(f"'{path}': malformed header or agent rows: {e}") from e
    if table.shape != (N, 3):
        raise EnsembleFormatError(f"'{path}': expected {N} rows of 'm x v', found shape {table.shape}")
    try:
        ensemble = make_ensemble(table[:, 1], table[:, 2], L, seed, m=table[:, 0], t=t)
    except ValueError as e:
        raise EnsembleFormatError(f"'{path}': {e}") from e
    return ensemble

# endregion
