'''
# Summary
Functionals and inequality monitors of the entropy method on kinetic snapshots.

    - macro_fields:             rho, u, u_F, u_V, s_rho and [u]_rho per x-cell.
    - relative_entropy:         H(f | f_inf).
    - fisher_functionals:       Ivv (weighted and plain), Ixv, Ixx of h = f / f_inf.
    - dissipation_functionals:  Dvv, Dxv from second derivatives of log h.
    - ck_check:                 Csiszar-Kullback slack 2H - ||f - f_inf||_1^2.
    - entropy_production:       dH/dt formula, ||u_V||^2 and the alignment pairing.
    - lemma_monitors:           Smallest constants making the three differential inequalities hold.
    - modified_functional:      I_tilde and I_tilde + gamma H along a trajectory.
    - fit_decay:                Exponential rate and prefactor of H(t).
'''

import csv
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy import stats

from . import averaging
from . import common
from . import constants
from .averaging import AssumptionReport
from .force_potential import EquilibriumTable, force_1d
from .kinetic_solver import Grid, KineticState, SolverSetup

# region Data

class InsufficientSamplesError(common.FpaError, ValueError):
    '''Too few usable samples for a fit or a time derivative.'''

class EpsilonTooLargeError(common.FpaError, ValueError):
    '''The modified functional is not equivalent to the Fisher information for this epsilon.'''
    def __init__(self, message: str, suggested: float) -> None:
        super().__init__(message)
        self.suggested = suggested

@dataclass
class MacroFields:
    '''Velocity moments and averaging fields per x-cell. u and u_F are 0 on vacuum cells.'''
    rho: NDArray[np.float64]
    u: NDArray[np.float64]
    u_F: NDArray[np.float64]
    u_V: NDArray[np.float64]
    strength: NDArray[np.float64]
    average: NDArray[np.float64]
    vacuum: NDArray[np.bool_]

@dataclass
class FisherValues:
    Ivv_w: float
    Ivv: float
    Ixv: float
    Ixx: float
    masked_mass: float = 0.0

@dataclass
class EntropyProduction:
    dHdt_formula: float
    uV_norm2: float
    pairing: float
    c3: float
    gap_holds: bool

@dataclass
class DiagnosticsRecord:
    '''One row of the time series; the first 17 fields are the CSV columns in order.'''
    t: float
    mass: float
    H: float
    Ivv_w: float
    Ivv: float
    Ixv: float
    Ixx: float
    Dvv: float
    Dxv: float
    uV_norm2: float
    pairing: float
    gap_sup: float
    force_ratio: float
    ck_slack: float
    logsob_ratio: float
    dHdt_formula: float
    dHdt_fd: float = math.nan
    u_norm2: float = 0.0
    c0: float = math.nan
    c3: float = 0.0
    masked_mass: float = 0.0
    gap_holds: bool = True

    def row(self) -> list[float]:
        return [getattr(self, column) for column in constants.SERIES_COLUMNS]

@dataclass
class LemmaMonitor:
    '''Fitted constants of one differential inequality, one per sample.'''
    name: str
    values: list[float]
    running_max: list[float]
    max_value: float
    median_value: float
    stable: bool

@dataclass
class LemmaReport:
    t: list[float]
    dIvv: list[float]
    dIxv: list[float]
    dIxx: list[float]
    monitors: list[LemmaMonitor] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @property
    def max_constant(self) -> float:
        return max((monitor.max_value for monitor in self.monitors), default=0.0)

@dataclass
class ModifiedFunctional:
    t: list[float]
    I_tilde: list[float]
    lyapunov: list[float]
    gamma: float
    epsilon: float
    c_lemma: float
    fraction_non_increasing: float

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

@dataclass
class DecayFit:
    t0: float
    t1: float
    delta_fit: float
    C_fit: float
    r_squared: float
    samples: int

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

# endregion

# region Macro Fields

def macro_fields(state: KineticState, setup: SolverSetup) -> MacroFields:
    '''Velocity quadratures of f and the averaging fields of the model.'''
    grid = setup.grid
    rho = np.sum(state.f, axis=1) * grid.dv
    momentum = state.f @ grid.v * grid.dv
    force_moment = state.f @ force_1d(grid.v, setup.force) * grid.dv
    vacuum = rho < constants.DENSITY_FLOOR
    safe = np.where(vacuum, 1.0, rho)
    u = np.where(vacuum, 0.0, momentum / safe)
    u_F = np.where(vacuum, 0.0, force_moment / safe)
    if np.any(vacuum):
        logging.warning(f"t={state.t:.6g}: {int(np.count_nonzero(vacuum))} vacuum x-cells, u and u_F set to 0")
    strength, average = averaging.strength_and_average(rho, u, setup.model)
    return MacroFields(rho=rho, u=u, u_F=u_F, u_V=u + u_F, strength=strength, average=average, vacuum=vacuum)

# endregion

# region Functionals

def _support(f: NDArray[np.float64]) -> NDArray[np.bool_]:
    peak = float(np.max(f)) if f.size else 0.0
    return f >= constants.MASK_RELATIVE * peak if peak > 0 else np.zeros(f.shape, dtype=bool)

def _ratio(state: KineticState, table: EquilibriumTable) -> tuple[NDArray[np.float64], NDArray[np.bool_]]:
    '''h = f / f_inf, floored on the support threshold so log h stays finite.'''
    mask = _support(state.f)
    peak = float(np.max(state.f)) if state.f.size else 0.0
    floor = max(constants.MASK_RELATIVE * peak, np.finfo(float).tiny)
    h = np.maximum(state.f, floor) / table.f_inf[None, :]
    return h, mask

def _dx(values: NDArray[np.float64], dx: float) -> NDArray[np.float64]:
    return averaging.centered_gradient(values, dx)

def _dv(values: NDArray[np.float64], dv: float) -> NDArray[np.float64]:
    return np.gradient(values, dv, axis=1)

def _dvv(values: NDArray[np.float64], dv: float) -> NDArray[np.float64]:
    second = np.empty_like(values)
    second[:, 1:-1] = (values[:, 2:] - 2.0 * values[:, 1:-1] + values[:, :-2]) / dv ** 2
    second[:, 0] = second[:, 1]
    second[:, -1] = second[:, -2]
    return second

def relative_entropy(state: KineticState, table: EquilibriumTable, grid: Grid) -> float:
    '''sum f log(f / f_inf) dx dv, with cells below the density floor contributing 0.'''
    f = state.f
    live = f >= constants.DENSITY_FLOOR
    safe = np.where(live, f, 1.0)
    terms = np.where(live, f * np.log(safe / table.f_inf[None, :]), 0.0)
    H = float(np.sum(terms) * grid.cell_volume)
    if -constants.ENTROPY_NOISE < H < 0:
        return 0.0
    return H

def fisher_functionals(state: KineticState, table: EquilibriumTable, grid: Grid,
                       strength: NDArray[np.float64]) -> FisherValues:
    '''Partial Fisher informations of h = f / f_inf against d(mu) = f_inf dx dv.

    Ivv_w carries the s_rho weight of the entropy identity; the others are unweighted.
    Only cells on the support mask contribute; the mass outside it is reported.
    '''
    h, mask = _ratio(state, table)
    weight = np.where(mask, table.f_inf[None, :] / h, 0.0) * grid.cell_volume
    grad_v = _dv(h, grid.dv)
    grad_x = _dx(h, grid.dx)
    masked_mass = float(np.sum(np.where(mask, 0.0, state.f)) * grid.cell_volume)
    if masked_mass > 0:
        logging.debug(f"t={state.t:.6g}: {int(np.count_nonzero(~mask))} cells masked, mass {masked_mass:.3e}")
    Ivv_cells = grad_v ** 2 * weight
    return FisherValues(
        Ivv_w=float(np.sum(strength[:, None] * Ivv_cells)),
        Ivv=float(np.sum(Ivv_cells)),
        Ixv=float(np.sum(grad_x * grad_v * weight)),
        Ixx=float(np.sum(grad_x ** 2 * weight)),
        masked_mass=masked_mass)

def dissipation_functionals(state: KineticState, table: EquilibriumTable, grid: Grid,
                            strength: NDArray[np.float64]) -> tuple[float, float]:
    '''(Dvv, Dxv) = sum s_rho h |D^2 log h|^2 d(mu) for the vv and xv second derivatives.'''
    h, mask = _ratio(state, table)
    log_h = np.log(h)
    weight = np.where(mask, strength[:, None] * h * table.f_inf[None, :], 0.0) * grid.cell_volume
    Dvv = float(np.sum(_dvv(log_h, grid.dv) ** 2 * weight))
    Dxv = float(np.sum(_dx(_dv(log_h, grid.dv), grid.dx) ** 2 * weight))
    return Dvv, Dxv

def ck_check(state: KineticState, table: EquilibriumTable, H: float, grid: Grid) -> float:
    '''2H - ||f - f_inf||_1^2, non-negative for unit-mass densities.'''
    distance = float(np.sum(np.abs(state.f - table.f_inf[None, :])) * grid.cell_volume)
    return 2.0 * H - distance ** 2

def entropy_production(state: KineticState, setup: SolverSetup, macro: MacroFields,
                       report: AssumptionReport | None=None, fisher: FisherValues | None=None) -> EntropyProduction:
    '''dH/dt = -Ivv_w + <u_V, [u]>_kappa, with ||u_V||_kappa^2 and the gap check.

    The check tests pairing <= (1 - c) ||u_V||^2 with c = epsilon0 - epsilon1 / (1 - epsilon1) from the
    audit, clamped at 0, so it fails whenever the measured assumptions promise more than the state delivers.
    The recorded c3 is that constant capped by the measured slack 1 - pairing / ||u_V||^2.
    '''
    grid = setup.grid
    if fisher is None:
        fisher = fisher_functionals(state, setup.table, grid, macro.strength)
    pairing = averaging.kappa_inner(macro.u_V, macro.average, macro.rho, macro.strength, grid.dx)
    uV_norm2 = averaging.kappa_inner(macro.u_V, macro.u_V, macro.rho, macro.strength, grid.dx)

    bound = 0.0
    if report is not None:
        epsilon1 = report.epsilon1
        margin = report.epsilon0 - epsilon1 / (1.0 - epsilon1) if epsilon1 < 1.0 else -math.inf
        bound = max(0.0, margin)
    c3 = 0.0
    if uV_norm2 > constants.NORM_FLOOR ** 2:
        c3 = max(0.0, min(bound, 1.0 - pairing / uV_norm2))
    gap_holds = bool(pairing <= (1.0 - bound) * uV_norm2 + constants.NORM_FLOOR)
    return EntropyProduction(dHdt_formula=-fisher.Ivv_w + pairing, uV_norm2=uV_norm2,
                             pairing=pairing, c3=c3, gap_holds=gap_holds)

def build_record(state: KineticState, setup: SolverSetup,
                 gap_subspace: str=averaging.Subspace.MEAN_ZERO) -> tuple[DiagnosticsRecord, AssumptionReport]:
    '''Evaluates every functional and the assumption audit on one snapshot.'''
    grid, table = setup.grid, setup.table
    macro = macro_fields(state, setup)
    report = averaging.audit_assumptions(macro.rho, setup.model, macro.u, macro.u_F, gap_subspace)
    H = relative_entropy(state, table, grid)
    fisher = fisher_functionals(state, table, grid, macro.strength)
    Dvv, Dxv = dissipation_functionals(state, table, grid, macro.strength)
    production = entropy_production(state, setup, macro, report, fisher)
    information = fisher.Ivv + fisher.Ixx
    record = DiagnosticsRecord(
        t=state.t,
        mass=state.mass(grid),
        H=H,
        Ivv_w=fisher.Ivv_w,
        Ivv=fisher.Ivv,
        Ixv=fisher.Ixv,
        Ixx=fisher.Ixx,
        Dvv=Dvv,
        Dxv=Dxv,
        uV_norm2=production.uV_norm2,
        pairing=production.pairing,
        gap_sup=report.gap_sup,
        force_ratio=report.force_ratio,
        ck_slack=ck_check(state, table, H, grid),
        logsob_ratio=H / information if information > 0 else math.nan,
        dHdt_formula=production.dHdt_formula,
        u_norm2=averaging.kappa_inner(macro.u, macro.u, macro.rho, macro.strength, grid.dx),
        c0=report.c0,
        c3=production.c3,
        masked_mass=fisher.masked_mass,
        gap_holds=production.gap_holds)
    if report.passed and not record.gap_holds:
        logging.warning(f"t={record.t:.6g}: gap inequality fails although the audit passed "
                        f"(pairing={record.pairing:.4g}, uV_norm2={record.uV_norm2:.4g})")
    logging.debug(f"record t={record.t:.6g}: H={record.H:.6e} Ivv={record.Ivv:.4e} "
                  f"dHdt={record.dHdt_formula:.4e} ck_slack={record.ck_slack:.3e}")
    return record, report

def finalize_series(records: Sequence[DiagnosticsRecord]) -> None:
    '''Fills dHdt_fd with the finite-difference time derivative of H, second order inside.'''
    if len(records) < 2:
        return
    t = np.array([record.t for record in records])
    H = np.array([record.H for record in records])
    derivative = np.gradient(H, t)
    for record, value in zip(records, derivative):
        record.dHdt_fd = float(value)

# endregion

# region Monitors

def _fitted_constant(excess: NDArray[np.float64], scale: NDArray[np.float64]) -> NDArray[np.float64]:
    '''Smallest c >= 0 with excess <= c * scale, sample-wise (0/0 counts as 0).'''
    result = np.zeros_like(excess)
    positive = excess > 0
    zero_scale = scale <= constants.NORM_FLOOR ** 2
    result[positive & ~zero_scale] = excess[positive & ~zero_scale] / scale[positive & ~zero_scale]
    result[positive & zero_scale & (excess > constants.NORM_FLOOR)] = math.inf
    return result

def _monitor(name: str, values: NDArray[np.float64]) -> LemmaMonitor:
    running = np.maximum.accumulate(values)
    second_half = values[len(values) // 2:]
    median = float(np.median(values))
    top = float(np.max(second_half)) if second_half.size else 0.0
    stable = bool(np.isfinite(top) and top <= 2.0 * median + constants.NORM_FLOOR)
    return LemmaMonitor(name=name, values=values.tolist(), running_max=running.tolist(),
                        max_value=float(np.max(values)), median_value=median, stable=stable)

def lemma_monitors(records: Sequence[DiagnosticsRecord], lam: float) -> LemmaReport:
    '''Fits, per sample, the smallest constant c >= 0 making each inequality hold:

        dIvv/dt + 2 Dvv + lam c0 Ivv + 2 Ixv <= c ||u||^2
        dIxv/dt + Ixx/2 - 2 Dvv - Dxv        <= c (Ivv + ||u||^2)
        dIxx/dt + Dxv                        <= c (Ivv + ||u||^2)

    Raises:
        InsufficientSamplesError: with fewer than 3 records.
    '''
    if len(records) < 3:
        raise InsufficientSamplesError(f"lemma monitors need at least 3 records, got {len(records)}")
    column = lambda name: np.array([getattr(record, name) for record in records], dtype=np.float64)
    t = column('t')
    Ivv, Ixv, Ixx = column('Ivv'), column('Ixv'), column('Ixx')
    Dvv, Dxv, u_norm2, c0 = column('Dvv'), column('Dxv'), column('u_norm2'), column('c0')
    dIvv, dIxv, dIxx = np.gradient(Ivv, t), np.gradient(Ixv, t), np.gradient(Ixx, t)

    report = LemmaReport(t=t.tolist(), dIvv=dIvv.tolist(), dIxv=dIxv.tolist(), dIxx=dIxx.tolist())
    report.monitors = [
        _monitor('velocity_fisher', _fitted_constant(dIvv + 2.0 * Dvv + lam * c0 * Ivv + 2.0 * Ixv, u_norm2)),
        _monitor('mixed_fisher', _fitted_constant(dIxv + 0.5 * Ixx - 2.0 * Dvv - Dxv, Ivv + u_norm2)),
        _monitor('spatial_fisher', _fitted_constant(dIxx + Dxv, Ivv + u_norm2)),
    ]
    for monitor in report.monitors:
        logging.info(f"lemma monitor {monitor.name}: max c={monitor.max_value:.4g}, median {monitor.median_value:.4g}, stable={monitor.stable}")
    return report

def modified_functional(records: Sequence[DiagnosticsRecord], epsilon: float, lam: float, c0: float,
                        c_lemma: float, gamma_mode: str='first_record', gamma: float=1.0) -> ModifiedFunctional:
    '''I_tilde = Ivv + epsilon Ixv + (lam c0 / c_lemma) Ixx and the Lyapunov series I_tilde + gamma H.

    gamma_mode 'first_record' sets gamma = I_tilde / H at the first record; 'fixed' uses gamma.

    Raises:
        EpsilonTooLargeError: when I_tilde < (Ivv + (lam c0 / c_lemma) Ixx) / 2 at some record.
    '''
    if epsilon <= 0:
        raise common.ConfigError('diagnostics.epsilon_tilde', f"must be > 0, got {epsilon}")
    if c_lemma <= 0:
        raise common.ConfigError('diagnostics.c_lemma', f"must be > 0, got {c_lemma}")
    t = np.array([record.t for record in records])
    Ivv = np.array([record.Ivv for record in records])
    Ixv = np.array([record.Ixv for record in records])
    Ixx = np.array([record.Ixx for record in records])
    H = np.array([record.H for record in records])
    weight = lam * c0 / c_lemma
    I_tilde = Ivv + epsilon * Ixv + weight * Ixx
    reference = 0.5 * (Ivv + weight * Ixx)

    violated = I_tilde < reference - constants.NORM_FLOOR
    if np.any(violated):
        mixed = np.abs(Ixv)
        admissible = np.where(mixed > 0, reference / np.where(mixed > 0, mixed, 1.0), math.inf)
        suggested = float(np.min(admissible))
        index = int(np.argmax(violated))
        message = (f"epsilon={epsilon} too large: I_tilde={I_tilde[index]:.4e} < {reference[index]:.4e} at "
                   f"t={t[index]:.6g}; try epsilon <= {suggested:.4g}")
        logging.error(message)
        raise EpsilonTooLargeError(message, suggested)

    if gamma_mode == 'first_record':
        gamma = float(I_tilde[0] / H[0]) if len(H) and H[0] > 0 else gamma
    elif gamma_mode != 'fixed':
        raise common.ConfigError('diagnostics.gamma_mode', f"unknown mode '{gamma_mode}'")
    lyapunov = I_tilde + gamma * H
    steps = np.diff(lyapunov)
    fraction = float(np.mean(steps <= constants.MONOTONE_TOL)) if steps.size else 1.0
    logging.info(f"modified functional: gamma={gamma:.4g}, epsilon={epsilon}, c={c_lemma:.4g}, "
                 f"non-increasing at {100 * fraction:.1f}% of steps")
    return ModifiedFunctional(t=t.tolist(), I_tilde=I_tilde.tolist(), lyapunov=lyapunov.tolist(),
                              gamma=gamma, epsilon=epsilon, c_lemma=c_lemma, fraction_non_increasing=fraction)

def fit_decay(t: Sequence[float], H: Sequence[float], t0: float | None=None, t1: float | None=None) -> DecayFit:
    '''Least-squares line through (t, log H) on the window t0 <= t <= t1 where H > 1e-14.

    Raises:
        InsufficientSamplesError: with fewer than 10 usable samples.
    '''
    times = np.asarray(t, dtype=np.float64)
    values = np.asarray(H, dtype=np.float64)
    lo = t0 if t0 is not None else (float(times[0]) if times.size else 0.0)
    hi = t1 if t1 is not None else (float(times[-1]) if times.size else 0.0)
    usable = (times >= lo) & (times <= hi) & np.isfinite(values) & (values > constants.ENTROPY_FLOOR)
    count = int(np.count_nonzero(usable))
    if count < constants.FIT_MIN_SAMPLES:
        raise InsufficientSamplesError(f"decay fit on [{lo}, {hi}] has {count} usable samples, "
                                       f"need {constants.FIT_MIN_SAMPLES}")
    fit = stats.linregress(times[usable], np.log(values[usable]))
    result = DecayFit(t0=lo, t1=hi, delta_fit=-float(fit.slope), C_fit=math.exp(float(fit.intercept)),
                      r_squared=float(fit.rvalue) ** 2, samples=count)
    logging.info(f"decay fit on [{lo}, {hi}]: delta={result.delta_fit:.6g}, C={result.C_fit:.6g}, r^2={result.r_squared:.6f}")
    return result

# endregion

# region File I/O

def _format_cell(value: float) -> str:
    return 'nan' if math.isnan(value) else common.format_float(value)

def format_series(records: Sequence[DiagnosticsRecord]) -> str:
    lines = [','.join(constants.SERIES_COLUMNS)]
    lines.extend(','.join(_format_cell(value) for value in record.row()) for record in records)
    return '\n'.join(lines) + '\n'

def write_series(path: str, records: Sequence[DiagnosticsRecord]) -> None:
    '''Writes the time-series CSV atomically.'''
    common.write_atomic(path, format_series(records))

def read_series(path: str) -> dict[str, NDArray[np.float64]]:
    '''Reads a time-series CSV into columns; requires at least the t and H columns.'''
    if not os.path.exists(path):
        raise FileNotFoundError(f"series '{path}' does not exist")
    with open(path, encoding='utf-8', newline='') as file:
        reader = csv.DictReader(file)
        if reader.fieldnames is None or 't' not in reader.fieldnames or 'H' not in reader.fieldnames:
            raise ValueError(f"'{path}': CSV needs 't' and 'H' columns, found {reader.fieldnames}")
        columns: dict[str, list[float]] = {name: [] for name in reader.fieldnames}
        for line_number, row in enumerate(reader, start=2):
            for name in reader.fieldnames:
                try:
                    columns[name].append(float(row[name]))
                except (TypeError, ValueError) as e:
                    raise ValueError(f"'{path}' line {line_number}: bad value in column '{name}': {row[name]}") from e
    return {name: np.array(values) for name, values in columns.items()}

# endregion
