'''
# Summary
Batch front door for the toolkit. One invocation runs one configuration and writes its outputs
to a single directory.

    - solve:      Kinetic run: FPA1 snapshots, series.csv, assumptions.json, fit.json, lemmas.json, modified.json.
    - particles:  Agent run: FPP1 ensembles, moments.csv, FPA1 histograms of the ensembles.
    - check:      Assumption audit of one density (snapshot or preset): PASS/FAIL lines, assumptions.json.
    - fit:        Exponential decay fit of the H column of a series CSV: fit.json.

Exit codes: 0 success, 1 configuration or I/O error, 2 assumption hard gate, 3 numeric abort.
'''

import argparse
import json
import logging
import math
import os
import sys
from typing import Any, NoReturn

import numpy as np

from . import common
from . import constants
from . import diagnostics
from . import kinetic_solver
from . import particle_sim
from .averaging import AssumptionReport, audit_assumptions
from .force_potential import CoercivityBounds, coercivity_bounds
from .kinetic_solver import AssumptionGateError, Preset, SolverSetup, TransportMode
from .run_config import RunConfig

# region Arguments

class Namespace(argparse.Namespace):
    '''Command-line arguments for the fpalign entry point.'''

    # Required
    function: str

    # Optional (alphabetical)
    config: str | None
    out: str | None
    series: str | None
    snapshot: str | None
    t0: float | None
    t1: float | None
    threads: int | None

    # Function constants
    FUNCTION_SOLVE = 'solve'
    FUNCTION_PARTICLES = 'particles'
    FUNCTION_CHECK = 'check'
    FUNCTION_FIT = 'fit'

    FUNCTIONS = {FUNCTION_SOLVE, FUNCTION_PARTICLES, FUNCTION_CHECK, FUNCTION_FIT}

class ArgumentParser(argparse.ArgumentParser):
    '''Usage errors exit with the configuration error code.'''
    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(constants.EXIT_CONFIG, f"{self.prog}: error: {message}\n")

def parse_args(valid_functions: set[str], argv: list[str]) -> Namespace:
    '''Parse command line arguments.

    Args:
        valid_functions: Set of valid function names
        argv: Argument list without the program name
    '''
    parser = ArgumentParser(prog='fpalign')

    # Required: function only
    parser.add_argument('function', type=str,
                        help=f"Function to run. One of: {', '.join(sorted(valid_functions))}")

    # Optional: all function parameters (alphabetical)
    parser.add_argument('--config', '-c', type=str,
                        help="JSON run configuration (solve, particles, check)")
    parser.add_argument('--out', '-o', type=str,
                        help="Output directory, overrides io.out_dir")
    parser.add_argument('--series', '-s', type=str,
                        help="Series CSV to fit (fit). Default: <out>/series.csv")
    parser.add_argument('--snapshot', type=str,
                        help="FPA1 snapshot to audit instead of the configured preset (check)")
    parser.add_argument('--t0', type=float,
                        help="Start of the decay fit window (fit)")
    parser.add_argument('--t1', type=float,
                        help="End of the decay fit window (fit)")
    parser.add_argument('--threads', '-t', type=int,
                        help="Worker threads for the collision step. Default: FPA_THREADS, then the CPU count")

    # Parse into Namespace
    args = parser.parse_args(argv, namespace=Namespace())

    # Normalize paths (only if not None)
    common.normalize_arg_paths(args, ['config', 'out', 'series', 'snapshot'])

    # Validate function
    if args.function not in valid_functions:
        parser.error(f"invalid function '{args.function}'\n"
                     f"expect one of: {', '.join(sorted(valid_functions))}")

    # Function-specific validation
    _validate_function_args(parser, args)

    return args

def _validate_function_args(parser: argparse.ArgumentParser, args: Namespace) -> None:
    '''Validate function-specific required arguments.'''
    if args.function == Namespace.FUNCTION_FIT:
        if not args.series and not args.out:
            parser.error(f"'{args.function}' requires --series or --out")
        if args.t0 is not None and args.t1 is not None and args.t0 > args.t1:
            parser.error(f"'{args.function}' requires --t0 <= --t1, got {args.t0} > {args.t1}")
    else:
        if not args.config:
            parser.error(f"'{args.function}' requires --config")
        if args.snapshot and args.function != Namespace.FUNCTION_CHECK:
            parser.error(f"--snapshot only applies to '{Namespace.FUNCTION_CHECK}'")

# endregion

# region Helpers

def load_config(path: str, out: str | None=None) -> RunConfig:
    '''Loads and validates the run configuration; --out replaces io.out_dir.'''
    config = RunConfig.load(path)
    if out:
        config = config.with_out_dir(out)
    return config

def build_setup(config: RunConfig, threads: int) -> SolverSetup:
    transport = TransportMode.FINITE_VOLUME if config.solver.cfl_guard else TransportMode.SEMI_LAGRANGIAN
    return kinetic_solver.make_setup(config.build_grid(), config.build_force(), config.build_model(),
                                     transport=transport, threads=threads)

def initial_state(config: RunConfig, setup: SolverSetup) -> kinetic_solver.KineticState:
    io = config.io
    return kinetic_solver.init_state(setup, io.preset, drift=io.drift, temperature=io.temperature,
                                     amplitude=io.amplitude, path=io.snapshot_path)

def write_json(path: str, data: Any) -> None:
    common.write_atomic(path, json.dumps(data, indent=2) + '\n')

def _output_path(config: RunConfig, name: str) -> str:
    return os.path.join(config.io.out_dir, name)

# endregion

# region Solve

def _fit_entry(records: list[diagnostics.DiagnosticsRecord]) -> dict[str, Any]:
    '''Decay fit over the second half of the recorded times.'''
    t = [record.t for record in records]
    H = [record.H for record in records]
    t0, t1 = 0.5 * t[-1], t[-1]
    try:
        return diagnostics.fit_decay(t, H, t0, t1).to_dict()
    except diagnostics.InsufficientSamplesError as e:
        logging.warning(f"decay fit skipped: {e}")
        return {'t0': t0, 't1': t1, 'error': str(e)}

def _lemma_entry(records: list[diagnostics.DiagnosticsRecord],
                 bounds: CoercivityBounds) -> tuple[dict[str, Any], diagnostics.LemmaReport | None]:
    try:
        report = diagnostics.lemma_monitors(records, bounds.lam)
    except diagnostics.InsufficientSamplesError as e:
        logging.warning(f"lemma monitors skipped: {e}")
        return {'error': str(e)}, None
    return report.to_dict(), report

def _modified_entry(config: RunConfig, records: list[diagnostics.DiagnosticsRecord], bounds: CoercivityBounds,
                    lemmas: diagnostics.LemmaReport | None) -> dict[str, Any]:
    '''Modified functional with the configured constant, else the largest fitted one (at least 1).'''
    settings = config.diagnostics
    c_lemma = settings.c_lemma
    if c_lemma is None:
        if lemmas is None or not math.isfinite(lemmas.max_constant):
            return {'error': 'no finite lemma constant available; set diagnostics.c_lemma'}
        c_lemma = max(lemmas.max_constant, 1.0)
    c0_values = np.array([record.c0 for record in records])
    if not np.any(np.isfinite(c0_values)):
        return {'error': 'no finite assumption (i) constant recorded'}
    c0 = float(np.nanmin(c0_values))
    try:
        functional = diagnostics.modified_functional(records, settings.epsilon_tilde, bounds.lam, c0, c_lemma,
                                                     gamma_mode=settings.gamma_mode, gamma=settings.gamma)
    except diagnostics.EpsilonTooLargeError as e:
        return {'error': str(e), 'suggested_epsilon': e.suggested}
    return functional.to_dict()

def write_solve_outputs(config: RunConfig, setup: SolverSetup, result: kinetic_solver.RunResult,
                        bounds: CoercivityBounds) -> None:
    '''Writes every solve output for the records and snapshots collected so far.'''
    grid = setup.grid
    for index, snapshot in enumerate(result.snapshots):
        kinetic_solver.write_snapshot(_output_path(config, constants.FILE_SNAPSHOT.format(index=index)), snapshot, grid)

    records = result.records
    diagnostics.finalize_series(records)
    diagnostics.write_series(_output_path(config, constants.FILE_SERIES), records)
    write_json(_output_path(config, constants.FILE_ASSUMPTIONS), {
        'gap_subspace': config.diagnostics.gap_subspace,
        'passed': all(report.passed for report in result.reports),
        'records': [{'t': record.t, 'gap_holds': record.gap_holds, **report.to_dict()}
                    for record, report in zip(records, result.reports)],
    })
    write_json(_output_path(config, constants.FILE_FIT), _fit_entry(records))
    lemma_data, lemmas = _lemma_entry(records, bounds)
    lemma_data['lam'] = bounds.lam
    write_json(_output_path(config, constants.FILE_LEMMAS), lemma_data)
    write_json(_output_path(config, constants.FILE_MODIFIED), _modified_entry(config, records, bounds, lemmas))
    logging.info(f"wrote {len(result.snapshots)} snapshots and {len(records)} records to '{config.io.out_dir}'")

def cmd_solve(config: RunConfig, threads: int) -> int:
    '''Runs the kinetic solver and writes its outputs.

    Raises:
        AssumptionGateError: after writing the partial outputs, when the hard gate trips.
        NumericAbort: after writing the last good state.
    '''
    bounds = coercivity_bounds(config.build_force())
    logging.info(f"coercivity: lam={bounds.lam:.6g}, Lam={bounds.Lam:.6g}")
    setup = build_setup(config, threads)
    state = initial_state(config, setup)
    config.save(_output_path(config, constants.FILE_CONFIG))
    try:
        result = kinetic_solver.run(state, setup, config.build_run_options())
    except AssumptionGateError as e:
        write_solve_outputs(config, setup, e.result, bounds)
        raise
    except kinetic_solver.NumericAbort as e:
        kinetic_solver.write_snapshot(_output_path(config, constants.FILE_LAST_GOOD), e.last_good, setup.grid)
        raise
    write_solve_outputs(config, setup, result, bounds)
    return constants.EXIT_OK

# endregion

# region Particles

def initial_ensemble(config: RunConfig, threads: int) -> particle_sim.ParticleEnsemble:
    '''Ensemble from io.ensemble_path, else sampled from the configured kinetic preset.'''
    grid = config.build_grid()
    if config.io.ensemble_path:
        ensemble = particle_sim.read_ensemble(config.io.ensemble_path)
        if not math.isclose(ensemble.L, grid.L, rel_tol=1e-12):
            raise common.ConfigError('io.ensemble_path', f"ensemble period {ensemble.L} does not match grid.L {grid.L}")
        return ensemble
    setup = build_setup(config, threads)
    state = initial_state(config, setup)
    return particle_sim.sample_ensemble(state, grid, config.particles.N, config.particles.seed)

def cmd_particles(config: RunConfig, threads: int) -> int:
    '''Runs the agent system and writes ensembles, moments and histograms.'''
    grid = config.build_grid()
    params = config.build_sde()
    ensemble = initial_ensemble(config, threads)
    config.save(_output_path(config, constants.FILE_CONFIG))
    settings = config.particles
    run = particle_sim.simulate(ensemble, params, config.particle_T, record_every=settings.record_every,
                                snapshot_every=settings.snapshot_every, grid=grid)
    for index, snapshot in enumerate(run.snapshots):
        particle_sim.write_ensemble(_output_path(config, constants.FILE_ENSEMBLE.format(index=index)), snapshot)
    for index, density in enumerate(run.densities):
        kinetic_solver.write_snapshot(_output_path(config, constants.FILE_HISTOGRAM.format(index=index)),
                                      density.state, grid)
    particle_sim.write_moments(_output_path(config, constants.FILE_MOMENTS), run.moments)
    logging.info(f"wrote {len(run.snapshots)} ensembles and {len(run.moments)} moment rows to '{config.io.out_dir}'")
    return constants.EXIT_OK

# endregion

# region Check

def format_check(report: AssumptionReport) -> list[str]:
    '''One PASS/FAIL line per assumption.'''
    verdict = lambda passed: 'PASS' if passed else 'FAIL'
    return [
        f"(i)   {verdict(report.pass_i)} c0={report.c0:.6g} c1={report.c1:.6g} c2={report.c2:.6g}",
        f"(ii)  {verdict(report.pass_ii)} op_norm={report.op_norm_ii:.6g}",
        f"(iii) {verdict(report.pass_iii)} gap_sup={report.gap_sup:.6g} ({report.gap_subspace}) epsilon0={report.epsilon0:.6g}",
        f"(iv)  {verdict(report.pass_iv)} force_ratio={report.force_ratio:.6g} ({report.force_status})",
    ]

def cmd_check(config: RunConfig, threads: int, snapshot: str | None=None) -> int:
    '''Audits one density; exits with the gate code on failure only when the hard gate is set.'''
    setup = build_setup(config, threads)
    if snapshot:
        state = kinetic_solver.init_state(setup, Preset.FROM_FILE, path=snapshot)
    else:
        state = initial_state(config, setup)
    macro = diagnostics.macro_fields(state, setup)
    report = audit_assumptions(macro.rho, setup.model, macro.u, macro.u_F, config.diagnostics.gap_subspace)
    for line in format_check(report):
        print(line)
    write_json(_output_path(config, constants.FILE_ASSUMPTIONS), {'t': state.t, **report.to_dict()})
    logging.info(f"assumption check at t={state.t:.6g}: {'passed' if report.passed else 'failed'}")
    if not report.passed and config.diagnostics.hard_gate_assumptions:
        return constants.EXIT_GATE
    return constants.EXIT_OK

# endregion

# region Fit

def cmd_fit(series_path: str, out_dir: str, t0: float | None=None, t1: float | None=None) -> int:
    '''Fits log H on [t0, t1], prints the result and writes fit.json next to the outputs.'''
    columns = diagnostics.read_series(series_path)
    fit = diagnostics.fit_decay(columns['t'], columns['H'], t0, t1)
    text = json.dumps(fit.to_dict(), indent=2)
    print(text)
    common.write_atomic(os.path.join(out_dir, constants.FILE_FIT), text + '\n')
    return constants.EXIT_OK

# endregion

# region Main

def exit_code(error: BaseException) -> int:
    '''Maps a raised error onto the documented exit codes.'''
    if isinstance(error, AssumptionGateError):
        return constants.EXIT_GATE
    if isinstance(error, ArithmeticError):
        return constants.EXIT_NUMERIC
    return constants.EXIT_CONFIG

def run_function(args: Namespace) -> int:
    if args.function == Namespace.FUNCTION_FIT:
        series = args.series or os.path.join(args.out or '', constants.FILE_SERIES)
        out_dir = args.out or os.path.dirname(os.path.abspath(series))
        return cmd_fit(series, out_dir, args.t0, args.t1)

    assert args.config is not None
    config = load_config(args.config, args.out)
    threads = common.resolve_threads(args.threads)
    if args.function == Namespace.FUNCTION_SOLVE:
        return cmd_solve(config, threads)
    if args.function == Namespace.FUNCTION_PARTICLES:
        return cmd_particles(config, threads)
    return cmd_check(config, threads, args.snapshot)

def main(argv: list[str]) -> int:
    common.configure_log_module(__file__, level=logging.DEBUG)
    script_args = parse_args(Namespace.FUNCTIONS, argv[1:])

    logging.info(f"running function '{script_args.function}'")
    try:
        code = run_function(script_args)
    except (common.FpaError, OSError, ValueError, ArithmeticError) as e:
        code = exit_code(e)
        logging.error(f"'{script_args.function}' failed with exit code {code}: {e}")
        print(f"fpalign {script_args.function}: error: {e}", file=sys.stderr)
        return code
    logging.info(f"'{script_args.function}' finished with exit code {code}")
    return code

def entry_point() -> None:
    sys.exit(main(sys.argv))

if __name__ == '__main__':
    sys.exit(main(sys.argv))

# endregion
