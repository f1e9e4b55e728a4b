'''
Shared test fixtures for the fpalign test suite.

Import specific names into each test file rather than using wildcard imports.
'''

import math
import os
import sys
from typing import Any

# Make the src layout importable without an installed package
PROJECT_ROOT = os.path.abspath(f"{os.path.dirname(__file__)}/{os.path.pardir}")
sys.path.append(os.path.join(PROJECT_ROOT, 'src'))

from fpalign import kinetic_solver
from fpalign.averaging import make_model
from fpalign.force_potential import ForceParams
from fpalign.kinetic_solver import Grid, SolverSetup

TWO_PI = 2.0 * math.pi

# Default force: certified coercive
FORCE_DEFAULT = ForceParams()

# Pure Ornstein-Uhlenbeck: V = |v|^2/2, needs Vmax = 8 for the tail criterion
FORCE_OU = ForceParams(sigma=0.0)

# Not coercive: the radial eigenvalue turns negative past R
FORCE_NON_COERCIVE = ForceParams(sigma=0.5, w=1.0)

# Small grids that keep the unit tests fast
GRID_SMALL = Grid(Nx=16, Nv=64, L=TWO_PI, Vmax=6.0)
GRID_OU = Grid(Nx=16, Nv=64, L=TWO_PI, Vmax=8.0)

def make_test_setup(grid: Grid=GRID_SMALL, force: ForceParams=FORCE_DEFAULT, variant: str='cs',
                    shape: str='global', r0: float | None=None, threads: int=1) -> SolverSetup:
    '''Solver setup on a test grid with the given averaging model.'''
    model = make_model(variant, shape, grid.Nx, grid.L, r0 if r0 is not None else 0.25 * grid.L)
    return kinetic_solver.make_setup(grid, force, model, threads=threads)

def config_dict(**overrides: dict[str, Any]) -> dict[str, Any]:
    '''Small run configuration; each keyword replaces keys of one section.'''
    data: dict[str, Any] = {
        'grid': {'Nx': 16, 'Nv': 64, 'L': TWO_PI, 'Vmax': 6.0},
        'force': {'sigma': 0.25, 'p': 2.0, 'q': 4.0, 'R': 2.0, 'w': 2.0},
        'averaging': {'variant': 'cs', 'kernel': 'global'},
        'solver': {'dt': 0.01, 'T': 0.3, 'record_every': 2},
        'particles': {'N': 200, 'dt': 0.01, 'T': 0.1, 'seed': 7},
        'diagnostics': {},
        'io': {'out_dir': 'out', 'preset': 'two_bump'},
    }
    for section, values in overrides.items():
        data[section] = {**data.get(section, {}), **values}
    return data
