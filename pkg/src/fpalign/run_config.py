'''JSON run configuration: one section per concern, strict keys, validated before any allocation.'''
from __future__ import annotations

import json
import math
import os
import types
import typing
from dataclasses import dataclass, field, fields, replace
from enum import StrEnum
from typing import Any, ClassVar, Optional, Type, TypeVar

from . import common
from . import constants
from .averaging import AveragingModel, KernelShape, Subspace, Variant, make_model
from .force_potential import ForceParams
from .kinetic_solver import Grid, Preset, RunOptions
from .particle_sim import ForceCoupling, SdeParams, make_particle_kernel

T = TypeVar('T', bound='BaseSection')

# region Sections

class BaseSection:
    '''Frozen section with strict (de)serialization. Subclasses set NAME and Key.'''
    NAME : ClassVar[str]
    Key  : ClassVar[Type[StrEnum]]

    @classmethod
    def from_dict(cls: Type[T], data: Any) -> T:
        if not isinstance(data, dict):
            raise common.ConfigError(cls.NAME, f"expected an object, got {type(data).__name__}")
        known = {key.value for key in cls.Key}
        for key in data:
            if key not in known:
                raise common.ConfigError(f"{cls.NAME}.{key}", f"unknown key (expected one of {sorted(known)})")
        hints = typing.get_type_hints(cls)
        values = {key: _coerce(f"{cls.NAME}.{key}", data[key], hints[key]) for key in data}
        return cls(**values)

    def to_dict(self) -> dict[str, Any]:
        return {key.value: getattr(self, key.value) for key in self.Key}

def _coerce(path: str, value: Any, hint: Any) -> Any:
    '''Checks value against a field annotation; ints are accepted for floats, bools never for numbers.'''
    optional = False
    if typing.get_origin(hint) in (typing.Union, types.UnionType):
        arguments = [argument for argument in typing.get_args(hint) if argument is not type(None)]
        optional = len(arguments) < len(typing.get_args(hint))
        hint = arguments[0]
    if value is None:
        if optional:
            return None
        raise common.ConfigError(path, 'must not be null')
    if hint is bool:
        if not isinstance(value, bool):
            raise common.ConfigError(path, f"expected a boolean, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise common.ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise common.ConfigError(path, f"expected a number, got {value!r}")
        if not math.isfinite(value):
            raise common.ConfigError(path, f"must be finite, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise common.ConfigError(path, f"expected a string, got {value!r}")
        return value
    raise TypeError(f"unsupported annotation {hint} for '{path}'")

class GridKey(StrEnum):
    NX   = 'Nx'
    NV   = 'Nv'
    L    = 'L'
    VMAX = 'Vmax'

@dataclass(frozen=True)
class GridSection(BaseSection):
    NAME = 'grid'
    Key  = GridKey

    Nx   : int   = constants.DEFAULT_NX
    Nv   : int   = constants.DEFAULT_NV
    L    : float = constants.DEFAULT_L
    Vmax : float = constants.DEFAULT_VMAX

class ForceKey(StrEnum):
    SIGMA = 'sigma'
    P     = 'p'
    Q     = 'q'
    R     = 'R'
    W     = 'w'

@dataclass(frozen=True)
class ForceSection(BaseSection):
    NAME = 'force'
    Key  = ForceKey

    sigma : float = 0.25
    p     : float = 2.0
    q     : float = 4.0
    R     : float = 2.0
    w     : float = 2.0

class AveragingKey(StrEnum):
    VARIANT = 'variant'
    KERNEL  = 'kernel'
    R0      = 'r0'

@dataclass(frozen=True)
class AveragingSection(BaseSection):
    NAME = 'averaging'
    Key  = AveragingKey

    variant : str             = Variant.CS.value
    kernel  : str             = KernelShape.GLOBAL.value
    r0      : Optional[float] = None  # None: L/4

class SolverKey(StrEnum):
    DT             = 'dt'
    T              = 'T'
    SNAPSHOT_EVERY = 'snapshot_every'
    RECORD_EVERY   = 'record_every'
    CFL_GUARD      = 'cfl_guard'

@dataclass(frozen=True)
class SolverSection(BaseSection):
    NAME = 'solver'
    Key  = SolverKey

    dt             : float = constants.DEFAULT_DT
    T              : float = 1.0
    snapshot_every : int   = 0
    record_every   : int   = 10
    cfl_guard      : bool  = False

class ParticlesKey(StrEnum):
    N              = 'N'
    DT             = 'dt'
    T              = 'T'
    NOISE_ON       = 'noise_on'
    SEED           = 'seed'
    FORCE_COUPLING = 'force_coupling'
    RECORD_EVERY   = 'record_every'
    SNAPSHOT_EVERY = 'snapshot_every'

@dataclass(frozen=True)
class ParticlesSection(BaseSection):
    NAME = 'particles'
    Key  = ParticlesKey

    N              : int             = 10_000
    dt             : float           = constants.DEFAULT_DT
    T              : Optional[float] = None  # None: solver.T
    noise_on       : bool            = True
    seed           : int             = 12345
    force_coupling : str             = ForceCoupling.DISPLAYED.value
    record_every   : int             = 10
    snapshot_every : int             = 0

class DiagnosticsKey(StrEnum):
    EPSILON_TILDE         = 'epsilon_tilde'
    GAMMA_MODE            = 'gamma_mode'
    GAMMA                 = 'gamma'
    C_LEMMA               = 'c_lemma'
    GAP_SUBSPACE          = 'gap_subspace'
    HARD_GATE_ASSUMPTIONS = 'hard_gate_assumptions'

class GammaMode(StrEnum):
    FIRST_RECORD = 'first_record'
    FIXED        = 'fixed'

@dataclass(frozen=True)
class DiagnosticsSection(BaseSection):
    NAME = 'diagnostics'
    Key  = DiagnosticsKey

    epsilon_tilde         : float           = 0.1
    gamma_mode            : str             = GammaMode.FIRST_RECORD.value
    gamma                 : float           = 1.0
    c_lemma               : Optional[float] = None  # None: fitted by the lemma monitors
    gap_subspace          : str             = Subspace.MEAN_ZERO.value
    hard_gate_assumptions : bool            = False

class IoKey(StrEnum):
    OUT_DIR       = 'out_dir'
    PRESET        = 'preset'
    DRIFT         = 'drift'
    TEMPERATURE   = 'temperature'
    AMPLITUDE     = 'amplitude'
    SNAPSHOT_PATH = 'snapshot_path'
    ENSEMBLE_PATH = 'ensemble_path'

@dataclass(frozen=True)
class IoSection(BaseSection):
    NAME = 'io'
    Key  = IoKey

    out_dir       : str           = 'out'
    preset        : str           = Preset.TWO_BUMP.value
    drift         : float         = 0.5
    temperature   : float         = 1.0
    amplitude     : float         = 0.1
    snapshot_path : Optional[str] = None
    ensemble_path : Optional[str] = None

# endregion

# region Run Configuration

class SectionKey(StrEnum):
    GRID        = 'grid'
    FORCE       = 'force'
    AVERAGING   = 'averaging'
    SOLVER      = 'solver'
    PARTICLES   = 'particles'
    DIAGNOSTICS = 'diagnostics'
    IO          = 'io'

@dataclass(frozen=True)
class RunConfig:
    '''Complete description of one run; missing sections and keys take their defaults.'''
    SECTIONS: ClassVar[dict[str, Type[BaseSection]]] = {
        SectionKey.GRID: GridSection,
        SectionKey.FORCE: ForceSection,
        SectionKey.AVERAGING: AveragingSection,
        SectionKey.SOLVER: SolverSection,
        SectionKey.PARTICLES: ParticlesSection,
        SectionKey.DIAGNOSTICS: DiagnosticsSection,
        SectionKey.IO: IoSection,
    }

    grid        : GridSection        = field(default_factory=GridSection)
    force       : ForceSection       = field(default_factory=ForceSection)
    averaging   : AveragingSection   = field(default_factory=AveragingSection)
    solver      : SolverSection      = field(default_factory=SolverSection)
    particles   : ParticlesSection   = field(default_factory=ParticlesSection)
    diagnostics : DiagnosticsSection = field(default_factory=DiagnosticsSection)
    io          : IoSection          = field(default_factory=IoSection)

    @classmethod
    def from_dict(cls, data: Any) -> RunConfig:
        if not isinstance(data, dict):
            raise common.ConfigError('<root>', f"expected a JSON object, got {type(data).__name__}")
        for key in data:
            if key not in cls.SECTIONS:
                raise common.ConfigError(str(key), f"unknown section (expected one of {sorted(cls.SECTIONS)})")
        sections = {key: section.from_dict(data[key]) for key, section in cls.SECTIONS.items() if key in data}
        return cls(**sections)  # type: ignore[arg-type]

    def to_dict(self) -> dict[str, Any]:
        return {key: getattr(self, key).to_dict() for key in self.SECTIONS}

    @classmethod
    def load(cls, path: str) -> RunConfig:
        '''Reads and validates a JSON run configuration.'''
        if not os.path.exists(path):
            raise common.ConfigError('--config', f"file '{path}' does not exist")
        with open(path, encoding='utf-8') as file:
            try:
                data = json.load(file)
            except json.JSONDecodeError as e:
                raise common.ConfigError('--config', f"'{path}' is not valid JSON: {e}") from e
        config = cls.from_dict(data)
        config.validate()
        return config

    def save(self, path: str) -> None:
        common.write_atomic(path, json.dumps(self.to_dict(), indent=2) + '\n')

    def with_out_dir(self, out_dir: str) -> RunConfig:
        return replace(self, io=replace(self.io, out_dir=out_dir))

    # region Builders

    def build_grid(self) -> Grid:
        return Grid(Nx=self.grid.Nx, Nv=self.grid.Nv, L=self.grid.L, Vmax=self.grid.Vmax)

    def build_force(self) -> ForceParams:
        return ForceParams(sigma=self.force.sigma, p=self.force.p, q=self.force.q, R=self.force.R, w=self.force.w)

    @property
    def r0(self) -> float:
        return self.averaging.r0 if self.averaging.r0 is not None else 0.25 * self.grid.L

    def build_model(self) -> AveragingModel:
        return make_model(self.averaging.variant, self.averaging.kernel, self.grid.Nx, self.grid.L, self.r0)

    def build_run_options(self) -> RunOptions:
        return RunOptions(dt=self.solver.dt, T=self.solver.T, record_every=self.solver.record_every,
                          snapshot_every=self.solver.snapshot_every,
                          hard_gate=self.diagnostics.hard_gate_assumptions,
                          gap_subspace=self.diagnostics.gap_subspace)

    def build_sde(self) -> SdeParams:
        kernel = make_particle_kernel(self.averaging.kernel, self.grid.L, self.r0)
        return SdeParams(dt=self.particles.dt, kernel=kernel, force=self.build_force(),
                         noise_on=self.particles.noise_on,
                         force_coupling=ForceCoupling(self.particles.force_coupling))

    @property
    def particle_T(self) -> float:
        return self.particles.T if self.particles.T is not None else self.solver.T

    # endregion

    def validate(self) -> None:
        '''Checks every physical and numerical parameter; raises ConfigError naming the key.'''
        self.build_grid()
        self.build_force()
        _choice('averaging.variant', self.averaging.variant, Variant)
        _choice('averaging.kernel', self.averaging.kernel, KernelShape)
        if self.averaging.kernel == KernelShape.TENT and not 0 < self.r0 <= 0.5 * self.grid.L:
            raise common.ConfigError('averaging.r0', f"must satisfy 0 < r0 <= L/2, got {self.r0}")

        _positive('solver.dt', self.solver.dt)
        _non_negative('solver.T', self.solver.T)
        _at_least('solver.record_every', self.solver.record_every, 1)
        _at_least('solver.snapshot_every', self.solver.snapshot_every, 0)

        _at_least('particles.N', self.particles.N, 1)
        _positive('particles.dt', self.particles.dt)
        if self.particles.T is not None:
            _non_negative('particles.T', self.particles.T)
        if not 0 <= self.particles.seed < 2 ** 64:
            raise common.ConfigError('particles.seed', f"must be a 64-bit unsigned integer, got {self.particles.seed}")
        _choice('particles.force_coupling', self.particles.force_coupling, ForceCoupling)
        _at_least('particles.record_every', self.particles.record_every, 1)
        _at_least('particles.snapshot_every', self.particles.snapshot_every, 0)

        _positive('diagnostics.epsilon_tilde', self.diagnostics.epsilon_tilde)
        _choice('diagnostics.gamma_mode', self.diagnostics.gamma_mode, GammaMode)
        _positive('diagnostics.gamma', self.diagnostics.gamma)
        if self.diagnostics.c_lemma is not None:
            _positive('diagnostics.c_lemma', self.diagnostics.c_lemma)
        _choice('diagnostics.gap_subspace', self.diagnostics.gap_subspace, Subspace)

        if not self.io.out_dir.strip():
            raise common.ConfigError('io.out_dir', 'must not be empty')
        _choice('io.preset', self.io.preset, Preset)
        _positive('io.temperature', self.io.temperature)
        if abs(self.io.amplitude) >= 1:
            raise common.ConfigError('io.amplitude', f"must satisfy |amplitude| < 1, got {self.io.amplitude}")
        if self.io.preset == Preset.FROM_FILE and not self.io.snapshot_path:
            raise common.ConfigError('io.snapshot_path', 'required when io.preset is from_file')

# endregion

# region Validation

def _choice(path: str, value: str, options: Type[StrEnum]) -> None:
    allowed = [option.value for option in options]
    if value not in allowed:
        raise common.ConfigError(path, f"'{value}' is not one of {allowed}")

def _positive(path: str, value: float) -> None:
    if not value > 0:
        raise common.ConfigError(path, f"must be > 0, got {value}")

def _non_negative(path: str, value: float) -> None:
    if not value >= 0:
        raise common.ConfigError(path, f"must be >= 0, got {value}")

def _at_least(path: str, value: int, bound: int) -> None:
    if value < bound:
        raise common.ConfigError(path, f"must be >= {bound}, got {value}")

# endregion
