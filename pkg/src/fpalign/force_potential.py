'''
# Summary
Closed-form Rayleigh friction / self-propulsion force, its potential, the Gibbs equilibrium
and the coercivity constants of the potential Hessian.

    - eta:                 Cutoff profile, 1 below the cutoff radius, growing like speed^q beyond it.
    - force:               F(v) = sigma(|v|^p - 1) v / eta(|v|).
    - potential_G:         Radial antiderivative of the force, by adaptive quadrature.
    - potential_V:         V(v) = |v|^2/2 + G(|v|), with its gradient and Hessian.
    - coercivity_bounds:   Smallest and largest Hessian eigenvalue over all velocities.
    - equilibrium:         Tabulated f_inf = exp(-V)/Z on a velocity grid.
'''

import functools
import logging
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import integrate, optimize

from . import common
from . import constants

# region Data

class DomainError(common.FpaError, ValueError):
    '''A speed argument is negative.'''

class QuadratureError(common.NumericError):
    '''Adaptive quadrature did not reach the requested tolerance.'''

class CoercivityError(common.FpaError, ValueError):
    '''The potential Hessian is not uniformly positive for the given parameters.'''

class TruncationError(common.FpaError, ValueError):
    '''The velocity truncation cuts off too much equilibrium mass.'''
    def __init__(self, message: str, tail_mass: float) -> None:
        super().__init__(message)
        self.tail_mass = tail_mass

@dataclass(frozen=True)
class ForceParams:
    '''Shape parameters of the force and of its cutoff profile.

    sigma = 0 is admitted as the pure Ornstein-Uhlenbeck configuration.
    '''
    sigma: float = 0.25
    p: float = 2.0
    q: float = 4.0
    R: float = 2.0
    w: float = 2.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.sigma < 1.0:
            raise common.ConfigError('force.sigma', f"must lie in [0, 1), got {self.sigma}")
        if self.p <= 0:
            raise common.ConfigError('force.p', f"must be > 0, got {self.p}")
        if self.q <= self.p:
            raise common.ConfigError('force.q', f"must exceed p={self.p}, got {self.q}")
        if self.R <= 0:
            raise common.ConfigError('force.R', f"must be > 0, got {self.R}")
        if self.w <= 0:
            raise common.ConfigError('force.w', f"must be > 0, got {self.w}")

@dataclass(frozen=True)
class CoercivityBounds:
    '''Uniform bounds lam*|y|^2 <= y.Hess(V)(v).y <= Lam*|y|^2.'''
    lam: float
    Lam: float
    z_argmin: float
    z_argmax: float
    z_max: float
    profile_min: float  # minimum of the explicit lower profile 1 - sigma/eta - sigma z^{p+1} eta'/eta^2

class PhaseGrid(Protocol):
    '''Read-only view of the phase-space grid needed to tabulate the equilibrium.'''
    @property
    def L(self) -> float: ...
    @property
    def Vmax(self) -> float: ...
    @property
    def dv(self) -> float: ...
    @property
    def v(self) -> NDArray[np.float64]: ...

@dataclass(frozen=True)
class EquilibriumTable:
    '''Gibbs equilibrium tabulated at the velocity cell centers. Arrays are read-only.'''
    v: NDArray[np.float64]
    V: NDArray[np.float64]
    f_inf: NDArray[np.float64]
    Z: float
    tail_ratio: float

# endregion

# region Profile

def _check_speed(z: NDArray[np.float64]) -> None:
    if np.any(z < 0):
        raise DomainError(f"speed must be non-negative, got min {float(np.min(z))}")

def eta(z: ArrayLike, params: ForceParams) -> NDArray[np.float64] | float:
    '''(1 + max(z - R, 0)^2 / w^2)^(q/2): equal to 1 on [0, R], C^1 and increasing.'''
    speeds = np.asarray(z, dtype=np.float64)
    _check_speed(speeds)
    s = np.maximum(speeds - params.R, 0.0)
    result = (1.0 + (s / params.w) ** 2) ** (0.5 * params.q)
    return float(result) if result.ndim == 0 else result

def eta_prime(z: ArrayLike, params: ForceParams) -> NDArray[np.float64] | float:
    speeds = np.asarray(z, dtype=np.float64)
    _check_speed(speeds)
    s = np.maximum(speeds - params.R, 0.0)
    base = 1.0 + (s / params.w) ** 2
    result = params.q * s / params.w ** 2 * base ** (0.5 * params.q - 1.0)
    return float(result) if result.ndim == 0 else result

def radial_coefficient(z: ArrayLike, params: ForceParams) -> NDArray[np.float64]:
    '''g(z) = sigma (z^p - 1) / eta(z), so that F(v) = g(|v|) v.'''
    speeds = np.asarray(z, dtype=np.float64)
    return params.sigma * (speeds ** params.p - 1.0) / np.asarray(eta(speeds, params))

def radial_derivative_term(z: ArrayLike, params: ForceParams) -> NDArray[np.float64]:
    '''z g'(z), the coefficient of the rank-one radial part of the Hessian.'''
    speeds = np.asarray(z, dtype=np.float64)
    profile = np.asarray(eta(speeds, params))
    slope = np.asarray(eta_prime(speeds, params))
    zp = speeds ** params.p
    return (params.sigma * params.p * zp / profile
            - params.sigma * (zp - 1.0) * speeds * slope / profile ** 2)

# endregion

# region Force

def force(v: ArrayLike, params: ForceParams) -> NDArray[np.float64]:
    '''Force on velocity vectors along the last axis; F(0) = 0.'''
    velocity = np.asarray(v, dtype=np.float64)
    if velocity.ndim == 0:
        velocity = velocity.reshape(1)
    speed = np.linalg.norm(velocity, axis=-1)
    return radial_coefficient(speed, params)[..., None] * velocity

def force_1d(v: ArrayLike, params: ForceParams) -> NDArray[np.float64]:
    '''Elementwise force for scalar velocities (one velocity dimension).'''
    velocity = np.asarray(v, dtype=np.float64)
    return radial_coefficient(np.abs(velocity), params) * velocity

# endregion

# region Potential

def _integrand(y: float, params: ForceParams) -> float:
    return params.sigma * (y ** (params.p + 1.0) - y) / float(eta(y, params))

def _quad_segment(a: float, b: float, params: ForceParams) -> float:
    if b <= a or params.sigma == 0.0:
        return 0.0
    points = [params.R] if a < params.R < b else None
    result = integrate.quad(_integrand, a, b, args=(params,), epsabs=constants.QUAD_ABS_TOL,
                            epsrel=0.0, limit=constants.QUAD_LIMIT,
                            points=points, full_output=1)
    if len(result) > 3 and result[1] > constants.QUAD_FAIL_TOL:
        message = f"quadrature of G on [{a}, {b}] did not converge: {result[3]} (error estimate {result[1]})"
        logging.error(message)
        raise QuadratureError(message)
    return float(result[0])

@functools.lru_cache(maxsize=4096)
def _potential_G_cached(z: float, params: ForceParams) -> float:
    return _quad_segment(0.0, z, params)

def potential_G(z: float, params: ForceParams) -> float:
    '''G(z) = integral_0^z sigma (y^{p+1} - y) / eta(y) dy; G(0) = 0.'''
    if z < 0:
        raise DomainError(f"speed must be non-negative, got {z}")
    return _potential_G_cached(float(z), params)

def potential_G_many(z: ArrayLike, params: ForceParams) -> NDArray[np.float64]:
    '''G at many speeds, integrating once across the sorted distinct speeds.'''
    speeds = np.asarray(z, dtype=np.float64)
    _check_speed(speeds)
    unique, inverse = np.unique(speeds.ravel(), return_inverse=True)
    values = np.empty_like(unique)
    total, previous = 0.0, 0.0
    for index, speed in enumerate(unique):
        total += _quad_segment(previous, float(speed), params)
        values[index] = total
        previous = float(speed)
    return values[inverse].reshape(speeds.shape)

def potential_V(v: ArrayLike, params: ForceParams) -> NDArray[np.float64] | float:
    '''V(v) = |v|^2/2 + G(|v|) for velocity vectors along the last axis.'''
    velocity = np.asarray(v, dtype=np.float64)
    if velocity.ndim == 0:
        velocity = velocity.reshape(1)
    speed = np.linalg.norm(velocity, axis=-1)
    result = 0.5 * speed ** 2 + potential_G_many(speed, params)
    return float(result) if result.ndim == 0 else result

def grad_V(v: ArrayLike, params: ForceParams) -> NDArray[np.float64]:
    '''grad V = v + F(v).'''
    velocity = np.asarray(v, dtype=np.float64)
    if velocity.ndim == 0:
        velocity = velocity.reshape(1)
    return velocity + force(velocity, params)

def hess_V(v: ArrayLike, params: ForceParams) -> NDArray[np.float64]:
    '''Exact Jacobian of grad V: (1 + g) I + z g'(z) v_hat v_hat^T.

    At v = 0 the radial term vanishes and the Hessian is (1 - sigma) I.
    '''
    velocity = np.asarray(v, dtype=np.float64)
    if velocity.ndim == 0:
        velocity = velocity.reshape(1)
    n = velocity.shape[-1]
    speed = np.linalg.norm(velocity, axis=-1)
    safe = np.where(speed > 0, speed, 1.0)
    unit = np.where((speed > 0)[..., None], velocity / safe[..., None], 0.0)
    tangential = 1.0 + radial_coefficient(speed, params)
    radial = radial_derivative_term(speed, params)
    identity = np.eye(n)
    return (tangential[..., None, None] * identity
            + radial[..., None, None] * unit[..., :, None] * unit[..., None, :])

def radial_eigenvalues(z: ArrayLike, params: ForceParams) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    '''Hessian eigenvalues at speed z: (tangential 1 + g, radial 1 + g + z g').'''
    speeds = np.asarray(z, dtype=np.float64)
    _check_speed(speeds)
    tangential = 1.0 + radial_coefficient(speeds, params)
    return tangential, tangential + radial_derivative_term(speeds, params)

def coercivity_lower_profile(z: ArrayLike, params: ForceParams) -> NDArray[np.float64]:
    '''Explicit lower profile 1 - sigma/eta - sigma z^{p+1} eta'/eta^2 of the Hessian.'''
    speeds = np.asarray(z, dtype=np.float64)
    profile = np.asarray(eta(speeds, params))
    slope = np.asarray(eta_prime(speeds, params))
    return (1.0 - params.sigma / profile
            - params.sigma * speeds ** (params.p + 1.0) * slope / profile ** 2)

# endregion

# region Coercivity

def _extreme_eigenvalue(z: float, params: ForceParams, upper: bool) -> float:
    tangential, radial = radial_eigenvalues(z, params)
    if upper:
        return float(max(tangential, radial))
    return float(min(tangential, radial))

def _refine(grid: NDArray[np.float64], index: int, params: ForceParams, upper: bool) -> tuple[float, float]:
    '''Polishes a grid extremum with a bounded scalar search between its neighbours.'''
    lo = float(grid[max(index - 1, 0)])
    hi = float(grid[min(index + 1, len(grid) - 1)])
    sign = -1.0 if upper else 1.0
    if hi <= lo:
        return lo, _extreme_eigenvalue(lo, params, upper)
    result = optimize.minimize_scalar(lambda z: sign * _extreme_eigenvalue(z, params, upper),
                                      bounds=(lo, hi), method='bounded', options={'xatol': 1e-12})
    return float(result.x), sign * float(result.fun)

def coercivity_bounds(params: ForceParams) -> CoercivityBounds:
    '''Smallest and largest Hessian eigenvalue over all speeds.

    Scans a dense grid on [0, max(10, 3R)] and polishes the extrema. Beyond the grid
    g(z) ~ sigma w^q z^{p-q} decays, so both eigenvalues approach 1; a geometric
    tail scan confirms no new extremum appears there.

    Raises:
        CoercivityError: when the smallest eigenvalue is not positive.
    '''
    z_max = max(10.0, 3.0 * params.R)
    grid = np.linspace(0.0, z_max, constants.COERCIVITY_POINTS)
    grid = np.union1d(grid, [params.R])
    tangential, radial = radial_eigenvalues(grid, params)
    lower = np.minimum(tangential, radial)
    upper = np.maximum(tangential, radial)

    z_argmin, lam = _refine(grid, int(np.argmin(lower)), params, upper=False)
    z_argmax, Lam = _refine(grid, int(np.argmax(upper)), params, upper=True)
    lam = min(lam, float(np.min(lower)))
    Lam = max(Lam, float(np.max(upper)))

    # tail scan
    tail = np.geomspace(z_max, constants.COERCIVITY_TAIL_FACTOR * z_max, constants.COERCIVITY_TAIL_POINTS)
    tail_tangential, tail_radial = radial_eigenvalues(tail, params)
    tail_lower = float(np.min(np.minimum(tail_tangential, tail_radial)))
    tail_upper = float(np.max(np.maximum(tail_tangential, tail_radial)))
    if tail_lower < lam or tail_upper > Lam:
        logging.warning(f"coercivity tail scan beyond z={z_max} changed the bounds: "
                        f"lower {lam} -> {min(lam, tail_lower)}, upper {Lam} -> {max(Lam, tail_upper)}")
        lam, Lam = min(lam, tail_lower), max(Lam, tail_upper)

    profile_min = float(np.min(coercivity_lower_profile(grid, params)))
    logging.debug(f"coercivity bounds for {params}: lambda={lam} at z={z_argmin}, Lambda={Lam} at z={z_argmax}, "
                  f"explicit profile min {profile_min}")
    if lam <= 0:
        message = f"coercivity fails for these parameters: min Hessian eigenvalue {lam} at speed {z_argmin} ({params})"
        logging.error(message)
        raise CoercivityError(message)
    return CoercivityBounds(lam=lam, Lam=Lam, z_argmin=z_argmin, z_argmax=z_argmax,
                            z_max=z_max, profile_min=profile_min)

# endregion

# region Equilibrium

def _tail_mass(vmax: float, Z: float, L: float, params: ForceParams) -> float:
    '''Equilibrium mass with |v| > vmax, both signs, over the whole spatial period.'''
    value, _ = integrate.quad(lambda z: np.exp(-potential_V(z, params)), vmax, vmax + 20.0,
                              epsabs=constants.QUAD_ABS_TOL, limit=constants.QUAD_LIMIT)
    return 2.0 * L * float(value) / Z

def equilibrium(grid: PhaseGrid, params: ForceParams) -> EquilibriumTable:
    '''Tabulates f_inf = exp(-V)/Z at the velocity cell centers.

    Z is the midpoint-rule integral of exp(-V) over the phase-space grid, so the
    discrete mass of f_inf is 1 up to rounding.

    Raises:
        TruncationError: when f_inf(Vmax) / max f_inf is not below the tail ratio.
    '''
    v = np.array(grid.v, dtype=np.float64)
    speeds = np.abs(v)
    V = 0.5 * speeds ** 2 + potential_G_many(speeds, params)
    V_min = float(np.min(V))
    V_edge = float(potential_V(grid.Vmax, params))
    exponent = V_edge - V_min
    tail_ratio = float(np.exp(-exponent))

    weights = np.exp(-(V - V_min))
    Z = float(grid.L * np.sum(weights) * grid.dv) * np.exp(-V_min)
    if exponent <= -np.log(constants.TAIL_RATIO):
        tail_mass = _tail_mass(grid.Vmax, Z, grid.L, params)
        message = (f"velocity truncation Vmax={grid.Vmax} too small: f_inf(Vmax)/max f_inf = {tail_ratio:.3e}, "
                   f"tail mass {tail_mass:.3e}; try Vmax >= {suggest_vmax(params):.3f}")
        logging.error(message)
        raise TruncationError(message, tail_mass)

    f_inf = weights / (grid.L * np.sum(weights) * grid.dv)
    for array in (v, V, f_inf):
        array.setflags(write=False)
    logging.debug(f"equilibrium on Nv={len(v)}, Vmax={grid.Vmax}: Z={Z}, tail ratio {tail_ratio:.3e}")
    return EquilibriumTable(v=v, V=V, f_inf=f_inf, Z=Z, tail_ratio=tail_ratio)

def suggest_vmax(params: ForceParams, ratio: float=constants.SUGGEST_TAIL_RATIO) -> float:
    '''Smallest speed z with V(z) - V(0) = -log(ratio), so that f_inf(z)/f_inf(0) = ratio.'''
    target = -np.log(ratio)
    objective = lambda z: float(potential_V(z, params)) - target
    upper = 1.0
    while objective(upper) < 0:
        upper *= 2.0
    return float(optimize.brentq(objective, 0.0, upper, xtol=1e-10))

# endregion
