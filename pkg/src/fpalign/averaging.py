'''
# Summary
Environmental averaging on the periodic x grid: communication kernels, the strength s_rho and the
velocity average [u]_rho, the kappa_rho pairing, and numeric checks of the four structural
assumptions behind exponential relaxation.

    - convolve_periodic:     Discrete circular convolution phi * field.
    - strength_and_average:  (s_rho, [u]_rho) for the cs, double_conv and identity variants.
    - kappa_inner:           <w1, w2> in the measure s_rho rho dx.
    - check_assumption_*:    Assumptions (i)-(iv) on a density snapshot.
    - spectral_gap:          sup <w, [w]> over unit w, full space or mean-zero subspace.
    - audit_assumptions:     All of the above collected into an AssumptionReport.
'''

import logging
import math
from dataclasses import asdict, dataclass
from enum import StrEnum
from typing import Any

import numpy as np
from numpy.typing import NDArray
from scipy import linalg

from . import common
from . import constants

# region Data

class DegenerateDensityError(common.NumericError):
    '''The averaging strength vanishes somewhere: vacuum reached the kernel footprint.'''

class GridMismatchError(common.FpaError, ValueError):
    '''A field and a kernel were tabulated on different grids.'''

class KernelShape(StrEnum):
    TENT   = 'tent'
    GLOBAL = 'global'

class Variant(StrEnum):
    CS          = 'cs'
    DOUBLE_CONV = 'double_conv'
    IDENTITY    = 'identity'

class Subspace(StrEnum):
    FULL      = 'full'
    MEAN_ZERO = 'mean_zero'

class ForceStatus(StrEnum):
    OK       = 'ok'
    VACUOUS  = 'vacuous'
    VIOLATED = 'violated'

@dataclass(frozen=True)
class Kernel:
    '''Radial kernel tabulated on periodic cell offsets: phi[k] = phi(min(k, Nx - k) dx).'''
    shape: KernelShape
    r0: float
    L: float
    Nx: int
    phi: NDArray[np.float64]
    c0_floor: float

    @property
    def dx(self) -> float:
        return self.L / self.Nx

@dataclass(frozen=True)
class AveragingModel:
    variant: Variant
    kernel: Kernel

@dataclass
class AssumptionReport:
    '''Measured constants of assumptions (i)-(iv) for one density snapshot.'''
    c0: float
    c1: float
    c2: float
    op_norm_ii: float
    gap_sup_full: float
    gap_sup_mean_zero: float
    epsilon0: float
    force_ratio: float
    epsilon1: float
    pass_i: bool
    pass_ii: bool
    pass_iii: bool
    pass_iv: bool
    gap_subspace: str = Subspace.MEAN_ZERO.value
    force_status: str = ForceStatus.OK.value

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @property
    def passed(self) -> bool:
        return self.pass_i and self.pass_ii and self.pass_iii and self.pass_iv

    @property
    def gap_sup(self) -> float:
        if self.gap_subspace == Subspace.FULL:
            return self.gap_sup_full
        return self.gap_sup_mean_zero

# endregion

# region Kernels

def make_kernel(shape: str, Nx: int, L: float, r0: float | None=None) -> Kernel:
    '''Tabulates a kernel on the Nx-cell periodic grid of length L.

    The tent max(1 - d/r0, 0) is normalized so that sum(phi) dx = 1 exactly on the grid.
    The global kernel is 1/L everywhere.
    '''
    kernel_shape = KernelShape(shape)
    dx = L / Nx
    offsets = np.arange(Nx)
    distance = np.minimum(offsets, Nx - offsets) * dx
    if kernel_shape == KernelShape.GLOBAL:
        phi = np.full(Nx, 1.0 / L)
        phi.setflags(write=False)
        return Kernel(shape=kernel_shape, r0=0.5 * L, L=L, Nx=Nx, phi=phi, c0_floor=1.0 / L)

    if r0 is None or r0 <= 0:
        raise common.ConfigError('averaging.r0', f"tent kernel needs r0 > 0, got {r0}")
    if r0 > 0.5 * L:
        raise common.ConfigError('averaging.r0', f"tent support r0={r0} exceeds half the period {0.5 * L}")
    raw = np.maximum(1.0 - distance / r0, 0.0)
    phi = raw / (np.sum(raw) * dx)
    c0_floor = float(np.min(phi[distance < r0]))
    phi.setflags(write=False)
    return Kernel(shape=kernel_shape, r0=r0, L=L, Nx=Nx, phi=phi, c0_floor=c0_floor)

def make_model(variant: str, shape: str, Nx: int, L: float, r0: float | None=None) -> AveragingModel:
    return AveragingModel(variant=Variant(variant), kernel=make_kernel(shape, Nx, L, r0))

def kernel_matrix(kernel: Kernel) -> NDArray[np.float64]:
    '''Dense matrix C with (C f)_i = sum_j phi(x_i - x_j) f_j dx.'''
    return linalg.circulant(kernel.phi) * kernel.dx

def _difference_matrix(Nx: int, dx: float) -> NDArray[np.float64]:
    column = np.zeros(Nx)
    column[1] = -0.5 / dx
    column[-1] += 0.5 / dx
    return linalg.circulant(column)

def centered_gradient(field: NDArray[np.float64], dx: float) -> NDArray[np.float64]:
    '''Second-order periodic centered difference along axis 0.'''
    return (np.roll(field, -1, axis=0) - np.roll(field, 1, axis=0)) / (2.0 * dx)

# endregion

# region Averaging

def convolve_periodic(field: NDArray[np.float64], kernel: Kernel, L: float) -> NDArray[np.float64]:
    '''(phi * field)_i = sum_k phi[k] field[i - k] dx over the kernel support.

    The global kernel returns the x-average exactly. The fixed summation order makes the
    result exactly equivariant under cell shifts.
    '''
    values = np.asarray(field, dtype=np.float64)
    if values.ndim != 1 or values.shape[0] != kernel.Nx:
        raise GridMismatchError(f"field of shape {values.shape} does not match kernel grid Nx={kernel.Nx}")
    if not math.isclose(L, kernel.L, rel_tol=1e-12):
        raise GridMismatchError(f"domain length {L} does not match kernel length {kernel.L}")
    if kernel.shape == KernelShape.GLOBAL:
        return np.full(kernel.Nx, np.mean(values))

    result = np.zeros(kernel.Nx)
    for offset in np.flatnonzero(kernel.phi):
        result += kernel.phi[offset] * np.roll(values, offset)
    return result * kernel.dx

def _strength(rho: NDArray[np.float64], model: AveragingModel) -> NDArray[np.float64]:
    strength = convolve_periodic(rho, model.kernel, model.kernel.L)
    low = float(np.min(strength))
    if not np.all(np.isfinite(strength)) or low < constants.STRENGTH_FLOOR:
        cell = int(np.argmin(strength))
        message = f"degenerate density: s_rho={low:.3e} at x-cell {cell} (vacuum inside the kernel footprint)"
        logging.error(message)
        raise DegenerateDensityError(message)
    return strength

def strength_and_average(rho: NDArray[np.float64], u: NDArray[np.float64],
                         model: AveragingModel) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    '''Returns (s_rho, [u]_rho) per x-cell.

    cs:          s = phi * rho,  [u] = phi * (u rho) / s
    double_conv: s = phi * rho,  [u] = phi * (phi * (u rho) / s)
    identity:    s = phi * rho,  [u] = u

    Raises:
        DegenerateDensityError: when s_rho falls below the strength floor in any cell.
    '''
    strength = _strength(rho, model)
    kernel, L = model.kernel, model.kernel.L
    if model.variant == Variant.CS:
        average = convolve_periodic(u * rho, kernel, L) / strength
    elif model.variant == Variant.DOUBLE_CONV:
        average = convolve_periodic(convolve_periodic(u * rho, kernel, L) / strength, kernel, L)
    else:
        average = np.array(u, dtype=np.float64)
    return strength, average

def kappa_inner(w1: NDArray[np.float64], w2: NDArray[np.float64],
                rho: NDArray[np.float64], strength: NDArray[np.float64], dx: float) -> float:
    '''<w1, w2>_kappa = sum w1 w2 s_rho rho dx.'''
    return float(np.sum(w1 * w2 * strength * rho) * dx)

def kappa_norm(w: NDArray[np.float64], rho: NDArray[np.float64], strength: NDArray[np.float64], dx: float) -> float:
    return math.sqrt(max(kappa_inner(w, w, rho, strength, dx), 0.0))

def averaging_matrix(rho: NDArray[np.float64], model: AveragingModel) -> NDArray[np.float64]:
    '''Dense A with [w]_rho = A w.'''
    strength = _strength(rho, model)
    C = kernel_matrix(model.kernel)
    if model.variant == Variant.CS:
        return (C * rho[None, :]) / strength[:, None]
    if model.variant == Variant.DOUBLE_CONV:
        return C @ ((C * rho[None, :]) / strength[:, None])
    return np.eye(len(rho))

# endregion

# region Assumptions

def check_assumption_i(rho: NDArray[np.float64], model: AveragingModel) -> tuple[float, float, float]:
    '''(c0, c1, c2) = (min s_rho, max s_rho, max |d/dx s_rho|).'''
    strength = convolve_periodic(rho, model.kernel, model.kernel.L)
    gradient = centered_gradient(strength, model.kernel.dx)
    c0, c1, c2 = float(np.min(strength)), float(np.max(strength)), float(np.max(np.abs(gradient)))
    if c0 <= constants.ASSUMPTION_I_FLOOR:
        logging.warning(f"assumption (i) violated: min s_rho = {c0:.3e}")
    return c0, c1, c2

def _support(rho: NDArray[np.float64]) -> NDArray[np.bool_]:
    '''Cells that carry weight in the L^2(rho) and kappa geometries; vacuum cells are dropped.'''
    if not np.all(np.isfinite(rho)):
        message = 'density has non-finite cells; weighted geometry undefined'
        logging.error(message)
        raise DegenerateDensityError(message)
    support = rho > constants.DENSITY_FLOOR
    if not np.any(support):
        message = 'density vanishes everywhere; weighted geometry undefined'
        logging.error(message)
        raise DegenerateDensityError(message)
    if not np.all(support):
        logging.debug(f"weighted geometry restricted to {int(np.sum(support))} of {len(rho)} cells")
    return support

def check_assumption_ii(rho: NDArray[np.float64], model: AveragingModel,
                        tol: float=constants.EIGEN_TOL, max_iter: int=constants.EIGEN_MAX_ITER) -> float:
    '''Operator norm of u -> d/dx (s_rho [u]_rho) from L^2(rho) to L^2(rho), by Lanczos on the Gram operator.'''
    dx = model.kernel.dx
    strength = _strength(rho, model)
    D = _difference_matrix(len(rho), dx)
    C = kernel_matrix(model.kernel)
    if model.variant == Variant.CS:
        T = D @ (C * rho[None, :])
    elif model.variant == Variant.DOUBLE_CONV:
        T = D @ (strength[:, None] * (C @ ((C * rho[None, :]) / strength[:, None])))
    else:
        T = D * strength[None, :]

    support = _support(rho)
    root = np.sqrt(rho[support] * dx)
    M = root[:, None] * T[np.ix_(support, support)] / root[None, :]
    if float(np.max(np.abs(M))) <= constants.NORM_FLOOR:
        return 0.0
    gram = M.T @ M
    eigenvalue = common.top_eigenvalue(lambda x: gram @ x, gram.shape[0], tol=tol, max_iter=max_iter)
    return math.sqrt(max(eigenvalue, 0.0))

def _symmetrized_operator(rho: NDArray[np.float64], model: AveragingModel) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    '''S = sym(K^{1/2} A K^{-1/2}) with K = diag(s rho dx), and K^{1/2} 1, both on the support of rho.'''
    strength = _strength(rho, model)
    A = averaging_matrix(rho, model)
    support = _support(rho)
    root = np.sqrt(strength[support] * rho[support] * model.kernel.dx)
    B = root[:, None] * A[np.ix_(support, support)] / root[None, :]
    if not np.all(np.isfinite(B)):
        message = 'averaging operator has non-finite entries in the kappa geometry'
        logging.error(message)
        raise DegenerateDensityError(message)
    return 0.5 * (B + B.T), root

def spectral_gap(rho: NDArray[np.float64], model: AveragingModel, subspace: str=Subspace.MEAN_ZERO,
                 method: str='dense', tol: float=constants.GAP_EIGEN_TOL,
                 max_iter: int=constants.EIGEN_MAX_ITER) -> float:
    '''sup <w, [w]_rho>_kappa over ||w||_kappa = 1, on the full space or on the
    kappa-orthogonal complement of constants.

    Args:
        method: 'dense' for a symmetric eigensolve, 'lanczos' for implicitly restarted Lanczos.
            Grids above the dense limit always use Lanczos.
    '''
    if method not in ('dense', 'lanczos'):
        raise ValueError(f"unknown eigen method '{method}'")
    S, root = _symmetrized_operator(rho, model)
    if Subspace(subspace) == Subspace.MEAN_ZERO:
        basis = linalg.null_space(root[None, :])
        S = basis.T @ S @ basis
    size = S.shape[0]
    if size == 0:
        return 0.0

    if method == 'dense' and size <= constants.DENSE_EIGEN_LIMIT:
        return float(linalg.eigh(S, eigvals_only=True)[-1])
    if float(np.max(np.abs(S))) <= constants.NORM_FLOOR:
        return 0.0
    return common.top_eigenvalue(lambda x: S @ x, size, tol=tol, max_iter=max_iter)

def check_assumption_iv(u: NDArray[np.float64], u_F: NDArray[np.float64], rho: NDArray[np.float64],
                        strength: NDArray[np.float64], dx: float) -> tuple[float, ForceStatus]:
    '''||u_F||_kappa / ||u||_kappa with a status flag.

    Both norms below the floor give (0, vacuous); only ||u|| below it gives (inf, violated).
    '''
    norm_u = kappa_norm(u, rho, strength, dx)
    norm_force = kappa_norm(u_F, rho, strength, dx)
    if norm_u < constants.NORM_FLOOR and norm_force < constants.NORM_FLOOR:
        return 0.0, ForceStatus.VACUOUS
    if norm_u < constants.NORM_FLOOR:
        return math.inf, ForceStatus.VIOLATED
    ratio = norm_force / norm_u
    return ratio, ForceStatus.OK if ratio < 1.0 else ForceStatus.VIOLATED

def audit_assumptions(rho: NDArray[np.float64], model: AveragingModel,
                      u: NDArray[np.float64], u_F: NDArray[np.float64],
                      subspace: str=Subspace.MEAN_ZERO) -> AssumptionReport:
    '''Evaluates assumptions (i)-(iv) on one density snapshot.'''
    dx = model.kernel.dx
    c0, c1, c2 = check_assumption_i(rho, model)
    op_norm = check_assumption_ii(rho, model)
    gap_full = spectral_gap(rho, model, Subspace.FULL)
    gap_mean_zero = spectral_gap(rho, model, Subspace.MEAN_ZERO)
    gap = gap_full if Subspace(subspace) == Subspace.FULL else gap_mean_zero
    strength, _ = strength_and_average(rho, u, model)
    ratio, status = check_assumption_iv(u, u_F, rho, strength, dx)

    report = AssumptionReport(
        c0=c0, c1=c1, c2=c2,
        op_norm_ii=op_norm,
        gap_sup_full=gap_full,
        gap_sup_mean_zero=gap_mean_zero,
        epsilon0=max(1.0 - gap, 0.0),
        force_ratio=ratio,
        epsilon1=ratio,
        pass_i=c0 > constants.ASSUMPTION_I_FLOOR,
        pass_ii=math.isfinite(op_norm),
        pass_iii=gap <= 1.0 - constants.GAP_TOL,
        pass_iv=ratio < 1.0,
        gap_subspace=Subspace(subspace).value,
        force_status=status.value)
    logging.info(f"assumptions: c0={c0:.4g} c1={c1:.4g} c2={c2:.4g} op_norm_ii={op_norm:.4g} "
                 f"gap({report.gap_subspace})={gap:.6g} force_ratio={ratio:.4g} ({status})")
    return report

# endregion
