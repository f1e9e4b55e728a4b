import argparse
import logging
import os
import sys
import tempfile
import types
from typing import Callable

import numpy as np
from scipy import linalg
from scipy.sparse import linalg as sparse_linalg

from . import config
from . import constants

# region Data

BASE_LOGS_PATH = str(config.LOG_DIR)

class FpaError(Exception):
    '''Base class for all errors raised by the toolkit.'''

class NumericError(FpaError, ArithmeticError):
    '''A numerical procedure failed (non-convergence, breakdown, NaN).'''

class ConfigError(FpaError, ValueError):
    '''A run configuration value is missing, unknown or invalid.'''
    def __init__(self, key: str, message: str) -> None:
        super().__init__(f"{key}: {message}")
        self.key = key

# endregion

# region Logging

def configure_log_module(module_path: str, level: int=logging.DEBUG) -> str:
    return configure_log(filename_no_ext(module_path), level=level)

def configure_log(module: str, level: int=logging.DEBUG) -> str:
    '''Standard log configuration.'''
    # validation
    if len(module.strip()) < 1:
        raise ValueError('Unable to configure log for empty module string.')
    if not os.path.exists(BASE_LOGS_PATH):
        os.makedirs(BASE_LOGS_PATH)

    # clear existing handlers
    root_logger = logging.getLogger()
    for handler in root_logger.handlers[:]:
        handler.close()
        root_logger.removeHandler(handler)

    log_file_path = os.path.join(BASE_LOGS_PATH, f"{module}.log")
    logging.basicConfig(filename=log_file_path,
                        level=level,
                        format="%(asctime)s [%(levelname)s] %(message)s",
                        datefmt="%D %H:%M:%S",
                        filemode='w',
                        force=True)

    # log uncaught exceptions + full stack trace to file
    def _excepthook(exc_type: type[BaseException], exc_value: BaseException, exc_traceback: types.TracebackType | None) -> None:
        if issubclass(exc_type, KeyboardInterrupt):
            sys.__excepthook__(exc_type, exc_value, exc_traceback)
            return
        logging.fatal('Uncaught exception', exc_info=(exc_type, exc_value, exc_traceback))
    sys.excepthook = _excepthook

    return log_file_path

# endregion

# region File System

def filename_no_ext(file_path: str) -> str:
    split = os.path.basename(file_path)
    split = os.path.splitext(split)
    if len(split) > 1:
        return split[0]
    raise ValueError(f"Given path '{file_path}' has no filename")

def normalize_arg_paths(args: argparse.Namespace, paths: list[str]) -> None:
    for attr in paths:
        value = getattr(args, attr, None)
        if value:
            setattr(args, attr, os.path.normpath(value))

def write_atomic(path: str, content: str) -> None:
    '''Writes `content` to `path` through a temporary sibling file and a rename.'''
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    handle, temp_path = tempfile.mkstemp(prefix='.tmp-', dir=directory)
    try:
        with os.fdopen(handle, 'w', encoding='utf-8') as file:
            file.write(content)
        os.replace(temp_path, path)
    except BaseException:
        if os.path.exists(temp_path):
            os.remove(temp_path)
        raise
    logging.debug(f"wrote '{path}'")

# endregion

# region Strings

def format_float(value: float) -> str:
    '''17 significant digits: decimal round-trips to the identical double.'''
    return constants.FLOAT_FORMAT.format(float(value))

# endregion

# region Parallelism

def resolve_threads(requested: int | None) -> int:
    '''Worker count: explicit flag, then FPA_THREADS, then hardware parallelism.'''
    if requested is not None:
        if requested < 1:
            raise ConfigError('--threads', f"must be >= 1, got {requested}")
        return requested
    if config.THREADS:
        try:
            value = int(config.THREADS)
        except ValueError:
            raise ConfigError('FPA_THREADS', f"not an integer: '{config.THREADS}'")
        if value < 1:
            raise ConfigError('FPA_THREADS', f"must be >= 1, got {value}")
        return value
    return os.cpu_count() or 1

# endregion

# region Linear Algebra

def top_eigenvalue(apply: Callable[[np.ndarray], np.ndarray],
                   size: int,
                   tol: float=constants.EIGEN_TOL,
                   max_iter: int=constants.EIGEN_MAX_ITER,
                   seed: int=0) -> float:
    '''Largest algebraic eigenvalue of a symmetric operator by implicitly restarted Lanczos.

    Args:
        apply: Matrix-vector product of the operator.
        size: Dimension of the operator.
        tol: Relative accuracy of the eigenvalue.
        max_iter: Restart cap; exceeding it raises NumericError.
        seed: Seed of the deterministic start vector.
    '''
    if size < 1:
        raise ValueError(f"operator size must be >= 1, got {size}")
    if size <= 2:
        # too small for a Krylov space
        matrix = np.column_stack([apply(column) for column in np.eye(size)])
        return float(linalg.eigvalsh(0.5 * (matrix + matrix.T))[-1])

    start = np.random.default_rng(seed).standard_normal(size)
    if float(np.linalg.norm(apply(start))) == 0.0:
        return 0.0
    operator = sparse_linalg.LinearOperator((size, size), matvec=apply, dtype=np.float64)
    try:
        values = sparse_linalg.eigsh(operator, k=1, which='LA', v0=start, tol=tol, maxiter=max_iter,
                                     return_eigenvectors=False)
    except sparse_linalg.ArpackNoConvergence as e:
        message = f"Lanczos iteration did not converge in {max_iter} restarts (tol={tol})"
        logging.error(message)
        raise NumericError(message) from e
    except sparse_linalg.ArpackError as e:
        message = f"Lanczos iteration failed: {e}"
        logging.error(message)
        raise NumericError(message) from e
    return float(values[0])

# endregion
