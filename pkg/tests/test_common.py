import argparse
import logging
import os
import sys
import tempfile
import unittest
from unittest.mock import MagicMock, patch

import numpy as np

from tests.fixtures import PROJECT_ROOT
from fpalign import common

class TestFilenameNoExt(unittest.TestCase):
    def test_success(self) -> None:
        # Call target function
        actual = common.filename_no_ext('/test/path/file.foo')
        self.assertEqual(actual, 'file')

        actual = common.filename_no_ext(__file__)
        self.assertEqual(actual, 'test_common')

class TestConfigureLog(unittest.TestCase):
    def setUp(self) -> None:
        # store the existing log handlers and hook before the configure log function manipulates them
        root = logging.getLogger()
        self._saved_handlers = root.handlers[:]
        self._saved_hook = sys.excepthook

    def tearDown(self) -> None:
        root = logging.getLogger()
        root.handlers = self._saved_handlers
        sys.excepthook = self._saved_hook

    @patch('logging.basicConfig')
    @patch('os.path.exists')
    @patch('os.makedirs')
    def test_default(self,
                     mock_makedirs: MagicMock,
                     mock_path_exists: MagicMock,
                     mock_basic_config: MagicMock) -> None:
        '''Tests that a default log configuration is created for the module log file.'''
        # Call target function
        actual = common.configure_log('test')

        # Assert expectations
        log_path = os.path.join(common.BASE_LOGS_PATH, 'test.log')
        self.assertEqual(actual, log_path)
        self.assertEqual(mock_basic_config.call_args.kwargs['filename'], log_path)
        self.assertEqual(mock_basic_config.call_args.kwargs['level'], logging.DEBUG)

    @patch('logging.basicConfig')
    @patch('os.path.exists')
    @patch('os.makedirs')
    def test_custom_level(self,
                          mock_makedirs: MagicMock,
                          mock_path_exists: MagicMock,
                          mock_basic_config: MagicMock) -> None:
        '''Tests that a custom log level is respected.'''
        common.configure_log('test', level=logging.INFO)
        self.assertEqual(mock_basic_config.call_args.kwargs['level'], logging.INFO)

    @patch('logging.basicConfig')
    @patch('os.path.exists')
    @patch('os.makedirs')
    def test_module_path(self,
                         mock_makedirs: MagicMock,
                         mock_path_exists: MagicMock,
                         mock_basic_config: MagicMock) -> None:
        '''Tests that the module variant names the log after the file and creates the log directory.'''
        mock_path_exists.return_value = False

        # Call target function
        common.configure_log_module(os.path.join(PROJECT_ROOT, 'src', 'fpalign', 'cli.py'))

        # Assert expectations
        mock_makedirs.assert_called_once_with(common.BASE_LOGS_PATH)
        self.assertEqual(mock_basic_config.call_args.kwargs['filename'], os.path.join(common.BASE_LOGS_PATH, 'cli.log'))

    def test_error_empty_module(self) -> None:
        '''Tests that an empty module name is rejected.'''
        with self.assertRaises(ValueError):
            common.configure_log(' ')

class TestNormalizeArgPaths(unittest.TestCase):
    def test_success(self) -> None:
        '''Tests that set paths are normalized and unset ones are left alone.'''
        args = argparse.Namespace(config='/mock/a/../config.json', out=None, series='')

        # Call target function
        common.normalize_arg_paths(args, ['config', 'out', 'series', 'missing'])

        # Assert expectations
        self.assertEqual(args.config, '/mock/config.json')
        self.assertIsNone(args.out)
        self.assertEqual(args.series, '')

class TestWriteAtomic(unittest.TestCase):
    def test_success(self) -> None:
        '''Tests that the content lands in the target, creating parents and leaving no temporary file.'''
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'nested', 'file.txt')

            # Call target function
            common.write_atomic(path, 'first\n')
            common.write_atomic(path, 'second\n')

            # Assert expectations
            with open(path, encoding='utf-8') as file:
                self.assertEqual(file.read(), 'second\n')
            self.assertEqual(os.listdir(os.path.dirname(path)), ['file.txt'])

    @patch('os.replace')
    def test_failure_keeps_target(self, mock_replace: MagicMock) -> None:
        '''Tests that a failed rename removes the temporary file and keeps the old content.'''
        mock_replace.side_effect = OSError('disk full')
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'file.txt')
            with open(path, 'w', encoding='utf-8') as file:
                file.write('old')

            # Call target function
            with self.assertRaises(OSError):
                common.write_atomic(path, 'new')

            # Assert expectations
            with open(path, encoding='utf-8') as file:
                self.assertEqual(file.read(), 'old')
            self.assertEqual(os.listdir(directory), ['file.txt'])

class TestFormatFloat(unittest.TestCase):
    def test_round_trip(self) -> None:
        '''Tests that formatted values parse back to the identical double.'''
        for value in (0.1, 1.0 / 3.0, -2.5e-300, 6.283185307179586, 1e22):
            self.assertEqual(float(common.format_float(value)), value)
        self.assertEqual(common.format_float(0.1), '0.10000000000000001')
        self.assertEqual(common.format_float(3), '3')

class TestResolveThreads(unittest.TestCase):
    @patch('fpalign.config.THREADS', '4')
    def test_explicit_wins(self) -> None:
        '''Tests that the flag takes precedence over the environment.'''
        self.assertEqual(common.resolve_threads(2), 2)

    @patch('fpalign.config.THREADS', '3')
    def test_environment(self) -> None:
        '''Tests the environment fallback.'''
        self.assertEqual(common.resolve_threads(None), 3)

    @patch('os.cpu_count')
    @patch('fpalign.config.THREADS', None)
    def test_hardware(self, mock_cpu_count: MagicMock) -> None:
        '''Tests the hardware fallback, with one worker when the count is unknown.'''
        mock_cpu_count.return_value = 8
        self.assertEqual(common.resolve_threads(None), 8)
        mock_cpu_count.return_value = None
        self.assertEqual(common.resolve_threads(None), 1)

    def test_errors(self) -> None:
        '''Tests the rejected values and their keys.'''
        with self.assertRaises(common.ConfigError) as context:
            common.resolve_threads(0)
        self.assertEqual(context.exception.key, '--threads')
        for value in ('many', '0'):
            with patch('fpalign.config.THREADS', value):
                with self.assertRaises(common.ConfigError) as context:
                    common.resolve_threads(None)
                self.assertEqual(context.exception.key, 'FPA_THREADS')

class TestTopEigenvalue(unittest.TestCase):
    def test_largest_eigenvalue(self) -> None:
        '''Tests convergence to the largest eigenvalue of a symmetric matrix.'''
        rotation, _ = np.linalg.qr(np.random.default_rng(2).standard_normal((6, 6)))
        matrix = rotation @ np.diag([3.0, 1.0, 0.5, 0.2, 0.1, -4.0]) @ rotation.T

        # Call target function
        eigenvalue = common.top_eigenvalue(lambda x: matrix @ x, 6, tol=1e-12)

        # Assert expectations
        self.assertAlmostEqual(eigenvalue, 3.0, places=10)

    def test_clustered_spectrum(self) -> None:
        '''Tests a tightly packed spectrum with the default settings.'''
        values = np.linspace(0.0, 1.0, 200)

        # Call target function
        eigenvalue = common.top_eigenvalue(lambda x: values * x, 200)

        # Assert expectations
        self.assertAlmostEqual(eigenvalue, 1.0, delta=1e-8)

    def test_small_operator(self) -> None:
        '''Tests the dense path for operators of size 1 and 2.'''
        self.assertAlmostEqual(common.top_eigenvalue(lambda x: 2.5 * x, 1), 2.5, places=14)
        matrix = np.array([[0.0, 1.0], [1.0, 0.0]])
        self.assertAlmostEqual(common.top_eigenvalue(lambda x: matrix @ x, 2), 1.0, places=14)

    def test_zero_operator(self) -> None:
        '''Tests that an operator annihilating the start vector returns 0.'''
        self.assertEqual(common.top_eigenvalue(lambda x: np.zeros_like(x), 4), 0.0)

    def test_error_no_convergence(self) -> None:
        '''Tests that exceeding the restart cap raises NumericError.'''
        values = np.linspace(0.0, 1.0, 1000)
        with self.assertRaises(common.NumericError):
            common.top_eigenvalue(lambda x: values * x, 1000, tol=1e-15, max_iter=1)

class TestErrors(unittest.TestCase):
    def test_config_error(self) -> None:
        '''Tests the dotted key and the message of a configuration error.'''
        error = common.ConfigError('solver.dt', 'must be > 0')
        self.assertEqual(error.key, 'solver.dt')
        self.assertEqual(str(error), 'solver.dt: must be > 0')
        self.assertIsInstance(error, ValueError)
        self.assertIsInstance(common.NumericError('nan'), ArithmeticError)
