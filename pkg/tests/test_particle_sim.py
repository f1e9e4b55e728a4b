import math
import os
import tempfile
import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from scipy import integrate

from tests.fixtures import FORCE_DEFAULT, FORCE_OU, GRID_SMALL, TWO_PI, make_test_setup
from fpalign import common
from fpalign import constants
from fpalign import kinetic_solver
from fpalign import particle_sim
from fpalign.force_potential import ForceParams
from fpalign.particle_sim import ForceCoupling, ParticleEnsemble, SdeParams

KERNEL_GLOBAL = particle_sim.make_particle_kernel('global', TWO_PI)

def random_ensemble(N: int, seed: int=0) -> ParticleEnsemble:
    rng = np.random.default_rng(seed)
    return particle_sim.make_ensemble(rng.random(N) * TWO_PI, rng.standard_normal(N), TWO_PI, seed)

class TestRandomNumbers(unittest.TestCase):
    def test_generator_deterministic(self) -> None:
        '''Tests that a (seed, counter) pair always yields the same stream.'''
        first = particle_sim.generator(5, 17).random(8)
        second = particle_sim.generator(5, 17).random(8)
        assert_array_equal(first, second)
        self.assertFalse(np.array_equal(first, particle_sim.generator(5, 18).random(8)))

    def test_step_normals(self) -> None:
        '''Tests reproducibility per step and the first two moments.'''
        # Call target function
        normals = particle_sim.step_normals(12345, 3, 20_000)

        # Assert expectations
        assert_array_equal(normals, particle_sim.step_normals(12345, 3, 20_000))
        self.assertFalse(np.array_equal(normals, particle_sim.step_normals(12345, 4, 20_000)))
        self.assertFalse(np.array_equal(normals, particle_sim.step_normals(12346, 3, 20_000)))
        self.assertLess(abs(float(np.mean(normals))), 0.05)
        self.assertLess(abs(float(np.std(normals)) - 1.0), 0.05)

class TestParticleKernel(unittest.TestCase):
    def test_tent_unit_integral(self) -> None:
        '''Tests that the tent kernel integrates to 1 over the line.'''
        kernel = particle_sim.make_particle_kernel('tent', TWO_PI, 0.5)
        distance = np.linspace(0.0, 1.0, 100_001)
        self.assertAlmostEqual(2.0 * float(integrate.trapezoid(kernel(distance), distance)), 1.0, places=8)

    def test_error_r0(self) -> None:
        '''Tests that a tent radius outside (0, L/2] is rejected.'''
        for r0 in (None, 0.0, 4.0):
            with self.assertRaises(common.ConfigError):
                particle_sim.make_particle_kernel('tent', TWO_PI, r0)

class TestCsDrift(unittest.TestCase):
    def test_cell_list_matches_direct(self) -> None:
        '''Tests the cell-list sum against the pairwise sum.'''
        ensemble = random_ensemble(500)
        kernel = particle_sim.make_particle_kernel('tent', TWO_PI, 0.5)

        # Call target function
        strength, average = particle_sim.cs_drift(ensemble, kernel)

        # Assert expectations
        expected_strength, expected_average = particle_sim.cs_drift_direct(ensemble, kernel)
        assert_allclose(strength, expected_strength, rtol=1e-12)
        assert_allclose(average, expected_average, rtol=1e-12, atol=1e-14)

    def test_wide_kernel_uses_direct(self) -> None:
        '''Tests that fewer than three cells falls back to the pairwise sum.'''
        ensemble = random_ensemble(50)
        kernel = particle_sim.make_particle_kernel('tent', TWO_PI, 3.0)
        for actual, expected in zip(particle_sim.cs_drift(ensemble, kernel), particle_sim.cs_drift_direct(ensemble, kernel)):
            assert_array_equal(actual, expected)

    def test_global(self) -> None:
        '''Tests that the global kernel gives the total mass over L and the mean velocity.'''
        ensemble = random_ensemble(100)
        strength, average = particle_sim.cs_drift(ensemble, KERNEL_GLOBAL)
        assert_allclose(strength, np.full(100, 1.0 / TWO_PI))
        assert_allclose(average, np.full(100, float(np.sum(ensemble.m * ensemble.v))), rtol=1e-12)

    def test_error_isolated(self) -> None:
        '''Tests that an agent without mass in its footprint raises IsolatedAgentError.'''
        ensemble = ParticleEnsemble(x=np.array([0.0, 3.0]), v=np.zeros(2), m=np.zeros(2), L=TWO_PI, seed=0)
        with self.assertRaises(particle_sim.IsolatedAgentError):
            particle_sim.cs_drift(ensemble, KERNEL_GLOBAL)

class TestEmStep(unittest.TestCase):
    def test_two_body_contraction(self) -> None:
        '''Tests that two agents under global alignment contract by (1 - dt/L) per step.'''
        ensemble = particle_sim.make_ensemble(np.array([1.0, 4.0]), np.array([1.0, -1.0]), TWO_PI, 0)
        params = SdeParams(dt=0.01, kernel=KERNEL_GLOBAL, force=FORCE_OU, noise_on=False)

        # Call target function
        for _ in range(100):
            ensemble = particle_sim.em_step(ensemble, params)

        # Assert expectations
        expected = (1.0 - 0.01 / TWO_PI) ** 100
        assert_allclose(ensemble.v, [expected, -expected], rtol=1e-12)
        self.assertAlmostEqual(float(np.sum(ensemble.m * ensemble.v)), 0.0, places=15)
        self.assertEqual(ensemble.step, 100)
        self.assertAlmostEqual(ensemble.t, 1.0, places=12)

    def test_single_agent_reaches_unit_speed(self) -> None:
        '''Tests that self-propulsion drives a lone agent to unit speed.'''
        ensemble = particle_sim.make_ensemble(np.array([1.0]), np.array([0.2]), TWO_PI, 0)
        params = SdeParams(dt=0.01, kernel=KERNEL_GLOBAL, force=ForceParams(sigma=0.5), noise_on=False)

        # Call target function
        run = particle_sim.simulate(ensemble, params, T=50.0, record_every=1000)

        # Assert expectations
        assert run.final
        self.assertAlmostEqual(float(run.final.v[0]), 1.0, delta=1e-6)

    def test_free_agent(self) -> None:
        '''Tests that a lone agent without force or noise keeps its velocity and wraps around.'''
        ensemble = particle_sim.make_ensemble(np.array([6.0]), np.array([1.5]), TWO_PI, 0)
        params = SdeParams(dt=0.5, kernel=KERNEL_GLOBAL, force=FORCE_OU, noise_on=False)

        # Call target function
        stepped = particle_sim.em_step(ensemble, params)

        # Assert expectations
        self.assertAlmostEqual(float(stepped.v[0]), 1.5, places=14)
        self.assertAlmostEqual(float(stepped.x[0]), 6.75 - TWO_PI, places=12)

    def test_force_coupling(self) -> None:
        '''Tests that the kinetic coupling scales the force by s_i.'''
        ensemble = particle_sim.make_ensemble(np.array([1.0]), np.array([2.0]), TWO_PI, 0)
        displayed = SdeParams(dt=0.01, kernel=KERNEL_GLOBAL, force=FORCE_DEFAULT, noise_on=False)
        kinetic = SdeParams(dt=0.01, kernel=KERNEL_GLOBAL, force=FORCE_DEFAULT, noise_on=False,
                            force_coupling=ForceCoupling.KINETIC)

        # Call target function
        change_displayed = float(particle_sim.em_step(ensemble, displayed).v[0]) - 2.0
        change_kinetic = float(particle_sim.em_step(ensemble, kinetic).v[0]) - 2.0

        # Assert expectations
        self.assertLess(change_displayed, 0.0)
        self.assertAlmostEqual(change_kinetic, change_displayed / TWO_PI, delta=1e-12)

    def test_noise_reproducible(self) -> None:
        '''Tests that equal seeds give bit-identical trajectories and different seeds do not.'''
        params = SdeParams(dt=0.01, kernel=particle_sim.make_particle_kernel('tent', TWO_PI, 1.0), force=FORCE_DEFAULT)
        runs = []
        for seed in (3, 3, 4):
            ensemble = random_ensemble(64)
            ensemble.seed = seed
            runs.append(particle_sim.simulate(ensemble, params, T=0.1).final)
        assert runs[0] and runs[1] and runs[2]
        assert_array_equal(runs[0].v, runs[1].v)
        assert_array_equal(runs[0].x, runs[1].x)
        self.assertFalse(np.array_equal(runs[0].v, runs[2].v))

    def test_error_dt(self) -> None:
        '''Tests that a non-positive step is rejected.'''
        with self.assertRaises(common.ConfigError) as context:
            SdeParams(dt=0.0, kernel=KERNEL_GLOBAL, force=FORCE_DEFAULT)
        self.assertEqual(context.exception.key, 'particles.dt')

class TestSimulate(unittest.TestCase):
    def setUp(self) -> None:
        self.params = SdeParams(dt=0.01, kernel=KERNEL_GLOBAL, force=FORCE_DEFAULT)

    def test_record_schedule(self) -> None:
        '''Tests the moment rows, the final snapshot and its histogram.'''
        # Call target function
        run = particle_sim.simulate(random_ensemble(100), self.params, T=0.1, record_every=3, grid=GRID_SMALL)

        # Assert expectations
        assert_allclose([row.t for row in run.moments], [0.0, 0.03, 0.06, 0.09, 0.1], atol=1e-12)
        self.assertEqual(len(run.snapshots), 1)
        self.assertEqual(len(run.densities), 1)
        self.assertEqual(run.snapshots[0].step, 10)

    def test_snapshot_schedule(self) -> None:
        '''Tests that snapshots are taken every snapshot_every steps and at the end.'''
        run = particle_sim.simulate(random_ensemble(100), self.params, T=0.1, snapshot_every=4)
        self.assertEqual([snapshot.step for snapshot in run.snapshots], [0, 4, 8, 10])
        self.assertEqual(run.densities, [])

    def test_error_record_every(self) -> None:
        '''Tests that a zero record interval is rejected.'''
        with self.assertRaises(common.ConfigError):
            particle_sim.simulate(random_ensemble(10), self.params, T=0.1, record_every=0)

class TestMakeEnsemble(unittest.TestCase):
    def test_defaults(self) -> None:
        '''Tests equal masses and positions reduced mod L.'''
        ensemble = particle_sim.make_ensemble(np.array([-1.0, 7.0]), np.array([0.0, 1.0]), TWO_PI, 9)
        assert_array_equal(ensemble.m, [0.5, 0.5])
        assert_allclose(ensemble.x, [TWO_PI - 1.0, 7.0 - TWO_PI])
        self.assertEqual((ensemble.seed, ensemble.step, ensemble.N), (9, 0, 2))

    def test_errors(self) -> None:
        '''Tests the rejected agent lists.'''
        cases = [(np.array([]), np.array([]), None),
                 (np.zeros(2), np.zeros(3), None),
                 (np.zeros(2), np.zeros(2), np.array([1.5, -0.5])),
                 (np.zeros(2), np.zeros(2), np.array([0.25, 0.25]))]
        for x, v, m in cases:
            with self.assertRaises(ValueError):
                particle_sim.make_ensemble(x, v, TWO_PI, 0, m=m)

class TestSampleEnsemble(unittest.TestCase):
    def setUp(self) -> None:
        setup = make_test_setup()
        self.state = kinetic_solver.init_state(setup, 'two_bump')

    def test_sampling(self) -> None:
        '''Tests reproducibility, the phase-space window and the momentum of the sample.'''
        # Call target function
        ensemble = particle_sim.sample_ensemble(self.state, GRID_SMALL, 5000, seed=3)

        # Assert expectations
        again = particle_sim.sample_ensemble(self.state, GRID_SMALL, 5000, seed=3)
        assert_array_equal(ensemble.x, again.x)
        assert_array_equal(ensemble.v, again.v)
        self.assertTrue(np.all((ensemble.x >= 0.0) & (ensemble.x < TWO_PI)))
        self.assertTrue(np.all(np.abs(ensemble.v) <= GRID_SMALL.Vmax))
        assert_array_equal(ensemble.m, np.full(5000, 1.0 / 5000))
        self.assertLess(abs(float(np.sum(ensemble.m * ensemble.v))), 0.1)

    def test_error_no_mass(self) -> None:
        '''Tests that an empty density cannot be sampled.'''
        with self.assertRaises(ValueError):
            particle_sim.sample_ensemble(kinetic_solver.KineticState(f=np.zeros((16, 64))), GRID_SMALL, 10, 0)

class TestEmpiricalDensity(unittest.TestCase):
    def test_unit_mass(self) -> None:
        '''Tests that raw and smoothed histograms carry unit mass.'''
        ensemble = random_ensemble(2000)
        for smooth in (False, True):
            # Call target function
            density = particle_sim.empirical_density(ensemble, GRID_SMALL, smooth=smooth)

            # Assert expectations
            self.assertAlmostEqual(density.state.mass(GRID_SMALL), 1.0, places=12)
            self.assertTrue(np.all(density.state.f >= 0.0))
            self.assertAlmostEqual(density.lost_mass, 0.0, places=12)
            self.assertEqual(density.bandwidth_v > 0.0, smooth)

    def test_lost_mass(self) -> None:
        '''Tests that agents outside the velocity window are reported as lost mass.'''
        ensemble = particle_sim.make_ensemble(np.array([1.0, 2.0]), np.array([0.0, 10.0]), TWO_PI, 0)
        density = particle_sim.empirical_density(ensemble, GRID_SMALL)
        self.assertAlmostEqual(density.lost_mass, 0.5)
        self.assertAlmostEqual(density.state.mass(GRID_SMALL), 1.0, places=12)

class TestEmpiricalMoments(unittest.TestCase):
    def test_values(self) -> None:
        '''Tests momentum, kinetic energy and max speed.'''
        ensemble = particle_sim.make_ensemble(np.zeros(4), np.array([1.0, -2.0, 3.0, 0.0]), TWO_PI, 0)
        moments = particle_sim.empirical_moments(ensemble, bins=3)
        self.assertEqual(moments.row(), [0.0, 0.5, 1.75, 3.0])
        self.assertAlmostEqual(float(np.sum(moments.speed_counts)), 1.0)

class TestEnsembleFile(unittest.TestCase):
    def test_round_trip(self) -> None:
        '''Tests that an ensemble file restores every agent exactly.'''
        ensemble = random_ensemble(20, seed=11)
        ensemble.t = 0.7
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, constants.FILE_ENSEMBLE.format(index=0))

            # Call target function
            particle_sim.write_ensemble(path, ensemble)
            restored = particle_sim.read_ensemble(path)

        # Assert expectations
        assert_array_equal(restored.x, ensemble.x)
        assert_array_equal(restored.v, ensemble.v)
        assert_array_equal(restored.m, ensemble.m)
        self.assertEqual((restored.L, restored.t, restored.seed), (TWO_PI, 0.7, 11))

    def test_error_format(self) -> None:
        '''Tests that a wrong magic, a short body or bad masses are rejected.'''
        bodies = ['FPPX\n1 6.28 0 1\n1 0 0\n',
                  'FPP1\n2 6.28 0 1\n1 0 0\n',
                  'FPP1\n1 6.28\n1 0 0\n',
                  'FPP1\n1 6.28 0 1\n0.5 0 0\n']
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'bad.fpp')
            for body in bodies:
                with open(path, 'w', encoding='utf-8') as file:
                    file.write(body)
                with self.assertRaises(particle_sim.EnsembleFormatError, msg=body):
                    particle_sim.read_ensemble(path)

    def test_error_missing_file(self) -> None:
        '''Tests that a missing file raises FileNotFoundError.'''
        with self.assertRaises(FileNotFoundError):
            particle_sim.read_ensemble('/mock/missing/ensemble.fpp')

    def test_moments_csv(self) -> None:
        '''Tests the moments CSV header and row count.'''
        rows = [particle_sim.empirical_moments(random_ensemble(10))]
        text = particle_sim.format_moments(rows)
        lines = text.splitlines()
        self.assertEqual(lines[0], ','.join(constants.MOMENT_COLUMNS))
        self.assertEqual(len(lines), 2)
        self.assertTrue(math.isfinite(float(lines[1].split(',')[1])))
