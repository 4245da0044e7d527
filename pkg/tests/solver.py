import json

import numpy as np

from linepack import ImproperlyConfigured
from pumphouse.solver import AUGMENTED_LAGRANGIAN
from pumphouse.solver import INFEASIBLE
from pumphouse.solver import INTERIOR_POINT
from pumphouse.solver import MAX_ITER
from pumphouse.solver import OPTIMAL
from pumphouse.solver import FunctionProblem
from pumphouse.solver import LimitedMemoryBFGS
from pumphouse.solver import SolverConfig
from pumphouse.solver import kkt_residual
from pumphouse.solver import random_feasible_init
from pumphouse.solver import refine
from pumphouse.solver import solve
from pumphouse.solver import sweep
from pumphouse.solver import tomllib

from .base import BaseTestCase
from .base import TempDirTestCase
from .base import skip_if


def small_qp(lower=None, upper=None, scale=1.):
    """min (x0 - 2)^2 + (x1 - 1)^2  s.t.  x0 + x1 = 1; solution (1, 0)."""
    return FunctionProblem(
        2,
        objective=lambda x: scale * ((x[0] - 2.) ** 2 + (x[1] - 1.) ** 2),
        gradient=lambda x: scale * np.array([2. * (x[0] - 2.),
                                             2. * (x[1] - 1.)]),
        eq=lambda x: np.array([x[0] + x[1] - 1.]),
        eq_jac=lambda x: np.array([[1., 1.]]),
        lower=lower, upper=upper)


SPD = np.array([[4., 1., 0.], [1., 3., 1.], [0., 1., 2.]])
SPD_RHS = np.array([1., -2., 3.])


def convex_quadratic(scale=1.):
    """min 1/2 x^T A x - b^T x for a fixed 3 x 3 SPD matrix A."""
    return FunctionProblem(
        3,
        objective=lambda x: scale * (.5 * x @ SPD @ x - SPD_RHS @ x),
        gradient=lambda x: scale * (SPD @ x - SPD_RHS))


def disc_rosenbrock():
    """Rosenbrock's function restricted to x0^2 + x1^2 <= 1.5."""
    return FunctionProblem(
        2,
        objective=lambda x: (1. - x[0]) ** 2 + 100. * (x[1] - x[0] ** 2) ** 2,
        gradient=lambda x: np.array([
            -2. * (1. - x[0]) - 400. * x[0] * (x[1] - x[0] ** 2),
            200. * (x[1] - x[0] ** 2)]),
        ineq=lambda x: np.array([x[0] ** 2 + x[1] ** 2]),
        ineq_jac=lambda x: np.array([[2. * x[0], 2. * x[1]]]),
        ineq_lower=[-np.inf], ineq_upper=[1.5],
        lower=[-2., -2.], upper=[2., 2.])


class TestProblem(BaseTestCase):
    def test_violation(self):
        problem = small_qp(lower=[0., 0.], upper=[3., 3.])
        self.assertEqual(problem.m_eq, 1)
        self.assertEqual(problem.violation([1., 0.]), 0.)
        self.assertAlmostEqual(problem.violation([1., 1.]), 1.)
        self.assertAlmostEqual(problem.violation([4., -3.]), 3.)

    def test_bounds(self):
        with self.assertRaisesCtx(ImproperlyConfigured):
            small_qp(lower=[1., 1.], upper=[0., 2.])
        with self.assertRaisesCtx(ImproperlyConfigured):
            small_qp(lower=[0.])

    def test_random_init(self):
        problem = small_qp(lower=[0., -np.inf], upper=[1., 5.])
        x = random_feasible_init(problem, seed=4, margin=.1)
        self.assertTrue(.1 <= x[0] <= .9)
        self.assertTrue(x[1] < 5.)
        self.assertArrayAlmostEqual(random_feasible_init(problem, seed=4,
                                                         margin=.1), x)

    def test_random_init_without_interior(self):
        problem = FunctionProblem(1, objective=lambda x: x[0] ** 2,
                                  gradient=lambda x: 2. * x,
                                  lower=[1.], upper=[1.])
        with self.assertRaisesCtx(ImproperlyConfigured):
            random_feasible_init(problem)
        with self.assertRaisesCtx(ImproperlyConfigured):
            solve(problem)
        # An explicit starting point is still accepted.
        result = solve(problem, SolverConfig(max_iter=200), [1.])
        self.assertEqual(result.status, OPTIMAL)
        self.assertArrayAlmostEqual(result.x, [1.], tol=1e-12)

    def test_lagrangian_hessian(self):
        problem = disc_rosenbrock()
        x = np.array([.3, -.7])
        H = problem.lagrangian_hessian(x, None, np.array([2.5]), .5).toarray()
        expected = .5 * np.array([
            [2. - 400. * (x[1] - 3. * x[0] ** 2), -400. * x[0]],
            [-400. * x[0], 200.]]) + 2.5 * 2. * np.eye(2)
        self.assertArrayAlmostEqual(H, expected, tol=1e-6)
        self.assertArrayAlmostEqual(H, H.T, tol=1e-12)

    def test_kkt_residual(self):
        report = kkt_residual(small_qp(), np.array([1., 0.]))
        self.assertTrue(report.stationarity < 1e-10)
        self.assertEqual(report.violation, 0.)
        # Multiplier of the equality: grad f = (-2, -2) = -nu (1, 1).
        self.assertArrayAlmostEqual(report.multipliers, [2.], tol=1e-10)
        report = kkt_residual(small_qp(), np.array([.5, .5]))
        self.assertTrue(report.stationarity > .1)


class TestLimitedMemoryBFGS(BaseTestCase):
    def test_secant(self):
        H = LimitedMemoryBFGS(memory=3)
        H.initialize(3, 'hess')
        A = np.diag([1., 2., 4.])
        rng = np.random.default_rng(0)
        for _ in range(3):
            s = rng.normal(size=3)
            H.update(s, A @ s)
        # The newest pair satisfies the secant equation exactly.
        self.assertArrayAlmostEqual(H.dot(s), A @ s, tol=1e-10)
        B = H.get_matrix()
        self.assertArrayAlmostEqual(B, B.T, tol=1e-10)
        self.assertTrue(np.all(np.linalg.eigvalsh(B) > 0))
        self.assertEqual(len(H.pairs), 3)

    def test_hessian_only(self):
        with self.assertRaisesCtx(ImproperlyConfigured):
            LimitedMemoryBFGS().initialize(2, 'inv_hess')


class TestSolve(BaseTestCase):
    def test_interior_point(self):
        result = solve(small_qp(), SolverConfig(), [0., 0.])
        self.assertEqual(result.status, OPTIMAL)
        self.assertTrue(result.success)
        self.assertArrayAlmostEqual(result.x, [1., 0.], tol=1e-8)
        self.assertAlmostEqual(result.objective, 2., places=8)
        self.assertTrue(result.violation <= 1e-8)
        self.assertTrue(result.history)
        self.assertEqual(result.history[0]['engine'], INTERIOR_POINT)
        self.assertTrue(result.seed is None)
        report = kkt_residual(small_qp(), result.x)
        self.assertArrayAlmostEqual(report.multipliers, [2.], tol=1e-8)

    def test_convex_quadratic(self):
        expected = np.linalg.solve(SPD, SPD_RHS)
        for method in (INTERIOR_POINT, AUGMENTED_LAGRANGIAN):
            result = solve(convex_quadratic(), SolverConfig(method=method),
                           np.zeros(3))
            self.assertEqual(result.status, OPTIMAL)
            self.assertArrayAlmostEqual(result.x, expected, tol=1e-10)

    def test_objective_scaling(self):
        for build, start in ((convex_quadratic, np.zeros(3)),
                             (small_qp, np.zeros(2))):
            base = solve(build(), SolverConfig(), start)
            scaled = solve(build(scale=10.), SolverConfig(), start)
            self.assertEqual(scaled.status, OPTIMAL)
            self.assertArrayAlmostEqual(scaled.x, base.x, tol=1e-6)
            self.assertAlmostEqual(scaled.objective, 10. * base.objective,
                                   places=6)

    def test_nonlinear_inequality(self):
        result = solve(disc_rosenbrock(), SolverConfig(seed=2))
        self.assertEqual(result.status, OPTIMAL)
        self.assertAlmostEqual(result.x @ result.x, 1.5, places=8)
        steps = [h for h in result.history if h['engine'] == INTERIOR_POINT]
        self.assertTrue(len(steps) > 1)
        # Every accepted step decreases the merit function.
        for entry in steps:
            slack = 1e-10 * (1. + abs(entry['merit_start']))
            self.assertTrue(entry['merit'] <= entry['merit_start'] + slack,
                            entry)
        # Same answer with the limited-memory Hessian.
        other = solve(disc_rosenbrock(), SolverConfig(seed=2,
                                                      hessian='lbfgs'))
        self.assertEqual(other.status, OPTIMAL)
        self.assertArrayAlmostEqual(other.x, result.x, tol=1e-6)

    def test_refine(self):
        problem = small_qp()
        x = refine(problem, np.array([1. + 1e-4, -2e-4]), SolverConfig())
        self.assertArrayAlmostEqual(x, [1., 0.], tol=1e-12)
        # Active bounds stay fixed: the bounded optimum is (1, 0) on x1 = 0.
        problem = small_qp(lower=[-5., 0.], upper=[5., 5.])
        x = refine(problem, np.array([1. - 1e-7, 1e-7]), SolverConfig())
        self.assertArrayAlmostEqual(x, [1., 0.], tol=1e-12)

    def test_iteration_limit(self):
        result = solve(disc_rosenbrock(), SolverConfig(max_iter=1,
                                                       restarts=0))
        self.assertEqual(result.status, MAX_ITER)
        self.assertTrue(result.iterations >= 1)

    def test_augmented_lagrangian(self):
        config = SolverConfig(method=AUGMENTED_LAGRANGIAN, kkt_tol=1e-5)
        result = solve(small_qp(lower=[-5., -5.], upper=[5., 5.]), config)
        self.assertEqual(result.status, OPTIMAL)
        self.assertArrayAlmostEqual(result.x, [1., 0.], tol=1e-4)
        self.assertEqual(result.seed, 0)
        self.assertEqual(result.history[0]['engine'], AUGMENTED_LAGRANGIAN)

    def test_infeasible(self):
        # x0 >= 2 contradicts x0 + x1 = 1 with x1 in [0, 1].
        problem = small_qp(lower=[2., 0.], upper=[5., 1.])
        config = SolverConfig(method=AUGMENTED_LAGRANGIAN, max_outer=6,
                              restarts=0)
        result = solve(problem, config)
        self.assertEqual(result.status, INFEASIBLE)
        self.assertFalse(result.success)
        self.assertTrue(result.violation > .5)
        self.assertTrue('cannot be satisfied' in result.message)

    def test_bad_start(self):
        with self.assertRaisesCtx(Exception):
            solve(small_qp(), SolverConfig(), [0., 0., 0.])

    def test_to_dict(self):
        result = solve(small_qp(), SolverConfig(kkt_tol=1e-5), [0., 0.])
        data = result.to_dict()
        for key in ('status', 'objective', 'objective_main',
                    'objective_smoothing', 'violation', 'kkt_residual',
                    'iterations', 'restarts', 'wall_time', 'message',
                    'seed'):
            self.assertTrue(key in data, key)
        json.dumps(data)

    def test_sweep(self):
        config = SolverConfig(method=AUGMENTED_LAGRANGIAN, kkt_tol=1e-5)
        results = sweep(lambda: small_qp(lower=[-5., -5.], upper=[5., 5.]),
                        config, seeds=[0, 1, 2], workers=2)
        self.assertEqual([r.seed for r in results], [0, 1, 2])
        for result in results:
            self.assertEqual(result.status, OPTIMAL)
            self.assertArrayAlmostEqual(result.x, [1., 0.], tol=1e-4)


class TestSolverConfig(TempDirTestCase):
    def test_defaults(self):
        config = SolverConfig()
        self.assertEqual(config.method, INTERIOR_POINT)
        self.assertEqual(config.hessian, 'differences')
        self.assertEqual(config.max_iter, 3000)
        self.assertEqual(sorted(config.to_dict()),
                         sorted(SolverConfig.defaults))

    def test_validation(self):
        for kwargs in ({'method': 'newton'}, {'hessian': 'exact'},
                       {'kkt_tol': 0.}, {'max_iter': 0},
                       {'barrier_reduction': 1.5}, {'penalty_factor': 1.},
                       {'init_margin': .5}, {'fraction_to_boundary': 1.},
                       {'bound_push': .5}, {'regularization': 0.},
                       {'colour': 'red'}):
            with self.assertRaisesCtx(ImproperlyConfigured):
                SolverConfig(**kwargs)

    def test_replace(self):
        config = SolverConfig(max_iter=10)
        other = config.replace(seed=7)
        self.assertEqual((other.max_iter, other.seed), (10, 7))
        self.assertEqual(config.seed, 0)

    def test_json_file(self):
        filename = self.path('solver.json')
        with open(filename, 'w') as fh:
            json.dump({'solver': {'kkt_tol': 1e-7, 'restarts': 1}}, fh)
        config = SolverConfig.from_file(filename)
        self.assertEqual((config.kkt_tol, config.restarts), (1e-7, 1))

        with open(filename, 'w') as fh:
            fh.write('{"kkt_tol": ')
        with self.assertRaisesCtx(ImproperlyConfigured):
            SolverConfig.from_file(filename)
        with self.assertRaisesCtx(ImproperlyConfigured):
            SolverConfig.from_dict([1, 2])

    @skip_if(tomllib is None, 'TOML support not available')
    def test_toml_file(self):
        filename = self.path('solver.toml')
        with open(filename, 'w') as fh:
            fh.write('[solver]\nmethod = "augmented-lagrangian"\n'
                     'max_iter = 50\n')
        config = SolverConfig.from_file(filename)
        self.assertEqual(config.method, AUGMENTED_LAGRANGIAN)
        self.assertEqual(config.max_iter, 50)

        with open(filename, 'w') as fh:
            fh.write('[solver\n')
        with self.assertRaisesCtx(ImproperlyConfigured):
            SolverConfig.from_file(filename)
