import numpy as np

from linepack import *
from pumphouse.simulate import quasi_static_setpoints
from pumphouse.solver import INFEASIBLE
from pumphouse.solver import OPTIMAL
from pumphouse.solver import Problem
from pumphouse.solver import SolverConfig
from pumphouse.solver import restore
from pumphouse.solver import solve
from pumphouse.solver import steady_feasible_init
from pumphouse.solver import sweep
from pumphouse.transcribe import ETC
from pumphouse.transcribe import MASS
from pumphouse.transcribe import MLS
from pumphouse.transcribe import PERIODIC
from pumphouse.transcribe import CollocationSolution
from pumphouse.transcribe import NlpLayout
from pumphouse.transcribe import OcpSpec
from pumphouse.transcribe import build_nlp
from pumphouse.transcribe import check_gradients
from pumphouse.transcribe import etc_objective
from pumphouse.transcribe import mls_objective
from pumphouse.transcribe import smoothing_penalty

from .base import BaseTestCase
from .base import constant_scenario
from .base import load_network
from .base import load_scenario
from .base import prepare


class TestLayout(BaseTestCase):
    def test_pack(self):
        layout = NlpLayout(2, 3, 1, 0, 2)
        self.assertEqual(layout.n, 18)
        self.assertEqual(layout.index('phi', 1, 2), 6 + 3 + 2)
        self.assertEqual(layout.block('alpha'), slice(15, 18))
        rho = np.arange(6.).reshape(2, 3)
        phi = 10 + np.arange(9.).reshape(3, 3)
        alpha = np.ones((1, 3))
        x = layout.pack(rho, phi, alpha, np.zeros((0, 3)))
        v = layout.unpack(x)
        self.assertArrayAlmostEqual(v.phi, phi)
        self.assertEqual(v.d.shape, (0, 3))
        with self.assertRaisesCtx(DomainError):
            layout.unpack(np.zeros(17))
        with self.assertRaisesCtx(DomainError):
            layout.pack(rho, phi, np.ones((2, 3)), np.zeros((0, 3)))


class TestOcpSpec(BaseTestCase):
    def setUp(self):
        super(TestOcpSpec, self).setUp()
        self.net = load_network('chain5.json')
        self.refined, self.mats = prepare(self.net)
        self.etc = load_scenario(self.net, 'chain5_etc.json')
        self.mls = load_scenario(self.net, 'chain5_mls.json')

    def spec(self, kind=ETC, scenario=None, **kwargs):
        return OcpSpec(kind, self.refined, self.mats, scenario or self.etc,
                       **kwargs)

    def test_defaults(self):
        spec = self.spec()
        self.assertEqual(spec.N, 25)
        self.assertEqual(spec.mu, 25.)
        self.assertEqual(spec.terminal, PERIODIC)
        self.assertEqual(spec.shed, [])
        spec = self.spec('MLS', self.mls, N=8, mu=0)
        self.assertEqual(spec.kind, MLS)
        self.assertEqual(spec.shed, ['n5'])
        self.assertEqual(spec.mu, 0.)

    def test_invalid(self):
        for kwargs in ({'kind': 'cheapest'},
                       {'terminal': 'free'},
                       {'mu': -1.},
                       {'shed': ['n5']},
                       {'kind': MLS},
                       {'kind': MLS, 'scenario': self.mls, 'shed': ['n1']}):
            with self.assertRaisesCtx(ImproperlyConfigured):
                self.spec(**kwargs)
        with self.assertRaisesCtx(UnsupportedOrder):
            self.spec(N=1)
        with self.assertRaisesCtx(DomainError):
            self.spec(scenario=self.etc.with_horizon(0.))
        with self.assertRaisesCtx(ValidationError):
            self.spec(scenario=self.etc.with_controls({'c7': 1.1}))


class TestNlpSize(BaseTestCase):
    def test_chain(self):
        net = load_network('chain5.json')
        refined, mats = prepare(net)
        scenario = load_scenario(net, 'chain5_etc.json')
        nlp = build_nlp(OcpSpec(ETC, refined, mats, scenario, N=4))
        # (M + E + C) (N + 1) variables; dynamics plus periodicity rows.
        self.assertEqual(nlp.n, 45)
        self.assertEqual(nlp.m_eq, 49)
        self.assertEqual(nlp.m_ineq, 5)
        self.assertEqual(len(nlp.times), 5)
        self.assertAlmostEqual(nlp.times[-1], scenario.horizon)

        nlp = build_nlp(OcpSpec(ETC, refined, mats, scenario, N=4,
                                terminal=MASS))
        self.assertEqual(nlp.m_eq, 42)

        x = nlp.steady_point(alpha=[1.3])
        J = nlp.jacobian(x)
        self.assertEqual(J.shape, (47, 45))
        self.assertTrue(0 < J.nnz <= nlp.nnz)
        rows, cols = nlp.structure()
        self.assertEqual(len(rows), nlp.nnz)
        self.assertTrue(0 < nlp.density < 1)

    def test_tree25(self):
        net = load_network('tree25.json')
        refined, mats = prepare(net)
        nlp = build_nlp(OcpSpec(ETC, refined, mats,
                                load_scenario(net, 'tree25_etc.json')))
        self.assertEqual(nlp.n, 3302)
        self.assertEqual(nlp.m_ineq, 5 * 26)
        self.assertEqual(nlp.m_eq, 122 * 26 + 127)

        nlp = build_nlp(OcpSpec(MLS, refined, mats,
                                load_scenario(net, 'tree25_mls.json')))
        self.assertEqual(nlp.n, 3354)
        self.assertEqual(nlp.spec.shed, ['18', '24'])
        # Shed withdrawals are bounded by their targets.
        d = nlp.layout.block('d')
        self.assertArrayAlmostEqual(nlp.lower[d], np.zeros(52))
        self.assertArrayAlmostEqual(nlp.upper[d], nlp.desired.ravel())


class TestNlpEvaluation(BaseTestCase):
    def setUp(self):
        super(TestNlpEvaluation, self).setUp()
        self.net = load_network('chain5.json')
        self.refined, self.mats = prepare(self.net)

    def build(self, name='chain5_etc.json', kind=ETC, **kwargs):
        scenario = load_scenario(self.net, name)
        return build_nlp(OcpSpec(kind, self.refined, self.mats, scenario,
                                 **kwargs))

    def test_random_point(self):
        nlp = self.build(N=6)
        rng = np.random.default_rng(3)
        for _ in range(5):
            x = nlp.random_point(rng)
            self.assertTrue(np.all(x > nlp.lower))
            self.assertTrue(np.all(x < nlp.upper))
            c = nlp.constraints_ineq(x)
            self.assertTrue(np.all(c >= nlp.ineq_lower))
            self.assertTrue(np.all(c <= nlp.ineq_upper))

    def test_steady_point_is_feasible(self):
        scenario = constant_scenario(self.net, withdrawals={'n5': .02},
                                     controls={'c1': 1.3}, hours=2.)
        nlp = build_nlp(OcpSpec(ETC, self.refined, self.mats, scenario, N=6))
        x = nlp.steady_point(alpha=[1.3])
        self.assertTrue(nlp.violation(x) < 1e-8, nlp.violation(x))
        v = nlp.unpack(x)
        self.assertArrayAlmostEqual(v.alpha, np.full((1, 7), 1.3))
        self.assertArrayAlmostEqual(v.phi, np.full((4, 7), .02), tol=1e-10)

        value, grad = etc_objective(nlp, x)
        m = self.refined.constants.m_exp
        eta = self.refined.efficiency[0]
        expected = (scenario.horizon * np.sqrt(.02 ** 2 + 1e-12) *
                    (1.3 ** (2 * m) - 1.) / eta)
        self.assertAlmostEqual(value, expected, places=9)
        self.assertEqual(grad.shape, (nlp.n,))
        self.assertTrue(np.all(nlp.unpack(grad).alpha > 0))

        # A constant ratio is not penalized.
        penalty, grad = smoothing_penalty(nlp, x)
        self.assertAlmostEqual(penalty, 0., places=12)
        self.assertArrayAlmostEqual(grad, np.zeros(nlp.n), tol=1e-9)

    def test_smoothing_penalty(self):
        nlp = self.build(N=6, mu=2.)
        x = nlp.steady_point(alpha=[1.2])
        v = nlp.unpack(x)
        T = nlp.horizon
        # alpha(t) = 1.2 + 0.1 t / T has slope 0.1 / T everywhere.
        v.alpha[0] = 1.2 + .1 * nlp.times / T
        value, _ = smoothing_penalty(nlp, x)
        self.assertAlmostEqual(value, 2. * (.1 / T) ** 2 * T, places=12)

    def test_gradients_etc(self):
        nlp = self.build(N=4)
        x = nlp.random_point(np.random.default_rng(0))
        report = check_gradients(nlp, x, samples=120)
        self.assertTrue(report.passed, report)
        self.assertEqual(report.entries, 120)
        self.assertEqual(sorted(report.to_dict()),
                         ['density', 'entries', 'jacobian_error',
                          'objective_error', 'passed'])

    def test_gradients_mls_mass(self):
        nlp = self.build('chain5_mls.json', MLS, N=4, terminal=MASS)
        x = nlp.random_point(np.random.default_rng(1))
        report = check_gradients(nlp, x, samples=10000)
        self.assertTrue(report.passed, report)
        self.assertTrue(0 < report.entries <= nlp.nnz)

    def test_random_point_sheds_from_targets(self):
        nlp = self.build('chain5_mls.json', MLS, N=4)
        x = nlp.random_point(np.random.default_rng(2))
        self.assertArrayAlmostEqual(nlp.unpack(x).d, .99 * nlp.desired)
        self.assertTrue(np.all(x > nlp.lower))
        self.assertTrue(np.all(x < nlp.upper))

    def test_lagrangian_hessian(self):
        rng = np.random.default_rng(5)
        for nlp in (self.build(N=4, mu=.5),
                    self.build('chain5_mls.json', MLS, N=4, terminal=MASS)):
            x = nlp.random_point(rng)
            lam_eq = rng.standard_normal(nlp.m_eq)
            lam_ineq = rng.standard_normal(nlp.m_ineq)
            H = nlp.lagrangian_hessian(x, lam_eq, lam_ineq, .7).toarray()
            expected = Problem.lagrangian_hessian(
                nlp, x, lam_eq, lam_ineq, .7).toarray()
            self.assertArrayAlmostEqual(H, H.T, tol=1e-12)
            scale = max(1., np.max(np.abs(expected)))
            self.assertArrayAlmostEqual(H, expected, tol=1e-4 * scale)

    def test_mls_objective(self):
        nlp = self.build('chain5_mls.json', MLS, N=4)
        x = nlp.steady_point(alpha=[1.6], margin=.01)
        v = nlp.unpack(x)
        self.assertArrayAlmostEqual(v.d, .99 * nlp.desired)
        value, grad = mls_objective(nlp, x)
        wq = nlp.horizon / 2. * nlp.grid.weights
        expected = np.sum(wq * (.01 * nlp.desired) ** 2)
        self.assertAlmostEqual(value, expected, places=12)
        self.assertTrue(np.all(nlp.unpack(grad).d < 0))
        main, smooth = nlp.objective_parts(x)
        self.assertAlmostEqual(main, value)
        self.assertAlmostEqual(nlp.objective(x), main + smooth)


class TestCollocationSolution(BaseTestCase):
    def setUp(self):
        super(TestCollocationSolution, self).setUp()
        self.net = load_network('chain5.json')
        self.refined, self.mats = prepare(self.net)
        scenario = constant_scenario(self.net, withdrawals={'n5': .02},
                                     controls={'c1': 1.3}, hours=2.)
        self.nlp = build_nlp(OcpSpec(ETC, self.refined, self.mats, scenario,
                                     N=6))
        self.solution = CollocationSolution(
            self.nlp, self.nlp.steady_point(alpha=[1.3]))

    def test_interpolation(self):
        sol = self.solution
        T = sol.horizon
        state = sol.state_at(T / 3)
        self.assertArrayAlmostEqual(state.rho, sol.rho[:, 0], tol=1e-10)
        self.assertArrayAlmostEqual(sol.alpha_at(T / 2), [1.3])
        self.assertArrayAlmostEqual(sol.withdrawal_at(0.),
                                    [0., 0., 0., .02])
        data = sol.sample(np.linspace(0., T, 11))
        self.assertEqual(list(data), ['t', 'rho', 'phi', 'alpha', 'd'])
        self.assertEqual(data['rho'].shape, (11, 4))
        self.assertEqual(data['alpha'].shape, (11, 1))
        self.assertEqual(data['d'].shape, (11, 4))

    def test_periodicity(self):
        report = self.solution.periodicity()
        self.assertEqual(sorted(report), ['alpha', 'd', 'mass', 'phi', 'rho'])
        for key, value in report.items():
            self.assertTrue(value < 1e-12, key)
        mass = self.solution.line_pack()
        self.assertEqual(mass.shape, (7,))

    def test_to_dict(self):
        data = self.solution.to_dict()
        self.assertEqual(data['N'], 6)
        self.assertEqual(list(data['rho']), ['n2', 'n3', 'n4', 'n5'])
        self.assertEqual(list(data['alpha']), ['c1'])
        self.assertEqual(len(data['tau']), 7)
        self.assertAlmostEqual(data['times_hours'][-1], 2.)
        self.assertEqual(data['d'], {})


class TestCompressionSolve(BaseTestCase):
    """Economic compression on the desk chain, N=10."""
    def setUp(self):
        super(TestCompressionSolve, self).setUp()
        self.net = load_network('chain5.json')
        self.refined, self.mats = prepare(self.net)
        self.scenario = load_scenario(self.net, 'chain5_etc.json')

    def build(self):
        return build_nlp(OcpSpec(ETC, self.refined, self.mats, self.scenario,
                                 N=10))

    def test_seeds_agree_and_beat_constant_ratio(self):
        results = sweep(self.build, SolverConfig(), seeds=range(5))
        for result in results:
            self.assertEqual(result.status, OPTIMAL, result)
            self.assertTrue(result.violation <= 1e-8)
            self.assertTrue(result.kkt <= 1e-6)
        objectives = np.array([r.objective_main for r in results])
        spread = np.max(objectives) - np.min(objectives)
        self.assertTrue(spread <= 1e-4 * np.min(objectives), objectives)

        solution = CollocationSolution(self.build(), results[0].x)
        for key, value in solution.periodicity().items():
            self.assertTrue(value < 1e-6, key)

        # Cheapest constant ratio on the grid 1, 1.005, ..., 1.6 near its
        # feasibility threshold.
        oracle = quasi_static_setpoints(
            self.refined, self.mats, self.scenario,
            grid=1. + .005 * np.arange(26, 34))
        self.assertTrue(oracle.feasible)
        self.assertTrue(np.max(objectives) <= oracle.objective,
                        (objectives, oracle.objective))

    def test_steady_start(self):
        nlp = self.build()
        result = solve(nlp, SolverConfig(), steady_feasible_init(nlp))
        self.assertNotEqual(result.status, INFEASIBLE)
        self.assertEqual(result.status, OPTIMAL, result)

    def test_restoration_from_steady_start(self):
        nlp = self.build()
        x = steady_feasible_init(nlp)
        self.assertTrue(nlp.violation(x) > 1e-6)
        restored = restore(nlp, x, SolverConfig())
        self.assertFalse(restored.infeasible)
        self.assertTrue(restored.violation <= 1e-8, restored.violation)
