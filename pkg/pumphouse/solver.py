"""
Large sparse nonlinear programming.

The main engine is a primal-dual interior point method. Inequalities get
slack variables, bounds are handled by logarithmic barriers and every
Newton step solves the symmetric indefinite KKT system, regularized until
its inertia is right. Steps are globalized by a backtracking line search
on an exact-penalty merit function with a second-order correction.
Second derivatives come from differencing the Lagrangian gradient (or
from a limited-memory BFGS approximation). An augmented Lagrangian method
with bound constrained L-BFGS-B inner solves takes over when the interior
point engine breaks down.

Every answer is checked independently: first-order (KKT) conditions are
re-measured with bound-constrained least-squares multipliers, feasible
points get Newton refinement on their active set, and points that fail
feasibility go through a restoration phase that decides whether the
problem is infeasible.
"""
from collections import deque
import collections
import concurrent.futures
import json
import logging
import time

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.optimize import HessianUpdateStrategy
from scipy.optimize import least_squares
from scipy.optimize import lsq_linear
from scipy.optimize import minimize
from scipy.sparse.linalg import lsqr
from scipy.sparse.linalg import splu

try:
    import tomllib
except ImportError:
    try:
        import tomli as tomllib
    except ImportError:
        tomllib = None

from linepack import DomainError
from linepack import ImproperlyConfigured
from linepack import LinepackException
from linepack import StateDomainError
from linepack import StructuralError


logger = logging.getLogger('linepack.solver')

OPTIMAL = 'optimal'
MAX_ITER = 'max-iter'
INFEASIBLE = 'infeasible-detected'
NUMERICAL_FAILURE = 'numerical-failure'

INTERIOR_POINT = 'interior-point'
AUGMENTED_LAGRANGIAN = 'augmented-lagrangian'
RESTORATION = 'restoration'
HESSIANS = ('differences', 'lbfgs')


class NumericalFailure(LinepackException): pass


class Problem(object):
    """
    Smooth nonlinear program

        min f(x)  s.t.  c_E(x) = 0,  lo_I <= c_I(x) <= hi_I,
                        lower <= x <= upper.

    Subclasses implement the evaluation methods. Jacobians are returned as
    sparse matrices.
    """
    def __init__(self, n, lower=None, upper=None, m_eq=0, ineq_lower=None,
                 ineq_upper=None):
        self.n = int(n)
        self.lower = (np.full(self.n, -np.inf) if lower is None else
                      np.asarray(lower, dtype=float).copy())
        self.upper = (np.full(self.n, np.inf) if upper is None else
                      np.asarray(upper, dtype=float).copy())
        if self.lower.shape != (self.n,) or self.upper.shape != (self.n,):
            raise ImproperlyConfigured('bounds must have %d entries.' % n)
        if np.any(self.lower > self.upper):
            raise ImproperlyConfigured('lower bounds exceed upper bounds.')
        self.m_eq = int(m_eq)
        self.ineq_lower = (np.zeros(0) if ineq_lower is None else
                           np.asarray(ineq_lower, dtype=float))
        self.ineq_upper = (np.full(len(self.ineq_lower), np.inf)
                           if ineq_upper is None else
                           np.asarray(ineq_upper, dtype=float))
        self.m_ineq = len(self.ineq_lower)

    def objective(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def objective_parts(self, x):
        return self.objective(x), 0.

    def constraints_eq(self, x):
        return np.zeros(0)

    def jacobian_eq(self, x):
        return sp.csr_matrix((0, self.n))

    def constraints_ineq(self, x):
        return np.zeros(0)

    def jacobian_ineq(self, x):
        return sp.csr_matrix((0, self.n))

    def lagrangian_gradient(self, x, lam_eq=None, lam_ineq=None,
                            obj_factor=1.):
        """obj_factor * grad f + J_E^T lam_eq + J_I^T lam_ineq."""
        g = obj_factor * self.gradient(x)
        if self.m_eq and lam_eq is not None:
            g = g + self.jacobian_eq(x).T @ lam_eq
        if self.m_ineq and lam_ineq is not None:
            g = g + self.jacobian_ineq(x).T @ lam_ineq
        return np.asarray(g, dtype=float).reshape(-1)

    def lagrangian_hessian(self, x, lam_eq=None, lam_ineq=None,
                           obj_factor=1.):
        """
        Hessian of the Lagrangian by central differences of its gradient,
        one column per variable. Structured problems override this.
        """
        x = np.asarray(x, dtype=float)
        H = np.empty((self.n, self.n))
        steps = 6e-6 * np.maximum(1., np.abs(x))
        for j in range(self.n):
            e = np.zeros(self.n)
            e[j] = steps[j]
            H[:, j] = (self.lagrangian_gradient(x + e, lam_eq, lam_ineq,
                                                obj_factor) -
                       self.lagrangian_gradient(x - e, lam_eq, lam_ineq,
                                                obj_factor)) / (2. * steps[j])
        return sp.csr_matrix(.5 * (H + H.T))

    def violation(self, x):
        """Largest violation of any constraint or bound (inf off-domain)."""
        x = np.asarray(x, dtype=float)
        try:
            worst = float(np.max(np.abs(self.constraints_eq(x)), initial=0.))
            if self.m_ineq:
                c = self.constraints_ineq(x)
                worst = max(worst,
                            float(np.max(self.ineq_lower - c, initial=0.)),
                            float(np.max(c - self.ineq_upper, initial=0.)))
        except StateDomainError:
            return np.inf
        worst = max(worst, float(np.max(self.lower - x, initial=0.)),
                    float(np.max(x - self.upper, initial=0.)))
        return worst if np.isfinite(worst) else np.inf


class FunctionProblem(Problem):
    """Problem assembled from plain callables."""
    def __init__(self, n, objective, gradient, eq=None, eq_jac=None,
                 ineq=None, ineq_jac=None, ineq_lower=None, ineq_upper=None,
                 lower=None, upper=None, m_eq=None):
        if m_eq is None:
            m_eq = len(eq(np.zeros(n))) if eq is not None else 0
        super(FunctionProblem, self).__init__(n, lower, upper, m_eq,
                                              ineq_lower, ineq_upper)
        self._objective = objective
        self._gradient = gradient
        self._eq, self._eq_jac = eq, eq_jac
        self._ineq, self._ineq_jac = ineq, ineq_jac

    def objective(self, x):
        return float(self._objective(x))

    def gradient(self, x):
        return np.asarray(self._gradient(x), dtype=float)

    def constraints_eq(self, x):
        if self._eq is None:
            return np.zeros(0)
        return np.atleast_1d(np.asarray(self._eq(x), dtype=float))

    def jacobian_eq(self, x):
        if self._eq is None:
            return sp.csr_matrix((0, self.n))
        return sp.csr_matrix(np.atleast_2d(self._eq_jac(x)))

    def constraints_ineq(self, x):
        if self._ineq is None:
            return np.zeros(0)
        return np.atleast_1d(np.asarray(self._ineq(x), dtype=float))

    def jacobian_ineq(self, x):
        if self._ineq is None:
            return sp.csr_matrix((0, self.n))
        return sp.csr_matrix(np.atleast_2d(self._ineq_jac(x)))


# CONFIGURATION.

class SolverConfig(object):
    defaults = {
        'method': INTERIOR_POINT,
        'hessian': 'differences',
        'memory': 10,
        'kkt_tol': 1e-6,
        'violation_tol': 1e-8,
        'max_iter': 3000,
        'restarts': 3,
        'initial_barrier': .1,
        'barrier_reduction': .2,
        'barrier_tol': 1e-11,
        'bound_push': 1e-2,
        'fraction_to_boundary': .99,
        'regularization': 1e-8,
        'dense_limit': 2000,
        'max_rejections': 50,
        'penalty': 10.,
        'penalty_factor': 10.,
        'max_outer': 30,
        'inner_max_iter': 2000,
        'max_line_search': 40,
        'restoration_max_iter': 5000,
        'polish_iter': 10,
        'active_tol': 1e-5,
        'objective_scaling': True,
        'init_margin': .01,
        'seed': 0,
        'log_every': 10,
    }

    def __init__(self, **kwargs):
        unknown = set(kwargs) - set(self.defaults)
        if unknown:
            raise ImproperlyConfigured('unknown solver option(s): %s.' %
                                       ', '.join(sorted(unknown)))
        values = dict(self.defaults)
        values.update(kwargs)
        self.__dict__.update(values)
        self.validate()

    def validate(self):
        if self.method not in (INTERIOR_POINT, AUGMENTED_LAGRANGIAN):
            raise ImproperlyConfigured('solver method must be "%s" or "%s".'
                                       % (INTERIOR_POINT,
                                          AUGMENTED_LAGRANGIAN))
        if self.hessian not in HESSIANS:
            raise ImproperlyConfigured('hessian must be one of %s.' %
                                       ', '.join(HESSIANS))
        for key in ('kkt_tol', 'violation_tol', 'initial_barrier',
                    'barrier_tol', 'bound_push', 'regularization', 'penalty',
                    'active_tol'):
            if not getattr(self, key) > 0:
                raise ImproperlyConfigured('solver option %s must be '
                                           'positive.' % key)
        for key in ('memory', 'max_iter', 'inner_max_iter', 'max_outer'):
            if int(getattr(self, key)) < 1:
                raise ImproperlyConfigured('solver option %s must be at '
                                           'least 1.' % key)
        for key in ('barrier_reduction', 'fraction_to_boundary'):
            if not (0 < getattr(self, key) < 1):
                raise ImproperlyConfigured('%s must lie in (0, 1).' % key)
        if not self.bound_push < .5:
            raise ImproperlyConfigured('bound_push must be below 0.5.')
        if self.penalty_factor <= 1:
            raise ImproperlyConfigured('penalty_factor must exceed 1.')
        if not (0 < self.init_margin < .5):
            raise ImproperlyConfigured('init_margin must lie in (0, 0.5).')

    def replace(self, **kwargs):
        values = self.to_dict()
        values.update(kwargs)
        return type(self)(**values)

    def to_dict(self):
        return dict((key, getattr(self, key)) for key in self.defaults)

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ImproperlyConfigured('solver configuration must be a '
                                       'mapping.')
        return cls(**data.get('solver', data))

    @classmethod
    def from_file(cls, filename):
        """Load options from a JSON or TOML file (``[solver]`` table)."""
        if filename.endswith('.toml'):
            if tomllib is None:
                raise ImproperlyConfigured('reading TOML needs Python 3.11 '
                                           'or the "tomli" package.')
            with open(filename, 'rb') as fh:
                try:
                    data = tomllib.load(fh)
                except tomllib.TOMLDecodeError as exc:
                    raise ImproperlyConfigured('%s: %s' % (filename, exc))
        else:
            with open(filename) as fh:
                try:
                    data = json.load(fh)
                except ValueError as exc:
                    raise ImproperlyConfigured('%s: invalid JSON (%s).' %
                                               (filename, exc))
        return cls.from_dict(data)

    def __repr__(self):
        return '<SolverConfig %s/%s kkt_tol=%g>' % (self.method, self.hessian,
                                                    self.kkt_tol)



# HESSIAN APPROXIMATIONS.

class LimitedMemoryBFGS(HessianUpdateStrategy):
    """
    Limited-memory BFGS approximation of a Hessian in compact form,

        B = delta I - Psi M^-1 Psi^T,  Psi = [delta S, Y],
        M = [[delta S^T S, L], [L^T, -D]],

    where L is the strictly lower triangle of S^T Y and D its diagonal.
    Pairs are Powell-damped so B stays positive definite, which also
    allows it to approximate constraint Hessians of either curvature.
    """
    def __init__(self, memory=10, damping=.2):
        self.memory = int(memory)
        self.damping = float(damping)

    def initialize(self, n, approx_type):
        if approx_type != 'hess':
            raise ImproperlyConfigured('LimitedMemoryBFGS approximates '
                                       'Hessians only.')
        self.n = n
        self.pairs = deque(maxlen=self.memory)
        self.delta = 1.
        self._psi = None
        self._middle = None

    def _rebuild(self):
        if not self.pairs:
            self._psi = self._middle = None
            return
        S = np.array([s for s, _ in self.pairs]).T
        Y = np.array([y for _, y in self.pairs]).T
        SY = S.T @ Y
        L = np.tril(SY, -1)
        D = np.diag(np.diag(SY))
        self._psi = np.hstack([self.delta * S, Y])
        middle = np.block([[self.delta * (S.T @ S), L], [L.T, -D]])
        self._middle = np.linalg.pinv(middle)

    def dot(self, p):
        p = np.asarray(p, dtype=float)
        out = self.delta * p
        if self._psi is not None:
            out = out - self._psi @ (self._middle @ (self._psi.T @ p))
        return out

    def get_matrix(self):
        B = self.delta * np.eye(self.n)
        if self._psi is not None:
            B -= self._psi @ self._middle @ self._psi.T
        return B

    def update(self, delta_x, delta_grad):
        s = np.asarray(delta_x, dtype=float)
        y = np.asarray(delta_grad, dtype=float)
        if not np.any(s):
            return
        Bs = self.dot(s)
        sBs = float(s @ Bs)
        sy = float(s @ y)
        if sBs > 0 and sy < self.damping * sBs:
            theta = (1. - self.damping) * sBs / (sBs - sy)
            y = theta * y + (1. - theta) * Bs
            sy = float(s @ y)
        if sy <= 1e-12 * np.linalg.norm(s) * np.linalg.norm(y) or sy <= 0:
            return
        self.pairs.append((s.copy(), y.copy()))
        self.delta = float(y @ y) / sy
        self._rebuild()


# EVALUATION.

class _Evaluator(object):
    """
    Scaled, guarded callbacks for the engines. Evaluations that leave the
    model's domain are rejected (infinite objective, huge residuals); too
    many rejections abort the solve.
    """
    def __init__(self, problem, config, f_scale=1.):
        self.problem = problem
        self.config = config
        self.f_scale = f_scale
        self.rejections = 0

    def _reject(self, exc):
        self.rejections += 1
        logger.debug('Rejected evaluation (%d): %s', self.rejections, exc)
        if self.rejections > self.config.max_rejections:
            raise NumericalFailure('more than %d evaluations left the model '
                                   'domain; last: %s' % (
                                       self.config.max_rejections, exc))

    def objective(self, x):
        try:
            value = self.problem.objective(x) / self.f_scale
        except StateDomainError as exc:
            self._reject(exc)
            return np.inf
        if np.isnan(value):
            raise NumericalFailure('objective evaluated to NaN.')
        return value

    def gradient(self, x):
        try:
            return self.problem.gradient(x) / self.f_scale
        except StateDomainError as exc:
            self._reject(exc)
            return np.zeros(self.problem.n)

    def eq(self, x):
        try:
            return self.problem.constraints_eq(x)
        except StateDomainError as exc:
            self._reject(exc)
            return np.full(self.problem.m_eq, 1e10)

    def eq_jac(self, x):
        try:
            return self.problem.jacobian_eq(x)
        except StateDomainError as exc:
            self._reject(exc)
            return sp.csr_matrix((self.problem.m_eq, self.problem.n))

    def ineq(self, x):
        try:
            return self.problem.constraints_ineq(x)
        except StateDomainError as exc:
            self._reject(exc)
            return np.full(self.problem.m_ineq, 1e10)

    def ineq_jac(self, x):
        try:
            return self.problem.jacobian_ineq(x)
        except StateDomainError as exc:
            self._reject(exc)
            return sp.csr_matrix((self.problem.m_ineq, self.problem.n))

    def lagrangian_hessian(self, x, lam_eq, lam_ineq):
        try:
            return sp.csr_matrix(self.problem.lagrangian_hessian(
                x, lam_eq, lam_ineq, 1. / self.f_scale))
        except StateDomainError as exc:
            raise NumericalFailure('Hessian evaluation left the model '
                                   'domain: %s' % exc)


def _objective_scale(problem, x, config):
    if not config.objective_scaling:
        return 1.
    g = problem.gradient(x)
    return max(1., float(np.max(np.abs(g), initial=0.)))


def _interior(problem, x):
    """Move ``x`` strictly inside the variable bounds."""
    lo, hi = problem.lower, problem.upper
    width = np.where(np.isfinite(hi - lo), hi - lo, np.inf)
    gap = np.minimum(1e-8 * np.maximum(1., np.maximum(np.abs(np.where(
        np.isfinite(lo), lo, 0.)), np.abs(np.where(np.isfinite(hi), hi,
                                                   0.)))), .1 * width)
    return np.clip(x, lo + gap, hi - gap)


def _scipy_bounds(problem):
    return [(None if not np.isfinite(lo) else lo,
             None if not np.isfinite(hi) else hi)
            for lo, hi in zip(problem.lower, problem.upper)]

# ENGINES.

EngineRun = collections.namedtuple('EngineRun', (
    'x', 'iterations', 'hit_limit', 'message', 'infeasible'))


def _inf_norm(v):
    return float(np.max(np.abs(v), initial=0.))


class _PrimalDual(object):
    """
    Primal-dual interior point iterations on

        min f(x)  s.t.  c_E(x) = 0,  c_I(x) - s = 0,
                        lower <= (x, s) <= upper,

    with s the inequality slacks. Each iteration takes the Newton
    direction of the barrier KKT conditions and backtracks until the merit
    function f - mu sum(log gaps) + nu |c| decreases sufficiently.
    """
    # Safeguard on the bound multipliers around the central path.
    kappa_sigma = 1e10

    def __init__(self, problem, config, f_scale):
        self.problem = problem
        self.config = config
        self.f_scale = f_scale
        self.ev = _Evaluator(problem, config, f_scale)
        self.n = problem.n
        self.size = problem.n + problem.m_ineq
        self.m = problem.m_eq + problem.m_ineq
        lo = np.concatenate([problem.lower, problem.ineq_lower])
        hi = np.concatenate([problem.upper, problem.ineq_upper])
        fixed = np.isfinite(lo) & (hi - lo <= 0)
        if np.any(fixed):
            room = 1e-8 * np.maximum(1., np.abs(np.where(fixed, lo, 0.)))
            lo = np.where(fixed, lo - room, lo)
            hi = np.where(fixed, hi + room, hi)
        self.lo, self.hi = lo, hi
        self.has_lo, self.has_hi = np.isfinite(lo), np.isfinite(hi)
        self.nu = 1.
        self.delta_w = 0.
        self.quasi_newton = None
        if config.hessian == 'lbfgs':
            self.quasi_newton = LimitedMemoryBFGS(config.memory)
            self.quasi_newton.initialize(self.n, 'hess')

    # Evaluation in the slack space.

    def objective(self, y):
        return self.ev.objective(y[:self.n])

    def gradient(self, y):
        return np.concatenate([self.ev.gradient(y[:self.n]),
                               np.zeros(self.problem.m_ineq)])

    def constraints(self, y):
        x = y[:self.n]
        parts = []
        if self.problem.m_eq:
            parts.append(self.ev.eq(x))
        if self.problem.m_ineq:
            parts.append(self.ev.ineq(x) - y[self.n:])
        return np.concatenate(parts) if parts else np.zeros(0)

    def jacobian(self, y):
        x = y[:self.n]
        m_eq, m_ineq = self.problem.m_eq, self.problem.m_ineq
        rows = []
        if m_eq:
            block = sp.csr_matrix(self.ev.eq_jac(x))
            if m_ineq:
                block = sp.hstack([block, sp.csr_matrix((m_eq, m_ineq))])
            rows.append(block)
        if m_ineq:
            rows.append(sp.hstack([sp.csr_matrix(self.ev.ineq_jac(x)),
                                   -sp.identity(m_ineq)]))
        if not rows:
            return sp.csr_matrix((0, self.size))
        return sp.vstack(rows, format='csr')

    def hessian(self, y, lam):
        m_eq, m_ineq = self.problem.m_eq, self.problem.m_ineq
        if self.quasi_newton is not None:
            H = sp.csr_matrix(self.quasi_newton.get_matrix())
        else:
            H = self.ev.lagrangian_hessian(y[:self.n], lam[:m_eq],
                                           lam[m_eq:])
        if m_ineq:
            H = sp.block_diag([H, sp.csr_matrix((m_ineq, m_ineq))],
                              format='csr')
        return H

    def slack_start(self, x):
        if not self.problem.m_ineq:
            return np.zeros(0)
        return np.clip(self.ev.ineq(x), self.problem.ineq_lower,
                       self.problem.ineq_upper)

    # Barrier terms.

    def push(self, y, amount):
        """Move ``y`` inside its bounds by a relative ``amount``."""
        lo, hi = self.lo, self.hi
        width = np.where(self.has_lo & self.has_hi, hi - lo, np.inf)
        p_lo = amount * np.minimum(np.maximum(1., np.abs(np.where(
            self.has_lo, lo, 0.))), width)
        p_hi = amount * np.minimum(np.maximum(1., np.abs(np.where(
            self.has_hi, hi, 0.))), width)
        return np.minimum(np.maximum(y, lo + p_lo), hi - p_hi)

    def gaps(self, y):
        return (np.where(self.has_lo, y - self.lo, 1.),
                np.where(self.has_hi, self.hi - y, 1.))

    def barrier(self, y, mu):
        gap_lo, gap_hi = self.gaps(y)
        if np.any(gap_lo <= 0) or np.any(gap_hi <= 0):
            return np.inf
        return -mu * (np.sum(np.log(gap_lo[self.has_lo])) +
                      np.sum(np.log(gap_hi[self.has_hi])))

    def merit(self, y, mu):
        f = self.objective(y)
        c = self.constraints(y)
        value = f + self.barrier(y, mu) + self.nu * np.linalg.norm(c)
        return (value if np.isfinite(value) else np.inf), f, c

    def max_step(self, y, dy, tau):
        gap_lo, gap_hi = self.gaps(y)
        alpha = 1.
        down = self.has_lo & (dy < 0)
        if np.any(down):
            alpha = min(alpha, float(np.min(-tau * gap_lo[down] / dy[down])))
        up = self.has_hi & (dy > 0)
        if np.any(up):
            alpha = min(alpha, float(np.min(tau * gap_hi[up] / dy[up])))
        return alpha

    @staticmethod
    def dual_step(z, dz, tau):
        down = dz < 0
        if not np.any(down):
            return 1.
        return min(1., float(np.min(-tau * z[down] / dz[down])))

    def error(self, y, g, c, J, lam, zl, zu, mu):
        """Scaled optimality error of the barrier problem for ``mu``."""
        gap_lo, gap_hi = self.gaps(y)
        dual = g + J.T @ lam - zl + zu
        comp = max(_inf_norm((zl * gap_lo - mu)[self.has_lo]),
                   _inf_norm((zu * gap_hi - mu)[self.has_hi]))
        bounds = int(np.sum(self.has_lo) + np.sum(self.has_hi))
        z_sum = float(np.sum(zl) + np.sum(zu))
        s_d = max(100., (float(np.sum(np.abs(lam))) + z_sum) /
                  max(1, self.m + bounds)) / 100.
        s_c = max(100., z_sum / max(1, bounds)) / 100.
        return max(_inf_norm(dual) / s_d, _inf_norm(c), comp / s_c)

    def multipliers(self, g, J, zl, zu):
        """Least-squares estimate of the constraint multipliers."""
        if not self.m:
            return np.zeros(0)
        lam = lsqr(J.T, -(g - zl + zu), atol=1e-12, btol=1e-12,
                   iter_lim=max(10 * self.size, 1000))[0]
        if _inf_norm(lam) > 1e3:
            return np.zeros(self.m)
        return lam

    # Newton direction.

    def factorize(self, W, sigma, J, delta_w, delta_c):
        """
        Factor the KKT matrix. Returns (solve, inertia_known) or None when
        the inertia is wrong or the matrix singular.
        """
        upper = W + sp.diags(sigma + delta_w)
        if self.m:
            K = sp.bmat([[upper, J.T],
                         [J, -delta_c * sp.identity(self.m)]], format='csc')
        else:
            K = sp.csc_matrix(upper)
        if self.size + self.m <= self.config.dense_limit:
            dense = K.toarray()
            _, d, _ = scipy.linalg.ldl(dense)
            eig = np.linalg.eigvalsh(d)
            if np.sum(eig > 0) != self.size or np.sum(eig < 0) != self.m:
                return None
            factors = scipy.linalg.lu_factor(dense, check_finite=False)
            return (lambda rhs: scipy.linalg.lu_solve(factors, rhs)), True
        try:
            lu = splu(K)
        except RuntimeError:
            return None
        return lu.solve, False

    def direction(self, W, sigma, J, rhs, mu):
        delta_c = self.config.regularization * mu ** .25 if self.m else 0.
        delta_w = 0.
        while delta_w <= 1e40:
            factored = self.factorize(W, sigma, J, delta_w, delta_c)
            if factored is not None:
                solve, inertia_known = factored
                sol = solve(rhs)
                dy = sol[:self.size]
                curvature = dy @ (W @ dy) + dy @ ((sigma + delta_w) * dy)
                if np.all(np.isfinite(sol)) and (
                        inertia_known or curvature >= 1e-12 * (dy @ dy)):
                    if delta_w:
                        self.delta_w = delta_w
                    return sol, solve, delta_w
            if delta_w == 0.:
                delta_w = (1e-4 if self.delta_w == 0. else
                           max(1e-20, self.delta_w / 3.))
            else:
                delta_w *= 100. if self.delta_w == 0. else 8.
        raise NumericalFailure('the KKT matrix could not be regularized.')

    def run(self, x0, mu, history, budget, push):
        config = self.config
        n, size = self.n, self.size
        has_lo, has_hi = self.has_lo, self.has_hi
        x0 = np.asarray(x0, dtype=float)
        y = self.push(np.concatenate([x0, self.slack_start(x0)]), push)
        f, c = self.objective(y), self.constraints(y)
        if not np.isfinite(f):
            raise NumericalFailure('the objective is undefined at the '
                                   'starting point.')
        g, J = self.gradient(y), self.jacobian(y)
        gap_lo, gap_hi = self.gaps(y)
        zl = np.where(has_lo, mu / gap_lo, 0.)
        zu = np.where(has_hi, mu / gap_hi, 0.)
        lam = self.multipliers(g, J, zl, zu)
        mu_min = config.barrier_tol
        tol = .1 * config.kkt_tol
        restorations = 0
        iteration = 0
        message = 'iteration limit reached'
        hit_limit = True

        while iteration < budget:
            error = self.error(y, g, c, J, lam, zl, zu, 0.)
            if error <= tol:
                message, hit_limit = 'converged', False
                break
            while mu > mu_min and \
                    self.error(y, g, c, J, lam, zl, zu, mu) <= 10. * mu:
                mu = max(mu_min, min(config.barrier_reduction * mu,
                                     mu ** 1.5))
            tau = max(config.fraction_to_boundary, 1. - mu)

            gap_lo, gap_hi = self.gaps(y)
            sigma = (np.where(has_lo, zl / gap_lo, 0.) +
                     np.where(has_hi, zu / gap_hi, 0.))
            grad_phi = (g - np.where(has_lo, mu / gap_lo, 0.) +
                        np.where(has_hi, mu / gap_hi, 0.))
            W = self.hessian(y, lam)
            rhs = -np.concatenate([grad_phi + J.T @ lam, c])
            sol, solve_kkt, delta_w = self.direction(W, sigma, J, rhs, mu)
            dy, dlam = sol[:size], sol[size:]
            dzl = np.where(has_lo, mu / gap_lo - zl - zl / gap_lo * dy, 0.)
            dzu = np.where(has_hi, mu / gap_hi - zu + zu / gap_hi * dy, 0.)
            alpha_max = self.max_step(y, dy, tau)
            alpha_z = min(self.dual_step(zl, dzl, tau),
                          self.dual_step(zu, dzu, tau))

            c_norm = np.linalg.norm(c)
            slope = float(grad_phi @ dy)
            if c_norm > 0:
                decrease = -float(c @ (J @ dy)) / c_norm
                if decrease > 0:
                    curvature = max(0., float(dy @ (W @ dy) +
                                              dy @ (sigma * dy)))
                    wanted = (slope + .5 * curvature) / (.9 * decrease)
                    if self.nu < wanted:
                        self.nu = wanted + 1.
                slope -= self.nu * decrease
            else:
                slope += self.nu * np.linalg.norm(J @ dy)
            slope = min(slope, 0.)
            phi0 = (f + self.barrier(y, mu) + self.nu * c_norm)

            tiny = alpha_max * _inf_norm(dy) <= \
                1e-14 * (1. + _inf_norm(y))
            accepted = None
            alpha = alpha_max
            for trial in range(config.max_line_search):
                y_trial = y + alpha * dy
                phi, f_trial, c_trial = self.merit(y_trial, mu)
                if tiny or phi <= phi0 + 1e-4 * alpha * slope:
                    accepted = (y_trial, alpha, phi, f_trial, c_trial)
                    break
                if trial == 0 and self.m and \
                        np.linalg.norm(c_trial) >= c_norm:
                    c_soc = alpha * c + c_trial
                    soc = solve_kkt(-np.concatenate([grad_phi + J.T @ lam,
                                                     c_soc]))[:size]
                    alpha_soc = self.max_step(y, soc, tau)
                    y_soc = y + alpha_soc * soc
                    phi, f_soc, c_soc = self.merit(y_soc, mu)
                    if phi <= phi0 + 1e-4 * alpha * slope:
                        accepted = (y_soc, alpha, phi, f_soc, c_soc)
                        break
                alpha *= .5
                if alpha * _inf_norm(dy) <= 1e-16 * (1. + _inf_norm(y)):
                    break

            if accepted is None or self.nu > 1e10:
                if _inf_norm(c) <= config.violation_tol or restorations >= 3:
                    message, hit_limit = 'line search failed', False
                    break
                restorations += 1
                restored = restore(self.problem, y[:n], config)
                iteration += restored.iterations
                history.append({'engine': RESTORATION,
                                'iteration': iteration,
                                'violation': restored.violation,
                                'infeasible': restored.infeasible})
                if restored.infeasible:
                    return EngineRun(restored.x, iteration, False,
                                     'restoration converged to an '
                                     'infeasible point', True)
                x = restored.x
                y = self.push(np.concatenate([x, self.slack_start(x)]),
                              config.bound_push)
                f, c = self.objective(y), self.constraints(y)
                g, J = self.gradient(y), self.jacobian(y)
                gap_lo, gap_hi = self.gaps(y)
                zl = np.where(has_lo, mu / gap_lo, 0.)
                zu = np.where(has_hi, mu / gap_hi, 0.)
                lam = self.multipliers(g, J, zl, zu)
                self.nu = 1.
                continue

            y_new, alpha, phi, f_new, c_new = accepted
            lam = lam + alpha * dlam
            g_new, J_new = self.gradient(y_new), self.jacobian(y_new)
            if self.quasi_newton is not None:
                self.quasi_newton.update(
                    (y_new - y)[:n],
                    (g_new + J_new.T @ lam)[:n] - (g + J.T @ lam)[:n])
            gap_lo, gap_hi = self.gaps(y_new)
            zl = np.where(has_lo, np.clip(
                zl + alpha_z * dzl, mu / (self.kappa_sigma * gap_lo),
                self.kappa_sigma * mu / gap_lo), 0.)
            zu = np.where(has_hi, np.clip(
                zu + alpha_z * dzu, mu / (self.kappa_sigma * gap_hi),
                self.kappa_sigma * mu / gap_hi), 0.)
            y, f, c, g, J = y_new, f_new, c_new, g_new, J_new
            iteration += 1

            optimality = self.error(y, g, c, J, lam, zl, zu, 0.)
            history.append({'engine': INTERIOR_POINT,
                            'iteration': iteration,
                            'objective': f * self.f_scale,
                            'violation': _inf_norm(c),
                            'optimality': optimality,
                            'barrier': mu,
                            'penalty': self.nu,
                            'regularization': delta_w,
                            'step': alpha,
                            'merit': phi,
                            'merit_start': phi0})
            if iteration % config.log_every == 0 or iteration == 1:
                logger.info('iter %5d  objective %+.8e  violation %.3e  '
                            'kkt %.3e  step %.2e  barrier %.1e', iteration,
                            f * self.f_scale, _inf_norm(c), optimality,
                            alpha, mu)
        return EngineRun(y[:n].copy(), iteration, hit_limit, message, False)


def _interior_point(problem, config, x0, barrier, history, budget):
    f_scale = _objective_scale(problem, x0, config)
    engine = _PrimalDual(problem, config, f_scale)
    run = engine.run(x0, barrier, history, max(1, int(budget)),
                     config.bound_push)
    logger.info('Interior point finished after %d iterations: %s',
                run.iterations, run.message)
    return run


def _al_terms(problem, ev, z, lam, nu_hi, nu_lo, rho):
    """Augmented Lagrangian value and gradient (PHR for inequalities)."""
    f = ev.objective(z)
    if not np.isfinite(f):
        return np.inf, np.zeros(problem.n), None
    total = f
    grad = ev.gradient(z).copy()
    parts = {}
    if problem.m_eq:
        c = ev.eq(z)
        total += lam @ c + .5 * rho * (c @ c)
        grad += ev.eq_jac(z).T @ (lam + rho * c)
        parts['c'] = c
    if problem.m_ineq:
        g = ev.ineq(z)
        with np.errstate(invalid='ignore'):
            p_hi = np.maximum(0., nu_hi + rho * (g - problem.ineq_upper))
            p_lo = np.maximum(0., nu_lo + rho * (problem.ineq_lower - g))
        total += (np.sum(p_hi ** 2 - nu_hi ** 2) +
                  np.sum(p_lo ** 2 - nu_lo ** 2)) / (2. * rho)
        grad += ev.ineq_jac(z).T @ (p_hi - p_lo)
        parts['p_hi'], parts['p_lo'] = p_hi, p_lo
    return total, grad, parts


def _augmented_lagrangian(problem, config, x0, history, budget):
    f_scale = _objective_scale(problem, x0, config)
    ev = _Evaluator(problem, config, f_scale)
    lam = np.zeros(problem.m_eq)
    nu_hi = np.zeros(problem.m_ineq)
    nu_lo = np.zeros(problem.m_ineq)
    rho = float(config.penalty)
    bounds = _scipy_bounds(problem)
    x = np.asarray(x0, dtype=float)
    iterations = 0
    target = np.inf
    message = 'outer iteration limit reached'
    hit_limit = False

    for outer in range(config.max_outer):
        def merit(z):
            value, grad, _ = _al_terms(problem, ev, z, lam, nu_hi, nu_lo, rho)
            return value, grad

        remaining = int(budget) - iterations
        if remaining <= 0:
            hit_limit = True
            message = 'iteration limit reached'
            break
        res = minimize(merit, x, jac=True, method='L-BFGS-B', bounds=bounds,
                       options={'maxiter': min(config.inner_max_iter,
                                               remaining),
                                'gtol': .1 * config.kkt_tol,
                                'ftol': 1e-15,
                                'maxls': config.max_line_search})
        x = np.asarray(res.x, dtype=float)
        iterations += int(res.nit)
        _, _, parts = _al_terms(problem, ev, x, lam, nu_hi, nu_lo, rho)
        if parts is None:
            raise NumericalFailure('augmented Lagrangian left the model '
                                   'domain.')
        viol = problem.violation(x)
        value = problem.objective(x)
        history.append({'engine': AUGMENTED_LAGRANGIAN, 'iteration':
                        iterations, 'objective': value, 'violation': viol,
                        'penalty': rho, 'merit': float(res.fun) * f_scale})
        logger.info('outer %3d  objective %+.8e  violation %.3e  penalty '
                    '%.1e  inner iterations %d', outer, value, viol, rho,
                    res.nit)
        if viol <= config.violation_tol and res.success:
            message = 'converged'
            break
        if viol <= .25 * target:
            if problem.m_eq:
                lam = lam + rho * parts['c']
            if problem.m_ineq:
                nu_hi, nu_lo = parts['p_hi'], parts['p_lo']
            target = viol
        else:
            rho *= config.penalty_factor
    return EngineRun(x, iterations, hit_limit, message, False)


# POST-PROCESSING.

def _active_residuals(problem, x):
    """Residual rows (equalities plus violated inequalities) and Jacobian."""
    blocks, residuals = [], []
    if problem.m_eq:
        blocks.append(problem.jacobian_eq(x))
        residuals.append(problem.constraints_eq(x))
    if problem.m_ineq:
        g = problem.constraints_ineq(x)
        over = g > problem.ineq_upper
        under = g < problem.ineq_lower
        rows = over | under
        if np.any(rows):
            target = np.where(over, problem.ineq_upper, problem.ineq_lower)
            blocks.append(problem.jacobian_ineq(x)[np.flatnonzero(rows)])
            residuals.append((g - target)[rows])
    if not blocks:
        return None, None
    return sp.vstack(blocks, format='csr'), np.concatenate(residuals)


def polish(problem, x, config):
    """
    Gauss-Newton feasibility refinement: minimum-norm corrections for the
    equality and violated inequality residuals, clipped to the bounds.
    """
    x = np.asarray(x, dtype=float)
    viol = problem.violation(x)
    for iteration in range(config.polish_iter):
        if viol <= config.violation_tol or not np.isfinite(viol):
            break
        try:
            J, r = _active_residuals(problem, x)
        except StateDomainError:
            break
        if J is None:
            x = np.clip(x, problem.lower, problem.upper)
            viol = problem.violation(x)
            break
        dx = lsqr(J, -r, atol=1e-15, btol=1e-15,
                  iter_lim=max(10 * problem.n, 1000))[0]
        accepted = False
        t = 1.
        for _ in range(6):
            trial = np.clip(x + t * dx, problem.lower, problem.upper)
            trial_viol = problem.violation(trial)
            if trial_viol < viol:
                x, viol, accepted = trial, trial_viol, True
                break
            t *= .5
        logger.debug('polish iteration %d: violation %.3e (step %.3g)',
                     iteration, viol, t if accepted else 0.)
        if not accepted:
            break
    return x


ActiveSet = collections.namedtuple('ActiveSet', (
    'ineq_hi', 'ineq_lo', 'bound_hi', 'bound_lo'))


class KktReport(collections.namedtuple('_KktReport', (
        'stationarity', 'complementarity', 'violation', 'residual',
        'multipliers', 'active'))):
    __slots__ = ()


def _sides(value, lower, upper, active_tol):
    tol_hi = active_tol * np.maximum(1., np.abs(np.where(
        np.isfinite(upper), upper, 0.)))
    tol_lo = active_tol * np.maximum(1., np.abs(np.where(
        np.isfinite(lower), lower, 0.)))
    at_hi = np.isfinite(upper) & (value >= upper - tol_hi)
    at_lo = np.isfinite(lower) & (value <= lower + tol_lo)
    return at_hi, at_lo


def kkt_residual(problem, x, active_tol=1e-5):
    """
    Independent first-order check. Multipliers for the equalities, the
    active inequalities and the active bounds are fitted by
    sign-constrained least squares to -grad f; the stationarity measure is
    the infinity norm of the remaining Lagrangian gradient relative to
    max(1, |grad f|).
    """
    x = np.asarray(x, dtype=float)
    g = problem.gradient(x)
    columns, lo, hi, gaps = [], [], [], []
    if problem.m_eq:
        columns.append(problem.jacobian_eq(x).T)
        lo.append(np.full(problem.m_eq, -np.inf))
        hi.append(np.full(problem.m_eq, np.inf))
        gaps.append(np.zeros(problem.m_eq))

    def add(at_hi, at_lo, block, value, lower, upper):
        active = at_hi | at_lo
        if not np.any(active):
            return
        idx = np.flatnonzero(active)
        columns.append(block[idx].T if sp.issparse(block) else
                       sp.csr_matrix(block[idx]).T)
        both = at_hi[idx] & at_lo[idx]
        lo.append(np.where(both | at_lo[idx], -np.inf, 0.))
        hi.append(np.where(both | at_hi[idx], np.inf, 0.))
        gaps.append(np.where(at_hi[idx], np.abs(upper[idx] - value[idx]),
                             np.abs(value[idx] - lower[idx])))

    ineq_hi = ineq_lo = np.zeros(problem.m_ineq, dtype=bool)
    if problem.m_ineq:
        c = problem.constraints_ineq(x)
        ineq_hi, ineq_lo = _sides(c, problem.ineq_lower, problem.ineq_upper,
                                  active_tol)
        add(ineq_hi, ineq_lo, problem.jacobian_ineq(x), c,
            problem.ineq_lower, problem.ineq_upper)
    bound_hi, bound_lo = _sides(x, problem.lower, problem.upper, active_tol)
    add(bound_hi, bound_lo, sp.identity(problem.n, format='csr'), x,
        problem.lower, problem.upper)

    g_norm = max(1., float(np.max(np.abs(g), initial=0.)))
    if columns:
        A = sp.hstack(columns, format='csr')
        lower, upper = np.concatenate(lo), np.concatenate(hi)
        if A.shape[0] * A.shape[1] <= 4e6:
            fit = lsq_linear(A.toarray(), -g, bounds=(lower, upper),
                             method='bvls', tol=1e-12)
        else:
            fit = lsq_linear(A, -g, bounds=(lower, upper), method='trf',
                             tol=1e-12, lsmr_tol='auto')
        nu = fit.x
        r = A @ nu + g
        complementarity = float(np.max(np.abs(nu) * np.concatenate(gaps),
                                       initial=0.)) / g_norm
    else:
        nu = np.zeros(0)
        r = g
        complementarity = 0.
    stationarity = float(np.max(np.abs(r), initial=0.)) / g_norm
    return KktReport(stationarity, complementarity, problem.violation(x),
                     max(stationarity, complementarity), nu,
                     ActiveSet(ineq_hi, ineq_lo, bound_hi, bound_lo))


def _newton_kkt_step(problem, x, report):
    """
    One Newton step on stationarity plus the active constraints, with the
    active bounds holding their variables fixed.
    """
    active = report.active
    m_eq = problem.m_eq
    ineq_rows = np.flatnonzero(active.ineq_hi | active.ineq_lo)
    lam_eq = report.multipliers[:m_eq]
    lam_ineq = np.zeros(problem.m_ineq)
    lam_ineq[ineq_rows] = report.multipliers[m_eq:m_eq + len(ineq_rows)]

    x = x.copy()
    x[active.bound_lo] = problem.lower[active.bound_lo]
    x[active.bound_hi] = problem.upper[active.bound_hi]
    free = np.flatnonzero(~(active.bound_lo | active.bound_hi))
    if not len(free):
        return x

    H = sp.csr_matrix(problem.lagrangian_hessian(x, lam_eq, lam_ineq))
    g = problem.gradient(x)
    rows, residuals = [], []
    if m_eq:
        rows.append(problem.jacobian_eq(x))
        residuals.append(problem.constraints_eq(x))
    if len(ineq_rows):
        target = np.where(active.ineq_hi, problem.ineq_upper,
                          problem.ineq_lower)
        rows.append(problem.jacobian_ineq(x)[ineq_rows])
        residuals.append((problem.constraints_ineq(x) - target)[ineq_rows])
    H_free = H[free][:, free]
    if rows:
        A = sp.vstack(rows, format='csr')[:, free]
        K = sp.bmat([[H_free, A.T],
                     [A, -1e-13 * sp.identity(A.shape[0])]], format='csc')
        rhs = -np.concatenate([g[free]] + residuals)
    else:
        K = sp.csc_matrix(H_free)
        rhs = -g[free]
    try:
        sol = splu(K).solve(rhs)
        if not np.all(np.isfinite(sol)):
            raise RuntimeError('non-finite Newton step')
    except RuntimeError:
        sol = lsqr(K, rhs, atol=1e-15, btol=1e-15,
                   iter_lim=max(10 * K.shape[0], 1000))[0]
    x[free] += sol[:len(free)]
    return np.clip(x, problem.lower, problem.upper)


def refine(problem, x, config):
    """
    Newton refinement of a nearly optimal point on its active set. A step
    is kept only when it lowers the KKT residual without pushing the
    violation past tolerance.
    """
    x = np.asarray(x, dtype=float)
    try:
        report = kkt_residual(problem, x, config.active_tol)
    except StateDomainError:
        return x
    if not np.isfinite(report.violation):
        return x
    for iteration in range(config.polish_iter):
        if report.residual == 0. and report.violation == 0.:
            break
        try:
            trial = _newton_kkt_step(problem, x, report)
            new = kkt_residual(problem, trial, config.active_tol)
        except (StateDomainError, np.linalg.LinAlgError) as exc:
            logger.debug('refinement stopped: %s', exc)
            break
        if not (new.residual < report.residual and new.violation <= max(
                report.violation, config.violation_tol)):
            break
        x, report = trial, new
        logger.debug('refinement %d: KKT %.3e, violation %.3e', iteration,
                     report.residual, report.violation)
    return x


Restoration = collections.namedtuple('Restoration', (
    'x', 'violation', 'infeasible', 'iterations'))


def restore(problem, x, config):
    """
    Minimize |c_E(x)|^2 + |c_I(x) - s|^2 over the variables and the
    inequality slacks s, both kept within their bounds, by trust-region
    reflective Gauss-Newton, then polish. Only a converged minimum whose
    violation stays above tolerance certifies that the constraints cannot
    be met; a stalled or truncated run does not.
    """
    n, m_eq, m_ineq = problem.n, problem.m_eq, problem.m_ineq
    x = np.clip(np.asarray(x, dtype=float), problem.lower, problem.upper)
    if not (m_eq or m_ineq):
        return Restoration(x, problem.violation(x), False, 0)
    try:
        s = problem.constraints_ineq(x) if m_ineq else np.zeros(0)
    except StateDomainError:
        s = np.zeros(m_ineq)
    s = np.clip(s, problem.ineq_lower, problem.ineq_upper)
    lo = np.concatenate([problem.lower, problem.ineq_lower])
    hi = np.concatenate([problem.upper, problem.ineq_upper])
    free = np.flatnonzero(lo < hi)
    y = np.concatenate([x, s])
    dense = (m_eq + m_ineq) * len(free) <= 4e6

    def expand(z):
        full = y.copy()
        full[free] = z
        return full[:n], full[n:]

    def residual(z):
        xz, sz = expand(z)
        parts = []
        try:
            if m_eq:
                parts.append(problem.constraints_eq(xz))
            if m_ineq:
                parts.append(problem.constraints_ineq(xz) - sz)
        except StateDomainError:
            return np.full(m_eq + m_ineq, 1e10)
        return np.concatenate(parts)

    def jacobian(z):
        xz, _ = expand(z)
        rows = []
        if m_eq:
            block = sp.csr_matrix(problem.jacobian_eq(xz))
            if m_ineq:
                block = sp.hstack([block, sp.csr_matrix((m_eq, m_ineq))])
            rows.append(block)
        if m_ineq:
            rows.append(sp.hstack([sp.csr_matrix(problem.jacobian_ineq(xz)),
                                   -sp.identity(m_ineq)]))
        J = sp.vstack(rows, format='csr')[:, free]
        return J.toarray() if dense else J

    res = least_squares(residual, y[free], jac=jacobian,
                        bounds=(lo[free], hi[free]), method='trf',
                        tr_solver='exact' if dense else 'lsmr',
                        x_scale='jac', ftol=1e-14, xtol=1e-14, gtol=1e-14,
                        max_nfev=config.restoration_max_iter)
    z = polish(problem, np.clip(expand(res.x)[0], problem.lower,
                                problem.upper), config)
    viol = problem.violation(z)
    stationary = res.status > 0 and res.optimality <= 1e-6 * max(
        1., float(np.linalg.norm(res.fun)))
    infeasible = viol > config.violation_tol and stationary
    logger.info('Restoration: violation %.3e after %d evaluations (%s)%s.',
                viol, res.nfev, res.message,
                ' (infeasible)' if infeasible else '')
    return Restoration(z, viol, infeasible, int(res.nfev))


# STARTING POINTS.

def random_feasible_init(problem, seed=0, margin=.01):
    """
    Random point strictly inside the bounds (by ``margin`` of each bounded
    range). Problems that know their structure supply ``random_point``.
    """
    lo, hi = problem.lower, problem.upper
    both = np.isfinite(lo) & np.isfinite(hi)
    if np.any(hi[both] - lo[both] <= 0):
        raise ImproperlyConfigured(
            'bounds leave no interior for variable(s) %s.' % ', '.join(
                str(i) for i in np.flatnonzero(both & (hi - lo <= 0))[:10]))
    rng = np.random.default_rng(seed)
    if hasattr(problem, 'random_point'):
        return problem.random_point(rng, margin)
    x = rng.uniform(-1., 1., problem.n)
    x[both] = lo[both] + (hi[both] - lo[both]) * rng.uniform(
        margin, 1. - margin, int(np.sum(both)))
    only_lo = np.isfinite(lo) & ~np.isfinite(hi)
    x[only_lo] = lo[only_lo] + margin * np.maximum(1., np.abs(lo[only_lo])) \
        + rng.uniform(0., 1., int(np.sum(only_lo)))
    only_hi = ~np.isfinite(lo) & np.isfinite(hi)
    x[only_hi] = hi[only_hi] - margin * np.maximum(1., np.abs(hi[only_hi])) \
        - rng.uniform(0., 1., int(np.sum(only_hi)))
    return x


def steady_feasible_init(problem, alpha=None, margin=.01):
    if not hasattr(problem, 'steady_point'):
        raise ImproperlyConfigured('%r cannot build a steady starting point.'
                                   % problem)
    return problem.steady_point(alpha=alpha, margin=margin)


# DRIVER.

class SolveResult(object):
    def __init__(self, status, x, objective, objective_main,
                 objective_smoothing, violation, kkt, iterations, wall_time,
                 message, history, seed=None, restarts=0):
        self.status = status
        self.x = x
        self.objective = objective
        self.objective_main = objective_main
        self.objective_smoothing = objective_smoothing
        self.violation = violation
        self.kkt = kkt
        self.iterations = iterations
        self.wall_time = wall_time
        self.message = message
        self.history = history
        self.seed = seed
        self.restarts = restarts

    @property
    def success(self):
        return self.status == OPTIMAL

    def __repr__(self):
        return '<SolveResult %s: objective %.8g, kkt %.2e, violation %.2e>' % (
            self.status, self.objective, self.kkt, self.violation)

    def to_dict(self):
        return {'status': self.status,
                'objective': self.objective,
                'objective_main': self.objective_main,
                'objective_smoothing': self.objective_smoothing,
                'violation': self.violation,
                'kkt_residual': self.kkt,
                'iterations': self.iterations,
                'restarts': self.restarts,
                'wall_time': self.wall_time,
                'message': self.message,
                'seed': self.seed}




def solve(problem, config=None, init=None):
    """
    Solve ``problem`` from ``init`` (default: a random interior point drawn
    with ``config.seed``) and classify the outcome as optimal, max-iter,
    infeasible-detected or numerical-failure.
    """
    config = config or SolverConfig()
    start = time.time()
    if init is None:
        x = random_feasible_init(problem, config.seed, config.init_margin)
    else:
        x = np.asarray(init, dtype=float).copy()
        if x.shape != (problem.n,):
            raise DomainError('initial point has shape %s, expected (%d,).' %
                              (x.shape, problem.n))
    x = _interior(problem, x)
    history = []
    iterations = 0
    barrier = config.initial_barrier
    status = None
    message = ''
    hit_limit = False
    report = None
    restarts = 0
    method = config.method
    engine_errors = (NumericalFailure, StructuralError, np.linalg.LinAlgError,
                     RuntimeError)

    for attempt in range(config.restarts + 1):
        budget = config.max_iter - iterations
        try:
            try:
                if method == INTERIOR_POINT:
                    run = _interior_point(problem, config, x, barrier,
                                          history, budget)
                else:
                    run = _augmented_lagrangian(problem, config, x, history,
                                                budget)
            except engine_errors as exc:
                if method != INTERIOR_POINT:
                    raise NumericalFailure(str(exc))
                logger.warning('Interior point engine failed (%s); falling '
                               'back to the augmented Lagrangian method.',
                               exc)
                method = AUGMENTED_LAGRANGIAN
                run = _augmented_lagrangian(problem, config, x, history,
                                            budget)
        except engine_errors as exc:
            status = NUMERICAL_FAILURE
            message = str(exc)
            break
        iterations += run.iterations
        x, hit_limit, message = run.x, run.hit_limit, run.message
        if run.infeasible:
            status = INFEASIBLE
            message = ('constraints cannot be satisfied; smallest violation '
                       'found %.3e' % problem.violation(x))
            break

        x = refine(problem, polish(problem, x, config), config)
        report = kkt_residual(problem, x, config.active_tol)
        logger.info('Attempt %d: stationarity %.3e, complementarity %.3e, '
                    'violation %.3e.', attempt, report.stationarity,
                    report.complementarity, report.violation)
        if report.violation <= config.violation_tol and \
                report.residual <= config.kkt_tol:
            status = OPTIMAL
            break
        if iterations >= config.max_iter:
            status = MAX_ITER
            break
        if report.violation > config.violation_tol:
            restored = restore(problem, x, config)
            iterations += restored.iterations
            if restored.infeasible:
                status = INFEASIBLE
                message = ('constraints cannot be satisfied; smallest '
                           'violation found %.3e' % restored.violation)
                break
            x = restored.x
        if attempt < config.restarts:
            restarts += 1
            barrier = max(barrier * config.barrier_reduction,
                          config.barrier_tol)
            x = _interior(problem, x)
            logger.info('Restarting from the current point with barrier '
                        '%.1e.', barrier)

    if status is None:
        status = MAX_ITER if hit_limit else NUMERICAL_FAILURE
        if not message:
            message = 'no KKT point within %d restarts' % config.restarts

    if report is None or status == INFEASIBLE:
        report = KktReport(np.inf, np.inf, problem.violation(x), np.inf,
                           None, None)
    try:
        main, smoothing = problem.objective_parts(x)
    except StateDomainError:
        main, smoothing = np.inf, 0.
    result = SolveResult(status, x, main + smoothing, main, smoothing,
                         report.violation, report.residual, iterations,
                         time.time() - start, message, history,
                         seed=config.seed if init is None else None,
                         restarts=restarts)
    logger.info('Solve finished: %r in %.2fs.', result, result.wall_time)
    return result


def sweep(factory, config, seeds, workers=1, init='random'):
    """
    Solve fresh problems from ``factory()`` once per seed. Threads share
    nothing but the read-only inputs captured by ``factory``.
    """
    def run(seed):
        problem = factory()
        cfg = config.replace(seed=int(seed))
        start = None
        if init == 'steady':
            start = steady_feasible_init(problem)
        return solve(problem, cfg, start)

    seeds = list(seeds)
    if workers and workers > 1:
        with concurrent.futures.ThreadPoolExecutor(workers) as executor:
            return list(executor.map(run, seeds))
    return [run(seed) for seed in seeds]
