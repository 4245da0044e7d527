"""
Legendre-Gauss-Lobatto transcription of the two network control problems:

* economic transient compression (``etc``): minimize compressor power
  subject to the RNF dynamics, pressure bounds and periodicity;
* minimum load shedding (``mls``): follow the desired withdrawals at the
  sheddable nodes as closely as the network allows.

Every state and control becomes its values at the N + 1 LGL nodes of the
horizon. Variables are stored block-major: all densities (node by node,
each node's N + 1 samples contiguous), then fluxes, ratios and, for load
shedding, the shed withdrawals.
"""
from collections import OrderedDict
import collections
import logging

import numpy as np
import scipy.sparse as sp

from linepack import BoundaryInput
from linepack import DomainError
from linepack import ImproperlyConfigured
from linepack import RnfState
from linepack import UnsupportedOrder
from linepack import interpolate
from linepack import lgl_grid
from linepack import physical_time
from linepack import rescale_time
from linepack import rhs
from linepack import rhs_jacobian
from linepack import steady_state
from linepack import total_mass
from pumphouse.scenario import PolynomialProfile
from pumphouse.scenario import require_horizon
from pumphouse.solver import Problem


logger = logging.getLogger('linepack.transcribe')

ETC = 'etc'
MLS = 'mls'
PERIODIC = 'periodic'
MASS = 'mass'

# Smoothing of |phi| in the compressor power.
POWER_EPSILON = 1e-6


class OcpSpec(object):
    """Everything that defines one optimal control problem instance."""
    def __init__(self, kind, refined, mats, scenario, N=25, mu=None,
                 terminal=PERIODIC, shed=None, epsilon=POWER_EPSILON):
        kind = str(kind).lower()
        if kind not in (ETC, MLS):
            raise ImproperlyConfigured('objective must be "etc" or "mls", '
                                       'got %r.' % kind)
        if int(N) < 2:
            raise UnsupportedOrder('collocation needs N >= 2, got %s.' % N)
        if terminal not in (PERIODIC, MASS):
            raise ImproperlyConfigured('terminal condition must be '
                                       '"periodic" or "mass", got %r.' %
                                       terminal)
        if shed is None:
            shed = list(scenario.shed) if kind == MLS else []
        shed = [str(node_id) for node_id in shed]
        if kind == ETC and shed:
            raise ImproperlyConfigured('compression runs do not shed load; '
                                       'got shed nodes %s.' % ', '.join(shed))
        if kind == MLS and not shed:
            raise ImproperlyConfigured('load shedding needs at least one '
                                       'sheddable node.')
        demand = set(refined.demand_ids)
        for node_id in shed:
            if node_id not in demand:
                raise ImproperlyConfigured('shed node "%s" is not a demand '
                                           'node.' % node_id)
        if mu is not None and mu < 0:
            raise ImproperlyConfigured('smoothing weight must be '
                                       'non-negative.')
        if refined.C and np.any(refined.alpha_max <= 1):
            raise ImproperlyConfigured('every compressor needs alpha_max > 1 '
                                       'for optimization.')
        scenario.validate(refined)
        require_horizon(scenario)

        self.kind = kind
        self.refined = refined
        self.mats = mats
        self.scenario = scenario
        self.N = int(N)
        self.mu = float(self.N if mu is None else mu)
        self.terminal = terminal
        self.shed = shed
        self.epsilon = float(epsilon)

    def __repr__(self):
        return '<OcpSpec %s N=%d mu=%g terminal=%s shed=%s>' % (
            self.kind, self.N, self.mu, self.terminal, self.shed)


Variables = collections.namedtuple('Variables', ('rho', 'phi', 'alpha', 'd'))


class NlpLayout(object):
    def __init__(self, M, E, C, S, N):
        self.N = N
        self.width = N + 1
        self.sizes = OrderedDict([('rho', M), ('phi', E), ('alpha', C),
                                  ('d', S)])
        self.offsets = {}
        offset = 0
        for name, rows in self.sizes.items():
            self.offsets[name] = offset
            offset += rows * self.width
        self.n = offset

    def index(self, name, row, k):
        return (self.offsets[name] + np.asarray(row) * self.width +
                np.asarray(k))

    def block(self, name):
        start = self.offsets[name]
        return slice(start, start + self.sizes[name] * self.width)

    def unpack(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise DomainError('expected %d variables, got shape %s.' %
                              (self.n, x.shape))
        return Variables(*[x[self.block(name)].reshape(rows, self.width)
                           for name, rows in self.sizes.items()])

    def pack(self, rho, phi, alpha, d):
        parts = [np.asarray(p, dtype=float).reshape(-1)
                 for p in (rho, phi, alpha, d)]
        x = np.concatenate(parts)
        if x.shape[0] != self.n:
            raise DomainError('packed %d variables, expected %d.' %
                              (x.shape[0], self.n))
        return x


class _Pattern(object):
    """
    Fixed CSR sparsity pattern for a list of (row, col) entries that may
    repeat. Values for repeated entries are summed; zeros are kept.
    """
    def __init__(self, rows, cols, shape):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        linear = rows * shape[1] + cols
        unique, inverse = np.unique(linear, return_inverse=True)
        self.inverse = inverse.reshape(-1)
        self.nnz = len(unique)
        self.shape = shape
        self.rows = unique // shape[1]
        self.cols = unique % shape[1]
        counts = np.bincount(self.rows, minlength=shape[0])
        self.indptr = np.concatenate([[0], np.cumsum(counts)])

    def matrix(self, values):
        data = np.bincount(self.inverse, weights=values, minlength=self.nnz)
        return sp.csr_matrix((data, self.cols.copy(), self.indptr.copy()),
                             shape=self.shape)


def _grid3(a, b, c):
    return np.meshgrid(np.arange(a), np.arange(b), np.arange(c),
                       indexing='ij')


class NlpProblem(Problem):
    """Sparse nonlinear program produced by ``build_nlp``."""
    def __init__(self, spec):
        self.spec = spec
        refined, mats, scenario = spec.refined, spec.mats, spec.scenario
        self.refined = refined
        self.mats = mats
        self.scenario = scenario
        self.grid = lgl_grid(spec.N)
        self.horizon = scenario.horizon
        self.times = physical_time(self.grid.nodes, self.horizon)
        M, E, C = refined.M, refined.E, refined.C
        S = len(spec.shed)
        w = spec.N + 1
        self.layout = NlpLayout(M, E, C, S, spec.N)

        self.s = np.array([scenario.supply(t, refined) for t in self.times])
        self.s_dot = np.array([scenario.supply_rate(t, refined)
                               for t in self.times])
        self.d_firm = np.array([scenario.withdrawal(t, refined)
                                for t in self.times])
        self.shed_pos = np.array([refined.demand_position[i]
                                  for i in spec.shed], dtype=int)
        self.desired = np.array([[float(scenario.desired(i).value(t))
                                  for t in self.times] for i in spec.shed])
        self.desired = self.desired.reshape(S, w)
        self.priority = np.array([[float(scenario.weight(i).value(t))
                                   for t in self.times] for i in spec.shed])
        self.priority = self.priority.reshape(S, w)
        if S:
            if np.any(self.desired <= 0):
                raise ImproperlyConfigured('desired withdrawals at shed '
                                           'nodes must be positive.')
            if np.any(self.priority < 0):
                raise ImproperlyConfigured('shedding weights must be '
                                           'non-negative.')
            self.d_firm[:, self.shed_pos] = 0.

        lower = np.concatenate([
            np.repeat(refined.rho_min, w), np.full(E * w, -np.inf),
            np.ones(C * w), np.zeros(S * w)])
        upper = np.concatenate([
            np.repeat(refined.rho_max, w), np.full(E * w, np.inf),
            np.repeat(refined.alpha_max, w), self.desired.reshape(-1)])

        nodes = [refined.nodes[i] for i in mats.slot_nodes]
        ineq_lower = np.repeat([n.rho_min for n in nodes], w)
        ineq_upper = np.repeat([n.rho_max for n in nodes], w)

        if spec.terminal == PERIODIC:
            self.n_terminal = M + E + C + S
        else:
            self.n_terminal = 1 + C + S
        m_eq = (M + E) * w + self.n_terminal
        super(NlpProblem, self).__init__(self.layout.n, lower, upper, m_eq,
                                         ineq_lower, ineq_upper)
        self._build_structure()
        self._cache = None
        logger.info('Transcribed %s: %d variables, %d equality and %d '
                    'inequality constraints, Jacobian density %.2f%%.',
                    spec, self.n, self.m_eq, self.m_ineq,
                    100. * self.density)

    # Structure.

    def _build_structure(self):
        L = self.layout
        M, E, C, S = [L.sizes[k] for k in ('rho', 'phi', 'alpha', 'd')]
        w = L.width
        N = L.N
        mats = self.mats
        o_phi, o_alpha, o_d = (L.offsets['phi'], L.offsets['alpha'],
                               L.offsets['d'])
        pos = mats._block
        rows, cols = [], []

        def add(r, c):
            rows.append(np.asarray(r).reshape(-1))
            cols.append(np.asarray(c).reshape(-1))

        # Spectral derivative blocks.
        I, K, J = _grid3(M, w, w)
        add(I * w + K, I * w + J)
        I, K, J = _grid3(E, w, w)
        add(o_phi + I * w + K, o_phi + I * w + J)
        # Density rows: dense couplings per collocation node.
        K, I, J = _grid3(w, M, E)
        add(I * w + K, o_phi + J * w + K)
        K, I, J = _grid3(w, M, C)
        add(I * w + K, o_alpha + J * w + K)
        K, I, J = _grid3(w, M, S)
        add(I * w + K, o_d + J * w + K)
        # Flux rows.
        e, k = np.meshgrid(np.arange(E), np.arange(w), indexing='ij')
        add(o_phi + e * w + k, o_phi + e * w + k)
        self._from_edges = mats._d_from
        self._to_edges = mats._d_to
        self._from_pos = pos[mats.pi_v0[mats._d_from]]
        self._to_pos = pos[mats.pi_vL[mats._d_to]]
        e, k = np.meshgrid(self._from_edges, np.arange(w), indexing='ij')
        p, _ = np.meshgrid(self._from_pos, np.arange(w), indexing='ij')
        add(o_phi + e * w + k, p * w + k)
        e, k = np.meshgrid(self._to_edges, np.arange(w), indexing='ij')
        p, _ = np.meshgrid(self._to_pos, np.arange(w), indexing='ij')
        add(o_phi + e * w + k, p * w + k)
        e, k = np.meshgrid(mats.slot_edges, np.arange(w), indexing='ij')
        c, _ = np.meshgrid(np.arange(C), np.arange(w), indexing='ij')
        add(o_phi + e * w + k, o_alpha + c * w + k)

        # Terminal conditions.
        r0 = (M + E) * w
        if self.spec.terminal == PERIODIC:
            firsts = np.concatenate([
                np.arange(M) * w, o_phi + np.arange(E) * w,
                o_alpha + np.arange(C) * w, o_d + np.arange(S) * w])
            count = len(firsts)
            add(np.repeat(r0 + np.arange(count), 2),
                np.stack([firsts, firsts + N], axis=1))
        else:
            add(np.full(2 * M, r0),
                np.concatenate([np.arange(M) * w, np.arange(M) * w + N]))
            add(np.full(2 * C, r0),
                np.concatenate([o_alpha + np.arange(C) * w,
                                o_alpha + np.arange(C) * w + N]))
            firsts = np.concatenate([o_alpha + np.arange(C) * w,
                                     o_d + np.arange(S) * w])
            count = len(firsts)
            add(np.repeat(r0 + 1 + np.arange(count), 2),
                np.stack([firsts, firsts + N], axis=1))

        self._eq_pattern = _Pattern(np.concatenate(rows),
                                    np.concatenate(cols), (self.m_eq, self.n))

        # Discharge pressure rows alpha_c * rho_node(c).
        c, k = np.meshgrid(np.arange(C), np.arange(w), indexing='ij')
        rows = [(c * w + k).reshape(-1)]
        cols = [(o_alpha + c * w + k).reshape(-1)]
        demand_slots = np.flatnonzero(~mats.slot_is_slack) if C else \
            np.zeros(0, dtype=int)
        c, k = np.meshgrid(demand_slots, np.arange(w), indexing='ij')
        p, _ = np.meshgrid(mats.slot_block[demand_slots], np.arange(w),
                           indexing='ij')
        rows.append((c * w + k).reshape(-1))
        cols.append((p * w + k).reshape(-1))
        self._demand_slots = demand_slots
        self._ineq_pattern = _Pattern(np.concatenate(rows),
                                      np.concatenate(cols),
                                      (self.m_ineq, self.n))

    @property
    def nnz(self):
        return self._eq_pattern.nnz + self._ineq_pattern.nnz

    @property
    def density(self):
        m = self.m_eq + self.m_ineq
        return float(self.nnz) / (m * self.n) if m and self.n else 0.

    def structure(self):
        """(rows, cols) of the stacked equality/inequality Jacobian."""
        return (np.concatenate([self._eq_pattern.rows,
                                self.m_eq + self._ineq_pattern.rows]),
                np.concatenate([self._eq_pattern.cols,
                                self._ineq_pattern.cols]))

    # Evaluation.

    def unpack(self, x):
        return self.layout.unpack(x)

    def withdrawal(self, v, k):
        d = self.d_firm[k].copy()
        if len(self.shed_pos):
            d[self.shed_pos] = v.d[:, k]
        return d

    def inputs(self, v, k):
        return BoundaryInput(self.s[k], self.withdrawal(v, k),
                             s_dot=self.s_dot[k], alpha=v.alpha[:, k])

    def _evaluate(self, x, jacobian):
        x = np.asarray(x, dtype=float)
        cache = self._cache
        if cache is not None and np.array_equal(cache[0], x) and \
                (cache[2] is not None or not jacobian):
            return cache[1], cache[2]
        v = self.unpack(x)
        w = self.layout.width
        rates = []
        jacs = [] if jacobian else None
        for k in range(w):
            state = RnfState(v.rho[:, k], v.phi[:, k])
            inp = self.inputs(v, k)
            rho_dot, phi_dot = rhs(state, inp, self.mats, clamp=True)
            rates.append((rho_dot, phi_dot))
            if jacobian:
                jacs.append(rhs_jacobian(state, inp, self.mats,
                                         rho_dot=rho_dot, clamp=True))
        self._cache = (x.copy(), rates, jacs)
        return rates, jacs

    def _masses(self, v, k):
        state = RnfState(v.rho[:, k], v.phi[:, k])
        return total_mass(state, self.inputs(v, k), self.mats)

    def constraints_eq(self, x):
        v = self.unpack(x)
        rates, _ = self._evaluate(x, False)
        scale = 2. / self.horizon
        res_rho = scale * v.rho @ self.grid.D.T
        res_phi = scale * v.phi @ self.grid.D.T
        for k, (rho_dot, phi_dot) in enumerate(rates):
            res_rho[:, k] -= rho_dot
            res_phi[:, k] -= phi_dot
        if self.spec.terminal == PERIODIC:
            terminal = [v.rho[:, 0] - v.rho[:, -1],
                        v.phi[:, 0] - v.phi[:, -1],
                        v.alpha[:, 0] - v.alpha[:, -1],
                        v.d[:, 0] - v.d[:, -1]]
        else:
            mass = self._masses(v, 0) - self._masses(v, self.layout.N)
            terminal = [np.array([mass]),
                        v.alpha[:, 0] - v.alpha[:, -1],
                        v.d[:, 0] - v.d[:, -1]]
        return np.concatenate([res_rho.ravel(), res_phi.ravel()] + terminal)

    def jacobian_eq(self, x):
        v = self.unpack(x)
        _, jacs = self._evaluate(x, True)
        L = self.layout
        M, E, C, S = [L.sizes[k] for k in ('rho', 'phi', 'alpha', 'd')]
        w = L.width
        Ds = 2. / self.horizon * self.grid.D
        values = [
            np.broadcast_to(Ds, (M, w, w)).ravel(),
            np.broadcast_to(Ds, (E, w, w)).ravel(),
            -np.array([j.rho_phi for j in jacs]).ravel(),
            -np.array([j.rho_alpha for j in jacs]).reshape(w, M, C).ravel(),
            -np.array([j.rho_d[:, self.shed_pos] for j in jacs])
            .reshape(w, M, S).ravel(),
            -np.array([j.phi_phi for j in jacs]).T.ravel(),
            -np.array([j.phi_from[self._from_edges] for j in jacs])
            .reshape(w, -1).T.ravel(),
            -np.array([j.phi_to[self._to_edges] for j in jacs])
            .reshape(w, -1).T.ravel(),
            -np.array([j.phi_alpha for j in jacs]).reshape(w, C).T.ravel(),
        ]
        if self.spec.terminal == PERIODIC:
            values.append(np.tile([1., -1.], M + E + C + S))
        else:
            g0, a0 = self._mass_gradient(v, 0)
            gN, aN = self._mass_gradient(v, L.N)
            values.append(np.concatenate([g0, -gN]))
            values.append(np.concatenate([a0, -aN]))
            values.append(np.tile([1., -1.], C + S))
        return self._eq_pattern.matrix(np.concatenate(values))

    def _mass_gradient(self, v, k):
        """Derivatives of the line-pack at node k by rho and alpha."""
        mats = self.mats
        alpha = mats.check_alpha(v.alpha[:, k], clamp=True)
        _, BdT = mats.transposed_blocks(alpha)
        g_rho = .5 * (abs(BdT).T @ mats.lengths)
        g_alpha = np.zeros(mats.C)
        if mats.C:
            nodal = mats.nodal(v.rho[:, k], self.s[k])
            g_alpha = .5 * mats.lengths[mats.slot_edges] * \
                nodal[mats.slot_nodes]
        return g_rho, g_alpha

    def _discharge_base(self, v):
        """(C, N + 1) nodal density at each compressor's node."""
        mats = self.mats
        base = np.empty((mats.C, self.layout.width))
        for c in range(mats.C):
            if mats.slot_is_slack[c]:
                base[c] = self.s[:, mats.slot_block[c]]
            else:
                base[c] = v.rho[mats.slot_block[c]]
        return base

    def constraints_ineq(self, x):
        v = self.unpack(x)
        return (v.alpha * self._discharge_base(v)).ravel()

    def jacobian_ineq(self, x):
        v = self.unpack(x)
        base = self._discharge_base(v)
        values = [base.ravel(), v.alpha[self._demand_slots].ravel()]
        return self._ineq_pattern.matrix(np.concatenate(values))

    def jacobian(self, x):
        return sp.vstack([self.jacobian_eq(x), self.jacobian_ineq(x)],
                         format='csr')

    def constraints(self, x):
        return np.concatenate([self.constraints_eq(x),
                               self.constraints_ineq(x)])

    def objective_parts(self, x):
        if self.spec.kind == ETC:
            main, _ = etc_objective(self, x)
        else:
            main, _ = mls_objective(self, x)
        smooth, _ = smoothing_penalty(self, x)
        return main, smooth

    def objective(self, x):
        return sum(self.objective_parts(x))

    def gradient(self, x):
        if self.spec.kind == ETC:
            _, grad = etc_objective(self, x)
        else:
            _, grad = mls_objective(self, x)
        _, smooth = smoothing_penalty(self, x)
        return grad + smooth

    # Second derivatives.

    def _main_gradient(self, x):
        if self.spec.kind == ETC:
            return etc_objective(self, x)[1]
        return mls_objective(self, x)[1]

    def _local_lagrangian_gradient(self, x, lam_eq, lam_ineq, obj_factor):
        g = obj_factor * self._main_gradient(x)
        if lam_eq is not None:
            g = g + self.jacobian_eq(x).T @ lam_eq
        if lam_ineq is not None and self.m_ineq:
            g = g + self.jacobian_ineq(x).T @ lam_ineq
        return g

    def lagrangian_hessian(self, x, lam_eq=None, lam_ineq=None,
                           obj_factor=1.):
        """
        Sparse Hessian of the Lagrangian. Every term but the smoothing
        penalty couples only variables of the same collocation time, so
        perturbing one local variable at all times together and
        differencing the Lagrangian gradient yields a whole column of
        per-time blocks. The smoothing penalty is quadratic and added
        exactly.
        """
        x = np.asarray(x, dtype=float)
        L = self.layout
        w = L.width
        local = np.vstack([L.index(name, row, np.arange(w))
                           for name, rows in L.sizes.items()
                           for row in range(rows)])
        base = self._local_lagrangian_gradient(x, lam_eq, lam_ineq,
                                               obj_factor)
        rows, cols, values = [], [], []
        for idx in local:
            h = 1.5e-8 * np.maximum(1., np.abs(x[idx]))
            h = np.where(x[idx] + h > self.upper[idx], -h, h)
            shifted = x.copy()
            shifted[idx] += h
            diff = self._local_lagrangian_gradient(
                shifted, lam_eq, lam_ineq, obj_factor) - base
            rows.append(local.ravel())
            cols.append(np.broadcast_to(idx, local.shape).ravel())
            values.append((diff[local] / h).ravel())

        mu = self.spec.mu
        if self.mats.C and mu:
            D = self.grid.D
            block = (obj_factor * 4. * mu / self.horizon *
                     (D.T * self.grid.weights) @ D).ravel()
            for c in range(self.mats.C):
                idx = L.index('alpha', c, np.arange(w))
                rows.append(np.repeat(idx, w))
                cols.append(np.tile(idx, w))
                values.append(block)
        H = sp.coo_matrix((np.concatenate(values),
                           (np.concatenate(rows), np.concatenate(cols))),
                          shape=(self.n, self.n)).tocsr()
        return .5 * (H + H.T)

    # Starting points.

    def random_point(self, rng, margin=.01):
        """
        Random point strictly inside the variable bounds that also
        satisfies every discharge-pressure constraint. Shed withdrawals
        start at their desired values, held ``margin`` inside the bounds.
        """
        refined, mats = self.refined, self.mats
        L = self.layout
        M, E, C, S = [L.sizes[k] for k in ('rho', 'phi', 'alpha', 'd')]
        w = L.width

        def inside(lo, hi, size):
            return lo + (hi - lo) * rng.uniform(margin, 1. - margin, size)

        rho = inside(refined.rho_min[:, None], refined.rho_max[:, None],
                     (M, w))
        scale = max(1e-3, float(np.max(np.abs(self.d_firm), initial=0.)),
                    float(np.max(self.desired, initial=0.)))
        phi = rng.uniform(-.5, .5, (E, w)) * scale
        alpha = np.ones((C, w))
        caps = {}
        for c in range(C):
            node = refined.nodes[mats.slot_nodes[c]]
            top = refined.alpha_max[c]
            if mats.slot_is_slack[c]:
                s = self.s[:, mats.slot_block[c]]
                a_lo = np.maximum(1., node.rho_min / s)
                a_hi = np.minimum(top, node.rho_max / s)
            else:
                a_lo = np.ones(w)
                a_hi = np.full(w, min(top, node.rho_max / node.rho_min))
            if np.any(a_hi <= a_lo):
                raise ImproperlyConfigured(
                    'compressor %s admits no ratio keeping its discharge '
                    'within bounds.' % refined.compressors[c].id)
            alpha[c] = inside(a_lo, a_hi, w)
            if not mats.slot_is_slack[c]:
                p = mats.slot_block[c]
                caps[p] = np.maximum(caps.get(p, 1.), alpha[c])
        for p, cap in caps.items():
            node = refined.nodes[refined.demand_rows[p]]
            rho[p] = inside(node.rho_min, node.rho_max / cap, w)
        d = (np.clip(self.desired, margin * self.desired,
                     (1. - margin) * self.desired) if S else np.zeros((0, w)))
        return L.pack(rho, phi, alpha, d)

    def steady_point(self, alpha=None, margin=.01):
        """
        Point built from the steady state of the boundary data at every
        collocation time, with ratios ``alpha`` (default 1) and the shed
        withdrawals just below their targets. Densities are clipped into
        the interior of their bounds.
        """
        refined, mats = self.refined, self.mats
        L = self.layout
        w = L.width
        if alpha is None:
            alpha = np.ones(refined.C)
        alpha = np.clip(np.asarray(alpha, dtype=float), 1., refined.alpha_max)
        d = (1. - margin) * self.desired
        rho = np.empty((refined.M, w))
        phi = np.empty((refined.E, w))
        state = None
        for k in range(w):
            withdrawal = self.d_firm[k].copy()
            if len(self.shed_pos):
                withdrawal[self.shed_pos] = d[:, k]
            state = steady_state(mats, BoundaryInput(self.s[k], withdrawal,
                                                     alpha=alpha),
                                 initial=state)
            rho[:, k] = state.rho
            phi[:, k] = state.phi
        span = refined.rho_max - refined.rho_min
        rho = np.clip(rho, (refined.rho_min + margin * span)[:, None],
                      (refined.rho_max - margin * span)[:, None])
        alphas = np.repeat(alpha[:, None], w, axis=1)
        top = refined.alpha_max[:, None]
        alphas = np.clip(alphas, 1. + margin * (top - 1.),
                         top - margin * (top - 1.))
        return L.pack(rho, phi, alphas, d)


def build_nlp(spec):
    return NlpProblem(spec)


# OBJECTIVES.

def _quadrature_weights(nlp):
    return nlp.horizon / 2. * nlp.grid.weights


def etc_objective(nlp, x):
    """
    Compressor power sum_c int |phi_c| (alpha_c^(2m) - 1) / eta_c dt, with
    |phi| smoothed as sqrt(phi^2 + eps^2). Returns (value, gradient).
    """
    v = nlp.unpack(x)
    mats = nlp.mats
    grad = np.zeros(nlp.n)
    if not mats.C:
        return 0., grad
    m = nlp.refined.constants.m_exp
    eta = nlp.refined.efficiency[:, None]
    wq = _quadrature_weights(nlp)
    phi = v.phi[mats.slot_edges]
    flow = np.sqrt(phi ** 2 + nlp.spec.epsilon ** 2)
    lift = v.alpha ** (2. * m) - 1.
    value = float(np.sum(wq * flow * lift / eta))

    g = nlp.unpack(grad)
    np.add.at(g.phi, mats.slot_edges, wq * phi / flow * lift / eta)
    g.alpha[:] = wq * flow / eta * 2. * m * v.alpha ** (2. * m - 1.)
    return value, grad


def mls_objective(nlp, x):
    """Weighted shortfall sum_j int c_j (d_j - d_j*)^2 dt."""
    v = nlp.unpack(x)
    grad = np.zeros(nlp.n)
    wq = _quadrature_weights(nlp)
    gap = v.d - nlp.desired
    value = float(np.sum(wq * nlp.priority * gap ** 2))
    nlp.unpack(grad).d[:] = 2. * wq * nlp.priority * gap
    return value, grad


def smoothing_penalty(nlp, x):
    """mu * int (d alpha / dt)^2 dt over every compressor."""
    v = nlp.unpack(x)
    grad = np.zeros(nlp.n)
    mu = nlp.spec.mu
    if not nlp.mats.C or mu == 0:
        return 0., grad
    D = nlp.grid.D
    weights = nlp.grid.weights
    scale = mu * 2. / nlp.horizon
    slopes = v.alpha @ D.T
    value = float(scale * np.sum(slopes ** 2 * weights))
    nlp.unpack(grad).alpha[:] = 2. * scale * (slopes * weights) @ D
    return value, grad


# DERIVATIVE CHECK.

class GradientReport(collections.namedtuple('_GradientReport', (
        'objective_error', 'jacobian_error', 'entries', 'density',
        'passed'))):
    __slots__ = ()

    def to_dict(self):
        return dict(self._asdict())


def check_gradients(nlp, x, h=1e-6, samples=200, seed=0, tol=1e-6):
    """
    Compare analytic derivatives with central differences: the whole
    objective gradient, and ``samples`` randomly chosen structural entries
    of the constraint Jacobian. Errors are |a - fd| / max(1, |a|).
    """
    x = np.asarray(x, dtype=float)
    steps = h * np.maximum(1., np.abs(x))

    grad = nlp.gradient(x)
    fd = np.empty(nlp.n)
    for j in range(nlp.n):
        xp, xm = x.copy(), x.copy()
        xp[j] += steps[j]
        xm[j] -= steps[j]
        fd[j] = (nlp.objective(xp) - nlp.objective(xm)) / (2. * steps[j])
    objective_error = float(np.max(np.abs(grad - fd) /
                                   np.maximum(1., np.abs(grad))))

    J = nlp.jacobian(x).tocoo()
    rng = np.random.default_rng(seed)
    count = min(samples, J.nnz)
    picked = rng.choice(J.nnz, size=count, replace=False) if count else []
    jacobian_error = 0.
    by_column = collections.defaultdict(list)
    for p in picked:
        by_column[int(J.col[p])].append(p)
    for j, entries in sorted(by_column.items()):
        xp, xm = x.copy(), x.copy()
        xp[j] += steps[j]
        xm[j] -= steps[j]
        column = (nlp.constraints(xp) - nlp.constraints(xm)) / (2. * steps[j])
        for p in entries:
            a = J.data[p]
            err = abs(a - column[J.row[p]]) / max(1., abs(a))
            jacobian_error = max(jacobian_error, err)
    passed = objective_error <= tol and jacobian_error <= tol
    logger.info('Gradient check: objective %.3e, Jacobian %.3e over %d '
                'entries.', objective_error, jacobian_error, count)
    return GradientReport(objective_error, float(jacobian_error), count,
                          nlp.density, passed)


# SOLUTIONS.

class CollocationSolution(object):
    """Interpolating view of an NLP point as state and control trajectories."""
    def __init__(self, nlp, x):
        self.nlp = nlp
        self.x = np.array(x, dtype=float)
        v = nlp.unpack(self.x)
        self.rho, self.phi, self.alpha, self.d = (
            v.rho.copy(), v.phi.copy(), v.alpha.copy(), v.d.copy())
        self.horizon = nlp.horizon
        self.times = nlp.times

    def _tau(self, t):
        t = np.clip(np.asarray(t, dtype=float), 0., self.horizon)
        return rescale_time(t, self.horizon)

    def state_at(self, t):
        tau = self._tau(t)
        return RnfState(interpolate(self.nlp.grid, self.rho, tau),
                        interpolate(self.nlp.grid, self.phi, tau))

    def alpha_at(self, t):
        return np.asarray(interpolate(self.nlp.grid, self.alpha,
                                      self._tau(t)))

    def withdrawal_at(self, t):
        """Full demand withdrawal vector at ``t``."""
        scenario = self.nlp.scenario
        d = scenario.withdrawal(float(t), self.nlp.refined)
        if len(self.nlp.shed_pos):
            d[self.nlp.shed_pos] = interpolate(self.nlp.grid, self.d,
                                               self._tau(t))
        return d

    def replay_scenario(self):
        """Scenario carrying the optimized controls and shed withdrawals."""
        refined = self.nlp.refined
        controls = dict(
            (c.id, PolynomialProfile(self.alpha[i], self.horizon, lower=1.,
                                     upper=refined.alpha_max[i]))
            for i, c in enumerate(refined.compressors))
        scenario = self.nlp.scenario.with_controls(controls)
        if self.nlp.spec.shed:
            scenario = scenario.with_withdrawals(dict(
                (node_id, PolynomialProfile(self.d[j], self.horizon,
                                            lower=0.))
                for j, node_id in enumerate(self.nlp.spec.shed)))
        return scenario

    def sample(self, times):
        """
        Dense samples of the collocation polynomials. Returns an ordered
        mapping of (K,)-shaped time column and (K, rows) arrays for rho,
        phi, alpha and the full demand withdrawal d.
        """
        times = np.asarray(times, dtype=float)
        tau = self._tau(times)
        grid = self.nlp.grid
        out = OrderedDict()
        out['t'] = times
        out['rho'] = np.atleast_2d(interpolate(grid, self.rho, tau)).T
        out['phi'] = np.atleast_2d(interpolate(grid, self.phi, tau)).T
        out['alpha'] = np.atleast_2d(interpolate(grid, self.alpha, tau)).T
        out['d'] = np.array([self.withdrawal_at(t) for t in times])
        return out

    def line_pack(self):
        v = self.nlp.unpack(self.x)
        return np.array([self.nlp._masses(v, k)
                         for k in range(self.nlp.layout.width)])

    def periodicity(self):
        mass = self.line_pack()
        return {'rho': float(np.max(np.abs(self.rho[:, 0] - self.rho[:, -1]),
                                    initial=0.)),
                'phi': float(np.max(np.abs(self.phi[:, 0] - self.phi[:, -1]),
                                    initial=0.)),
                'alpha': float(np.max(np.abs(self.alpha[:, 0] -
                                             self.alpha[:, -1]), initial=0.)),
                'd': float(np.max(np.abs(self.d[:, 0] - self.d[:, -1]),
                                  initial=0.)),
                'mass': float(abs(mass[0] - mass[-1]))}

    def objective_parts(self):
        return self.nlp.objective_parts(self.x)

    def to_dict(self):
        refined = self.nlp.refined
        constants = refined.constants
        hours = self.times * constants.time_scale / 3600.
        return {
            'N': self.nlp.layout.N,
            'horizon': self.horizon,
            'tau': self.nlp.grid.nodes.tolist(),
            'times_hours': hours.tolist(),
            'rho': OrderedDict((node_id, self.rho[i].tolist())
                               for i, node_id in
                               enumerate(refined.demand_ids)),
            'phi': OrderedDict((pipe.id, self.phi[e].tolist())
                               for e, pipe in enumerate(refined.pipes)),
            'alpha': OrderedDict((c.id, self.alpha[i].tolist())
                                 for i, c in enumerate(refined.compressors)),
            'd': OrderedDict((node_id, self.d[j].tolist())
                             for j, node_id in
                             enumerate(self.nlp.spec.shed)),
        }
