"""
Forward integration of the reduced network flow model, and the studies
built on it: spatial consistency under refinement, replay of optimized
controls, and the static and quasi-static compressor baselines.
"""
from collections import OrderedDict
import collections
import concurrent.futures
import logging

import numpy as np
from scipy.integrate import solve_ivp
from scipy.integrate import trapezoid

from linepack import BoundaryInput
from linepack import DENSITY_FLOOR
from linepack import DomainError
from linepack import IntegrationError
from linepack import NoSteadyState
from linepack import RnfState
from linepack import StateDomainError
from linepack import assemble_matrices
from linepack import density_to_pressure
from linepack import recover_endpoint_fluxes
from linepack import refine
from linepack import rhs
from linepack import rhs_jacobian
from linepack import steady_state
from pumphouse.scenario import require_horizon


logger = logging.getLogger('linepack.simulate')


Violation = collections.namedtuple('Violation', (
    'item', 'bound', 'time', 'value', 'limit', 'excess'))


class Trajectory(object):
    """
    Sampled solution of the RNF system. Arrays are indexed by sample
    first: ``rho`` is (K, M), ``phi`` is (K, E), ``alpha`` (K, C), ``s``
    and ``s_dot`` (K, b) and ``d`` (K, M).
    """
    def __init__(self, refined, mats, times, rho, phi, alpha, s, s_dot, d,
                 knots=(), solution=None, stats=None):
        self.refined = refined
        self.mats = mats
        self.times = np.asarray(times, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise DomainError('trajectory times must be strictly increasing.')
        self.rho = np.atleast_2d(rho)
        self.phi = np.atleast_2d(phi)
        self.alpha = np.asarray(alpha, dtype=float).reshape(len(self.times),
                                                            -1)
        self.s = np.asarray(s, dtype=float).reshape(len(self.times), -1)
        self.s_dot = np.asarray(s_dot, dtype=float).reshape(len(self.times),
                                                            -1)
        self.d = np.asarray(d, dtype=float).reshape(len(self.times), -1)
        self.knots = tuple(knots)
        self.solution = solution
        self.stats = stats or {}

    def __len__(self):
        return len(self.times)

    def __repr__(self):
        return '<Trajectory %d samples over [%.4g, %.4g]>' % (
            len(self), self.times[0], self.times[-1])

    def state(self, i):
        return RnfState(self.rho[i], self.phi[i])

    def inputs(self, i):
        return BoundaryInput(self.s[i], self.d[i], s_dot=self.s_dot[i],
                             alpha=self.alpha[i])

    def at(self, t):
        """State at time ``t``, from the dense output when available."""
        if self.solution is not None:
            y = self.solution(float(t))
            return RnfState.from_vector(y, self.refined.M)
        rho = [np.interp(t, self.times, col) for col in self.rho.T]
        phi = [np.interp(t, self.times, col) for col in self.phi.T]
        return RnfState(rho, phi)

    def sample(self, times):
        """(len(times), M + E) array of states at ``times``."""
        return np.array([self.at(t).as_vector() for t in times])

    def endpoint_densities(self):
        pairs = [self.mats.endpoint_values(self.rho[i], self.s[i],
                                           self.alpha[i])
                 for i in range(len(self))]
        return (np.array([p[0] for p in pairs]),
                np.array([p[1] for p in pairs]))

    def endpoint_fluxes(self):
        phi0, phiL = [], []
        for i in range(len(self)):
            state, inp = self.state(i), self.inputs(i)
            rho_dot, _ = rhs(state, inp, self.mats, clamp=True)
            a, b = recover_endpoint_fluxes(state, rho_dot, inp.s_dot,
                                           self.mats, inp.alpha)
            phi0.append(a)
            phiL.append(b)
        return np.array(phi0), np.array(phiL)

    def line_pack(self):
        rho0, rhoL = self.endpoint_densities()
        return .5 * (rho0 + rhoL) @ self.mats.lengths

    def discharge(self):
        """(K, C) discharge densities alpha * rho at every compressor."""
        if not self.refined.C:
            return np.zeros((len(self), 0))
        full = np.array([self.mats.nodal(self.rho[i], self.s[i])
                         for i in range(len(self))])
        return self.alpha * full[:, self.mats.slot_nodes]

    def extremes(self):
        """Per node (and per compressor discharge) min/max densities."""
        constants = self.refined.constants
        out = OrderedDict()

        def record(key, values, lo, hi):
            i_min, i_max = int(np.argmin(values)), int(np.argmax(values))
            out[key] = {
                'min': float(values[i_min]), 't_min': float(self.times[i_min]),
                'max': float(values[i_max]), 't_max': float(self.times[i_max]),
                'min_psi': float(density_to_pressure(values[i_min],
                                                     constants)),
                'max_psi': float(density_to_pressure(values[i_max],
                                                     constants)),
                'rho_min': lo, 'rho_max': hi}

        for j, node_id in enumerate(self.refined.slack_ids):
            node = self.refined.node(node_id)
            record(node_id, self.s[:, j], node.rho_min, node.rho_max)
        for j, node_id in enumerate(self.refined.demand_ids):
            node = self.refined.node(node_id)
            record(node_id, self.rho[:, j], node.rho_min, node.rho_max)
        discharge = self.discharge()
        for c, compressor in enumerate(self.refined.compressors):
            node = self.refined.nodes[self.mats.slot_nodes[c]]
            record('compressor:%s' % compressor.id, discharge[:, c],
                   node.rho_min, node.rho_max)
        return out

    def violations(self, tol=0., since=None):
        """
        Bound violations of demand densities and compressor discharges.
        ``tol`` is a fraction of each bound range; ``since`` restricts the
        check to samples at or after that time.
        """
        mask = np.ones(len(self), dtype=bool)
        if since is not None:
            mask = self.times >= since
        times = self.times[mask]
        found = []

        def check(item, values, lo, hi):
            slack = tol * (hi - lo)
            below = lo - values
            above = values - hi
            if np.max(below) > slack:
                i = int(np.argmax(below))
                found.append(Violation(item, 'min', float(times[i]),
                                       float(values[i]), lo, float(below[i])))
            if np.max(above) > slack:
                i = int(np.argmax(above))
                found.append(Violation(item, 'max', float(times[i]),
                                       float(values[i]), hi, float(above[i])))

        for j, node_id in enumerate(self.refined.demand_ids):
            node = self.refined.node(node_id)
            check(node_id, self.rho[mask, j], node.rho_min, node.rho_max)
        discharge = self.discharge()[mask]
        for c, compressor in enumerate(self.refined.compressors):
            node = self.refined.nodes[self.mats.slot_nodes[c]]
            check('compressor:%s' % compressor.id, discharge[:, c],
                  node.rho_min, node.rho_max)
        return found

    def periodicity_residual(self):
        first = self.state(0).as_vector()
        last = self.state(len(self) - 1).as_vector()
        return float(np.max(np.abs(last - first))) if len(first) else 0.


def integrate(refined, mats, scenario, initial, tol=1e-6, samples=200,
              horizon=None, max_step=None):
    """
    Integrate the RNF system from ``initial`` over the scenario horizon
    with an implicit BDF method and the analytic Jacobian. The returned
    trajectory holds ``samples`` uniform samples merged with the
    integrator's own steps and the scenario's breakpoints.
    """
    scenario.validate(refined)
    T = scenario.horizon if horizon is None else float(horizon)
    if T < 0:
        raise DomainError('horizon must be non-negative.')
    M = refined.M
    y0 = RnfState(initial.rho, initial.phi).as_vector()
    if y0.shape[0] != M + refined.E:
        raise DomainError('initial state has %d entries, expected %d.' %
                          (y0.shape[0], M + refined.E))

    def inputs(t):
        return scenario.boundary_input(t, refined)

    if T == 0:
        return _build(refined, mats, scenario, np.zeros(1), y0[:, None])

    progress = {'t': 0.}

    def fun(t, y):
        progress['t'] = t
        state = RnfState.from_vector(y, M)
        rho_dot, phi_dot = rhs(state, inputs(t), mats, clamp=True)
        return np.concatenate([rho_dot, phi_dot])

    def jac(t, y):
        state = RnfState.from_vector(y, M)
        J = rhs_jacobian(state, inputs(t), mats, clamp=True)
        return J.state_matrix(mats)

    def positivity(t, y):
        return np.min(y[:M]) - DENSITY_FLOOR if M else 1.
    positivity.terminal = True
    positivity.direction = -1

    try:
        sol = solve_ivp(fun, (0., T), y0, method='BDF', jac=jac, rtol=tol,
                        atol=tol * 1e-3, dense_output=True,
                        events=positivity,
                        max_step=max_step or T / 100.)
    except StateDomainError as exc:
        err = StateDomainError('%s (at t=%.6g)' % (exc, progress['t']))
        err.t = progress['t']
        raise err

    if sol.status == 1:
        t_hit = float(sol.t_events[0][0])
        err = StateDomainError('a nodal density reached zero at t=%.6g.' %
                               t_hit)
        err.t = t_hit
        raise err
    if sol.status != 0:
        raise IntegrationError('integration stopped at t=%.6g: %s' % (
            sol.t[-1], sol.message), t=float(sol.t[-1]),
            state=RnfState.from_vector(sol.y[:, -1], M))

    times = np.union1d(np.linspace(0., T, max(int(samples), 2)), sol.t)
    knots = [t for t in scenario.knots() if t <= T]
    times = np.union1d(times, knots)
    Y = sol.sol(times)
    Y[:, 0] = y0
    logger.info('Integrated %s over [0, %.6g]: %d steps, %d rhs and %d '
                'Jacobian evaluations, %d LU decompositions.',
                refined.name or 'network', T, len(sol.t) - 1, sol.nfev,
                sol.njev, sol.nlu)
    return _build(refined, mats, scenario, times, Y, knots=knots,
                  solution=sol.sol,
                  stats={'steps': len(sol.t) - 1, 'nfev': sol.nfev,
                         'njev': sol.njev, 'nlu': sol.nlu})


def _build(refined, mats, scenario, times, Y, **kwargs):
    M = refined.M
    alpha = np.array([scenario.alpha(t, refined) for t in times])
    s = np.array([scenario.supply(t, refined) for t in times])
    s_dot = np.array([scenario.supply_rate(t, refined) for t in times])
    d = np.array([scenario.withdrawal(t, refined) for t in times])
    return Trajectory(refined, mats, times, Y[:M].T, Y[M:].T, alpha, s,
                      s_dot, d, **kwargs)


def initial_steady_state(refined, mats, scenario, t=0., initial=None):
    """Steady state for the boundary data frozen at time ``t``."""
    inp = scenario.boundary_input(t, refined)
    return steady_state(mats, BoundaryInput(inp.s, inp.d, alpha=inp.alpha),
                        initial=initial)


# SPATIAL CONSISTENCY.

ConsistencyRow = collections.namedtuple('ConsistencyRow', (
    'coarse', 'fine', 'error', 'ratio'))


class ConsistencyReport(collections.namedtuple('_ConsistencyReport', (
        'rows', 'decreasing', 'min_ratio', 'passed'))):
    __slots__ = ()

    def to_dict(self):
        return {'rows': [row._asdict() for row in self.rows],
                'decreasing': self.decreasing,
                'min_ratio': self.min_ratio,
                'passed': self.passed}


def _study_run(job):
    net, scenario, m, tol, times = job
    pipe = net.pipes[0]
    refined = refine(net, pipe.length_m / m * (1 + 1e-9))
    mats = assemble_matrices(refined)
    initial = initial_steady_state(refined, mats, scenario)
    traj = integrate(refined, mats, scenario, initial, tol=tol)
    values = np.array([traj.at(t).rho for t in times])
    return m, refined.demand_ids, values


def consistency_study(net, scenario, m_list=(5, 10, 20, 40), tol=1e-10,
                      samples=201, min_ratio=1.8, floor=1e-12, workers=1):
    """
    Integrate a single-pipe network at successively finer refinements and
    compare densities at the nodes shared by consecutive refinements. The
    discrete L2 difference should shrink by at least ``min_ratio`` per
    doubling.
    """
    if len(net.pipes) != 1:
        raise DomainError('consistency studies need a single-pipe network.')
    m_list = [int(m) for m in m_list]
    if len(m_list) < 2:
        raise DomainError('consistency studies need at least two '
                          'refinements.')
    for coarse, fine in zip(m_list, m_list[1:]):
        if coarse < 1 or fine % coarse:
            raise DomainError('each refinement must be a multiple of the '
                              'previous one, got %d then %d.' % (coarse, fine))
    T = require_horizon(scenario)
    times = np.linspace(0., T, samples)
    jobs = [(net, scenario, m, tol, times) for m in m_list]

    if workers and workers > 1:
        with concurrent.futures.ProcessPoolExecutor(workers) as executor:
            results = list(executor.map(_study_run, jobs))
    else:
        results = [_study_run(job) for job in jobs]
    by_m = dict((m, (ids, values)) for m, ids, values in results)

    pipe = net.pipes[0]
    outlet = pipe.to_node if not net.node(pipe.to_node).is_slack else None

    def shared_columns(ids, m, coarse):
        columns = []
        step = m // coarse
        for k in range(1, coarse + 1):
            node_id = '%s.%d' % (pipe.id, k * step) if k < coarse else outlet
            if k == coarse and node_id is None:
                continue
            columns.append(ids.index(node_id))
        return columns

    rows = []
    previous = None
    for coarse, fine in zip(m_list, m_list[1:]):
        ids_c, vals_c = by_m[coarse]
        ids_f, vals_f = by_m[fine]
        diff = (vals_c[:, shared_columns(ids_c, coarse, coarse)] -
                vals_f[:, shared_columns(ids_f, fine, coarse)])
        error = float(np.sqrt(trapezoid(np.mean(diff ** 2, axis=1), times) /
                              T))
        ratio = None
        if previous is not None:
            ratio = previous / error if error > floor else float('inf')
        rows.append(ConsistencyRow(coarse, fine, error, ratio))
        logger.info('Consistency %d -> %d: L2 difference %.4e%s.', coarse,
                    fine, error, '' if ratio is None else
                    ' (ratio %.3f)' % ratio)
        previous = error

    errors = [row.error for row in rows]
    decreasing = all(b <= a or b <= floor for a, b in zip(errors, errors[1:]))
    ratios = [row.ratio for row in rows if row.ratio is not None]
    worst = min(ratios) if ratios else float('inf')
    converged = all(e <= floor for e in errors)
    passed = decreasing and (converged or worst >= min_ratio)
    return ConsistencyReport(rows, decreasing, worst, passed)


# VALIDATION OF OPTIMIZED TRAJECTORIES.

class ValidationReport(collections.namedtuple('_ValidationReport', (
        'discrepancy', 'flux_discrepancy', 'violations', 'periodicity',
        'trajectory'))):
    __slots__ = ()

    @property
    def feasible(self):
        return not self.violations

    def to_dict(self):
        return {'discrepancy': self.discrepancy,
                'flux_discrepancy': self.flux_discrepancy,
                'periodicity': self.periodicity,
                'violations': [v._asdict() for v in self.violations]}


def validate_solution(solution, refined, mats, scenario, tol=1e-8,
                      bound_tol=.01, samples=200):
    """
    Re-simulate a collocation solution from its initial state under its
    own controls (``scenario`` carries them as profiles) and compare. The
    density discrepancy is relative to each node's bound range; bound
    violations are reported beyond ``bound_tol`` of that range.
    """
    T = scenario.horizon
    if T == 0:
        return ValidationReport(0., 0., [], 0., None)
    initial = solution.state_at(0.)
    traj = integrate(refined, mats, scenario, initial, tol=tol,
                     samples=samples)
    times = np.linspace(0., T, samples)
    simulated = traj.sample(times)
    planned = np.array([solution.state_at(t).as_vector() for t in times])
    M = refined.M
    span = refined.rho_max - refined.rho_min
    discrepancy = float(np.max(np.abs(simulated[:, :M] - planned[:, :M]) /
                               span)) if M else 0.
    flux_scale = max(1e-12, float(np.max(np.abs(planned[:, M:]))))
    flux_discrepancy = float(np.max(np.abs(simulated[:, M:] -
                                           planned[:, M:])) / flux_scale)
    violations = traj.violations(tol=bound_tol)
    logger.info('Replay discrepancy %.3e (flux %.3e), %d violation(s), '
                'periodicity residual %.3e.', discrepancy, flux_discrepancy,
                len(violations), traj.periodicity_residual())
    return ValidationReport(discrepancy, flux_discrepancy, violations,
                            traj.periodicity_residual(), traj)


# COMPRESSOR BASELINES.

SetpointResult = collections.namedtuple('SetpointResult', (
    'alpha', 'objective', 'feasible', 'relaxation', 'candidates'))


def _excess(refined, mats, rho, s, alpha):
    """
    Largest relative violations (below, above) over samples of the demand
    densities and compressor discharges.
    """
    rho, s, alpha = np.atleast_2d(rho), np.atleast_2d(s), np.atleast_2d(alpha)
    lo, hi = refined.rho_min, refined.rho_max
    below = np.max((lo - rho) / lo) if refined.M else -np.inf
    above = np.max(rho / hi - 1.) if refined.M else -np.inf
    if refined.C:
        full = np.array([mats.nodal(r, b) for r, b in zip(rho, s)])
        discharge = alpha * full[:, mats.slot_nodes]
        nodes = [refined.nodes[i] for i in mats.slot_nodes]
        c_lo = np.array([n.rho_min for n in nodes])
        c_hi = np.array([n.rho_max for n in nodes])
        below = max(below, np.max((c_lo - discharge) / c_lo))
        above = max(above, np.max(discharge / c_hi - 1.))
    return float(below), float(above)


def _power(refined, mats, phi, alpha):
    """Compressor power (K,) for flux samples (K, E) and ratios (K, C)."""
    if not refined.C:
        return np.zeros(len(np.atleast_2d(phi)))
    phi, alpha = np.atleast_2d(phi), np.atleast_2d(alpha)
    m = refined.constants.m_exp
    flow = np.abs(phi[:, mats.slot_edges])
    return np.sum(flow * (alpha ** (2 * m) - 1.) / refined.efficiency,
                  axis=1)


def _alpha_grid(refined, grid):
    if grid is None:
        top = float(np.max(refined.alpha_max)) if refined.C else 1.
        grid = np.linspace(1., top, 121)
    return np.asarray(grid, dtype=float)


def _select(candidates, tol):
    feasible = [c for c in candidates if c['below'] <= tol and
                c['above'] <= tol]
    relaxations = [max(0., c['above']) for c in candidates
                   if c['below'] <= tol]
    relaxation = min(relaxations) if relaxations else float('inf')
    if feasible:
        best = min(feasible, key=lambda c: c['objective'])
        return SetpointResult(best['alpha'], best['objective'], True, 0.,
                              candidates)
    return SetpointResult(None, None, False, relaxation, candidates)


def static_setpoints(refined, mats, scenario, grid=None, tol=1e-9):
    """
    Cheapest uniform compression ratio that keeps the steady state of the
    time-averaged scenario within bounds. The reported objective is the
    steady compressor power integrated over the horizon.
    """
    averaged = scenario.time_average()
    base = averaged.boundary_input(0., refined)
    T = scenario.horizon
    candidates = []
    state = None
    for level in _alpha_grid(refined, grid):
        alpha = np.minimum(level, refined.alpha_max)
        inp = BoundaryInput(base.s, base.d, alpha=alpha)
        try:
            state = steady_state(mats, inp, initial=state)
        except NoSteadyState as exc:
            logger.debug('No steady state at alpha=%.4f: %s', level, exc)
            state = None
            continue
        below, above = _excess(refined, mats, state.rho, base.s, alpha)
        candidates.append({
            'alpha': alpha, 'below': below, 'above': above,
            'objective': float(T * _power(refined, mats, state.phi,
                                          alpha)[0]),
            'state': state})
    result = _select(candidates, tol)
    if result.feasible:
        logger.info('Static setpoints %s, objective %.6g.', result.alpha,
                    result.objective)
    else:
        logger.warning('No feasible static setpoint; upper bounds would '
                       'need relaxing by %.1f%%.', 100 * result.relaxation)
    return result


def quasi_static_setpoints(refined, mats, scenario, grid=None, periods=2,
                           tol=1e-7, bound_tol=1e-9, samples=200):
    """
    Cheapest constant compression ratio whose periodic transient response
    stays within bounds. Each candidate is simulated for ``periods``
    horizons from the steady state at t=0 and judged on the last one.
    """
    T = require_horizon(scenario)
    if not scenario.periodic:
        logger.warning('Quasi-static search on a non-periodic scenario; '
                       'profiles are extrapolated past the horizon.')
    candidates = []
    state = None
    for level in _alpha_grid(refined, grid):
        alpha = np.minimum(level, refined.alpha_max)
        fixed = scenario.with_controls(dict(
            (c.id, float(a)) for c, a in zip(refined.compressors, alpha)))
        try:
            state = initial_steady_state(refined, mats, fixed, initial=state)
            traj = integrate(refined, mats, fixed, state, tol=tol,
                             samples=samples * periods, horizon=periods * T)
        except (NoSteadyState, IntegrationError, StateDomainError) as exc:
            logger.debug('Skipping alpha=%.4f: %s', level, exc)
            state = None
            continue
        start = (periods - 1) * T
        mask = traj.times >= start - 1e-12
        below, above = _excess(refined, mats, traj.rho[mask], traj.s[mask],
                               traj.alpha[mask])
        power = _power(refined, mats, traj.phi[mask], traj.alpha[mask])
        candidates.append({
            'alpha': alpha, 'below': below, 'above': above,
            'objective': float(trapezoid(power, traj.times[mask])),
            'trajectory': traj})
    result = _select(candidates, bound_tol)
    if result.feasible:
        logger.info('Quasi-static setpoints %s, objective %.6g.',
                    result.alpha, result.objective)
    else:
        logger.warning('No feasible quasi-static setpoint; upper bounds '
                       'would need relaxing by %.1f%%.',
                       100 * result.relaxation)
    return result
