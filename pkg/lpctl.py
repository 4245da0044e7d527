#!/usr/bin/env python
"""
Command-line front end: steady states, transient simulation, optimal
compression / load shedding, self-checks and the run registry.

    lpctl.py steady NETWORK SCENARIO [--at HOURS]
    lpctl.py simulate NETWORK SCENARIO [--tol TOL]
    lpctl.py optimize NETWORK SCENARIO [--objective etc|mls] [--N N] ...
    lpctl.py check [--grid N] [--gradients NETWORK SCENARIO]
                   [--consistency NETWORK SCENARIO]
    lpctl.py runs --registry runs.db

Every command except ``runs`` writes its results and exactly one
manifest.json into ``--out``.
"""
import datetime
import json
import logging
import os
import sys
from optparse import OptionGroup
from optparse import OptionParser

import numpy as np

from linepack import BoundaryInput
from linepack import DomainError
from linepack import ImproperlyConfigured
from linepack import IntegrationError
from linepack import LinepackException
from linepack import NoSteadyState
from linepack import StateDomainError
from linepack import ValidationError
from linepack import __version__
from linepack import assemble_matrices
from linepack import check_grid
from linepack import density_to_pressure
from linepack import GasNetwork
from linepack import refine
from linepack import steady_state
from pumphouse.export import write_report
from pumphouse.export import write_solution
from pumphouse.export import write_steady
from pumphouse.export import write_trajectory
from pumphouse.manifest import MANIFEST_NAME
from pumphouse.manifest import RunManifest
from pumphouse.registry import RunRegistry
from pumphouse.scenario import Scenario
from pumphouse.scenario import hours_to_time
from pumphouse.scenario import time_to_hours
from pumphouse.simulate import consistency_study
from pumphouse.simulate import initial_steady_state
from pumphouse.simulate import integrate
from pumphouse.simulate import validate_solution
from pumphouse.solver import INFEASIBLE
from pumphouse.solver import MAX_ITER
from pumphouse.solver import NUMERICAL_FAILURE
from pumphouse.solver import OPTIMAL
from pumphouse.solver import SolverConfig
from pumphouse.solver import solve
from pumphouse.solver import steady_feasible_init
from pumphouse.transcribe import CollocationSolution
from pumphouse.transcribe import MASS
from pumphouse.transcribe import MLS
from pumphouse.transcribe import OcpSpec
from pumphouse.transcribe import PERIODIC
from pumphouse.transcribe import build_nlp
from pumphouse.transcribe import check_gradients


logger = logging.getLogger('linepack.cli')

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_NO_STEADY_STATE = 3
EXIT_INTEGRATION = 4
EXIT_INFEASIBLE = 5
EXIT_MAX_ITER = 6
EXIT_NUMERICAL = 7

STATUS_EXIT = {
    OPTIMAL: EXIT_OK,
    INFEASIBLE: EXIT_INFEASIBLE,
    MAX_ITER: EXIT_MAX_ITER,
    NUMERICAL_FAILURE: EXIT_NUMERICAL,
}

COMMANDS = ('steady', 'simulate', 'optimize', 'check', 'runs')

USAGE = """usage: %prog COMMAND [options] [args]

commands:
  steady NETWORK SCENARIO     steady state of the boundary data at --at
  simulate NETWORK SCENARIO   integrate the transient model
  optimize NETWORK SCENARIO   economic compression (etc) or load shedding (mls)
  check                       grid, gradient and refinement self-checks
  runs                        list runs recorded in --registry

exit codes:
  0 ok, 1 check failed, 2 bad input or usage, 3 no steady state,
  4 integration failure, 5 infeasible, 6 iteration limit,
  7 numerical failure"""


class UsageError(LinepackException): pass


def err(msg):
    sys.stderr.write('\033[91m%s\033[0m\n' % msg)
    sys.stderr.flush()


def out(msg=''):
    sys.stdout.write(msg + '\n')


def get_option_parser(command=None):
    parser = OptionParser(usage=USAGE, version='%prog ' + __version__)
    ao = parser.add_option
    ao('-o', '--out', dest='out',
       help=('Result directory. Default is runs/<command>-<timestamp>. It '
             'must not already hold a manifest.'))
    ao('-r', '--registry', dest='registry',
       help='SQLite file in which to record the run.')
    ao('-v', '--verbose', dest='verbose', action='count', default=0,
       help='Log progress (repeat for debugging output).')
    ao('-q', '--quiet', dest='quiet', action='store_true',
       help='Only log errors.')
    ao('--segment-km', dest='segment_km', type='float', default=10.,
       help='Refine pipes into segments of at most this length. Default 10.')

    steady = OptionGroup(parser, 'steady options')
    steady.add_option('--at', dest='at', type='float', default=0.,
                      help='Time in hours at which to freeze the boundary '
                           'data. Default 0.')
    parser.add_option_group(steady)

    simulate = OptionGroup(parser, 'simulate options')
    simulate.add_option('--tol', dest='tol', type='float', default=1e-6,
                        help='Integrator relative tolerance. Default 1e-6.')
    simulate.add_option('--samples', dest='samples', type='int', default=200,
                        help='Uniform output samples. Default 200.')
    simulate.add_option('--bound-tol', dest='bound_tol', type='float',
                        default=.01,
                        help=('Report bound violations beyond this fraction '
                              'of each bound range. Default 0.01.'))
    parser.add_option_group(simulate)

    optimize = OptionGroup(parser, 'optimize options')
    optimize.add_option('--objective', dest='objective', default='etc',
                        choices=['etc', 'mls'],
                        help='etc (compressor power) or mls (load shedding).')
    optimize.add_option('--N', '-N', dest='N', type='int', default=25,
                        help='Collocation order. Default 25.')
    optimize.add_option('--mu', dest='mu', type='float',
                        help='Control smoothing weight. Default N.')
    optimize.add_option('--terminal', dest='terminal', default=PERIODIC,
                        choices=[PERIODIC, MASS],
                        help='periodic (default) or mass.')
    optimize.add_option('--seed', dest='seed', type='int', default=0,
                        help='Seed of the random starting point.')
    optimize.add_option('--init', dest='init', default='random',
                        choices=['random', 'steady'],
                        help='Starting point: random (default) or steady.')
    optimize.add_option('--warm-start', dest='warm_start',
                        help='coefficients.json of an earlier run to start '
                             'from.')
    optimize.add_option('--config', dest='config',
                        help='Solver options file (JSON or TOML).')
    optimize.add_option('--max-iter', dest='max_iter', type='int',
                        help='Override the solver iteration limit.')
    optimize.add_option('--no-validate', dest='validate',
                        action='store_false', default=True,
                        help='Skip the replay of the optimized controls.')
    parser.add_option_group(optimize)

    check = OptionGroup(parser, 'check options')
    check.add_option('--grid', dest='grid', type='int', action='append',
                     help='Check LGL grid exactness for order N '
                          '(repeatable).')
    check.add_option('--gradients', dest='gradients', action='store_true',
                     help='Finite-difference check of NETWORK SCENARIO.')
    check.add_option('--points', dest='points', type='int', default=5,
                     help='Random points for --gradients. Default 5.')
    check.add_option('--consistency', dest='consistency',
                     action='store_true',
                     help='Refinement study of single-pipe NETWORK '
                          'SCENARIO.')
    check.add_option('--refinements', dest='refinements',
                     default='5,10,20,40',
                     help='Segment counts for --consistency.')
    check.add_option('--workers', dest='workers', type='int', default=1,
                     help='Processes for --consistency.')
    parser.add_option_group(check)
    return parser


def configure_logging(options):
    level = logging.WARNING
    if options.quiet:
        level = logging.ERROR
    elif options.verbose == 1:
        level = logging.INFO
    elif options.verbose > 1:
        level = logging.DEBUG
    root = logging.getLogger('linepack')
    root.setLevel(level)
    if not any(getattr(h, '_lpctl', False) for h in root.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(
            '%(asctime)s %(name)s %(levelname)s %(message)s'))
        handler._lpctl = True
        root.addHandler(handler)


# Inputs.

def load_inputs(manifest, network_file, scenario_file, segment_km):
    net = GasNetwork.from_file(network_file)
    scenario = Scenario.from_file(scenario_file, net.constants)
    manifest.add_input('network', network_file)
    manifest.add_input('scenario', scenario_file)
    refined = refine(net, segment_km * 1000.)
    mats = assemble_matrices(refined)
    scenario.validate(refined)
    return net, scenario, refined, mats


def require_args(args, count, names):
    if len(args) != count:
        raise UsageError('expected %s, got %d argument(s).' % (
            ' '.join(names), len(args)))
    for filename in args:
        if not os.path.exists(filename):
            raise UsageError('no such file: %s' % filename)
    return args


def result_directory(options, command):
    directory = options.out
    if not directory:
        stamp = datetime.datetime.now().strftime('%Y%m%d-%H%M%S')
        directory = os.path.join('runs', '%s-%s' % (command, stamp))
    if os.path.exists(os.path.join(directory, MANIFEST_NAME)):
        raise UsageError('%s already holds a manifest; choose another --out.'
                         % directory)
    if not os.path.isdir(directory):
        os.makedirs(directory)
    return directory


# Derivatives of t**k reach k, so their tolerance grows with N.
GRID_TOLERANCES = {
    'quadrature_error': lambda N: 1e-12,
    'differentiation_error': lambda N: 1e-11 * max(1, N),
    'weight_sum_error': lambda N: 1e-12,
    'row_sum_error': lambda N: 1e-13 * max(1, N) ** 2,
}


def grid_passed(result):
    N = result['N']
    return all(result[key] < tol(N) for key, tol in GRID_TOLERANCES.items())


# Commands. Each returns (exit code, output files).

def cmd_steady(options, args, manifest, directory):
    network_file, scenario_file = require_args(args, 2,
                                               ('NETWORK', 'SCENARIO'))
    with manifest.phase('load'):
        net, scenario, refined, mats = load_inputs(
            manifest, network_file, scenario_file, options.segment_km)
    t = hours_to_time(options.at, net.constants)
    if options.at < 0 or t > scenario.horizon * (1 + 1e-12):
        raise UsageError('--at %g lies outside the scenario horizon of %g h.'
                         % (options.at, time_to_hours(scenario.horizon,
                                                      net.constants)))
    inp = scenario.boundary_input(t, refined)
    inp = BoundaryInput(inp.s, inp.d, alpha=inp.alpha)
    with manifest.phase('steady'):
        try:
            state = steady_state(mats, inp)
        except NoSteadyState as exc:
            err('No steady state: %s' % exc)
            manifest.record(converged=False, residual=exc.residual,
                            iterations=exc.iterations)
            return EXIT_NO_STEADY_STATE, []

    files = write_steady(refined, mats, state, inp, directory)
    nodal = mats.nodal(state.rho, inp.s)
    lo = np.array([n.rho_min for n in refined.nodes])
    hi = np.array([n.rho_max for n in refined.nodes])
    outside = [refined.nodes[i].id for i in
               np.flatnonzero((nodal < lo - 1e-12) | (nodal > hi + 1e-12))]
    psi = density_to_pressure(nodal, net.constants)
    report = {'converged': True, 'at_hours': options.at,
              'counts': refined.counts,
              'p_min_psi': float(np.min(psi)), 'p_max_psi': float(np.max(psi)),
              'outside_bounds': outside}
    files.append(write_report(report, directory))
    manifest.record(**report)
    if outside:
        logger.warning('%d node(s) outside their pressure bounds: %s',
                       len(outside), ', '.join(outside[:10]))
    out('steady state of %s at %g h: pressures %.2f .. %.2f psi, %d node(s) '
        'outside bounds' % (net.name or network_file, options.at,
                            np.min(psi), np.max(psi), len(outside)))
    return EXIT_OK, files


def cmd_simulate(options, args, manifest, directory):
    network_file, scenario_file = require_args(args, 2,
                                               ('NETWORK', 'SCENARIO'))
    with manifest.phase('load'):
        net, scenario, refined, mats = load_inputs(
            manifest, network_file, scenario_file, options.segment_km)
    with manifest.phase('initial'):
        try:
            initial = initial_steady_state(refined, mats, scenario)
        except NoSteadyState as exc:
            err('No steady state at t=0: %s' % exc)
            manifest.record(converged=False, residual=exc.residual)
            return EXIT_NO_STEADY_STATE, []
    with manifest.phase('integrate'):
        try:
            traj = integrate(refined, mats, scenario, initial,
                             tol=options.tol, samples=options.samples)
        except (IntegrationError, StateDomainError) as exc:
            t = getattr(exc, 't', None)
            hours = (None if t is None else
                     t * net.constants.time_scale / 3600.)
            err('Integration failed%s: %s' % (
                '' if hours is None else ' at %.4f h' % hours, exc))
            manifest.record(failed_at=t, failed_at_hours=hours)
            return EXIT_INTEGRATION, []

    files = write_trajectory(traj, directory)
    violations = traj.violations(tol=options.bound_tol)
    report = {'samples': len(traj), 'counts': refined.counts,
              'stats': traj.stats,
              'periodicity_residual': traj.periodicity_residual(),
              'violations': [v._asdict() for v in violations],
              'extremes': traj.extremes()}
    files.append(write_report(report, directory))
    manifest.record(samples=len(traj), violations=len(violations),
                    periodicity_residual=report['periodicity_residual'])
    for v in violations:
        logger.warning('%s %s bound violated at t=%.6g: %.6g vs %.6g.',
                       v.item, v.bound, v.time, v.value, v.limit)
    out('simulated %s over %g h: %d samples, %d bound violation(s)' % (
        net.name or network_file,
        time_to_hours(scenario.horizon, net.constants), len(traj),
        len(violations)))
    for v in violations:
        out('  %s: %s %.2f psi at %.2f h (limit %.2f psi)' % (
            v.item, v.bound, density_to_pressure(v.value, net.constants),
            v.time * net.constants.time_scale / 3600.,
            density_to_pressure(v.limit, net.constants)))
    return EXIT_OK, files


def load_warm_start(nlp, filename):
    """Primal vector from the coefficients.json of an earlier run."""
    with open(filename) as fh:
        try:
            data = json.load(fh)
        except ValueError as exc:
            raise ValidationError('%s: invalid JSON (%s).' % (filename, exc))
    if data.get('N') != nlp.layout.N:
        raise ImproperlyConfigured('%s was solved with N=%s, expected %d.' %
                                   (filename, data.get('N'), nlp.layout.N))
    refined = nlp.refined

    def rows(key, ids):
        block = data.get(key) or {}
        try:
            return [block[i] for i in ids]
        except KeyError as exc:
            raise ImproperlyConfigured('%s: no %s values for %s.' %
                                       (filename, key, exc))

    return nlp.layout.pack(
        rows('rho', refined.demand_ids),
        rows('phi', [p.id for p in refined.pipes]),
        rows('alpha', [c.id for c in refined.compressors]),
        rows('d', nlp.spec.shed))


def cmd_optimize(options, args, manifest, directory):
    network_file, scenario_file = require_args(args, 2,
                                               ('NETWORK', 'SCENARIO'))
    with manifest.phase('load'):
        net, scenario, refined, mats = load_inputs(
            manifest, network_file, scenario_file, options.segment_km)
        config = (SolverConfig.from_file(options.config) if options.config
                  else SolverConfig())
        overrides = {'seed': options.seed}
        if options.max_iter:
            overrides['max_iter'] = options.max_iter
        config = config.replace(**overrides)
        if options.config:
            manifest.add_input('solver', options.config)
    with manifest.phase('transcribe'):
        spec = OcpSpec(options.objective, refined, mats, scenario,
                       N=options.N, mu=options.mu, terminal=options.terminal)
        nlp = build_nlp(spec)
    manifest.record(variables=nlp.n, equalities=nlp.m_eq,
                    inequalities=nlp.m_ineq, jacobian_density=nlp.density,
                    counts=refined.counts, mu=spec.mu,
                    solver=config.to_dict())
    init = None
    if options.warm_start:
        manifest.add_input('warm_start', options.warm_start)
        init = load_warm_start(nlp, options.warm_start)
    elif options.init == 'steady':
        init = steady_feasible_init(nlp, margin=config.init_margin)

    with manifest.phase('solve'):
        result = solve(nlp, config, init)
    manifest.timings['solver'] = result.wall_time

    solution = CollocationSolution(nlp, result.x)
    files = write_solution(solution, directory)
    report = result.to_dict()
    report.pop('wall_time')
    report.update({
        'objective_kind': spec.kind,
        'variables': nlp.n,
        'periodicity': solution.periodicity(),
    })
    if spec.kind == MLS:
        shortfall = nlp.desired - solution.d
        report['shed'] = dict(
            (node_id, {'max_shortfall': float(np.max(shortfall[j])),
                       'delivered_min': float(np.min(solution.d[j]))})
            for j, node_id in enumerate(spec.shed))

    if options.validate and result.status in (OPTIMAL, MAX_ITER):
        with manifest.phase('validate'):
            try:
                validation = validate_solution(
                    solution, refined, mats, solution.replay_scenario())
                report['validation'] = validation.to_dict()
                for v in validation.violations:
                    logger.warning('Replay: %s %s bound violated at '
                                   't=%.6g.', v.item, v.bound, v.time)
            except (IntegrationError, StateDomainError,
                    NoSteadyState) as exc:
                logger.warning('Replay of the optimized controls failed: '
                               '%s', exc)
                report['validation'] = {'error': str(exc)}
    files.append(write_report(report, directory))
    manifest.record(status=result.status,
                    objective=result.objective_main,
                    objective_smoothing=result.objective_smoothing,
                    kkt_residual=result.kkt, violation=result.violation,
                    iterations=result.iterations)
    out('%s on %s (N=%d, %d variables): %s, objective %.8g '
        '(smoothing %.3g), KKT %.2e, violation %.2e' % (
            spec.kind, net.name or network_file, spec.N, nlp.n,
            result.status, result.objective_main,
            result.objective_smoothing, result.kkt, result.violation))
    if 'validation' in report and 'discrepancy' in report['validation']:
        out('replay: discrepancy %.3e of bound range, %d violation(s)' % (
            report['validation']['discrepancy'],
            len(report['validation']['violations'])))
    if result.message and result.status != OPTIMAL:
        err(result.message)
    return STATUS_EXIT[result.status], files


def cmd_check(options, args, manifest, directory):
    if not (options.grid or options.gradients or options.consistency):
        raise UsageError('check needs --grid, --gradients or --consistency.')
    if options.gradients and options.consistency:
        raise UsageError('--gradients and --consistency each need their own '
                         'NETWORK SCENARIO; run them separately.')
    report = {}
    passed = True

    for N in options.grid or ():
        with manifest.phase('grid'):
            try:
                result = check_grid(N)
            except DomainError as exc:
                raise UsageError(str(exc))
        ok = grid_passed(result)
        result['passed'] = ok
        report['grid_%d' % N] = result
        passed = passed and ok
        out('grid N=%d: quadrature %.2e, differentiation %.2e, weights '
            '%.2e, row sums %.2e ... %s' % (
                N, result['quadrature_error'],
                result['differentiation_error'], result['weight_sum_error'],
                result['row_sum_error'], 'pass' if ok else 'FAIL'))

    if options.gradients:
        network_file, scenario_file = require_args(
            args, 2, ('NETWORK', 'SCENARIO'))
        net, scenario, refined, mats = load_inputs(
            manifest, network_file, scenario_file, options.segment_km)
        spec = OcpSpec(options.objective, refined, mats, scenario,
                       N=options.N, mu=options.mu, terminal=options.terminal)
        nlp = build_nlp(spec)
        rng = np.random.default_rng(options.seed)
        points = []
        with manifest.phase('gradients'):
            for i in range(options.points):
                x = nlp.random_point(rng)
                r = check_gradients(nlp, x, seed=options.seed + i)
                points.append(r.to_dict())
                passed = passed and r.passed
                out('gradients point %d: objective %.2e, Jacobian %.2e over '
                    '%d entries ... %s' % (i, r.objective_error,
                                           r.jacobian_error, r.entries,
                                           'pass' if r.passed else 'FAIL'))
        report['gradients'] = {'points': points, 'density': nlp.density,
                               'variables': nlp.n}
        out('Jacobian density %.3f%% over %d variables' % (
            100 * nlp.density, nlp.n))

    if options.consistency:
        network_file, scenario_file = require_args(
            args, 2, ('NETWORK', 'SCENARIO'))
        net = GasNetwork.from_file(network_file)
        scenario = Scenario.from_file(scenario_file, net.constants)
        manifest.add_input('network', network_file)
        manifest.add_input('scenario', scenario_file)
        try:
            m_list = [int(m) for m in options.refinements.split(',')]
        except ValueError:
            raise UsageError('--refinements must be comma-separated '
                             'integers.')
        with manifest.phase('consistency'):
            study = consistency_study(net, scenario, m_list,
                                      workers=options.workers)
        report['consistency'] = study.to_dict()
        passed = passed and study.passed
        for row in study.rows:
            out('consistency %d -> %d: %.4e%s' % (
                row.coarse, row.fine, row.error,
                '' if row.ratio is None else ' (ratio %.3f)' % row.ratio))
        out('consistency ... %s' % ('pass' if study.passed else 'FAIL'))

    report['passed'] = passed
    manifest.record(passed=passed)
    return (EXIT_OK if passed else EXIT_CHECK_FAILED), [
        write_report(report, directory)]


def cmd_runs(options, args):
    if not options.registry:
        raise UsageError('runs needs --registry.')
    if not os.path.exists(options.registry):
        raise UsageError('no such registry: %s' % options.registry)
    registry = RunRegistry(options.registry)
    try:
        command = args[0] if args else None
        for run in registry.runs(command=command):
            out('%4d  %-9s %s  exit=%s  %-20s %s  %s' % (
                run.id, run.command, run.fingerprint[:12], run.exit_code,
                run.status or '-',
                '-' if run.objective is None else '%.8g' % run.objective,
                run.directory or ''))
    finally:
        registry.close()
    return EXIT_OK


HANDLERS = {
    'steady': cmd_steady,
    'simulate': cmd_simulate,
    'optimize': cmd_optimize,
    'check': cmd_check,
}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = get_option_parser()
    try:
        options, args = parser.parse_args(argv)
    except SystemExit as exc:
        # --help and --version exit 0; bad options exit 2.
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE

    if not args:
        err('Missing required parameter "command"')
        parser.print_help()
        return EXIT_USAGE
    command, args = args[0], args[1:]
    if command not in COMMANDS:
        err('Unknown command "%s", expected one of: %s' % (
            command, ', '.join(COMMANDS)))
        return EXIT_USAGE
    configure_logging(options)

    if command == 'runs':
        try:
            return cmd_runs(options, args)
        except UsageError as exc:
            err(str(exc))
            return EXIT_USAGE

    flags = dict((key, value) for key, value in vars(options).items()
                 if key not in ('out', 'registry', 'verbose', 'quiet'))
    manifest = RunManifest(command, flags,
                           seed=options.seed if command == 'optimize'
                           else None)
    try:
        directory = result_directory(options, command)
    except (UsageError, OSError) as exc:
        err(str(exc))
        return EXIT_USAGE

    files = []
    try:
        code, files = HANDLERS[command](options, args, manifest, directory)
    except (IntegrationError, StateDomainError) as exc:
        err('Integration failed: %s' % exc)
        manifest.record(error=str(exc))
        code = EXIT_INTEGRATION
    except (UsageError, ValidationError, ImproperlyConfigured,
            DomainError) as exc:
        err('%s: %s' % (type(exc).__name__, exc))
        manifest.record(error=str(exc))
        code = EXIT_USAGE
    except (IOError, OSError) as exc:
        err(str(exc))
        manifest.record(error=str(exc))
        code = EXIT_USAGE
    except NoSteadyState as exc:
        err('No steady state: %s' % exc)
        manifest.record(error=str(exc))
        code = EXIT_NO_STEADY_STATE

    manifest.exit_code = code
    manifest.add_outputs(files)
    manifest.write(directory)
    if options.registry:
        registry = RunRegistry(options.registry)
        try:
            registry.record(manifest, directory=directory)
        finally:
            registry.close()
    out('results in %s (exit %d)' % (directory, code))
    return code


if __name__ == '__main__':
    sys.exit(main())
