import functools
import os
import sys
import time

import numpy as np

from linepack import *
from pumphouse.scenario import Scenario
from pumphouse.simulate import initial_steady_state
from pumphouse.simulate import integrate
from pumphouse.simulate import quasi_static_setpoints
from pumphouse.simulate import validate_solution
from pumphouse.solver import SolverConfig
from pumphouse.solver import solve
from pumphouse.transcribe import ETC
from pumphouse.transcribe import MLS
from pumphouse.transcribe import CollocationSolution
from pumphouse.transcribe import OcpSpec
from pumphouse.transcribe import build_nlp


DATA = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'pumphouse',
                    'data')


def load(network, scenario):
    net = GasNetwork.from_file(os.path.join(DATA, network))
    refined = refine(net, 1e4)
    mats = assemble_matrices(refined)
    return (refined, mats,
            Scenario.from_file(os.path.join(DATA, scenario), net.constants))


chain = load('chain5.json', 'chain5_etc.json')
tree = load('tree25.json', 'tree25_etc.json')
tree_state = initial_steady_state(*tree)
tree_inp = tree[2].boundary_input(0., tree[0])
tree_nlp = build_nlp(OcpSpec(ETC, *tree))
tree_x = tree_nlp.random_point(np.random.default_rng(0))


def timed(N=10):
    def decorator(fn):
        @functools.wraps(fn)
        def inner(*args, **kwargs):
            times = []
            for i in range(N):
                start = time.time()
                fn(i, *args, **kwargs)
                times.append(time.time() - start)
            print('%0.4f ... %s' % (sum(times) / N, fn.__name__))
        return inner
    return decorator

@timed()
def rhs_tree(i):
    for _ in range(100):
        rhs(tree_state, tree_inp, tree[1])

@timed()
def rhs_jacobian_tree(i):
    for _ in range(10):
        rhs_jacobian(tree_state, tree_inp, tree[1])

@timed()
def steady_tree(i):
    initial_steady_state(*tree)

@timed(3)
def integrate_chain_day(i):
    refined, mats, scenario = chain
    integrate(refined, mats, scenario,
              initial_steady_state(refined, mats, scenario))

@timed(3)
def build_tree_nlp(i):
    build_nlp(OcpSpec(ETC, *tree))

@timed()
def constraints_tree(i):
    tree_nlp.constraints_eq(tree_x)
    tree_nlp.constraints_ineq(tree_x)

@timed()
def jacobian_tree(i):
    tree_nlp.jacobian(tree_x)

@timed()
def gradient_tree(i):
    tree_nlp.gradient(tree_x)


def optimize_chain(N=10):
    """Desk-scale ETC against the best constant ratio, then the MLS handoff."""
    refined, mats, scenario = chain
    oracle = quasi_static_setpoints(refined, mats, scenario)
    nlp = build_nlp(OcpSpec(ETC, refined, mats, scenario, N=N))
    result = solve(nlp, SolverConfig(seed=1))
    solution = CollocationSolution(nlp, result.x)
    report = validate_solution(solution, refined, mats,
                               solution.replay_scenario())
    print('etc N=%d: %s objective %.6g (constant ratio %s: %.6g), KKT %.2e, '
          'replay discrepancy %.2e, %d violation(s), %.1fs' % (
              N, result.status, result.objective_main, oracle.alpha,
              oracle.objective if oracle.feasible else np.nan, result.kkt,
              report.discrepancy, len(report.violations), result.wall_time))

    mls_scenario = Scenario.from_file(os.path.join(DATA, 'chain5_mls.json'),
                                      refined.constants)
    # The heavier loads leave compression alone without a feasible schedule.
    nlp = build_nlp(OcpSpec(ETC, refined, mats, mls_scenario, N=N))
    result = solve(nlp, SolverConfig(seed=1))
    print('etc on the shedding scenario: %s (%s)' % (result.status,
                                                    result.message))
    nlp = build_nlp(OcpSpec(MLS, refined, mats, mls_scenario, N=N))
    result = solve(nlp, SolverConfig(seed=1))
    solution = CollocationSolution(nlp, result.x)
    shortfall = nlp.desired - solution.d
    print('mls N=%d: %s objective %.6g, max shortfall %.4g, %.1fs' % (
        N, result.status, result.objective_main, float(np.max(shortfall)),
        result.wall_time))


if __name__ == '__main__':
    print('tree25: %s, %d variables, Jacobian density %.3f%%' % (
        tree[0].summary(), tree_nlp.n, 100 * tree_nlp.density))
    rhs_tree()
    rhs_jacobian_tree()
    steady_tree()
    integrate_chain_day()
    build_tree_nlp()
    constraints_tree()
    jacobian_tree()
    gradient_tree()
    if 'optimize' in sys.argv[1:]:
        optimize_chain()
