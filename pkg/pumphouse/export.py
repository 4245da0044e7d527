"""
CSV and JSON writers for steady states, trajectories, collocation
solutions and reports. Values are written non-dimensional; every writer
also emits the dimensional counterpart, either as extra columns or as a
sidecar of conversion factors.
"""
import csv
import json
import math
import os

import numpy as np

from linepack import PSI
from linepack import density_to_pressure
from linepack import endpoint_densities
from pumphouse.scenario import SECONDS_PER_HOUR


def conversion_factors(constants):
    """Multipliers taking each non-dimensional column to SI (or psi)."""
    return {
        't': {'unit': 's', 'factor': constants.time_scale},
        't_hours': {'unit': 'h',
                    'factor': constants.time_scale / SECONDS_PER_HOUR},
        'rho': {'unit': 'kg/m3', 'factor': constants.nominal_density},
        'pressure': {'unit': 'psi',
                     'factor': constants.pressure_scale / PSI},
        'phi': {'unit': 'kg/m2/s', 'factor': constants.flux_scale},
        'd': {'unit': 'kg/m2/s', 'factor': constants.flux_scale},
        'alpha': {'unit': '1', 'factor': 1.},
        'length': {'unit': 'm', 'factor': constants.nominal_length},
        'constants': constants.to_dict(),
    }


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    elif isinstance(o, np.generic):
        return o.item()
    elif hasattr(o, 'to_dict'):
        return o.to_dict()
    raise TypeError('Unable to serialize %r as JSON' % o)


def _finite(value):
    # JSON has no infinities; reports use null instead.
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return dict((k, _finite(v)) for k, v in value.items())
    if isinstance(value, (list, tuple)):
        return [_finite(v) for v in value]
    return value


class Exporter(object):
    def __init__(self, constants):
        self.constants = constants

    def export(self, file_obj):
        raise NotImplementedError

    def write(self, filename, **kwargs):
        with open(filename, 'w', newline='') as fh:
            self.export(fh, **kwargs)
        return filename


class JSONExporter(Exporter):
    """Dump a mapping (numpy values allowed) as JSON."""
    def __init__(self, data, constants=None):
        super(JSONExporter, self).__init__(constants)
        self.data = data

    def export(self, file_obj, indent=2, **kwargs):
        data = self.data
        if hasattr(data, 'to_dict'):
            data = data.to_dict()
        json.dump(_finite(json.loads(json.dumps(data, default=_default))),
                  file_obj, indent=indent, sort_keys=False, **kwargs)
        file_obj.write('\n')


class CSVExporter(Exporter):
    """Rows come from ``header()`` and ``rows()``."""
    def header(self):
        raise NotImplementedError

    def rows(self):
        raise NotImplementedError

    def export(self, file_obj, header=True, **kwargs):
        writer = csv.writer(file_obj, **kwargs)
        if header:
            writer.writerow(self.header())
        for row in self.rows():
            writer.writerow([_cell(value) for value in row])


def _cell(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


class SteadyNodeExporter(CSVExporter):
    """One row per node: density and pressure with its bounds."""
    def __init__(self, refined, mats, state, inp):
        super(SteadyNodeExporter, self).__init__(refined.constants)
        self.refined = refined
        self.nodal = mats.nodal(state.rho, inp.s)

    def header(self):
        return ['node', 'kind', 'rho', 'rho_kgm3', 'p_psi', 'rho_min',
                'rho_max', 'p_min_psi', 'p_max_psi']

    def rows(self):
        c = self.constants
        for node, rho in zip(self.refined.nodes, self.nodal):
            yield (node.id, node.kind, rho, rho * c.nominal_density,
                   float(density_to_pressure(rho, c)), node.rho_min,
                   node.rho_max, float(density_to_pressure(node.rho_min, c)),
                   float(density_to_pressure(node.rho_max, c)))


class SteadyEdgeExporter(CSVExporter):
    """One row per edge: flux, mass flow and endpoint pressures."""
    def __init__(self, refined, mats, state, inp):
        super(SteadyEdgeExporter, self).__init__(refined.constants)
        self.refined = refined
        self.phi = state.phi
        self.rho0, self.rhoL = endpoint_densities(state, inp, mats)

    def header(self):
        return ['edge', 'from', 'to', 'phi', 'phi_kgm2s', 'mass_flow_kgs',
                'p0_psi', 'pL_psi']

    def rows(self):
        c = self.constants
        for e, pipe in enumerate(self.refined.pipes):
            flux = self.phi[e] * c.flux_scale
            area = math.pi * pipe.diameter ** 2 / 4.
            yield (pipe.id, pipe.from_node, pipe.to_node, self.phi[e], flux,
                   flux * area,
                   float(density_to_pressure(self.rho0[e], c)),
                   float(density_to_pressure(self.rhoL[e], c)))


class TrajectoryExporter(CSVExporter):
    """
    Sampled trajectory: ``t``, the density at every node (slack nodes
    included), the flux on every edge and the compression ratios. All
    columns are non-dimensional; see ``conversion_factors``.
    """
    def __init__(self, trajectory):
        super(TrajectoryExporter, self).__init__(
            trajectory.refined.constants)
        self.trajectory = trajectory

    def header(self):
        refined = self.trajectory.refined
        return (['t'] +
                ['rho_%s' % node.id for node in refined.nodes] +
                ['phi_%s' % pipe.id for pipe in refined.pipes] +
                ['alpha_%s' % c.id for c in refined.compressors])

    def rows(self):
        traj = self.trajectory
        mats = traj.mats
        for i, t in enumerate(traj.times):
            nodal = mats.nodal(traj.rho[i], traj.s[i])
            yield [t] + list(nodal) + list(traj.phi[i]) + list(traj.alpha[i])


class ExtremesExporter(CSVExporter):
    """Min/max density of every node and compressor discharge."""
    def __init__(self, extremes, constants):
        super(ExtremesExporter, self).__init__(constants)
        self.extremes = extremes

    def header(self):
        return ['item', 'min', 'max', 'min_psi', 'max_psi', 't_min',
                't_max', 't_min_hours', 't_max_hours', 'rho_min', 'rho_max',
                'within_bounds']

    def rows(self):
        hours = self.constants.time_scale / SECONDS_PER_HOUR
        for item, e in self.extremes.items():
            ok = e['rho_min'] <= e['min'] and e['max'] <= e['rho_max']
            yield (item, e['min'], e['max'], e['min_psi'], e['max_psi'],
                   e['t_min'], e['t_max'], e['t_min'] * hours,
                   e['t_max'] * hours, e['rho_min'], e['rho_max'],
                   int(ok))


class SolutionExporter(CSVExporter):
    """Dense samples of a collocation solution's states and controls."""
    def __init__(self, solution, samples=201):
        refined = solution.nlp.refined
        super(SolutionExporter, self).__init__(refined.constants)
        self.solution = solution
        self.times = np.linspace(0., solution.horizon, samples)

    def header(self):
        refined = self.solution.nlp.refined
        return (['t', 't_hours'] +
                ['rho_%s' % node_id for node_id in refined.demand_ids] +
                ['phi_%s' % pipe.id for pipe in refined.pipes] +
                ['alpha_%s' % c.id for c in refined.compressors] +
                ['d_%s' % node_id for node_id in refined.demand_ids])

    def rows(self):
        data = self.solution.sample(self.times)
        hours = self.constants.time_scale / SECONDS_PER_HOUR
        for i, t in enumerate(data['t']):
            yield ([t, t * hours] + list(data['rho'][i]) +
                   list(data['phi'][i]) + list(data['alpha'][i]) +
                   list(data['d'][i]))


def write_trajectory(trajectory, directory, name='trajectory'):
    """Write the trajectory CSV, its factor sidecar and the extremes CSV."""
    constants = trajectory.refined.constants
    paths = [
        TrajectoryExporter(trajectory).write(
            os.path.join(directory, name + '.csv')),
        JSONExporter(conversion_factors(constants)).write(
            os.path.join(directory, name + '.units.json')),
        ExtremesExporter(trajectory.extremes(), constants).write(
            os.path.join(directory, name + '.extremes.csv')),
    ]
    return paths


def write_steady(refined, mats, state, inp, directory):
    return [
        SteadyNodeExporter(refined, mats, state, inp).write(
            os.path.join(directory, 'steady_nodes.csv')),
        SteadyEdgeExporter(refined, mats, state, inp).write(
            os.path.join(directory, 'steady_edges.csv')),
    ]


def write_solution(solution, directory, samples=201):
    """Collocation coefficients JSON plus the dense sample CSV."""
    constants = solution.nlp.refined.constants
    return [
        JSONExporter(solution).write(
            os.path.join(directory, 'coefficients.json')),
        SolutionExporter(solution, samples).write(
            os.path.join(directory, 'solution.csv')),
        JSONExporter(conversion_factors(constants)).write(
            os.path.join(directory, 'solution.units.json')),
    ]


def write_report(data, directory, name='report.json'):
    return JSONExporter(data).write(os.path.join(directory, name))
