from collections import OrderedDict
import collections
import functools
import json
import logging
import math
import threading

import networkx as nx
import numpy as np
import scipy.sparse as sp
from scipy.sparse import linalg as spla


__version__ = '0.4.0'
__all__ = [
    'BoundaryInput',
    'Compressor',
    'DomainError',
    'GasConstants',
    'GasNetwork',
    'ImproperlyConfigured',
    'IntegrationError',
    'LglGrid',
    'LinepackException',
    'NetworkMatrices',
    'Node',
    'NoSteadyState',
    'Pipe',
    'RefinedNetwork',
    'RnfJacobian',
    'RnfState',
    'StateDomainError',
    'StructuralError',
    'UnsupportedOrder',
    'ValidationError',
    'assemble_matrices',
    'check_grid',
    'density_to_pressure',
    'differentiate',
    'endpoint_densities',
    'interpolate',
    'interpolation_matrix',
    'lgl_grid',
    'nondimensionalize',
    'physical_time',
    'pressure_to_density',
    'quadrature',
    'recover_endpoint_fluxes',
    'redimensionalize',
    'refine',
    'rescale_time',
    'rhs',
    'rhs_jacobian',
    'steady_state',
    'time_jacobian',
    'total_mass',
    'weighted_incidence',
]

logger = logging.getLogger('linepack')
logger.addHandler(logging.NullHandler())


PSI = 6894.757293168361  # Pascal per psi.
SLACK = 'slack'
DEMAND = 'demand'

# Edge-sum densities below this value are treated as a collapsed state.
DENSITY_FLOOR = 1e-9


# EXCEPTIONS.

class LinepackException(Exception): pass
class ValidationError(LinepackException): pass
class ImproperlyConfigured(LinepackException): pass
class DomainError(LinepackException, ValueError): pass
class StateDomainError(DomainError): pass
class UnsupportedOrder(DomainError): pass
class StructuralError(LinepackException): pass


class NoSteadyState(LinepackException):
    def __init__(self, message, residual=None, iterations=None):
        super(NoSteadyState, self).__init__(message)
        self.residual = residual
        self.iterations = iterations


class IntegrationError(LinepackException):
    def __init__(self, message, t=None, state=None):
        super(IntegrationError, self).__init__(message)
        self.t = t
        self.state = state


# UNITS AND NON-DIMENSIONALIZATION.

class GasConstants(collections.namedtuple('_GasConstants', (
        'sound_speed',
        'nominal_length',
        'nominal_density',
        'm_exp',
        'heat_capacity_ratio'))):
    """
    Network-wide gas constants. Lengths in metres, speeds in m/s and
    densities in kg/m^3. The nominal density defaults to the density of
    gas at 500 psi.
    """
    __slots__ = ()

    def __new__(cls, sound_speed=377.968, nominal_length=1e4,
                nominal_density=None, m_exp=0.2857, heat_capacity_ratio=1.4):
        if nominal_density is None:
            nominal_density = 500. * PSI / float(sound_speed) ** 2
        inst = super(GasConstants, cls).__new__(
            cls,
            float(sound_speed),
            float(nominal_length),
            float(nominal_density),
            float(m_exp),
            float(heat_capacity_ratio))
        inst.validate()
        return inst

    def validate(self):
        if self.sound_speed <= 0:
            raise ValidationError('constants.sound_speed must be positive.')
        if self.nominal_length <= 0:
            raise ValidationError('constants.nominal_length must be positive.')
        if self.nominal_density <= 0:
            raise ValidationError('constants.nominal_density must be '
                                  'positive.')
        if self.heat_capacity_ratio <= 1:
            raise ValidationError('constants.heat_capacity_ratio must exceed '
                                  '1.')
        upper = (self.heat_capacity_ratio - 1.) / self.heat_capacity_ratio
        if not (0 < self.m_exp < upper):
            raise ValidationError('constants.m_exp must lie in (0, %.6f), '
                                  'got %s.' % (upper, self.m_exp))

    @property
    def time_scale(self):
        return self.nominal_length / self.sound_speed

    @property
    def flux_scale(self):
        return self.sound_speed * self.nominal_density

    @property
    def pressure_scale(self):
        return self.sound_speed ** 2 * self.nominal_density

    @classmethod
    def from_dict(cls, data, path='constants'):
        data = dict(data or {})
        kwargs = {}
        keymap = (
            ('sound_speed_mps', 'sound_speed'),
            ('sound_speed', 'sound_speed'),
            ('nominal_length_m', 'nominal_length'),
            ('nominal_length', 'nominal_length'),
            ('nominal_density_kgm3', 'nominal_density'),
            ('nominal_density', 'nominal_density'),
            ('m_exp', 'm_exp'),
            ('heat_capacity_ratio', 'heat_capacity_ratio'))
        for key, dest in keymap:
            if key in data:
                kwargs[dest] = _number(data.pop(key), '%s.%s' % (path, key))
        if 'nominal_pressure_psi' in data:
            p = _number(data.pop('nominal_pressure_psi'),
                        '%s.nominal_pressure_psi' % path)
            a = kwargs.get('sound_speed', 377.968)
            kwargs['nominal_density'] = p * PSI / a ** 2
        if data:
            raise ValidationError('%s: unknown field(s) %s.' % (
                path, ', '.join(sorted(data))))
        return cls(**kwargs)

    def to_dict(self):
        return dict(self._asdict())


_SCALES = {
    'time': lambda c: c.time_scale,
    'length': lambda c: c.nominal_length,
    'density': lambda c: c.nominal_density,
    'flux': lambda c: c.flux_scale,
    'pressure': lambda c: c.pressure_scale,
}


def _scale_for(kind, constants):
    try:
        return _SCALES[kind](constants)
    except KeyError:
        raise DomainError('Unknown quantity kind "%s", expected one of: %s.' %
                          (kind, ', '.join(sorted(_SCALES))))


def _asfloat(value):
    if isinstance(value, (list, tuple)):
        return np.asarray(value, dtype=float)
    return value


def nondimensionalize(value, kind, constants):
    """
    Convert a dimensional SI quantity (s, m, kg/m^3, kg/m^2/s or Pa) into
    network units.
    """
    return _asfloat(value) / _scale_for(kind, constants)


def redimensionalize(value, kind, constants):
    return _asfloat(value) * _scale_for(kind, constants)


def pressure_to_density(p_psi, constants):
    """Non-dimensional density of gas at the given pressure in psi."""
    return _asfloat(p_psi) * PSI / constants.pressure_scale


def density_to_pressure(rho, constants):
    """Pressure in psi of gas at the given non-dimensional density."""
    return _asfloat(rho) * constants.pressure_scale / PSI


def _number(value, path):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ValidationError('%s: expected a number, got %r.' % (path, value))


def _require(data, key, path):
    if not isinstance(data, dict):
        raise ValidationError('%s: expected an object.' % path)
    try:
        return data[key]
    except KeyError:
        raise ValidationError('%s: missing field "%s".' % (path, key))


# NETWORK GRAPH.

class Node(object):
    __slots__ = ('id', 'kind', 'rho_min', 'rho_max', 'parent')

    def __init__(self, id, kind, rho_min, rho_max, parent=None):
        if kind not in (SLACK, DEMAND):
            raise ValidationError('node %s: kind must be "slack" or "demand", '
                                  'got %r.' % (id, kind))
        if not (0 < rho_min < rho_max):
            raise ValidationError('node %s: density bounds must satisfy '
                                  '0 < rho_min < rho_max, got [%s, %s].' %
                                  (id, rho_min, rho_max))
        self.id = str(id)
        self.kind = kind
        self.rho_min = float(rho_min)
        self.rho_max = float(rho_max)
        self.parent = parent

    @property
    def is_slack(self):
        return self.kind == SLACK

    def __repr__(self):
        return '<Node %s (%s) [%.4g, %.4g]>' % (self.id, self.kind,
                                                self.rho_min, self.rho_max)


class Pipe(object):
    __slots__ = ('id', 'from_node', 'to_node', 'length_km', 'diameter',
                 'friction', 'nominal_length', 'parent')

    def __init__(self, id, from_node, to_node, length_km, diameter, friction,
                 nominal_length=1e4, parent=None):
        if length_km <= 0:
            raise ValidationError('pipe %s: length must be positive.' % id)
        if diameter <= 0:
            raise ValidationError('pipe %s: diameter must be positive.' % id)
        if friction <= 0:
            raise ValidationError('pipe %s: friction must be positive.' % id)
        if from_node == to_node:
            raise ValidationError('pipe %s: endpoints must differ.' % id)
        self.id = str(id)
        self.from_node = str(from_node)
        self.to_node = str(to_node)
        self.length_km = float(length_km)
        self.diameter = float(diameter)
        self.friction = float(friction)
        self.nominal_length = float(nominal_length)
        self.parent = parent

    @property
    def length_m(self):
        return self.length_km * 1000.

    @property
    def length(self):
        """Non-dimensional length L/l."""
        return self.length_m / self.nominal_length

    @property
    def resistance(self):
        """Friction coefficient K = l * lambda / D."""
        return self.nominal_length * self.friction / self.diameter

    def __repr__(self):
        return '<Pipe %s: %s -> %s, %.4g km>' % (
            self.id, self.from_node, self.to_node, self.length_km)


class Compressor(object):
    __slots__ = ('id', 'edge', 'orientation', 'alpha_max', 'efficiency')

    def __init__(self, id, edge, orientation='+', alpha_max=2.,
                 efficiency=1.):
        orientation = {'+': '+', '-': '-', '−': '-'}.get(orientation)
        if orientation is None:
            raise ValidationError('compressor %s: orientation must be "+" or '
                                  '"-".' % id)
        if alpha_max < 1:
            raise ValidationError('compressor %s: alpha_max must be >= 1.' %
                                  id)
        if not (0 < efficiency <= 1):
            raise ValidationError('compressor %s: efficiency must lie in '
                                  '(0, 1].' % id)
        self.id = str(id)
        self.edge = str(edge)
        self.orientation = orientation
        self.alpha_max = float(alpha_max)
        self.efficiency = float(efficiency)

    def location(self, pipe):
        """Id of the node the device sits at on the given pipe."""
        return pipe.from_node if self.orientation == '+' else pipe.to_node

    def __repr__(self):
        return '<Compressor %s on %s (%s), alpha <= %.4g>' % (
            self.id, self.edge, self.orientation, self.alpha_max)


class GasNetwork(object):
    def __init__(self, constants, nodes, pipes, compressors=None, name=None):
        self.constants = constants
        self.nodes = list(nodes)
        self.pipes = list(pipes)
        self.compressors = list(compressors or ())
        self.name = name
        self.validate()

    def validate(self):
        self.node_map = _unique(self.nodes, 'node')
        self.pipe_map = _unique(self.pipes, 'pipe')
        self.compressor_map = _unique(self.compressors, 'compressor')

        pairs = set()
        for pipe in self.pipes:
            for node_id in (pipe.from_node, pipe.to_node):
                if node_id not in self.node_map:
                    raise ValidationError('pipe %s: unknown node "%s".' %
                                          (pipe.id, node_id))
            pair = frozenset((pipe.from_node, pipe.to_node))
            if pair in pairs:
                raise ValidationError('pipe %s: at most one edge may join '
                                      'nodes %s and %s.' % (
                                          pipe.id, pipe.from_node,
                                          pipe.to_node))
            pairs.add(pair)

        if not any(node.is_slack for node in self.nodes):
            raise ValidationError('network needs at least one slack node.')
        graph = self.graph()
        if not nx.is_connected(graph.to_undirected()):
            raise ValidationError('network graph is not connected.')

        slots = set()
        for compressor in self.compressors:
            if compressor.edge not in self.pipe_map:
                raise ValidationError('compressor %s: unknown edge "%s".' % (
                    compressor.id, compressor.edge))
            slot = (compressor.edge, compressor.orientation)
            if slot in slots:
                raise ValidationError('compressor %s: edge %s already has a '
                                      'compressor at that end.' % (
                                          compressor.id, compressor.edge))
            slots.add(slot)

    def graph(self):
        graph = nx.DiGraph()
        for node in self.nodes:
            graph.add_node(node.id, kind=node.kind)
        for pipe in self.pipes:
            graph.add_edge(pipe.from_node, pipe.to_node, id=pipe.id,
                           length_km=pipe.length_km)
        return graph

    @property
    def slack_nodes(self):
        return [node for node in self.nodes if node.is_slack]

    @property
    def demand_nodes(self):
        return [node for node in self.nodes if not node.is_slack]

    @property
    def total_length_km(self):
        return math.fsum(pipe.length_km for pipe in self.pipes)

    def node(self, node_id):
        return self.node_map[str(node_id)]

    def pipe(self, pipe_id):
        return self.pipe_map[str(pipe_id)]

    @classmethod
    def from_dict(cls, data, name=None):
        if not isinstance(data, dict):
            raise ValidationError('network: expected a JSON object.')
        constants = GasConstants.from_dict(data.get('constants'))
        nodes = []
        for i, item in enumerate(_require(data, 'nodes', 'network')):
            path = 'nodes[%d]' % i
            node_id = _require(item, 'id', path)
            kind = item.get('kind', DEMAND)
            if 'p_min_psi' in item or 'p_max_psi' in item:
                lo = pressure_to_density(_number(
                    _require(item, 'p_min_psi', path), path + '.p_min_psi'),
                    constants)
                hi = pressure_to_density(_number(
                    _require(item, 'p_max_psi', path), path + '.p_max_psi'),
                    constants)
            else:
                lo = _number(_require(item, 'rho_min', path),
                             path + '.rho_min')
                hi = _number(_require(item, 'rho_max', path),
                             path + '.rho_max')
            try:
                nodes.append(Node(node_id, kind, lo, hi))
            except ValidationError as exc:
                raise ValidationError('%s: %s' % (path, exc))

        pipes = []
        for i, item in enumerate(_require(data, 'pipes', 'network')):
            path = 'pipes[%d]' % i
            try:
                pipes.append(Pipe(
                    item.get('id', 'p%d' % (i + 1)),
                    _require(item, 'from', path),
                    _require(item, 'to', path),
                    _number(_require(item, 'length_km', path),
                            path + '.length_km'),
                    _number(_require(item, 'diameter_m', path),
                            path + '.diameter_m'),
                    _number(_require(item, 'friction', path),
                            path + '.friction'),
                    nominal_length=constants.nominal_length))
            except ValidationError as exc:
                raise ValidationError('%s: %s' % (path, exc))

        compressors = []
        for i, item in enumerate(data.get('compressors') or ()):
            path = 'compressors[%d]' % i
            try:
                compressors.append(Compressor(
                    item.get('id', 'c%d' % (i + 1)),
                    _require(item, 'edge', path),
                    item.get('orientation', '+'),
                    _number(item.get('alpha_max', 2.), path + '.alpha_max'),
                    _number(item.get('efficiency', 1.),
                            path + '.efficiency')))
            except ValidationError as exc:
                raise ValidationError('%s: %s' % (path, exc))

        return cls(constants, nodes, pipes, compressors,
                   name=name or data.get('name'))

    @classmethod
    def from_file(cls, filename):
        with open(filename) as fh:
            try:
                data = json.load(fh)
            except ValueError as exc:
                raise ValidationError('%s: invalid JSON (%s).' % (filename,
                                                                  exc))
        return cls.from_dict(data, name=data.get('name') if
                             isinstance(data, dict) else None)

    def to_dict(self):
        return {
            'name': self.name,
            'constants': self.constants.to_dict(),
            'nodes': [{'id': n.id, 'kind': n.kind, 'rho_min': n.rho_min,
                       'rho_max': n.rho_max} for n in self.nodes],
            'pipes': [{'id': p.id, 'from': p.from_node, 'to': p.to_node,
                       'length_km': p.length_km, 'diameter_m': p.diameter,
                       'friction': p.friction} for p in self.pipes],
            'compressors': [{'id': c.id, 'edge': c.edge,
                             'orientation': c.orientation,
                             'alpha_max': c.alpha_max,
                             'efficiency': c.efficiency}
                            for c in self.compressors]}

    def __repr__(self):
        return '<GasNetwork %s: %d nodes, %d pipes, %d compressors>' % (
            self.name or '', len(self.nodes), len(self.pipes),
            len(self.compressors))


def _unique(items, label):
    accum = OrderedDict()
    for item in items:
        if item.id in accum:
            raise ValidationError('duplicate %s id "%s".' % (label, item.id))
        accum[item.id] = item
    return accum


class RefinedNetwork(GasNetwork):
    """
    Network whose pipes have been split into equal segments no longer than
    ``segment_max`` metres. Demand densities are ordered as the demand nodes
    appear in ``nodes``; slack densities likewise.
    """
    def __init__(self, base, nodes, pipes, compressors, segment_max):
        self.base = base
        self.segment_max = float(segment_max)
        super(RefinedNetwork, self).__init__(
            base.constants, nodes, pipes, compressors, name=base.name)
        self._index()

    def _index(self):
        node_pos = dict((node.id, i) for i, node in enumerate(self.nodes))
        self.node_position = node_pos
        self.pi_e = dict((pipe.id, k) for k, pipe in enumerate(self.pipes))
        self.pi_v0 = np.array([node_pos[p.from_node] for p in self.pipes],
                              dtype=int)
        self.pi_vL = np.array([node_pos[p.to_node] for p in self.pipes],
                              dtype=int)
        self.slack_rows = np.array([i for i, n in enumerate(self.nodes)
                                    if n.is_slack], dtype=int)
        self.demand_rows = np.array([i for i, n in enumerate(self.nodes)
                                     if not n.is_slack], dtype=int)
        self.slack_position = dict(
            (self.nodes[i].id, j) for j, i in enumerate(self.slack_rows))
        self.demand_position = dict(
            (self.nodes[i].id, j) for j, i in enumerate(self.demand_rows))

        self.compressor_edges = np.array(
            [self.pi_e[c.edge] for c in self.compressors], dtype=int)
        self.compressor_nodes = np.array(
            [node_pos[c.location(self.pipe_map[c.edge])]
             for c in self.compressors], dtype=int)
        self.alpha_max = np.array([c.alpha_max for c in self.compressors])
        self.efficiency = np.array([c.efficiency for c in self.compressors])

    V = property(lambda self: len(self.nodes))
    E = property(lambda self: len(self.pipes))
    M = property(lambda self: len(self.demand_rows))
    b = property(lambda self: len(self.slack_rows))
    C = property(lambda self: len(self.compressors))

    @property
    def counts(self):
        return {'V': self.V, 'E': self.E, 'M': self.M, 'b': self.b,
                'C': self.C}

    @property
    def lengths(self):
        return np.array([pipe.length for pipe in self.pipes])

    @property
    def resistances(self):
        return np.array([pipe.resistance for pipe in self.pipes])

    @property
    def demand_ids(self):
        return [self.nodes[i].id for i in self.demand_rows]

    @property
    def slack_ids(self):
        return [self.nodes[i].id for i in self.slack_rows]

    @property
    def rho_min(self):
        return np.array([self.nodes[i].rho_min for i in self.demand_rows])

    @property
    def rho_max(self):
        return np.array([self.nodes[i].rho_max for i in self.demand_rows])

    def summary(self):
        return 'V=%(V)d E=%(E)d M=%(M)d b=%(b)d C=%(C)d' % self.counts


def refine(net, segment_max=1e4):
    """
    Split every pipe of ``net`` into ceil(L / segment_max) equal segments.
    Added nodes are zero-withdrawal demand nodes with the tighter of the
    parent endpoints' density bounds. Compressors stay at their original
    nodes, on the first (``+``) or last (``-``) segment of their pipe.
    """
    if segment_max <= 0:
        raise DomainError('segment_max must be positive.')
    nodes = list(net.nodes)
    taken = set(node.id for node in nodes)
    pipes = []
    segments = {}
    for pipe in net.pipes:
        count = max(1, int(math.ceil(pipe.length_m / segment_max - 1e-9)))
        head = net.node(pipe.from_node)
        tail = net.node(pipe.to_node)
        chain = [pipe.from_node]
        for i in range(1, count):
            node_id = '%s.%d' % (pipe.id, i)
            if node_id in taken:
                raise ValidationError('refinement node id "%s" collides with '
                                      'an existing node.' % node_id)
            taken.add(node_id)
            nodes.append(Node(node_id, DEMAND,
                              max(head.rho_min, tail.rho_min),
                              min(head.rho_max, tail.rho_max),
                              parent=pipe.id))
            chain.append(node_id)
        chain.append(pipe.to_node)

        ids = []
        for i in range(count):
            seg_id = pipe.id if count == 1 else '%s.%d' % (pipe.id, i + 1)
            pipes.append(Pipe(seg_id, chain[i], chain[i + 1],
                              pipe.length_km / count, pipe.diameter,
                              pipe.friction, pipe.nominal_length,
                              parent=pipe.id))
            ids.append(seg_id)
        segments[pipe.id] = ids

    compressors = []
    for c in net.compressors:
        ids = segments[c.edge]
        edge = ids[0] if c.orientation == '+' else ids[-1]
        compressors.append(Compressor(c.id, edge, c.orientation, c.alpha_max,
                                      c.efficiency))

    refined = RefinedNetwork(net, nodes, pipes, compressors, segment_max)
    logger.debug('Refined %r at %.0f m: %s', net, segment_max,
                 refined.summary())
    return refined


# MATRIX ASSEMBLY.

class _Factorization(object):
    """LU factors of W = |A_d| Lambda |B_d^T| for one compression vector."""
    def __init__(self, W):
        self.W = W
        try:
            self.lu = spla.splu(W.tocsc())
        except RuntimeError as exc:
            raise StructuralError('|A_d| Lambda |B_d^T| is singular: %s' %
                                  exc)
        self._inverse = None

    def solve(self, rhs):
        return self.lu.solve(np.asarray(rhs, dtype=float))

    def inverse(self):
        if self._inverse is None:
            self._inverse = self.lu.solve(np.eye(self.W.shape[0]))
        return self._inverse


class _FactorCache(object):
    def __init__(self, size=64):
        self.size = size
        self._data = OrderedDict()
        self._lock = threading.Lock()

    def get(self, key, factory):
        with self._lock:
            if key in self._data:
                self._data.move_to_end(key)
                return self._data[key]
        value = factory()
        with self._lock:
            self._data[key] = value
            while len(self._data) > self.size:
                self._data.popitem(last=False)
        return value

    def clear(self):
        with self._lock:
            self._data.clear()


class NetworkMatrices(object):
    """
    Sparse incidence structure of a refined network.

    ``A`` is the V x E sign incidence (-1 where an edge leaves a node, +1
    where it enters). Row blocks ``A_s``/``A_d`` select slack and demand
    nodes. ``slots`` lists, per compressor, the edge and which end of it
    the compression ratio weights.
    """
    def __init__(self, refined):
        self.refined = refined
        V, E = refined.V, refined.E
        self.V, self.E, self.M, self.b, self.C = (
            V, E, refined.M, refined.b, refined.C)
        self.pi_v0 = refined.pi_v0
        self.pi_vL = refined.pi_vL

        edges = np.arange(E)
        self.A = sp.csr_matrix(
            (np.concatenate([-np.ones(E), np.ones(E)]),
             (np.concatenate([self.pi_v0, self.pi_vL]),
              np.concatenate([edges, edges]))),
            shape=(V, E))
        self.A_s = self.A[refined.slack_rows]
        self.A_d = self.A[refined.demand_rows]
        self.A_L = self.A_d.maximum(0).tocsr()
        self.A_0 = self.A_d.minimum(0).tocsr()
        self.abs_A_d = abs(self.A_d).tocsr()

        self.lengths = refined.lengths
        self.resistances = refined.resistances
        self.Lam = sp.diags(self.lengths).tocsr()
        self.K = sp.diags(self.resistances).tocsr()

        # Position of each node inside its own block (slack or demand).
        block = np.zeros(V, dtype=int)
        is_slack = np.zeros(V, dtype=bool)
        block[refined.slack_rows] = np.arange(refined.b)
        block[refined.demand_rows] = np.arange(refined.M)
        is_slack[refined.slack_rows] = True
        self._block = block
        self._is_slack = is_slack

        self.slot_edges = refined.compressor_edges
        self.slot_nodes = refined.compressor_nodes
        self.slot_from = np.array([c.orientation == '+'
                                   for c in refined.compressors], dtype=bool)
        # Sign of the B entry weighted by each compressor.
        self.slot_sign = np.where(self.slot_from, -1., 1.)
        self.slot_is_slack = is_slack[self.slot_nodes] if self.C else \
            np.zeros(0, dtype=bool)
        self.slot_block = block[self.slot_nodes] if self.C else \
            np.zeros(0, dtype=int)
        self.alpha_max = refined.alpha_max

        # Edge endpoints split by block, used to build B_s and B_d.
        from_slack = is_slack[self.pi_v0]
        to_slack = is_slack[self.pi_vL]
        self._d_from = edges[~from_slack]
        self._d_to = edges[~to_slack]
        self._s_from = edges[from_slack]
        self._s_to = edges[to_slack]

        self._cache = _FactorCache()

    def check_alpha(self, alpha, clamp=False):
        if alpha is None:
            return np.ones(self.C)
        alpha = np.asarray(alpha, dtype=float).reshape(-1)
        if alpha.shape[0] != self.C:
            raise DomainError('expected %d compression ratios, got %d.' %
                              (self.C, alpha.shape[0]))
        if clamp:
            return np.clip(alpha, 1., self.alpha_max)
        tol = 1e-12
        if np.any(alpha < 1 - tol) or np.any(alpha > self.alpha_max + tol):
            raise DomainError('compression ratios %s outside [1, %s].' %
                              (alpha, self.alpha_max))
        return alpha

    def endpoint_factors(self, alpha):
        """Per-edge weights (w0, wL) multiplying the from/to nodal density."""
        w0 = np.ones(self.E)
        wL = np.ones(self.E)
        if self.C:
            w0[self.slot_edges[self.slot_from]] = alpha[self.slot_from]
            wL[self.slot_edges[~self.slot_from]] = alpha[~self.slot_from]
        return w0, wL

    def nodal(self, rho, s):
        """Full V-vector of nodal values from demand and slack blocks."""
        out = np.empty(self.V)
        out[self.refined.demand_rows] = rho
        out[self.refined.slack_rows] = s
        return out

    def endpoint_values(self, rho, s, alpha):
        """Endpoint values (x0, xL) of every edge for nodal values rho, s."""
        w0, wL = self.endpoint_factors(alpha)
        full = self.nodal(rho, s)
        return w0 * full[self.pi_v0], wL * full[self.pi_vL]

    def transposed_blocks(self, alpha):
        """Return (B_s^T, B_d^T) as E x b and E x M sparse matrices."""
        w0, wL = self.endpoint_factors(alpha)
        pos = self._block
        BdT = sp.csr_matrix(
            (np.concatenate([-w0[self._d_from], wL[self._d_to]]),
             (np.concatenate([self._d_from, self._d_to]),
              np.concatenate([pos[self.pi_v0[self._d_from]],
                              pos[self.pi_vL[self._d_to]]]))),
            shape=(self.E, self.M))
        BsT = sp.csr_matrix(
            (np.concatenate([-w0[self._s_from], wL[self._s_to]]),
             (np.concatenate([self._s_from, self._s_to]),
              np.concatenate([pos[self.pi_v0[self._s_from]],
                              pos[self.pi_vL[self._s_to]]]))),
            shape=(self.E, self.b))
        return BsT, BdT

    def factor(self, alpha):
        """Cached factorization of W(alpha) = |A_d| Lambda |B_d^T|."""
        key = np.asarray(alpha, dtype=float).tobytes()

        def build():
            logger.debug('Factorizing W for alpha=%s.', alpha)
            _, BdT = self.transposed_blocks(alpha)
            W = self.abs_A_d @ self.Lam @ abs(BdT)
            return _Factorization(W)
        return self._cache.get(key, build)

    def W(self, alpha=None):
        return self.factor(self.check_alpha(alpha)).W


def assemble_matrices(refined):
    return NetworkMatrices(refined)


def weighted_incidence(mats, alpha=None, clamp=False):
    """
    Weighted incidence B(alpha) and its slack/demand row blocks. Entries
    are -alpha where an edge leaves a node through a compressor, +alpha
    where it enters through one, and +-1 elsewhere.
    """
    alpha = mats.check_alpha(alpha, clamp=clamp)
    w0, wL = mats.endpoint_factors(alpha)
    edges = np.arange(mats.E)
    B = sp.csr_matrix(
        (np.concatenate([-w0, wL]),
         (np.concatenate([mats.pi_v0, mats.pi_vL]),
          np.concatenate([edges, edges]))),
        shape=(mats.V, mats.E))
    refined = mats.refined
    return B, B[refined.slack_rows], B[refined.demand_rows]


# REDUCED NETWORK FLOW.

class RnfState(collections.namedtuple('_RnfState', ('rho', 'phi'))):
    __slots__ = ()

    def __new__(cls, rho, phi):
        return super(RnfState, cls).__new__(
            cls,
            np.asarray(rho, dtype=float).reshape(-1),
            np.asarray(phi, dtype=float).reshape(-1))

    def as_vector(self):
        return np.concatenate([self.rho, self.phi])

    @classmethod
    def from_vector(cls, y, M):
        return cls(y[:M], y[M:])


class BoundaryInput(collections.namedtuple('_BoundaryInput', (
        's', 's_dot', 'd', 'alpha'))):
    __slots__ = ()

    def __new__(cls, s, d, s_dot=None, alpha=None):
        s = np.asarray(s, dtype=float).reshape(-1)
        if np.any(s <= 0):
            raise DomainError('slack densities must be positive.')
        if s_dot is None:
            s_dot = np.zeros_like(s)
        if alpha is not None:
            alpha = np.asarray(alpha, dtype=float).reshape(-1)
        return super(BoundaryInput, cls).__new__(
            cls, s, np.asarray(s_dot, dtype=float).reshape(-1),
            np.asarray(d, dtype=float).reshape(-1), alpha)

    def __getnewargs__(self):
        return (self.s, self.d, self.s_dot, self.alpha)


class RnfJacobian(collections.namedtuple('_RnfJacobian', (
        'rho_phi', 'rho_alpha', 'rho_d', 'phi_from', 'phi_to', 'phi_phi',
        'phi_alpha'))):
    """
    Partial derivatives of the RNF right-hand side. The density rows are
    dense (``W^-1`` couples every demand node); the flux rows touch only
    the two endpoint nodes of each edge, so they are stored per edge:
    ``phi_from[e]`` and ``phi_to[e]`` differentiate ``phi_dot[e]`` by the
    nodal density at its from/to node, ``phi_alpha[c]`` differentiates the
    flux on compressor c's edge by its ratio.
    """
    __slots__ = ()

    def state_matrix(self, mats):
        """Dense (M + E) square Jacobian with respect to (rho, phi)."""
        M, E = mats.M, mats.E
        J = np.zeros((M + E, M + E))
        J[:M, M:] = self.rho_phi
        pos = mats._block
        d_from, d_to = mats._d_from, mats._d_to
        np.add.at(J, (M + d_from, pos[mats.pi_v0[d_from]]),
                  self.phi_from[d_from])
        np.add.at(J, (M + d_to, pos[mats.pi_vL[d_to]]), self.phi_to[d_to])
        J[M + np.arange(E), M + np.arange(E)] = self.phi_phi
        return J


def _edge_sums(state, inp, mats, alpha):
    rho0, rhoL = mats.endpoint_values(state.rho, inp.s, alpha)
    y = rho0 + rhoL
    if np.any(y < DENSITY_FLOOR):
        bad = int(np.argmin(y))
        raise StateDomainError('density collapsed on edge %s (sum of '
                               'endpoint densities %.3e).' %
                               (mats.refined.pipes[bad].id, y[bad]))
    return rho0, rhoL, y


def rhs(state, inp, mats, clamp=False):
    """
    Right-hand side of the reduced network flow ODE:

        rho_dot = W^-1 [4 (A_d phi - d) - |A_d| Lambda |B_s^T| s_dot]
        phi_dot = -Lambda^-1 (B^T rho^N) - K phi |phi| / (|B^T| rho^N)

    with W = |A_d| Lambda |B_d^T| evaluated at ``inp.alpha``.
    """
    alpha = mats.check_alpha(inp.alpha, clamp=clamp)
    rho0, rhoL, y = _edge_sums(state, inp, mats, alpha)
    phi = state.phi

    r = 4. * (mats.A_d @ phi - inp.d)
    if mats.b and np.any(inp.s_dot):
        s0, sL = mats.endpoint_values(np.zeros(mats.M), inp.s_dot, alpha)
        r -= mats.abs_A_d @ (mats.lengths * (s0 + sL))
    rho_dot = mats.factor(alpha).solve(r)
    phi_dot = (-(rhoL - rho0) / mats.lengths -
               mats.resistances * phi * np.abs(phi) / y)
    return rho_dot, phi_dot


def rhs_jacobian(state, inp, mats, rho_dot=None, clamp=False):
    """Partial derivatives of ``rhs`` with respect to state and controls."""
    alpha = mats.check_alpha(inp.alpha, clamp=clamp)
    rho0, rhoL, y = _edge_sums(state, inp, mats, alpha)
    phi = state.phi
    lam = mats.lengths
    if rho_dot is None:
        rho_dot, _ = rhs(state, inp, mats, clamp=clamp)

    W_inv = mats.factor(alpha).inverse()
    rho_phi = 4. * (W_inv @ mats.A_d.toarray())
    rho_d = -4. * W_inv

    w0, wL = mats.endpoint_factors(alpha)
    fric = mats.resistances * phi * np.abs(phi) / y ** 2
    phi_from = w0 * (1. / lam + fric)
    phi_to = wL * (fric - 1. / lam)
    phi_phi = -2. * mats.resistances * np.abs(phi) / y

    C = mats.C
    rho_alpha = np.zeros((mats.M, C))
    phi_alpha = np.zeros(C)
    if C:
        nodal = mats.nodal(state.rho, inp.s)
        nodal_dot = mats.nodal(rho_dot, inp.s_dot)
        k = mats.slot_edges
        scale = lam[k] * nodal_dot[mats.slot_nodes]
        cols = mats.abs_A_d[:, k].toarray()
        rho_alpha = -(W_inv @ cols) * scale
        phi_alpha = nodal[mats.slot_nodes] * (-mats.slot_sign / lam[k] +
                                              fric[k])
    return RnfJacobian(rho_phi, rho_alpha, rho_d, phi_from, phi_to, phi_phi,
                       phi_alpha)


def _steady_residual(rho, phi, inp, mats, alpha):
    rho0, rhoL = mats.endpoint_values(rho, inp.s, alpha)
    balance = mats.A_d @ phi - inp.d
    weymouth = ((rhoL - rho0) * (rho0 + rhoL) +
                mats.lengths * mats.resistances * phi * np.abs(phi))
    return np.concatenate([balance, weymouth]), rho0, rhoL


def steady_state(mats, inp, tol=1e-10, max_iter=50, initial=None):
    """
    Solve A_d phi = d together with the Weymouth relation

        (B^T rho^N) * (|B^T| rho^N) + Lambda K phi |phi| = 0

    by damped Newton with the slack densities fixed.
    """
    alpha = mats.check_alpha(inp.alpha)
    if np.any(inp.s_dot):
        raise DomainError('steady_state requires s_dot = 0.')
    M, E = mats.M, mats.E
    w0, wL = mats.endpoint_factors(alpha)
    pos = mats._block

    if initial is not None:
        rho, phi = initial.rho.copy(), initial.phi.copy()
    else:
        rho = np.full(M, float(np.mean(inp.s)))
        if M == E:
            phi = spla.spsolve(mats.A_d.tocsc(), inp.d)
        else:
            phi = spla.lsqr(mats.A_d, inp.d, atol=1e-14, btol=1e-14)[0]
        phi = np.asarray(phi, dtype=float).reshape(-1)

    d_from, d_to = mats._d_from, mats._d_to
    rows = np.concatenate([d_from, d_to])
    cols = np.concatenate([pos[mats.pi_v0[d_from]], pos[mats.pi_vL[d_to]]])
    LK = mats.lengths * mats.resistances

    def newton_step(rho0, rhoL, phi, F):
        J_rho = sp.csr_matrix(
            (np.concatenate([-2. * rho0[d_from] * w0[d_from],
                             2. * rhoL[d_to] * wL[d_to]]), (rows, cols)),
            shape=(E, M))
        J_phi = sp.diags(np.maximum(2. * np.abs(phi), 1e-10) * LK)
        J = sp.bmat([[None, mats.A_d], [J_rho, J_phi]], format='csc')
        return spla.splu(J).solve(-F)

    F, rho0, rhoL = _steady_residual(rho, phi, inp, mats, alpha)
    norm = np.max(np.abs(F))
    iteration = 0
    while norm >= tol:
        if iteration >= max_iter:
            raise NoSteadyState('Newton did not converge in %d iterations '
                                '(residual %.3e).' % (max_iter, norm),
                                residual=norm, iterations=iteration)
        iteration += 1
        try:
            step = newton_step(rho0, rhoL, phi, F)
        except RuntimeError as exc:
            raise NoSteadyState('singular Newton system: %s' % exc,
                                residual=norm, iterations=iteration)

        # Halve the step until densities stay positive and the residual
        # decreases.
        t = 1.
        while True:
            trial_rho = rho + t * step[:M]
            trial_phi = phi + t * step[M:]
            if np.all(trial_rho > 0):
                trial_F, t0, tL = _steady_residual(trial_rho, trial_phi, inp,
                                                   mats, alpha)
                trial_norm = np.max(np.abs(trial_F))
                if np.all(t0 + tL > DENSITY_FLOOR) and trial_norm < norm:
                    break
            t *= .5
            if t < 2. ** -30:
                raise NoSteadyState('line search failed at iteration %d '
                                    '(residual %.3e).' % (iteration, norm),
                                    residual=norm, iterations=iteration)
        rho, phi, F, rho0, rhoL, norm = (trial_rho, trial_phi, trial_F, t0,
                                         tL, trial_norm)
        logger.debug('steady_state iteration %d: residual %.3e, step %.3g',
                     iteration, norm, t)

    # One undamped polishing step once inside the tolerance.
    try:
        step = newton_step(rho0, rhoL, phi, F)
    except RuntimeError:
        step = None
    if step is not None and np.all(rho + step[:M] > 0):
        trial_F, _, _ = _steady_residual(rho + step[:M], phi + step[M:], inp,
                                         mats, alpha)
        if np.max(np.abs(trial_F)) < norm:
            rho, phi = rho + step[:M], phi + step[M:]
    return RnfState(rho, phi)


def endpoint_densities(state, inp, mats):
    """Endpoint densities (rho0, rhoL) of every edge."""
    alpha = mats.check_alpha(inp.alpha, clamp=True)
    return mats.endpoint_values(state.rho, inp.s, alpha)


def recover_endpoint_fluxes(state, rho_dot, s_dot, mats, alpha=None):
    """Endpoint fluxes (phi0, phiL) from the edge-average flux and rates."""
    alpha = mats.check_alpha(alpha, clamp=True)
    r0, rL = mats.endpoint_values(rho_dot, s_dot, alpha)
    phi_minus = -.25 * mats.lengths * (r0 + rL)
    return state.phi - phi_minus, state.phi + phi_minus


def total_mass(state, inp, mats):
    """Line-pack: sum over edges of L * (rho0 + rhoL) / 2."""
    rho0, rhoL = endpoint_densities(state, inp, mats)
    return .5 * float(np.dot(mats.lengths, rho0 + rhoL))


# LEGENDRE-GAUSS-LOBATTO GRIDS.

class LglGrid(object):
    __slots__ = ('order', 'nodes', 'weights', 'D', 'barycentric')

    def __init__(self, order, nodes, weights, D, barycentric):
        for arr in (nodes, weights, D, barycentric):
            arr.flags.writeable = False
        self.order = order
        self.nodes = nodes
        self.weights = weights
        self.D = D
        self.barycentric = barycentric

    def __len__(self):
        return self.order + 1

    def __repr__(self):
        return '<LglGrid N=%d>' % self.order


def _legendre(N, x):
    """Return (L_N(x), L_{N-1}(x)) by the three-term recurrence."""
    p_prev = np.ones_like(x)
    p = x.copy()
    for n in range(1, N):
        p_prev, p = p, ((2 * n + 1) * x * p - n * p_prev) / (n + 1)
    return p, p_prev


@functools.lru_cache(maxsize=64)
def lgl_grid(N):
    N = int(N)
    if N < 1:
        raise UnsupportedOrder('LGL grids need N >= 1, got %d.' % N)

    # Newton iteration on (1 - x^2) L_N'(x) from Chebyshev-Lobatto points.
    x = -np.cos(np.pi * np.arange(N + 1) / N)
    for _ in range(100):
        p, p_prev = _legendre(N, x)
        x_old = x
        x = x_old - (x * p - p_prev) / ((N + 1) * p)
        if np.max(np.abs(x - x_old)) < 1e-15:
            break
    x = .5 * (x - x[::-1])
    x[0], x[-1] = -1., 1.
    if N % 2 == 0:
        x[N // 2] = 0.

    p, _ = _legendre(N, x)
    w = 2. / (N * (N + 1) * p ** 2)

    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.)
    D = (p[:, None] / p[None, :]) / diff
    np.fill_diagonal(D, 0.)
    np.fill_diagonal(D, -D.sum(axis=1))

    bary = 1. / np.prod(diff, axis=1)
    return LglGrid(N, x, w, D, bary)


def _check_samples(grid, samples):
    samples = np.asarray(samples, dtype=float)
    if samples.shape[-1] != grid.order + 1:
        raise DomainError('expected %d samples on the last axis, got %d.' %
                          (grid.order + 1, samples.shape[-1]))
    return samples


def quadrature(grid, samples):
    return _check_samples(grid, samples) @ grid.weights


def differentiate(grid, samples):
    """Derivative samples D x, taken along the last axis."""
    return _check_samples(grid, samples) @ grid.D.T


def interpolation_matrix(grid, t):
    """Matrix of Lagrange basis values l_k(t_j), shape (len(t), N + 1)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < -1 - 1e-12) or np.any(t > 1 + 1e-12):
        raise DomainError('interpolation points must lie in [-1, 1].')
    t = np.clip(t, -1., 1.)
    diff = t[:, None] - grid.nodes[None, :]
    exact = diff == 0
    with np.errstate(divide='ignore', invalid='ignore'):
        terms = grid.barycentric[None, :] / diff
    hit = exact.any(axis=1)
    terms[hit] = exact[hit].astype(float)
    return terms / terms.sum(axis=1)[:, None]


def interpolate(grid, coefficients, t):
    """Evaluate sum_k c_k l_k(t) barycentrically."""
    coefficients = _check_samples(grid, coefficients)
    values = coefficients @ interpolation_matrix(grid, t).T
    if np.ndim(t) == 0:
        return values[..., 0] if values.ndim > 1 else float(values[0])
    return values


def rescale_time(t, T):
    if T <= 0:
        raise DomainError('horizon must be positive.')
    return (2. * _asfloat(t) - T) / T


def physical_time(tau, T):
    if T <= 0:
        raise DomainError('horizon must be positive.')
    return (_asfloat(tau) + 1.) * T / 2.


def time_jacobian(T):
    return T / 2.


def check_grid(N):
    """
    Measure the exactness properties of the order-N grid: monomial
    quadrature up to degree 2N-1, differentiation up to degree N, the
    weight sum and the row sums of D.
    """
    grid = lgl_grid(N)
    x = grid.nodes
    quad_error = 0.
    for k in range(2 * N):
        exact = 0. if k % 2 else 2. / (k + 1)
        quad_error = max(quad_error, abs(quadrature(grid, x ** k) - exact))
    diff_error = 0.
    for k in range(1, N + 1):
        expected = k * x ** (k - 1)
        diff_error = max(diff_error,
                         np.max(np.abs(differentiate(grid, x ** k) -
                                       expected)))
    return {
        'N': N,
        'quadrature_error': quad_error,
        'differentiation_error': diff_error,
        'weight_sum_error': abs(grid.weights.sum() - 2.),
        'row_sum_error': float(np.max(np.abs(grid.D.sum(axis=1)))),
        'symmetry_error': float(max(np.max(np.abs(x + x[::-1])),
                                    np.max(np.abs(grid.weights -
                                                  grid.weights[::-1])))),
    }
