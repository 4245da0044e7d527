"""
Time-dependent boundary data for a network: slack supply densities, demand
withdrawals, compression ratios and, for load-shedding runs, the desired
withdrawals and their priority weights.

Every profile is evaluated in non-dimensional time. Scenario files express
times in hours and values in the units named by each profile's ``units``
key; loading converts both.
"""
import json
import logging
import math

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import CubicSpline

from linepack import BoundaryInput
from linepack import DomainError
from linepack import ImproperlyConfigured
from linepack import PSI
from linepack import ValidationError
from linepack import interpolate
from linepack import lgl_grid
from linepack import rescale_time


logger = logging.getLogger('linepack.scenario')

SECONDS_PER_HOUR = 3600.

# Quantity -> accepted units -> converter(value, constants).
_UNITS = {
    'supply': {
        'nondim': lambda v, c: v,
        'psi': lambda v, c: v * PSI / c.pressure_scale,
        'kg/m3': lambda v, c: v / c.nominal_density,
    },
    'withdrawal': {
        'nondim': lambda v, c: v,
        'kg/m2/s': lambda v, c: v / c.flux_scale,
    },
    'control': {'nondim': lambda v, c: v},
    'weight': {'nondim': lambda v, c: v},
}


def hours_to_time(hours, constants):
    return float(hours) * SECONDS_PER_HOUR / constants.time_scale


def time_to_hours(t, constants):
    return np.asarray(t, dtype=float) * constants.time_scale / SECONDS_PER_HOUR


class Profile(object):
    """Scalar function of non-dimensional time with a first derivative."""
    periodic = False

    def __call__(self, t):
        return self.value(t)

    def value(self, t):
        raise NotImplementedError

    def derivative(self, t):
        raise NotImplementedError

    def knots(self):
        """Times at which the profile changes character."""
        return ()

    def mean(self, horizon, samples=2001):
        if horizon <= 0:
            return float(self.value(0.))
        t = np.linspace(0., horizon, samples)
        return float(trapezoid(self.value(t), t) / horizon)

    def scaled(self, factor):
        return ScaledProfile(self, factor)

    def to_dict(self, constants):
        raise NotImplementedError


class ConstantProfile(Profile):
    periodic = True

    def __init__(self, level):
        self.level = float(level)

    def value(self, t):
        return self.level + np.zeros_like(np.asarray(t, dtype=float))

    def derivative(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def mean(self, horizon, samples=None):
        return self.level

    def to_dict(self, constants):
        return {'type': 'constant', 'value': self.level}

    def __repr__(self):
        return '<ConstantProfile %.6g>' % self.level


class BreakpointProfile(Profile):
    """
    Cubic spline through (time, value) breakpoints. Periodic profiles use a
    periodic spline and repeat outside the breakpoint range; the first and
    last values must then agree.
    """
    def __init__(self, times, values, periodic=False):
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if times.ndim != 1 or times.shape != values.shape:
            raise ValidationError('breakpoint times and values must be '
                                  'one-dimensional and of equal length.')
        if len(times) < 2:
            raise ValidationError('a breakpoint profile needs at least two '
                                  'breakpoints.')
        if np.any(np.diff(times) <= 0):
            raise ValidationError('breakpoint times must be strictly '
                                  'increasing.')
        if periodic and not math.isclose(values[0], values[-1], rel_tol=1e-12,
                                         abs_tol=1e-14):
            raise ValidationError('periodic breakpoint profiles must end at '
                                  'their starting value.')
        if periodic:
            values = values.copy()
            values[-1] = values[0]
        self.times = times
        self.values = values
        self.periodic = bool(periodic)
        if periodic:
            self._spline = CubicSpline(times, values, bc_type='periodic',
                                       extrapolate='periodic')
        else:
            self._spline = CubicSpline(times, values)
        self._slope = self._spline.derivative()

    def value(self, t):
        return self._spline(t)

    def derivative(self, t):
        return self._slope(t)

    def knots(self):
        return tuple(self.times)

    def to_dict(self, constants):
        return {'type': 'breakpoints',
                'times': time_to_hours(self.times, constants).tolist(),
                'values': self.values.tolist(),
                'periodic': self.periodic}


class HarmonicProfile(Profile):
    """mean + amplitude * sin(2 pi t / period + phase)."""
    periodic = True

    def __init__(self, mean, amplitude, period, phase=0.):
        if period <= 0:
            raise ValidationError('harmonic period must be positive.')
        self.level = float(mean)
        self.amplitude = float(amplitude)
        self.period = float(period)
        self.phase = float(phase)

    def _arg(self, t):
        return 2. * np.pi * np.asarray(t, dtype=float) / self.period + \
            self.phase

    def value(self, t):
        return self.level + self.amplitude * np.sin(self._arg(t))

    def derivative(self, t):
        return (self.amplitude * 2. * np.pi / self.period *
                np.cos(self._arg(t)))

    def to_dict(self, constants):
        return {'type': 'harmonic', 'mean': self.level,
                'amplitude': self.amplitude,
                'period_hours': float(time_to_hours(self.period, constants)),
                'phase': self.phase}


class PolynomialProfile(Profile):
    """
    Lagrange interpolant through values at the LGL nodes of a horizon
    [0, T]. Used to replay optimized controls and withdrawals.
    """
    def __init__(self, coefficients, horizon, lower=None, upper=None):
        self.coefficients = np.asarray(coefficients, dtype=float)
        self.grid = lgl_grid(len(self.coefficients) - 1)
        self.horizon = float(horizon)
        self.lower = lower
        self.upper = upper
        self._slopes = self.coefficients @ self.grid.D.T * 2. / self.horizon

    def _tau(self, t):
        t = np.clip(np.asarray(t, dtype=float), 0., self.horizon)
        return rescale_time(t, self.horizon)

    def value(self, t):
        out = interpolate(self.grid, self.coefficients, self._tau(t))
        if self.lower is not None or self.upper is not None:
            out = np.clip(out, self.lower, self.upper)
        return out

    def derivative(self, t):
        return interpolate(self.grid, self._slopes, self._tau(t))

    def to_dict(self, constants):
        return {'type': 'polynomial',
                'horizon_hours': float(time_to_hours(self.horizon,
                                                     constants)),
                'values': self.coefficients.tolist()}


class ScaledProfile(Profile):
    def __init__(self, base, factor):
        self.base = base
        self.factor = float(factor)
        self.periodic = base.periodic

    def value(self, t):
        return self.factor * self.base.value(t)

    def derivative(self, t):
        return self.factor * self.base.derivative(t)

    def knots(self):
        return self.base.knots()

    def mean(self, horizon, samples=2001):
        return self.factor * self.base.mean(horizon, samples)

    def to_dict(self, constants):
        data = self.base.to_dict(constants)
        if 'value' in data:
            data['value'] *= self.factor
        if 'values' in data:
            data['values'] = [self.factor * v for v in data['values']]
        if data['type'] == 'harmonic':
            data['mean'] *= self.factor
            data['amplitude'] *= self.factor
        return data


def profile_from_dict(data, constants, quantity, path):
    """Build a profile from its scenario-file representation."""
    if isinstance(data, (int, float)):
        data = {'type': 'constant', 'value': data}
    if not isinstance(data, dict):
        raise ValidationError('%s: expected a number or an object.' % path)
    data = dict(data)
    units = data.pop('units', 'nondim')
    try:
        convert = _UNITS[quantity][units]
    except KeyError:
        raise ValidationError('%s: unsupported units "%s" for %s, expected '
                              'one of: %s.' % (
                                  path, units, quantity,
                                  ', '.join(sorted(_UNITS[quantity]))))
    kind = data.pop('type', 'constant')

    def number(key, default=None):
        if key not in data:
            if default is None:
                raise ValidationError('%s: missing field "%s".' % (path, key))
            return default
        try:
            return float(data.pop(key))
        except (TypeError, ValueError):
            raise ValidationError('%s.%s: expected a number.' % (path, key))

    def numbers(key):
        if key not in data:
            raise ValidationError('%s: missing field "%s".' % (path, key))
        try:
            return np.asarray(data.pop(key), dtype=float)
        except (TypeError, ValueError):
            raise ValidationError('%s.%s: expected a list of numbers.' %
                                  (path, key))

    try:
        if kind == 'constant':
            if 'values' in data:
                level = numbers('values')[0]
            else:
                level = number('value')
            profile = ConstantProfile(convert(level, constants))
        elif kind == 'breakpoints':
            times = [hours_to_time(h, constants) for h in
                     numbers('times' if 'times' in data
                             else 'times_hours')]
            values = convert(numbers('values'), constants)
            profile = BreakpointProfile(times, values,
                                        bool(data.pop('periodic', False)))
        elif kind == 'harmonic':
            mean = convert(number('mean'), constants)
            amplitude = convert(number('amplitude', 0.), constants)
            period = hours_to_time(number('period_hours'), constants)
            profile = HarmonicProfile(mean, amplitude, period,
                                      number('phase', 0.))
        elif kind == 'polynomial':
            horizon = hours_to_time(number('horizon_hours'), constants)
            profile = PolynomialProfile(convert(numbers('values'), constants),
                                        horizon)
        else:
            raise ValidationError('%s: unknown profile type "%s".' %
                                  (path, kind))
    except ValidationError as exc:
        if str(exc).startswith(path):
            raise
        raise ValidationError('%s: %s' % (path, exc))
    if data:
        raise ValidationError('%s: unknown field(s) %s.' % (
            path, ', '.join(sorted(data))))
    return profile


class ShedTarget(object):
    """Desired withdrawal and priority weight of a sheddable node."""
    def __init__(self, desired=None, weight=None):
        self.desired = desired
        self.weight = weight if weight is not None else ConstantProfile(1.)


class Scenario(object):
    def __init__(self, horizon, withdrawals=None, supplies=None, controls=None,
                 shed=None, name=None, constants=None):
        if horizon < 0:
            raise ValidationError('horizon must be non-negative.')
        self.horizon = float(horizon)
        self.withdrawals = dict(withdrawals or {})
        self.supplies = dict(supplies or {})
        self.controls = dict(controls or {})
        self.shed = dict(shed or {})
        self.name = name
        self.constants = constants

    def __repr__(self):
        return '<Scenario %s: T=%.6g, %d withdrawals, %d shed>' % (
            self.name or '', self.horizon, len(self.withdrawals),
            len(self.shed))

    @property
    def periodic(self):
        profiles = (list(self.withdrawals.values()) +
                    list(self.supplies.values()) +
                    list(self.controls.values()))
        return all(p.periodic for p in profiles)

    @property
    def horizon_hours(self):
        if self.constants is None:
            raise ImproperlyConfigured('scenario has no gas constants.')
        return float(time_to_hours(self.horizon, self.constants))

    def validate(self, refined):
        """Check that every referenced id exists in ``refined``."""
        demand = set(refined.demand_ids)
        slack = set(refined.slack_ids)
        for node_id in self.withdrawals:
            if node_id not in demand:
                raise ValidationError('withdrawal at "%s": not a demand node.'
                                      % node_id)
        for node_id in self.supplies:
            if node_id not in slack:
                raise ValidationError('supply at "%s": not a slack node.' %
                                      node_id)
        missing = slack - set(self.supplies)
        if missing:
            raise ValidationError('no supply profile for slack node(s) %s.' %
                                  ', '.join(sorted(missing)))
        known = set(c.id for c in refined.compressors)
        for compressor_id in self.controls:
            if compressor_id not in known:
                raise ValidationError('control for unknown compressor "%s".' %
                                      compressor_id)
        for node_id in self.shed:
            if node_id not in demand:
                raise ValidationError('shed node "%s" is not a demand node.' %
                                      node_id)
        t = np.linspace(0., self.horizon, 201)
        for node_id in refined.slack_ids:
            if np.any(self.supplies[node_id].value(t) <= 0):
                raise ValidationError('supply at "%s" must stay positive.' %
                                      node_id)
        return True

    def knots(self):
        times = set()
        for profile in (list(self.withdrawals.values()) +
                        list(self.supplies.values()) +
                        list(self.controls.values())):
            times.update(t for t in profile.knots()
                         if 0 <= t <= self.horizon)
        return sorted(times)

    # Vector-valued evaluation in the ordering of a refined network.

    def supply(self, t, refined):
        return np.array([float(self.supplies[i].value(t))
                         for i in refined.slack_ids])

    def supply_rate(self, t, refined):
        return np.array([float(self.supplies[i].derivative(t))
                         for i in refined.slack_ids])

    def withdrawal(self, t, refined):
        out = np.zeros(refined.M)
        for node_id, profile in self.withdrawals.items():
            out[refined.demand_position[node_id]] = float(profile.value(t))
        return out

    def alpha(self, t, refined, clamp=True):
        out = np.ones(refined.C)
        for i, c in enumerate(refined.compressors):
            if c.id in self.controls:
                out[i] = float(self.controls[c.id].value(t))
        if clamp:
            out = np.clip(out, 1., refined.alpha_max)
        return out

    def boundary_input(self, t, refined, clamp=True):
        return BoundaryInput(self.supply(t, refined),
                             self.withdrawal(t, refined),
                             s_dot=self.supply_rate(t, refined),
                             alpha=self.alpha(t, refined, clamp=clamp))

    def desired(self, node_id):
        """Desired withdrawal profile of a sheddable node."""
        target = self.shed.get(node_id)
        if target is not None and target.desired is not None:
            return target.desired
        if node_id in self.withdrawals:
            return self.withdrawals[node_id]
        raise ImproperlyConfigured('no desired withdrawal for shed node "%s".'
                                   % node_id)

    def weight(self, node_id):
        target = self.shed.get(node_id)
        return target.weight if target is not None else ConstantProfile(1.)

    # Derived scenarios.

    def _copy(self, **overrides):
        attrs = dict(horizon=self.horizon, withdrawals=self.withdrawals,
                     supplies=self.supplies, controls=self.controls,
                     shed=self.shed, name=self.name, constants=self.constants)
        attrs.update(overrides)
        return type(self)(**attrs)

    def scaled(self, factor, nodes=None):
        """Scale the withdrawals (at ``nodes``, default all) by ``factor``."""
        withdrawals = dict(self.withdrawals)
        for node_id in (nodes if nodes is not None else list(withdrawals)):
            withdrawals[node_id] = withdrawals[node_id].scaled(factor)
        return self._copy(withdrawals=withdrawals)

    def time_average(self):
        """Scenario with every profile replaced by its mean over [0, T]."""
        def avg(profiles):
            return dict((key, ConstantProfile(p.mean(self.horizon)))
                        for key, p in profiles.items())
        return self._copy(withdrawals=avg(self.withdrawals),
                          supplies=avg(self.supplies),
                          controls=avg(self.controls))

    def with_controls(self, controls):
        merged = dict(self.controls)
        for key, value in controls.items():
            if not isinstance(value, Profile):
                value = ConstantProfile(value)
            merged[key] = value
        return self._copy(controls=merged)

    def with_withdrawals(self, withdrawals):
        merged = dict(self.withdrawals)
        merged.update(withdrawals)
        return self._copy(withdrawals=merged)

    def with_horizon(self, horizon):
        return self._copy(horizon=horizon)

    # Serialization.

    @classmethod
    def from_dict(cls, data, constants, name=None):
        if not isinstance(data, dict):
            raise ValidationError('scenario: expected a JSON object.')
        data = dict(data)
        if 'horizon_hours' not in data:
            raise ValidationError('scenario: missing field "horizon_hours".')
        try:
            hours = float(data.pop('horizon_hours'))
        except (TypeError, ValueError):
            raise ValidationError('scenario.horizon_hours: expected a number.')
        if hours < 0:
            raise ValidationError('scenario.horizon_hours must be '
                                  'non-negative.')

        def section(key, quantity):
            items = data.pop(key, None) or {}
            if not isinstance(items, dict):
                raise ValidationError('scenario.%s: expected an object.' % key)
            return dict(
                (str(k), profile_from_dict(v, constants, quantity,
                                           '%s.%s' % (key, k)))
                for k, v in items.items())

        withdrawals = section('withdrawals', 'withdrawal')
        supplies = section('supplies', 'supply')
        controls = section('controls', 'control')
        shed = {}
        raw_shed = data.pop('shed', None) or {}
        if isinstance(raw_shed, list):
            raw_shed = dict((str(node_id), {}) for node_id in raw_shed)
        if not isinstance(raw_shed, dict):
            raise ValidationError('scenario.shed: expected an object or a '
                                  'list of node ids.')
        for node_id, item in raw_shed.items():
            path = 'shed.%s' % node_id
            item = dict(item or {})
            desired = item.pop('desired', None)
            weight = item.pop('weight', 1.)
            if item:
                raise ValidationError('%s: unknown field(s) %s.' % (
                    path, ', '.join(sorted(item))))
            shed[str(node_id)] = ShedTarget(
                profile_from_dict(desired, constants, 'withdrawal',
                                  path + '.desired')
                if desired is not None else None,
                profile_from_dict(weight, constants, 'weight',
                                  path + '.weight'))
        name = name or data.pop('name', None)
        data.pop('name', None)
        data.pop('description', None)
        if data:
            raise ValidationError('scenario: unknown field(s) %s.' %
                                  ', '.join(sorted(data)))
        return cls(hours_to_time(hours, constants), withdrawals, supplies,
                   controls, shed, name=name, constants=constants)

    @classmethod
    def from_file(cls, filename, constants):
        with open(filename) as fh:
            try:
                data = json.load(fh)
            except ValueError as exc:
                raise ValidationError('%s: invalid JSON (%s).' % (filename,
                                                                  exc))
        return cls.from_dict(data, constants)

    def to_dict(self):
        if self.constants is None:
            raise ImproperlyConfigured('scenario has no gas constants.')
        c = self.constants

        def dump(profiles):
            return dict((k, p.to_dict(c)) for k, p in profiles.items())

        shed = {}
        for node_id, target in self.shed.items():
            item = {'weight': target.weight.to_dict(c)}
            if target.desired is not None:
                item['desired'] = target.desired.to_dict(c)
            shed[node_id] = item
        return {'name': self.name,
                'horizon_hours': self.horizon_hours,
                'withdrawals': dump(self.withdrawals),
                'supplies': dump(self.supplies),
                'controls': dump(self.controls),
                'shed': shed}


def require_horizon(scenario):
    if scenario.horizon <= 0:
        raise DomainError('this operation needs a positive horizon.')
    return scenario.horizon
