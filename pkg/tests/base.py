from contextlib import contextmanager
import logging
import os
import shutil
import tempfile
import unittest

import numpy as np

from linepack import BoundaryInput
from linepack import GasNetwork
from linepack import assemble_matrices
from linepack import refine
from pumphouse.scenario import ConstantProfile
from pumphouse.scenario import Scenario
from pumphouse.scenario import hours_to_time


logger = logging.getLogger('linepack')

VERBOSITY = int(os.environ.get('LINEPACK_TEST_VERBOSITY') or 1)

if VERBOSITY > 1:
    handler = logging.StreamHandler()
    handler.setLevel(logging.INFO)
    logger.addHandler(handler)
if VERBOSITY > 2:
    handler.setLevel(logging.DEBUG)

DATA_DIR = os.path.join(os.path.dirname(os.path.dirname(
    os.path.abspath(__file__))), 'pumphouse', 'data')


def data_path(name):
    return os.path.join(DATA_DIR, name)


def load_network(name='chain5.json'):
    return GasNetwork.from_file(data_path(name))


def load_scenario(net, name='chain5_etc.json'):
    return Scenario.from_file(data_path(name), net.constants)


def prepare(net, segment_km=10.):
    refined = refine(net, segment_km * 1000.)
    return refined, assemble_matrices(refined)


def constant_scenario(net, withdrawals=None, controls=None, hours=24.,
                      shed=None):
    """Scenario with every slack node held at density 1."""
    supplies = dict((node.id, ConstantProfile(1.))
                    for node in net.slack_nodes)
    return Scenario(
        hours_to_time(hours, net.constants),
        withdrawals=dict((k, ConstantProfile(v))
                         for k, v in (withdrawals or {}).items()),
        supplies=supplies,
        controls=dict((k, ConstantProfile(v))
                      for k, v in (controls or {}).items()),
        shed=shed,
        constants=net.constants)


def chain_input(mats, demand=0., alpha=None):
    """Boundary input for the desk chain: unit slack, load at the far end."""
    d = np.zeros(mats.M)
    if mats.M:
        d[-1] = demand
    return BoundaryInput(np.ones(mats.b), d, alpha=alpha)


class LogHandler(logging.Handler):
    def __init__(self, *args, **kwargs):
        self.records = []
        logging.Handler.__init__(self, *args, **kwargs)

    def emit(self, record):
        self.records.append(record)


class BaseTestCase(unittest.TestCase):
    def setUp(self):
        self._lh = LogHandler()
        self._level = logger.level
        logger.setLevel(logging.DEBUG)
        logger.addHandler(self._lh)

    def tearDown(self):
        logger.removeHandler(self._lh)
        logger.setLevel(self._level)

    @property
    def log_records(self):
        return self._lh.records

    def messages(self, level=logging.WARNING):
        return [r.getMessage() for r in self._lh.records
                if r.levelno >= level]

    @contextmanager
    def assertRaisesCtx(self, exceptions):
        try:
            yield
        except Exception as exc:
            if not isinstance(exc, exceptions):
                raise AssertionError('Got %s, expected %s' % (exc, exceptions))
        else:
            raise AssertionError('No exception was raised.')

    def assertArrayAlmostEqual(self, a, b, tol=1e-12):
        a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
        self.assertEqual(a.shape, b.shape)
        if a.size:
            err = float(np.max(np.abs(a - b)))
            self.assertTrue(err <= tol, 'max difference %.3e > %.3e' %
                            (err, tol))


class TempDirTestCase(BaseTestCase):
    def setUp(self):
        super(TempDirTestCase, self).setUp()
        self.tmp = tempfile.mkdtemp(prefix='linepack-test-')

    def tearDown(self):
        shutil.rmtree(self.tmp, ignore_errors=True)
        super(TempDirTestCase, self).tearDown()

    def path(self, *parts):
        return os.path.join(self.tmp, *parts)


def skip_if(expr, reason='n/a'):
    def decorator(method):
        return unittest.skipIf(expr, reason)(method)
    return decorator


def skip_unless(expr, reason='n/a'):
    def decorator(method):
        return unittest.skipUnless(expr, reason)(method)
    return decorator
