from contextlib import redirect_stderr
from contextlib import redirect_stdout
import csv
import io
import json
import os

import lpctl
from pumphouse.manifest import RunManifest

from .base import TempDirTestCase
from .base import data_path


class TestCommandLine(TempDirTestCase):
    def lpctl(self, *argv):
        stdout, stderr = io.StringIO(), io.StringIO()
        with redirect_stdout(stdout), redirect_stderr(stderr):
            code = lpctl.main([str(arg) for arg in argv])
        self.stdout = stdout.getvalue()
        self.stderr = stderr.getvalue()
        return code

    def chain(self, scenario='chain5_etc.json'):
        return data_path('chain5.json'), data_path(scenario)

    def test_usage(self):
        self.assertEqual(self.lpctl('--version'), 0)
        self.assertEqual(self.lpctl(), lpctl.EXIT_USAGE)
        self.assertEqual(self.lpctl('launch'), lpctl.EXIT_USAGE)
        self.assertTrue('Unknown command' in self.stderr)
        self.assertEqual(self.lpctl('steady', '--no-such-flag'),
                         lpctl.EXIT_USAGE)
        self.assertEqual(self.lpctl('runs'), lpctl.EXIT_USAGE)

    def test_missing_file(self):
        out = self.path('missing')
        code = self.lpctl('steady', data_path('chain5.json'),
                          self.path('nope.json'), '--out', out)
        self.assertEqual(code, lpctl.EXIT_USAGE)
        self.assertTrue('no such file' in self.stderr)
        data = RunManifest.read(out)
        self.assertEqual(data['exit_code'], lpctl.EXIT_USAGE)
        self.assertTrue('error' in data['results'])

    def test_steady(self):
        out = self.path('steady')
        code = self.lpctl('steady', *self.chain(), '--at', 12, '--out', out)
        self.assertEqual(code, 0)
        self.assertEqual(sorted(os.listdir(out)),
                         ['manifest.json', 'report.json', 'steady_edges.csv',
                          'steady_nodes.csv'])
        data = RunManifest.read(out)
        self.assertEqual(data['command'], 'steady')
        self.assertEqual(data['exit_code'], 0)
        self.assertEqual(data['flags']['at'], 12.)
        self.assertEqual(sorted(data['inputs']), ['network', 'scenario'])
        self.assertEqual(data['results']['outside_bounds'], [])
        self.assertEqual(len(data['outputs']), 3)

        with open(os.path.join(out, 'steady_nodes.csv'), newline='') as fh:
            rows = list(csv.reader(fh))
        self.assertEqual(len(rows), 6)

        # A directory holding a manifest is never reused.
        code = self.lpctl('steady', *self.chain(), '--out', out)
        self.assertEqual(code, lpctl.EXIT_USAGE)
        self.assertTrue('already holds a manifest' in self.stderr)

    def test_steady_outside_horizon(self):
        out = self.path('late')
        code = self.lpctl('steady', *self.chain(), '--at', 30, '--out', out)
        self.assertEqual(code, lpctl.EXIT_USAGE)

    def test_fingerprint_reproducible(self):
        fingerprints = []
        for name in ('a', 'b'):
            out = self.path(name)
            self.assertEqual(self.lpctl('steady', *self.chain(), '--at', 6,
                                        '--out', out), 0)
            fingerprints.append(RunManifest.read(out)['fingerprint'])
        self.assertEqual(fingerprints[0], fingerprints[1])

    def test_simulate(self):
        out = self.path('sim')
        code = self.lpctl('simulate', *self.chain(), '--samples', 20,
                          '--out', out)
        self.assertEqual(code, 0)
        self.assertEqual(sorted(os.listdir(out)),
                         ['manifest.json', 'report.json', 'trajectory.csv',
                          'trajectory.extremes.csv',
                          'trajectory.units.json'])
        data = RunManifest.read(out)
        samples = data['results']['samples']
        self.assertTrue(samples >= 20)
        self.assertTrue('integrate' in data['timings'])
        self.assertTrue('simulated' in self.stdout)

        with open(os.path.join(out, 'trajectory.csv'), newline='') as fh:
            rows = list(csv.reader(fh))
        self.assertEqual(len(rows), samples + 1)
        self.assertEqual(rows[0][0], 't')

    def test_check_grid(self):
        out = self.path('check')
        code = self.lpctl('check', '--grid', 10, '--grid', 4, '--out', out)
        self.assertEqual(code, 0)
        with open(os.path.join(out, 'report.json')) as fh:
            report = json.load(fh)
        self.assertTrue(report['passed'])
        self.assertEqual(sorted(report), ['grid_10', 'grid_4', 'passed'])
        self.assertTrue('grid N=10' in self.stdout)

        code = self.lpctl('check', '--out', self.path('nothing'))
        self.assertEqual(code, lpctl.EXIT_USAGE)
        code = self.lpctl('check', '--grid', 0, '--out', self.path('bad'))
        self.assertEqual(code, lpctl.EXIT_USAGE)

    def test_optimize(self):
        out = self.path('opt')
        code = self.lpctl('optimize', *self.chain(), '--N', 10, '--out', out)
        self.assertEqual(code, 0, self.stderr)
        self.assertTrue('optimal' in self.stdout)
        self.assertTrue('replay: discrepancy' in self.stdout)
        data = RunManifest.read(out)
        self.assertEqual(data['exit_code'], 0)
        self.assertEqual(data['results']['status'], 'optimal')
        self.assertTrue(data['results']['violation'] <= 1e-8)
        self.assertTrue('validate' in data['timings'])
        with open(os.path.join(out, 'report.json')) as fh:
            report = json.load(fh)
        self.assertTrue(report['validation']['discrepancy'] < .01)
        self.assertEqual(report['validation']['violations'], [])

    def test_optimize_iteration_limit(self):
        out = self.path('opt')
        code = self.lpctl('optimize', *self.chain(), '--N', 4,
                          '--max-iter', 1, '--no-validate', '--out', out)
        self.assertEqual(code, lpctl.EXIT_MAX_ITER)
        data = RunManifest.read(out)
        self.assertEqual(data['results']['variables'], 45)
        self.assertEqual(data['results']['status'], 'max-iter')
        self.assertEqual(data['seed'], 0)
        self.assertEqual(data['flags']['N'], 4)
        self.assertTrue('solver' in data['timings'])
        for name in ('coefficients.json', 'solution.csv',
                     'solution.units.json', 'report.json'):
            self.assertTrue(os.path.exists(os.path.join(out, name)), name)

    def test_registry(self):
        registry = self.path('runs.db')
        for name in ('one', 'two'):
            self.assertEqual(self.lpctl('steady', *self.chain(), '--out',
                                        self.path(name), '--registry',
                                        registry), 0)
        self.assertEqual(self.lpctl('check', '--grid', 3, '--out',
                                    self.path('three'), '--registry',
                                    registry), 0)
        self.assertEqual(self.lpctl('runs', '--registry', registry), 0)
        lines = self.stdout.strip().splitlines()
        self.assertEqual(len(lines), 3)
        self.assertEqual(self.lpctl('runs', 'check', '--registry',
                                    registry), 0)
        self.assertEqual(len(self.stdout.strip().splitlines()), 1)
        self.assertEqual(self.lpctl('runs', '--registry',
                                    self.path('none.db')), lpctl.EXIT_USAGE)
