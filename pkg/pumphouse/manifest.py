"""
Run manifests. Each result directory gets exactly one ``manifest.json``
recording the inputs (with content hashes), the command and every flag,
the tool version, the seed, the outcome and the wall time of each phase.
"""
from collections import OrderedDict
import contextlib
import datetime
import hashlib
import json
import logging
import os
import platform
import sys
import time

from linepack import ImproperlyConfigured
from linepack import __version__


logger = logging.getLogger('linepack.manifest')

MANIFEST_NAME = 'manifest.json'

# Keys left out of the fingerprint: they change between identical reruns.
VOLATILE = ('timings', 'created', 'host', 'outputs_dir')


def canonical_json(value):
    return json.dumps(value, sort_keys=True, separators=(',', ':'),
                      ensure_ascii=False)


def stable_hash(value):
    return hashlib.sha256(canonical_json(value).encode('utf-8')).hexdigest()


def file_hash(filename, chunk_size=1 << 16):
    h = hashlib.sha256()
    with open(filename, 'rb') as fh:
        for chunk in iter(lambda: fh.read(chunk_size), b''):
            h.update(chunk)
    return h.hexdigest()


class RunManifest(object):
    def __init__(self, command, flags=None, seed=None):
        self.command = command
        self.flags = OrderedDict(sorted((flags or {}).items()))
        self.seed = seed
        self.version = __version__
        self.inputs = OrderedDict()
        self.outputs = []
        self.results = OrderedDict()
        self.timings = OrderedDict()
        self.exit_code = None
        self.created = datetime.datetime.now(datetime.timezone.utc)
        self.written_to = None

    def add_input(self, role, filename):
        self.inputs[role] = {'path': os.path.abspath(filename),
                             'name': os.path.basename(filename),
                             'sha256': file_hash(filename)}

    def add_outputs(self, filenames):
        for filename in filenames:
            name = os.path.basename(filename)
            if name == MANIFEST_NAME:
                continue
            self.outputs.append({'name': name,
                                 'sha256': file_hash(filename)})

    def record(self, **results):
        self.results.update(results)

    @contextlib.contextmanager
    def phase(self, name):
        start = time.time()
        try:
            yield
        finally:
            elapsed = time.time() - start
            self.timings[name] = self.timings.get(name, 0.) + elapsed
            logger.debug('Phase %s took %.3fs.', name, elapsed)

    def to_dict(self):
        return OrderedDict([
            ('tool', 'linepack'),
            ('version', self.version),
            ('command', self.command),
            ('flags', self.flags),
            ('seed', self.seed),
            ('inputs', self.inputs),
            ('outputs', sorted(self.outputs, key=lambda o: o['name'])),
            ('results', self.results),
            ('exit_code', self.exit_code),
            ('timings', self.timings),
            ('created', self.created.isoformat()),
            ('host', {'python': sys.version.split()[0],
                      'platform': platform.platform()}),
        ])

    def fingerprint(self):
        """
        Hash of everything that determines the outputs. Input paths are
        reduced to content hashes, so reruns from another directory agree.
        """
        data = self.to_dict()
        for key in VOLATILE:
            data.pop(key, None)
        data['inputs'] = dict((role, item['sha256'])
                              for role, item in self.inputs.items())
        return stable_hash(json.loads(json.dumps(data, default=str)))

    def write(self, directory):
        if self.written_to is not None:
            raise ImproperlyConfigured('manifest already written to %s.' %
                                       self.written_to)
        if not os.path.isdir(directory):
            os.makedirs(directory)
        filename = os.path.join(directory, MANIFEST_NAME)
        if os.path.exists(filename):
            raise ImproperlyConfigured('%s already holds a manifest.' %
                                       directory)
        data = self.to_dict()
        data['fingerprint'] = self.fingerprint()
        with open(filename, 'w') as fh:
            json.dump(data, fh, indent=2, default=str)
            fh.write('\n')
        self.written_to = filename
        logger.info('Wrote %s (fingerprint %s).', filename,
                    data['fingerprint'][:12])
        return filename

    @classmethod
    def read(cls, directory):
        with open(os.path.join(directory, MANIFEST_NAME)) as fh:
            return json.load(fh)
