"""
SQLite registry of runs. Every CLI command given ``--registry`` stores its
manifest here so that runs can be listed and compared later.

Example::

    registry = RunRegistry('runs.db')
    registry.record(manifest)
    for run in registry.runs(command='optimize'):
        print(run.fingerprint, run.status)
"""
import datetime
import json
import logging

from peewee import *


logger = logging.getLogger('linepack.registry')

database_proxy = DatabaseProxy()


class JSONTextField(TextField):
    """Stores any JSON-serializable value as text."""
    def db_value(self, value):
        if value is not None:
            return json.dumps(value, sort_keys=True, default=str)

    def python_value(self, value):
        if value is not None:
            return json.loads(value)


class BaseModel(Model):
    class Meta:
        database = database_proxy


class Run(BaseModel):
    fingerprint = CharField(index=True)
    command = CharField(index=True)
    version = CharField()
    seed = IntegerField(null=True)
    exit_code = IntegerField(null=True)
    status = CharField(null=True)
    objective = FloatField(null=True)
    directory = TextField(null=True)
    flags = JSONTextField(default=dict)
    results = JSONTextField(default=dict)
    timings = JSONTextField(default=dict)
    created = DateTimeField(default=datetime.datetime.now)

    class Meta:
        table_name = 'run'

    def __repr__(self):
        return '<Run %s %s exit=%s>' % (self.id, self.command,
                                        self.exit_code)


class RunInput(BaseModel):
    run = ForeignKeyField(Run, backref='inputs', on_delete='CASCADE')
    role = CharField()
    name = CharField()
    sha256 = CharField(index=True)

    class Meta:
        table_name = 'run_input'
        indexes = (
            (('run', 'role'), True),
        )


MODELS = (Run, RunInput)


class RunRegistry(object):
    """
    :param str filename: SQLite database file (``:memory:`` allowed).
    """
    def __init__(self, filename):
        self.filename = filename
        self.database = SqliteDatabase(filename, pragmas={
            'foreign_keys': 1,
            'journal_mode': 'wal' if filename != ':memory:' else 'memory'})
        with self.database.bind_ctx(MODELS):
            self.database.create_tables(MODELS, safe=True)

    def close(self):
        if not self.database.is_closed():
            self.database.close()

    def record(self, manifest, directory=None):
        """Store a RunManifest (or its dict form). Returns the Run id."""
        data = manifest.to_dict() if hasattr(manifest, 'to_dict') else \
            dict(manifest)
        fingerprint = (manifest.fingerprint() if hasattr(manifest,
                                                         'fingerprint')
                       else data['fingerprint'])
        results = data.get('results') or {}
        objective = results.get('objective')
        with self.database.bind_ctx(MODELS):
            with self.database.atomic():
                run = Run.create(
                    fingerprint=fingerprint,
                    command=data['command'],
                    version=data['version'],
                    seed=data.get('seed'),
                    exit_code=data.get('exit_code'),
                    status=results.get('status'),
                    objective=(float(objective) if isinstance(
                        objective, (int, float)) else None),
                    directory=directory,
                    flags=data.get('flags') or {},
                    results=results,
                    timings=data.get('timings') or {})
                for role, item in (data.get('inputs') or {}).items():
                    RunInput.create(run=run, role=role, name=item['name'],
                                    sha256=item['sha256'])
        logger.info('Recorded run %s (%s) in %s.', run.id, data['command'],
                    self.filename)
        return run.id

    def runs(self, command=None, limit=None):
        with self.database.bind_ctx(MODELS):
            query = Run.select().order_by(Run.id)
            if command is not None:
                query = query.where(Run.command == command)
            if limit:
                query = query.limit(limit)
            return list(query)

    def find(self, fingerprint):
        """Runs whose fingerprint starts with ``fingerprint``."""
        with self.database.bind_ctx(MODELS):
            return list(Run
                        .select()
                        .where(Run.fingerprint.startswith(fingerprint))
                        .order_by(Run.id))

    def inputs(self, run_id):
        with self.database.bind_ctx(MODELS):
            return dict((i.role, i.sha256) for i in
                        RunInput.select().where(RunInput.run == run_id))
