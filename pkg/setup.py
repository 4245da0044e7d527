import os
import re

from setuptools import setup

f = open(os.path.join(os.path.dirname(__file__), 'README.rst'))
readme = f.read()
f.close()

# linepack imports numpy and scipy, so read the version without importing.
with open(os.path.join(os.path.dirname(__file__), 'linepack.py')) as fh:
    version = re.search(r"^__version__ = '([^']+)'", fh.read(),
                        re.M).group(1)


setup(
    name='linepack',
    version=version,
    description=('transient gas pipeline simulation and pseudospectral '
                 'optimal control'),
    long_description=readme,
    packages=['pumphouse'],
    package_data={'pumphouse': ['data/*.json']},
    py_modules=['linepack', 'lpctl'],
    install_requires=['numpy', 'scipy', 'networkx', 'peewee'],
    extras_require={'toml': ['tomli; python_version < "3.11"']},
    classifiers=[
        'Development Status :: 4 - Beta',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: MIT License',
        'Operating System :: OS Independent',
        'Programming Language :: Python',
        'Programming Language :: Python :: 3',
        'Topic :: Scientific/Engineering :: Mathematics',
    ],
    license='MIT License',
    platforms=['any'],
    scripts=['lpctl.py'],
    zip_safe=False)
