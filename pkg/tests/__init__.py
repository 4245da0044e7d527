import sys
import unittest

# Network model and spectral grids.
from .network import *
from .rnf import *
from .spectral import *

# Scenarios, simulation and optimal control.
from .scenario import *
from .simulate import *
from .transcribe import *
from .solver import *

# Results, manifests and the command line.
from .export import *
from .manifest import *
from .registry import *
from .cli import *


if __name__ == '__main__':
    unittest.main(argv=sys.argv)
