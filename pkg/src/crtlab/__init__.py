"""crtlab: desk-scale simulation lab for loop ranges and coded real trees.

Subpackages mirror the moving parts: one-dimensional process samplers
(``paths``), excursion-coded tree metrics and the finite-metric toolkit
(``rtree``), hyperboloid-model geometry with exact bridge sampling
(``hyperbolic``), conditioned walks on regular trees (``treewalk``),
comparison statistics (``stats``), and the experiment runner
(``experiments``, ``cli``).
"""

from . import cli, experiments, hyperbolic, paths, reporting, rtree, stats, treewalk
from .errors import (CrtlabError, DataError, EnvelopeFailureError,
                     GateCheckError, InvalidParameterError, ResourceGuardError)

__version__ = "0.1.0"

__all__ = [
    "paths", "rtree", "hyperbolic", "treewalk", "stats", "experiments",
    "reporting", "cli",
    "CrtlabError", "InvalidParameterError", "DataError", "ResourceGuardError",
    "EnvelopeFailureError", "GateCheckError",
]
