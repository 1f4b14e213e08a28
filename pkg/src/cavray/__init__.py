"""Collective Rayleigh scattering of driven emitters in an optical cavity.

Subpackages: ``core`` (parameters and units), ``classical`` (round-trip field
model), ``quantum`` (two-atom master equation), ``trace`` (telegraph
photon-count synthesis), ``hmm`` (two-state Poisson HMM analysis) and ``cli``.
"""

__version__ = "0.1.0"

from . import classical, core, hmm, quantum, trace  # noqa: F401
