"""Lipschitz-stability experiments for the Lamé system in layered media.

Submodules: :mod:`geometry` (layered partitions, meshes), :mod:`material`
(Lamé moduli and admissibility), :mod:`forward` (P1 stiffness and solves),
:mod:`boundary` (local DtN matrix, H^1/2 Gram, star norm), :mod:`identity`
(Alessandrini identity, sensitivities), :mod:`inverse` (reconstruction),
:mod:`probes` (empirical stability checks) and :mod:`cli`.
"""
from .errors import InputError, LameError, NumericalError
from .geometry import Interface, Mesh, PartitionedDomain, build_layered_partition, generate_mesh
from .material import LameParams, check_admissible

__all__ = ["InputError", "LameError", "NumericalError", "Interface", "Mesh", "PartitionedDomain",
           "build_layered_partition", "generate_mesh", "LameParams", "check_admissible"]
__version__ = "0.1.0"
