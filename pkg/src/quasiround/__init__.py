"""Quasiround exhaustions of circle domains, Koebe uniformization and transboundary modulus."""
from .exhaust import CircleDomainSpec, build_exhaustion
from .geometry import Disk, PolyJordan
from .harness import generate_counterexample, run_pipeline
from .modulus import transboundary_modulus
from .uniformize import FinitelyConnectedDomain, koebe_uniformize

__all__ = ["CircleDomainSpec", "Disk", "FinitelyConnectedDomain", "PolyJordan", "build_exhaustion",
           "generate_counterexample", "koebe_uniformize", "run_pipeline", "transboundary_modulus"]
__version__ = "0.1.0"
