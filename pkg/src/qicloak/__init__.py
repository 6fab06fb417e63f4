"""Quantum-illumination detection of phase-imprinting cloaks.

Closed-form SNRs for the classical, entangled-quadrature and
Josephson-mixer protocols, checked against an exact truncated Fock-space
simulation.
"""

__version__ = "0.1.0"

from .params import ProtocolParams, SnrBreakdown  # noqa: E402

__all__ = ["ProtocolParams", "SnrBreakdown", "__version__"]
