"""Discrete-event network simulator with a load-threshold aware ACL engine."""

from aclsim._jit import HAS_NUMBA
from aclsim.packet import Frame, make_frame, wire_bits

__version__ = "0.1.0"

__all__ = ["Frame", "HAS_NUMBA", "make_frame", "wire_bits", "__version__"]
