"""Fault-tolerant coded parallel QR on a simulated processor grid."""
from . import codec, costmodel, densela, engine, gridsim
from .errors import *  # noqa: F401,F403

__version__ = "0.1.0"
