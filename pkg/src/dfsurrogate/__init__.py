"""Surrogate models of per-iteration application runtime on Dragonfly interconnects."""

from .errors import *  # noqa: F401,F403
from .topology import DragonflyConfig, GraphTopology, build_topology, normalized_adjacency

__version__ = "0.1.0"
