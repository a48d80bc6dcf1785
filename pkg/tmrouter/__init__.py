"""
tmrouter - Entanglement routing simulator for time-multiplexed quantum repeater networks.
"""
from tmrouter.core import (
    ConfigError,
    DecoherenceMode,
    DocumentError,
    InvariantError,
    Link,
    Metric,
    RoutingError,
    SizeLimitError,
    TopologyError,
)
from tmrouter.base import InternalPhase, SwapPlan
from tmrouter.topology import PathSet, Topology, grid_topology, load_topology, named_topology, oriented_grid
from tmrouter.linkgen import Snapshot, generate_snapshot
from tmrouter.routing import ChainSet, DynamicRouting, StaticRouting
from tmrouter.pool import TrialPool
from tmrouter.montecarlo import (
    ExperimentConfig,
    KOptResult,
    ProtocolComparison,
    RateEstimate,
    compare_protocols,
    estimate_rate,
    find_k_opt,
    k_opt_map,
    sweep,
)

__all__ = [
    'Topology',
    'PathSet',
    'Snapshot',
    'SwapPlan',
    'ChainSet',
    'InternalPhase',
    'DynamicRouting',
    'StaticRouting',
    'TrialPool',
    'ExperimentConfig',
    'RateEstimate',
    'KOptResult',
    'ProtocolComparison',
    'grid_topology',
    'load_topology',
    'named_topology',
    'oriented_grid',
    'generate_snapshot',
    'estimate_rate',
    'sweep',
    'find_k_opt',
    'k_opt_map',
    'compare_protocols',
    'Link',
    'Metric',
    'DecoherenceMode',
    'RoutingError',
    'TopologyError',
    'DocumentError',
    'ConfigError',
    'SizeLimitError',
    'InvariantError',
]

__version__ = '1.0.0'
