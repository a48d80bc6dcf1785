"""
Shared vocabulary: node and edge types, link references, metric and
decoherence enums, and the package exception hierarchy.
"""
from enum import Enum
from typing import Hashable, NamedTuple, Optional, Tuple

Node = Hashable
Edge = Tuple[Node, Node]


def canonical_edge(u: Node, v: Node) -> Edge:
    """Return the unordered pair ``(u, v)`` in its canonical (sorted) order."""
    return (u, v) if u <= v else (v, u)


class Metric(str, Enum):
    """Distance used by the dynamic protocol to rank neighbours."""
    EUCLIDEAN = 'euclidean'
    HOP = 'hop'
    MANHATTAN = 'manhattan'


class DecoherenceMode(str, Enum):
    """
    Step-function decoherence flavour.

    ``PER_QUBIT`` samples one lifetime per stored qubit and keeps a link only
    if both ends survive; ``PER_LINK`` samples a single lifetime per link.
    """
    PER_QUBIT = 'per_qubit'
    PER_LINK = 'per_link'


class Link(NamedTuple):
    """A Bell pair on ``edge`` created in time slot ``slot`` (1-based)."""
    edge: Edge
    slot: int

    def other_end(self, node: Node) -> Node:
        """Endpoint of the link opposite ``node``."""
        u, v = self.edge
        if node == u:
            return v
        if node == v:
            return u
        raise TopologyError(f"Node {node!r} is not an endpoint of {self.edge!r}")


class RoutingError(Exception):
    """Base exception for tmrouter errors."""
    pass


class TopologyError(RoutingError):
    """Raised when a graph, node reference or consumer placement is invalid."""
    pass


class DocumentError(TopologyError):
    """Raised when a structured-text document cannot be parsed."""

    def __init__(self, message: str, locus: Optional[str] = None):
        """Initialize the error with an optional document locus."""
        self.locus = locus
        super().__init__(f"{locus}: {message}" if locus else message)


class ConfigError(RoutingError):
    """Raised for invalid experiment parameters."""
    pass


class SizeLimitError(RoutingError):
    """Raised when an instance exceeds a configured size guard."""
    pass


class InvariantError(RoutingError):
    """Raised when a checked-mode invariant fails for a trial."""
    pass
