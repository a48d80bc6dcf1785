"""
Base abstract class for internal-phase protocols, and the swap plan they
produce.
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from tmrouter.core import InvariantError, Link, Node

Pairing = Tuple[Link, Link]


@dataclass
class SwapPlan:
    """
    Per-node pairing of link endpoints.

    A pair ``(a, b)`` listed under node ``n`` joins the ends of links ``a``
    and ``b`` that reside at ``n``. Both links may lie on the same edge
    (a self-connection through one neighbour, different slots).
    """
    pairings: Dict[Node, List[Pairing]] = field(default_factory=dict)

    def add(self, node: Node, first: Link, second: Link) -> None:
        """Record a swap at ``node`` joining ``first`` and ``second``."""
        self.pairings.setdefault(node, []).append((first, second))

    def pairs_at(self, node: Node) -> List[Pairing]:
        """Pairings recorded at ``node``, in the order they were made."""
        return self.pairings.get(node, [])

    def __len__(self) -> int:
        """Total number of swaps in the plan."""
        return sum(len(pairs) for pairs in self.pairings.values())

    def validate(self, snapshot: Any, topology: Any) -> None:
        """
        Check the plan against its snapshot.

        Raises:
            InvariantError: when a consumer swaps, a pair references a link
                not in the snapshot or not incident to its node, or a link
                endpoint is used twice
        """
        used = set()
        for node, pairs in self.pairings.items():
            if pairs and topology.is_consumer(node):
                raise InvariantError(f"Consumer {node!r} has pairings")
            for pair in pairs:
                if pair[0] == pair[1]:
                    raise InvariantError(f"Link {pair[0]!r} paired with itself at {node!r}")
                for link in pair:
                    if node not in link.edge:
                        raise InvariantError(f"Link {link!r} does not end at {node!r}")
                    if link.slot not in snapshot.links.get(link.edge, ()):
                        raise InvariantError(f"Link {link!r} is not in the snapshot")
                    if (link, node) in used:
                        raise InvariantError(f"Endpoint of {link!r} at {node!r} paired twice")
                    used.add((link, node))

    def to_document(self) -> Dict[str, Any]:
        """Structured form used by the explain dump."""
        return {
            'pairings': [
                {
                    'node': node,
                    'pairs': [[[list(a.edge), a.slot], [list(b.edge), b.slot]] for a, b in pairs],
                }
                for node, pairs in sorted(self.pairings.items())
                if pairs
            ],
        }


class InternalPhase(ABC):
    """
    Abstract base class for internal-phase protocols.

    A protocol turns a snapshot into a swap plan. Implementations must be
    pure: the same snapshot always produces the same plan, and no state is
    carried between calls, so one instance may serve many trials and
    threads.
    """

    name: str = ''

    def __init__(self, topology: Optional[Any] = None):
        """
        Initialize the protocol.

        Args:
            topology: The network the protocol routes on
        """
        self.topology = topology

    @abstractmethod
    def plan(self, snapshot: Any) -> SwapPlan:
        """
        Decide every repeater's swaps for one snapshot.

        Args:
            snapshot: Output of the external phase

        Returns:
            The swap plan
        """
        pass
