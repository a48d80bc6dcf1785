"""
Internal phase: the dynamic (local link-state) and static (fixed path)
protocols, chain tracing and snapshot yield.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import Any, Callable, Dict, List, Optional, Tuple

from tmrouter.base import InternalPhase, SwapPlan
from tmrouter.core import ConfigError, Link, Metric, Node, canonical_edge
from tmrouter.linkgen import Snapshot
from tmrouter.topology import PathSet, Topology, consumer_distances, greedy_edge_disjoint_paths

logger = logging.getLogger(__name__)

REL_TOL = 1e-12


@dataclass(frozen=True)
class Chain:
    """An Alice→Bob sequence of spliced links."""
    links: Tuple[Link, ...]
    nodes: Tuple[Node, ...]

    @property
    def bsm_count(self) -> int:
        """Number of swaps joining the chain's links."""
        return len(self.links) - 1


@dataclass(frozen=True)
class ChainSet:
    """Link-disjoint Alice↔Bob chains traced through a swap plan."""
    chains: Tuple[Chain, ...] = ()
    leftover: int = 0

    def __len__(self) -> int:
        """Number of chains."""
        return len(self.chains)

    def __iter__(self):
        """Iterate over the chains."""
        return iter(self.chains)

    @property
    def bsm_counts(self) -> List[int]:
        """BSM count of every chain, in chain order."""
        return [c.bsm_count for c in self.chains]

    def to_document(self) -> Dict[str, Any]:
        """Structured form used by the explain dump."""
        return {
            'leftover': self.leftover,
            'chains': [
                {
                    'nodes': list(chain.nodes),
                    'slots': [link.slot for link in chain.links],
                    'bsm_count': chain.bsm_count,
                }
                for chain in self.chains
            ],
        }


class DynamicRouting(InternalPhase):
    """
    Distance-based local routing.

    Every repeater repeatedly joins a link towards the neighbour closest to
    Alice with a link towards the neighbour closest to Bob, using only its
    own links and static distances.
    """

    name = 'dynamic'

    def __init__(self, topology: Topology, metric: Metric = Metric.EUCLIDEAN, straight_path: bool = True):
        """
        Initialize the protocol.

        Args:
            topology: The network to route on
            metric: Distance used to rank neighbours
            straight_path: Break distance ties in favour of straight paths

        Raises:
            TopologyError: for a coordinate metric on a non-embedded graph
        """
        super().__init__(topology)
        self.metric = Metric(metric)
        self.straight_path = straight_path
        self.distances = consumer_distances(topology, self.metric)
        self._neighbors = {n: topology.neighbors(n) for n in topology.repeaters}

    def _alice_key(self) -> Callable[[Node], tuple]:
        """Ranking key for "closest to Alice"."""
        dist = self.distances
        if self.straight_path:
            return lambda n: (dist[n][0], -dist[n][1], n)
        return lambda n: (dist[n][0], n)

    def _bob_key(self) -> Callable[[Node], tuple]:
        """Ranking key for "closest to Bob"."""
        dist = self.distances
        if self.straight_path:
            return lambda n: (dist[n][1], -dist[n][0], n)
        return lambda n: (dist[n][1], n)

    def _resolve(self, v: Node, v2: Node, w2: Node) -> Tuple[Node, Node]:
        """Pick between (v', w) and (v, w') when v and w coincide."""
        dist = self.distances
        w = v
        left = dist[v2][0] + dist[w][1]
        right = dist[v][0] + dist[w2][1]
        if not math.isclose(left, right, rel_tol=REL_TOL):
            return (v2, w) if left < right else (v, w2)
        if self.straight_path:
            left = dist[v2][1] + dist[w][0]
            right = dist[v][1] + dist[w2][0]
            if left > right and not math.isclose(left, right, rel_tol=REL_TOL):
                return v2, w
        return v, w2

    def _pair_node(self, node: Node, buckets: Dict[Node, List[Link]], plan: SwapPlan) -> None:
        """Pair the links of one repeater until fewer than two remain."""
        alice_key, bob_key = self._alice_key(), self._bob_key()
        remaining = sum(len(links) for links in buckets.values())
        while remaining >= 2:
            active = [nb for nb, links in buckets.items() if links]
            v = min(active, key=alice_key)
            w = min(active, key=bob_key)
            if v != w:
                a, b = v, w
            else:
                others = [nb for nb in active if nb != v]
                if others:
                    a, b = self._resolve(v, min(others, key=alice_key), min(others, key=bob_key))
                else:
                    a = b = v
            plan.add(node, buckets[a].pop(), buckets[b].pop())
            remaining -= 2

    def plan(self, snapshot: Snapshot) -> SwapPlan:
        """
        Pair every repeater's links using local knowledge only.

        Args:
            snapshot: Output of the external phase

        Returns:
            The swap plan
        """
        plan = SwapPlan()
        for node, neighbors in self._neighbors.items():
            buckets: Dict[Node, List[Link]] = {}
            for nb in neighbors:
                edge = canonical_edge(node, nb)
                slots = snapshot.links.get(edge, ())
                if slots:
                    # popped from the end: most recent slot first
                    buckets[nb] = [Link(edge, s) for s in slots]
            self._pair_node(node, buckets, plan)
        return plan


class StaticRouting(InternalPhase):
    """
    Fixed-path routing over predetermined edge-disjoint paths.

    On each path, the j-th most recent links of consecutive edges are
    joined, giving as many parallel chains as the scarcest edge allows.
    """

    name = 'static'

    def __init__(self, topology: Optional[Topology] = None, path_set: Optional[PathSet] = None):
        """
        Initialize the protocol.

        Args:
            topology: The network; its greedy paths are used when no path set is given
            path_set: Explicit edge-disjoint paths

        Raises:
            ConfigError: when neither argument is given
        """
        super().__init__(topology)
        if path_set is None:
            if topology is None:
                raise ConfigError("Static routing needs a topology or a path set")
            path_set = greedy_edge_disjoint_paths(topology)
        self.path_set = path_set
        self._path_edges = [PathSet.edges_of(path) for path in path_set]

    def plan(self, snapshot: Snapshot) -> SwapPlan:
        """
        Join the j-th most recent links of consecutive edges on every path.

        Args:
            snapshot: Output of the external phase

        Returns:
            The swap plan
        """
        plan = SwapPlan()
        for path, edges in zip(self.path_set, self._path_edges):
            slots = [snapshot.links.get(edge, ()) for edge in edges]
            c = min(len(s) for s in slots)
            for i in range(1, len(path) - 1):
                incoming, outgoing = slots[i - 1], slots[i]
                for j in range(1, c + 1):
                    plan.add(path[i], Link(edges[i - 1], incoming[-j]), Link(edges[i], outgoing[-j]))
        return plan


def dynamic_internal_phase(
    snapshot: Snapshot,
    topology: Topology,
    metric: Metric = Metric.EUCLIDEAN,
    straight_path: bool = True,
) -> SwapPlan:
    """Swap plan of the dynamic protocol for one snapshot."""
    return DynamicRouting(topology, metric, straight_path).plan(snapshot)


def static_internal_phase(snapshot: Snapshot, path_set: PathSet) -> SwapPlan:
    """Swap plan of the static protocol for one snapshot."""
    return StaticRouting(path_set=path_set).plan(snapshot)


def _walk(start: Link, node: Node, partner: Dict[Tuple[Link, Node], Link]):
    """Follow splices from ``start``'s end at ``node``; returns (links, end node, closed)."""
    links = []
    current, at = start, node
    while (current, at) in partner:
        current = partner[(current, at)]
        if current == start:
            return links, at, True
        at = current.other_end(at)
        links.append(current)
    return links, at, False


def trace_chains(plan: SwapPlan, snapshot: Snapshot, topology: Topology) -> ChainSet:
    """
    Extract the Alice↔Bob chains realised by a swap plan.

    Each surviving link is a segment and each pairing splices two segments.
    Maximal spliced sequences running from Alice to Bob are kept; sequences
    ending anywhere else, and cycles, are discarded.
    """
    partner: Dict[Tuple[Link, Node], Link] = {}
    for node, pairs in plan.pairings.items():
        for a, b in pairs:
            partner[(a, node)] = b
            partner[(b, node)] = a

    alice, bob = topology.alice, topology.bob
    visited = set()
    chains: List[Chain] = []
    total = 0
    for link in snapshot.iter_links():
        total += 1
        if link in visited:
            continue
        u, v = link.edge
        forward, end_fwd, closed = _walk(link, v, partner)
        visited.add(link)
        visited.update(forward)
        if closed:
            continue
        backward, end_back, _ = _walk(link, u, partner)
        visited.update(backward)
        if {end_back, end_fwd} != {alice, bob}:
            continue
        sequence = list(reversed(backward)) + [link] + forward
        if end_back != alice:
            sequence.reverse()
        nodes = [alice]
        for step in sequence:
            nodes.append(step.other_end(nodes[-1]))
        chains.append(Chain(links=tuple(sequence), nodes=tuple(nodes)))

    used = sum(len(c.links) for c in chains)
    return ChainSet(chains=tuple(chains), leftover=total - used)


def snapshot_yield(chain_set: ChainSet, topology: Topology) -> float:
    """
    Expected number of delivered Bell pairs.

    Sums, over chains, the product of the swap probabilities of every BSM
    along the chain; a node swapping twice on one chain counts twice.
    """
    return math.fsum(math.prod(topology.q(n) for n in chain.nodes[1:-1]) for chain in chain_set)


def single_success_filter(snapshot: Snapshot) -> Snapshot:
    """Keep only the most recent surviving link on every edge."""
    return replace(snapshot, links={edge: slots[-1:] for edge, slots in snapshot.links.items()})
