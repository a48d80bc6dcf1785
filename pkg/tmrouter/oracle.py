"""
Global link-state baselines: exact snapshot capacity by path packing,
the greedy repeated-shortest-path capacity, and exact averages by
exhaustive snapshot enumeration.
"""
import itertools
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Tuple

import networkx as nx

from tmrouter.core import ConfigError, Edge, SizeLimitError, canonical_edge
from tmrouter.linkgen import Snapshot
from tmrouter.topology import Topology, shortest_path

logger = logging.getLogger(__name__)

MAX_EXACT_LINKS = 24
MAX_LINK_SLOTS = 24

METHODS = ('exact', 'greedy')


def multigraph_transform(snapshot: Snapshot, topology: Topology) -> Tuple[Topology, Snapshot]:
    """
    Turn parallel links into a simple graph.

    Every surviving link ``(u, v, slot)`` becomes a two-edge path through a
    fresh dummy node ``"u|v@slot"`` with swap probability 1, so capacities
    are unchanged. Node ids of the result are strings.
    """
    nodes = [str(n) for n in topology.nodes]
    swap_prob = {str(n): q for n, q in topology.swap_prob.items()}
    edges: List[Edge] = []
    links: Dict[Edge, Tuple[int, ...]] = {}
    for (u, v), slots in sorted(snapshot.links.items()):
        for slot in slots:
            dummy = f"{u}|{v}@{slot}"
            nodes.append(dummy)
            swap_prob[dummy] = 1.0
            for end in (str(u), str(v)):
                edge = canonical_edge(end, dummy)
                edges.append(edge)
                links[edge] = (1,)
    transformed = Topology(
        nodes=tuple(nodes),
        edges=tuple(edges),
        alice=str(topology.alice),
        bob=str(topology.bob),
        swap_prob=swap_prob,
        name=f"{topology.name}+links" if topology.name else '',
    )
    return transformed, Snapshot(links=links, k=1, p=snapshot.p, mu=snapshot.mu, mode=snapshot.mode, seed=snapshot.seed)


def _link_graph(snapshot: Snapshot) -> nx.Graph:
    """Graph of the edges holding at least one link."""
    graph = nx.Graph()
    graph.add_edges_from(edge for edge, slots in snapshot.links.items() if slots)
    return graph


def _path_weight(path, topology: Topology) -> float:
    """Product of the swap probabilities of the path's internal nodes."""
    return math.prod(topology.q(n) for n in path[1:-1])


def snapshot_capacity_exact(snapshot: Snapshot, topology: Topology, max_links: int = MAX_EXACT_LINKS) -> float:
    """
    Maximum total path value over all link-disjoint Alice→Bob path packings.

    A path's value is the product of the swap probabilities of its internal
    nodes. Simple paths are enumerated, sorted by value, and packed by
    branch-and-bound over edge bitmasks; the bound is the current value
    plus the free consumer ports times the best remaining path value.

    Raises:
        SizeLimitError: when the snapshot has more than ``max_links`` links
    """
    total = snapshot.total_links
    if total > max_links:
        raise SizeLimitError(f"Exact oracle limited to {max_links} links, snapshot has {total}")
    if total == 0:
        return 0.0
    if any(len(slots) > 1 for slots in snapshot.links.values()):
        topology, snapshot = multigraph_transform(snapshot, topology)

    graph = _link_graph(snapshot)
    alice, bob = topology.alice, topology.bob
    if alice not in graph or bob not in graph:
        return 0.0

    bit = {edge: 1 << i for i, edge in enumerate(sorted(graph.edges(), key=lambda e: canonical_edge(*e)))}
    bit.update({(v, u): b for (u, v), b in list(bit.items())})
    candidates = []
    for path in nx.all_simple_paths(graph, alice, bob):
        mask = 0
        for u, v in zip(path, path[1:]):
            mask |= bit[(u, v)]
        candidates.append((_path_weight(path, topology), mask))
    candidates.sort(key=lambda c: -c[0])
    weights = [w for w, _ in candidates]
    masks = [m for _, m in candidates]
    ports = min(graph.degree(alice), graph.degree(bob))

    best = 0.0

    def search(start: int, used: int, value: float, free: int) -> None:
        """Extend the packing with paths from ``start`` on."""
        nonlocal best
        if value > best:
            best = value
        if free == 0:
            return
        for j in range(start, len(weights)):
            if value + free * weights[j] <= best:
                break
            if masks[j] & used:
                continue
            search(j + 1, used | masks[j], value + weights[j], free - 1)

    search(0, 0, 0.0, ports)
    logger.debug("Exact capacity over %d candidate paths: %r", len(candidates), best)
    return best


def snapshot_capacity_greedy(snapshot: Snapshot, topology: Topology) -> float:
    """
    Capacity found by repeatedly taking the shortest surviving path.

    Each round adds the path's value and consumes one link per edge, until
    Alice and Bob are disconnected.
    """
    remaining = {edge: len(slots) for edge, slots in snapshot.links.items() if slots}
    graph = nx.Graph()
    graph.add_edges_from(remaining)
    values = []
    while True:
        path = shortest_path(graph, topology.alice, topology.bob)
        if path is None:
            break
        values.append(_path_weight(path, topology))
        for u, v in zip(path, path[1:]):
            edge = canonical_edge(u, v)
            remaining[edge] -= 1
            if remaining[edge] == 0:
                graph.remove_edge(u, v)
    return math.fsum(values)


def snapshot_from_counts(topology: Topology, counts: Dict[Edge, int], k: int) -> Snapshot:
    """Canonical snapshot holding ``counts[e]`` links on the most recent slots of each edge."""
    return Snapshot(
        links={edge: tuple(range(k - counts.get(edge, 0) + 1, k + 1)) for edge in topology.edges},
        k=k,
    )


def enumerate_snapshots(topology: Topology, k: int) -> Iterator[Tuple[Tuple[int, ...], Snapshot]]:
    """
    Every per-edge link-count vector, with its canonical snapshot.

    Vectors are produced in lexicographic order over ``topology.edges``.
    Without decoherence, protocols and capacities depend only on counts.
    """
    for counts in itertools.product(range(k + 1), repeat=len(topology.edges)):
        yield counts, snapshot_from_counts(topology, dict(zip(topology.edges, counts)), k)


def count_probability(counts: Tuple[int, ...], p: float, k: int) -> float:
    """Probability of a link-count vector when every slot succeeds with probability ``p``."""
    return math.prod(math.comb(k, c) * p ** c * (1.0 - p) ** (k - c) for c in counts)


def check_enumerable(topology: Topology, k: int, max_link_slots: int = MAX_LINK_SLOTS) -> None:
    """
    Guard exhaustive enumeration on the number of link slots.

    Raises:
        SizeLimitError: when edges x k exceeds ``max_link_slots``
    """
    slots = len(topology.edges) * k
    if slots > max_link_slots:
        raise SizeLimitError(
            f"Exhaustive enumeration limited to {max_link_slots} link-slots, "
            f"{topology.name or 'topology'} has {len(topology.edges)} edges x k={k} = {slots}"
        )


def average_capacity_exhaustive(
    topology: Topology,
    p: float,
    q: Optional[float] = None,
    k: int = 1,
    method: str = 'exact',
    max_link_slots: int = MAX_LINK_SLOTS,
) -> float:
    """
    Expected global-knowledge rate per time slot, without decoherence.

    Args:
        topology: Network to enumerate
        p: Per-slot link probability
        q: Uniform swap probability; None keeps the topology's own values
        k: Block length
        method: 'exact' or 'greedy' capacity
        max_link_slots: Guard on edges x k

    Returns:
        (1/k) times the probability-weighted sum of snapshot capacities
    """
    if method not in METHODS:
        raise ConfigError(f"Unknown capacity method {method!r}, expected one of {METHODS}")
    check_enumerable(topology, k, max_link_slots)
    if q is not None:
        topology = topology.with_uniform_q(q)
    capacity = snapshot_capacity_exact if method == 'exact' else snapshot_capacity_greedy
    terms = []
    for counts, snapshot in enumerate_snapshots(topology, k):
        weight = count_probability(counts, p, k)
        if weight == 0.0:
            continue
        terms.append(weight * capacity(snapshot, topology))
    return math.fsum(terms) / k


@dataclass(frozen=True)
class SnapshotCapacity:
    """Capacities of one enumerated snapshot."""
    counts: Tuple[int, ...]
    probability: float
    exact: float
    greedy: float


def snapshot_capacities(
    topology: Topology,
    p: float,
    q: Optional[float] = None,
    k: int = 1,
    max_link_slots: int = MAX_LINK_SLOTS,
) -> Iterator[SnapshotCapacity]:
    """
    Exact and greedy capacity of every snapshot, with its probability.

    Snapshots come in :func:`enumerate_snapshots` order, including those of
    probability zero.

    Args:
        topology: Network to enumerate
        p: Per-slot link probability
        q: Uniform swap probability; None keeps the topology's own values
        k: Block length
        max_link_slots: Guard on edges x k

    Raises:
        ConfigError: when p lies outside [0, 1]
        SizeLimitError: when edges x k exceeds ``max_link_slots``
    """
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"Link probability p must lie in [0, 1], got {p}")
    check_enumerable(topology, k, max_link_slots)
    if q is not None:
        topology = topology.with_uniform_q(q)
    for counts, snapshot in enumerate_snapshots(topology, k):
        yield SnapshotCapacity(
            counts=counts,
            probability=count_probability(counts, p, k),
            exact=snapshot_capacity_exact(snapshot, topology),
            greedy=snapshot_capacity_greedy(snapshot, topology),
        )
