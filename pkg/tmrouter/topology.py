"""
Network graphs: construction, topology documents, distance metrics and
greedy edge-disjoint shortest paths.
"""
import logging
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import networkx as nx
import yaml

from tmrouter.core import (
    DocumentError,
    Edge,
    Metric,
    Node,
    TopologyError,
    canonical_edge,
)

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

Coordinate = Tuple[int, int]


@dataclass(frozen=True)
class Topology:
    """
    An undirected, simple network graph with two consumers.

    ``swap_prob`` holds the BSM success probability of every repeater;
    consumers never swap and carry no entry. ``coords`` is empty for
    non-embedded graphs.
    """
    nodes: Tuple[Node, ...]
    edges: Tuple[Edge, ...]
    alice: Node
    bob: Node
    swap_prob: Mapping[Node, float]
    coords: Mapping[Node, Coordinate] = field(default_factory=dict)
    name: str = ''
    graph: nx.Graph = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        """Validate consumers and coordinates, then build the graph."""
        node_set = set(self.nodes)
        if len(node_set) != len(self.nodes):
            raise TopologyError("Duplicate node ids")
        kinds = {isinstance(n, int) for n in self.nodes}
        if len(kinds) > 1:
            raise TopologyError("Node ids must be all integers or all strings")
        if self.alice == self.bob:
            raise TopologyError("Alice and Bob must be distinct nodes")
        for role, node in (('alice', self.alice), ('bob', self.bob)):
            if node not in node_set:
                raise TopologyError(f"Consumer {role}={node!r} is not a node of the graph")

        graph = nx.Graph()
        graph.add_nodes_from(sorted(self.nodes))
        seen = set()
        for u, v in self.edges:
            if u not in node_set or v not in node_set:
                raise TopologyError(f"Edge {(u, v)!r} references an unknown node")
            if u == v:
                raise TopologyError(f"Self-loop on node {u!r}")
            edge = canonical_edge(u, v)
            if edge in seen:
                raise TopologyError(f"Duplicate edge {edge!r}")
            seen.add(edge)
        for u, v in sorted(seen):
            graph.add_edge(u, v)

        for node in (self.alice, self.bob):
            if node in self.swap_prob:
                raise TopologyError(f"Consumer {node!r} cannot have a swap probability")
        for node in self.nodes:
            if node in (self.alice, self.bob):
                continue
            q = self.swap_prob.get(node)
            if q is None:
                raise TopologyError(f"Repeater {node!r} has no swap probability")
            if not 0.0 <= q <= 1.0:
                raise TopologyError(f"Swap probability of {node!r} outside [0, 1]: {q}")

        object.__setattr__(self, 'nodes', tuple(sorted(self.nodes)))
        object.__setattr__(self, 'edges', tuple(sorted(seen)))
        object.__setattr__(self, 'graph', graph)

    @property
    def repeaters(self) -> List[Node]:
        """Every node except the consumers, in id order."""
        return [n for n in self.nodes if n not in (self.alice, self.bob)]

    def is_consumer(self, node: Node) -> bool:
        """True for Alice and Bob."""
        return node == self.alice or node == self.bob

    def q(self, node: Node) -> float:
        """Swap probability of a repeater."""
        try:
            return self.swap_prob[node]
        except KeyError:
            raise TopologyError(f"Node {node!r} does not swap") from None

    def neighbors(self, node: Node) -> List[Node]:
        """Neighbours of ``node`` in id order."""
        self.require_node(node)
        return sorted(self.graph.neighbors(node))

    def degree(self, node: Node) -> int:
        """
        Number of neighbours of ``node``.

        Raises:
            TopologyError: for an unknown node
        """
        self.require_node(node)
        return self.graph.degree(node)

    def require_node(self, node: Node) -> None:
        """Raise TopologyError unless ``node`` belongs to the graph."""
        if node not in self.graph:
            raise TopologyError(f"Unknown node {node!r}")

    def with_uniform_q(self, q: float) -> 'Topology':
        """Copy of this topology with every repeater swapping at probability ``q``."""
        return replace(self, swap_prob={n: float(q) for n in self.repeaters})

    def without_edges(self, edges: Iterable[Edge], name: Optional[str] = None) -> 'Topology':
        """Copy of this topology with ``edges`` removed."""
        drop = {canonical_edge(u, v) for u, v in edges}
        missing = drop - set(self.edges)
        if missing:
            raise TopologyError(f"Cannot remove unknown edges {sorted(missing)!r}")
        return replace(
            self,
            edges=tuple(e for e in self.edges if e not in drop),
            name=name if name is not None else self.name,
        )

    def validate_connected(self) -> None:
        """Raise TopologyError when the graph has more than one component."""
        if not nx.is_connected(self.graph):
            raise TopologyError(f"Topology {self.name or '<unnamed>'} is not connected")

    def to_document(self) -> Dict[str, Any]:
        """Structured form accepted by :func:`load_topology`."""
        qs = set(self.swap_prob.values())
        default_q = qs.pop() if len(qs) == 1 else 1.0
        nodes = []
        for n in self.nodes:
            entry: Dict[str, Any] = {'id': n}
            if n in self.coords:
                entry['x'], entry['y'] = self.coords[n]
            q = self.swap_prob.get(n)
            if q is not None and q != default_q:
                entry['q'] = q
            nodes.append(entry)
        return {
            'format': FORMAT_VERSION,
            'name': self.name,
            'alice': self.alice,
            'bob': self.bob,
            'default_q': default_q,
            'nodes': nodes,
            'edges': [list(e) for e in self.edges],
        }


@dataclass(frozen=True)
class PathSet:
    """Edge-disjoint Alice→Bob paths, shortest first."""
    paths: Tuple[Tuple[Node, ...], ...] = ()

    @property
    def lengths(self) -> List[int]:
        """Hop length ``m_i`` of every path."""
        return [len(p) - 1 for p in self.paths]

    def __len__(self) -> int:
        """Number of paths."""
        return len(self.paths)

    def __iter__(self):
        """Iterate over the paths, shortest first."""
        return iter(self.paths)

    @staticmethod
    def edges_of(path: Sequence[Node]) -> List[Edge]:
        """Canonical edges along ``path``, in order."""
        return [canonical_edge(u, v) for u, v in zip(path, path[1:])]


def grid_topology(
    width: int,
    height: int,
    alice: Coordinate,
    bob: Coordinate,
    q: float = 1.0,
    name: str = '',
) -> Topology:
    """
    Build a 4-neighbour square lattice.

    Node ids are ``y * width + x``; coordinates are lattice units.

    Args:
        width: Number of columns (>= 2)
        height: Number of rows (>= 2)
        alice: (x, y) of Alice
        bob: (x, y) of Bob
        q: Uniform swap probability of the repeaters
        name: Optional label carried into CSV output

    Returns:
        The lattice topology
    """
    if width < 2 or height < 2:
        raise TopologyError(f"Grid must be at least 2x2, got {width}x{height}")
    for role, (x, y) in (('alice', alice), ('bob', bob)):
        if not (0 <= x < width and 0 <= y < height):
            raise TopologyError(f"Consumer {role} at {(x, y)} lies outside the {width}x{height} grid")
    if tuple(alice) == tuple(bob):
        raise TopologyError("Alice and Bob must occupy different grid nodes")

    def node_id(x: int, y: int) -> int:
        """Row-major id of grid point (x, y)."""
        return y * width + x

    coords = {node_id(x, y): (x, y) for y in range(height) for x in range(width)}
    edges = []
    for y in range(height):
        for x in range(width):
            if x + 1 < width:
                edges.append((node_id(x, y), node_id(x + 1, y)))
            if y + 1 < height:
                edges.append((node_id(x, y), node_id(x, y + 1)))
    a, b = node_id(*alice), node_id(*bob)
    topology = Topology(
        nodes=tuple(coords),
        edges=tuple(edges),
        alice=a,
        bob=b,
        swap_prob={n: float(q) for n in coords if n not in (a, b)},
        coords=coords,
        name=name or f"grid{width}x{height}",
    )
    return topology


def chain_topology(d: int, q: float = 1.0, name: str = '') -> Topology:
    """Linear chain of ``d`` edges: Alice = 0, repeaters 1..d-1, Bob = d."""
    if d < 1:
        raise TopologyError(f"A chain needs at least one edge, got d={d}")
    nodes = tuple(range(d + 1))
    return Topology(
        nodes=nodes,
        edges=tuple((i, i + 1) for i in range(d)),
        alice=0,
        bob=d,
        swap_prob={i: float(q) for i in range(1, d)},
        coords={i: (i, 0) for i in nodes},
        name=name or f"chain{d}",
    )


def _normalise_ids(raw_ids: Sequence[Any]):
    """Return an id converter: keep integers if every id is one, else stringify."""
    all_int = all(isinstance(i, int) and not isinstance(i, bool) for i in raw_ids)
    if all_int:
        return lambda value: value
    return lambda value: str(value)


def load_topology(document: Union[str, Mapping[str, Any]]) -> Topology:
    """
    Parse a topology document (YAML text or an already-loaded mapping).

    Required keys are ``format``, ``nodes``, ``edges``, ``alice`` and ``bob``;
    ``default_q`` and ``name`` are optional. A node entry is either a bare id
    or a mapping with ``id`` and optional ``x``, ``y`` and ``q``.

    Raises:
        DocumentError: on syntax errors or malformed fields (with locus)
        TopologyError: when the parsed graph violates a topology invariant
    """
    if isinstance(document, str):
        try:
            data = yaml.safe_load(document)
        except yaml.YAMLError as exc:
            mark = getattr(exc, 'problem_mark', None)
            locus = f"line {mark.line + 1}" if mark is not None else None
            raise DocumentError(f"invalid YAML ({getattr(exc, 'problem', exc)})", locus) from exc
    else:
        data = document
    if not isinstance(data, Mapping):
        raise DocumentError("topology document must be a mapping")

    version = data.get('format')
    if version != FORMAT_VERSION:
        raise DocumentError(f"unsupported format {version!r}, expected {FORMAT_VERSION}", 'format')
    for key in ('nodes', 'edges', 'alice', 'bob'):
        if key not in data:
            raise DocumentError("missing required key", key)

    raw_nodes = data['nodes']
    raw_edges = data['edges']
    if not isinstance(raw_nodes, list) or not raw_nodes:
        raise DocumentError("expected a non-empty list", 'nodes')
    if not isinstance(raw_edges, list):
        raise DocumentError("expected a list", 'edges')

    entries = []
    for i, entry in enumerate(raw_nodes):
        if isinstance(entry, Mapping):
            if 'id' not in entry:
                raise DocumentError("node entry has no id", f"nodes[{i}]")
            entries.append(entry)
        else:
            entries.append({'id': entry})
    to_id = _normalise_ids([e['id'] for e in entries])

    try:
        default_q = float(data.get('default_q', 1.0))
    except (TypeError, ValueError):
        raise DocumentError("expected a number", 'default_q') from None

    alice, bob = to_id(data['alice']), to_id(data['bob'])
    nodes: List[Node] = []
    coords: Dict[Node, Coordinate] = {}
    swap_prob: Dict[Node, float] = {}
    for i, entry in enumerate(entries):
        node = to_id(entry['id'])
        if node in nodes:
            raise DocumentError(f"duplicate node id {node!r}", f"nodes[{i}].id")
        nodes.append(node)
        has_x, has_y = 'x' in entry, 'y' in entry
        if has_x != has_y:
            raise DocumentError("x and y must be given together", f"nodes[{i}]")
        if has_x:
            x, y = entry['x'], entry['y']
            if not (isinstance(x, int) and isinstance(y, int)):
                raise DocumentError("coordinates must be integers", f"nodes[{i}]")
            coords[node] = (x, y)
        if node in (alice, bob):
            if 'q' in entry:
                raise DocumentError("consumers have no swap probability", f"nodes[{i}].q")
            continue
        try:
            swap_prob[node] = float(entry.get('q', default_q))
        except (TypeError, ValueError):
            raise DocumentError("expected a number", f"nodes[{i}].q") from None

    known = set(nodes)
    edges: List[Edge] = []
    seen = set()
    for i, pair in enumerate(raw_edges):
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise DocumentError("edge must be a pair of node ids", f"edges[{i}]")
        u, v = to_id(pair[0]), to_id(pair[1])
        for end in (u, v):
            if end not in known:
                raise DocumentError(f"unknown node {end!r}", f"edges[{i}]")
        if u == v:
            raise DocumentError(f"self-loop on {u!r}", f"edges[{i}]")
        edge = canonical_edge(u, v)
        if edge in seen:
            raise DocumentError(f"duplicate edge {edge!r}", f"edges[{i}]")
        seen.add(edge)
        edges.append(edge)

    for role, node in (('alice', alice), ('bob', bob)):
        if node not in known:
            raise DocumentError(f"unknown node {node!r}", role)
    if coords and len(coords) != len(nodes):
        logger.debug("Topology %s is only partly embedded", data.get('name', ''))

    topology = Topology(
        nodes=tuple(nodes),
        edges=tuple(edges),
        alice=alice,
        bob=bob,
        swap_prob=swap_prob,
        coords=coords,
        name=str(data.get('name', '') or ''),
    )
    topology.validate_connected()
    return topology


def read_topology(path: Union[str, Path]) -> Topology:
    """Load a topology document from a file."""
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as exc:
        raise TopologyError(f"Cannot read topology file {path}: {exc}") from exc
    topology = load_topology(text)
    if not topology.name:
        topology = replace(topology, name=Path(path).stem)
    return topology


def dump_topology(topology: Topology) -> str:
    """Render a topology as YAML text."""
    return yaml.safe_dump(topology.to_document(), sort_keys=False)


_SIXNODE_EDGES = [('A', '2'), ('2', '1'), ('1', 'B'), ('A', '3'), ('3', '4'), ('4', 'B'), ('2', '3')]
_SIXNODE_ALT_EDGES = [
    ('A', '2'), ('2', '1'), ('1', 'B'),
    ('A', '4'), ('4', '3'), ('3', 'B'),
    ('A', '3'), ('2', '3'),
]
_VARIANTS = {
    'base': [],
    'no23': [('2', '3')],
    'noA3': [('A', '3')],
}


def _sixnode(edges: List[Edge], variant: str, name: str) -> Topology:
    """Six-node reconstruction with the variant's edges removed."""
    base = load_topology({
        'format': FORMAT_VERSION,
        'name': name,
        'alice': 'A',
        'bob': 'B',
        'nodes': ['A', '1', '2', '3', '4', 'B'],
        'edges': [list(e) for e in edges],
    })
    return base.without_edges(_VARIANTS[variant], name=name)


ORIENTATIONS = ('diag', 'col')


def oriented_grid(
    width: int,
    orientation: str = 'diag',
    hops: Optional[int] = None,
    q: float = 1.0,
    name: str = '',
) -> Topology:
    """
    Square grid with consumers a given Manhattan distance apart.

    Alice sits at (W//4, W//4) for ``diag`` and at (W//2, W//4) for ``col``;
    Bob is placed diagonally or straight up the same column from her.

    Args:
        width: Side length W of the grid
        orientation: 'diag' or 'col'
        hops: Manhattan distance between the consumers; defaults to
            2 * (W//2 - W//4), the distance of the ``grid<W>`` preset
        q: Uniform swap probability of the repeaters
        name: Optional label carried into CSV output

    Raises:
        TopologyError: for an unknown orientation, an odd diagonal distance,
            or consumers that do not fit in the grid
    """
    if orientation not in ORIENTATIONS:
        raise TopologyError(f"Unknown grid orientation {orientation!r}, expected one of {ORIENTATIONS}")
    if hops is None:
        hops = 2 * (width // 2 - width // 4)
    if hops < 1:
        raise TopologyError(f"Consumer distance must be >= 1, got {hops}")
    if orientation == 'diag':
        if hops % 2:
            raise TopologyError(f"Diagonal consumers need an even distance, got {hops}")
        ax = ay = width // 4
        bob = (ax + hops // 2, ay + hops // 2)
    else:
        ax, ay = width // 2, width // 4
        bob = (ax, ay + hops)
    return grid_topology(width, width, (ax, ay), bob, q=q, name=name or f"grid{width}-{orientation}{hops}")


def named_topology(name: str, q: Optional[float] = None) -> Topology:
    """
    Resolve a topology reference.

    Presets: ``grid<W>`` (square W x W grid, consumers on the diagonal at
    (W//4, W//4) and (W//2, W//2); ``grid21`` is the default experiment),
    ``grid<W>-diag<D>`` and ``grid<W>-col<D>`` (consumers D hops apart, see
    :func:`oriented_grid`; D may be omitted), ``chain<d>``,
    ``sixnode-{base,no23,noA3}`` and ``sixnode-alt-{base,no23,noA3}``.
    Anything else is read as a file path.
    """
    match_grid = re.fullmatch(r'grid(\d+)', name)
    match_oriented = re.fullmatch(r'grid(\d+)-(diag|col)(\d+)?', name)
    match_chain = re.fullmatch(r'chain(\d+)', name)
    match_six = re.fullmatch(r'sixnode(-alt)?-(base|no23|noA3)', name)
    if match_grid:
        w = int(match_grid.group(1))
        topology = grid_topology(w, w, (w // 4, w // 4), (w // 2, w // 2), name=name)
    elif match_oriented:
        w = int(match_oriented.group(1))
        hops = match_oriented.group(3)
        topology = oriented_grid(w, match_oriented.group(2), None if hops is None else int(hops), name=name)
    elif match_chain:
        topology = chain_topology(int(match_chain.group(1)), name=name)
    elif match_six:
        edges = _SIXNODE_ALT_EDGES if match_six.group(1) else _SIXNODE_EDGES
        topology = _sixnode(edges, match_six.group(2), name)
    else:
        topology = read_topology(name)
    if q is not None:
        topology = topology.with_uniform_q(q)
    return topology


def distance(topology: Topology, metric: Metric, u: Node, v: Node) -> float:
    """
    Distance between two nodes of the static topology.

    Euclidean and Manhattan need coordinates; hop distance is the BFS hop
    count on the topology's edge set.
    """
    topology.require_node(u)
    topology.require_node(v)
    metric = Metric(metric)
    if metric is Metric.HOP:
        try:
            return float(nx.shortest_path_length(topology.graph, u, v))
        except nx.NetworkXNoPath:
            return math.inf
    if u not in topology.coords or v not in topology.coords:
        raise TopologyError(f"{metric.value} distance needs coordinates for {u!r} and {v!r}")
    (x1, y1), (x2, y2) = topology.coords[u], topology.coords[v]
    dx, dy = x1 - x2, y1 - y2
    if metric is Metric.MANHATTAN:
        return float(abs(dx) + abs(dy))
    return math.sqrt(dx * dx + dy * dy)


def consumer_distances(topology: Topology, metric: Metric) -> Dict[Node, Tuple[float, float]]:
    """Map every node to its ``(distance to Alice, distance to Bob)``."""
    metric = Metric(metric)
    if metric is Metric.HOP:
        to_alice = nx.single_source_shortest_path_length(topology.graph, topology.alice)
        to_bob = nx.single_source_shortest_path_length(topology.graph, topology.bob)
        return {
            n: (float(to_alice.get(n, math.inf)), float(to_bob.get(n, math.inf)))
            for n in topology.nodes
        }
    return {
        n: (distance(topology, metric, n, topology.alice), distance(topology, metric, n, topology.bob))
        for n in topology.nodes
    }


def shortest_path(graph: nx.Graph, source: Node, target: Node) -> Optional[List[Node]]:
    """
    Lexicographically smallest shortest path from ``source`` to ``target``.

    Returns None when the two nodes are not connected.
    """
    if source not in graph or target not in graph:
        return None
    dist = nx.single_source_shortest_path_length(graph, target)
    if source not in dist:
        return None
    path = [source]
    node = source
    while node != target:
        node = min(n for n in graph.neighbors(node) if dist.get(n) == dist[node] - 1)
        path.append(node)
    return path


def greedy_edge_disjoint_paths(topology: Topology) -> PathSet:
    """
    Find up to theta edge-disjoint shortest Alice→Bob paths greedily.

    theta is the smaller consumer degree. Each round takes the
    lexicographically smallest shortest path and deletes its edges.
    """
    graph = topology.graph.copy()
    theta = min(topology.degree(topology.alice), topology.degree(topology.bob))
    paths: List[Tuple[Node, ...]] = []
    while len(paths) < theta:
        path = shortest_path(graph, topology.alice, topology.bob)
        if path is None:
            break
        graph.remove_edges_from(zip(path, path[1:]))
        paths.append(tuple(path))
    paths.sort(key=len)
    logger.debug("Greedy paths on %s: lengths %s", topology.name, [len(p) - 1 for p in paths])
    return PathSet(paths=tuple(paths))
