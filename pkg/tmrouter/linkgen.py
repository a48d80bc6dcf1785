"""
External phase: per-edge link generation over k time slots with
step-function memory decoherence.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Mapping, Optional, Tuple, Union

import numpy as np
import yaml

from tmrouter.core import (
    ConfigError,
    DecoherenceMode,
    DocumentError,
    Edge,
    Link,
    Node,
    canonical_edge,
)
from tmrouter.topology import FORMAT_VERSION, Topology

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Snapshot:
    """
    Network state after the external phase.

    ``links`` maps each edge to the creation slots (1..k, increasing) of
    the links still alive at slot k.
    """
    links: Mapping[Edge, Tuple[int, ...]]
    k: int
    p: float = 1.0
    mu: float = math.inf
    mode: DecoherenceMode = DecoherenceMode.PER_QUBIT
    seed: Any = None
    _by_node: Dict[Node, List[Edge]] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        """Validate slot lists and index links by node."""
        if self.k < 1:
            raise ConfigError(f"Block length k must be >= 1, got {self.k}")
        by_node: Dict[Node, List[Edge]] = {}
        for edge, slots in self.links.items():
            previous = 0
            for slot in slots:
                if not previous < slot <= self.k:
                    raise ConfigError(f"Edge {edge!r} has invalid slot sequence {slots!r} for k={self.k}")
                previous = slot
            for node in edge:
                by_node.setdefault(node, []).append(edge)
        object.__setattr__(self, '_by_node', by_node)

    def count(self, edge: Edge) -> int:
        """Number of surviving links on ``edge``."""
        return len(self.links.get(canonical_edge(*edge), ()))

    @property
    def total_links(self) -> int:
        """Number of surviving links over all edges."""
        return sum(len(slots) for slots in self.links.values())

    def iter_links(self) -> Iterator[Link]:
        """All surviving links, edge by edge, oldest slot first."""
        for edge in sorted(self.links):
            for slot in self.links[edge]:
                yield Link(edge, slot)

    def links_at(self, node: Node) -> List[Link]:
        """Surviving links with an endpoint at ``node``."""
        return [Link(edge, slot) for edge in sorted(self._by_node.get(node, ())) for slot in self.links[edge]]


def survival_probability(t_elapsed: float, mu: float, mode: DecoherenceMode = DecoherenceMode.PER_QUBIT) -> float:
    """
    Probability that a link created ``t_elapsed`` slots ago is still usable.

    Per-link mode gives exp(-t/mu); per-qubit mode needs both stored
    qubits to survive, exp(-2t/mu).
    """
    if mu <= 0:
        raise ConfigError(f"Mean lifetime mu must be positive, got {mu}")
    if t_elapsed < 0:
        raise ConfigError(f"Elapsed time must be non-negative, got {t_elapsed}")
    if math.isinf(mu) or t_elapsed == 0:
        return 1.0
    factor = 2.0 if DecoherenceMode(mode) is DecoherenceMode.PER_QUBIT else 1.0
    return math.exp(-factor * t_elapsed / mu)


def _check_parameters(p: float, k: int, mu: float) -> None:
    """Reject out-of-range generation parameters."""
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"Link probability p must lie in [0, 1], got {p}")
    if int(k) != k or k < 1:
        raise ConfigError(f"Block length k must be a positive integer, got {k}")
    if not mu > 0:
        raise ConfigError(f"Mean lifetime mu must be positive or inf, got {mu}")


def generate_snapshot(
    topology: Topology,
    p: float,
    k: int,
    mu: float = math.inf,
    mode: DecoherenceMode = DecoherenceMode.PER_QUBIT,
    rng: Union[np.random.Generator, int, None] = None,
    seed: Any = None,
) -> Snapshot:
    """
    Run the external phase once.

    Every edge attempts a link in each slot t = 1..k with probability p.
    A created link is kept if its sampled lifetime(s) are at least k - t;
    lifetimes are drawn once, at creation.

    Args:
        topology: Network to populate
        p: Per-slot link success probability
        k: Time multiplexing block length
        mu: Mean memory lifetime in slots (math.inf disables decoherence)
        mode: Whether lifetimes are sampled per qubit or per link
        rng: A numpy Generator, or a seed for one
        seed: Metadata echoed into the snapshot

    Returns:
        The resulting snapshot
    """
    _check_parameters(p, k, mu)
    mode = DecoherenceMode(mode)
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)

    edges = topology.edges
    alive = rng.random((len(edges), k)) < p
    if not math.isinf(mu):
        lifetimes = rng.exponential(mu, size=(len(edges), k, 2))
        elapsed = (k - np.arange(1, k + 1)).astype(float)
        if mode is DecoherenceMode.PER_LINK:
            alive &= lifetimes[:, :, 0] >= elapsed
        else:
            alive &= (lifetimes >= elapsed[:, None]).all(axis=2)

    grouped: Dict[Edge, List[int]] = {edge: [] for edge in edges}
    rows, cols = np.nonzero(alive)
    for row, col in zip(rows.tolist(), cols.tolist()):
        grouped[edges[row]].append(col + 1)
    return Snapshot(
        links={edge: tuple(slots) for edge, slots in grouped.items()},
        k=k,
        p=p,
        mu=mu,
        mode=mode,
        seed=seed,
    )


def snapshot_to_document(snapshot: Snapshot) -> Dict[str, Any]:
    """Structured form of a snapshot, accepted by :func:`load_snapshot`."""
    return {
        'format': FORMAT_VERSION,
        'k': snapshot.k,
        'p': snapshot.p,
        'mu': snapshot.mu,
        'mode': snapshot.mode.value,
        'seed': snapshot.seed if isinstance(snapshot.seed, (int, str, type(None))) else list(snapshot.seed),
        'links': [
            {'edge': list(edge), 'slots': list(slots)}
            for edge, slots in sorted(snapshot.links.items())
        ],
    }


def load_snapshot(document: Union[str, Mapping[str, Any]], topology: Optional[Topology] = None) -> Snapshot:
    """
    Parse a serialized snapshot.

    When ``topology`` is given, node ids are coerced to the topology's id
    type, every edge must exist in it, and edges absent from the document
    are filled in as empty.
    """
    if isinstance(document, str):
        try:
            data = yaml.safe_load(document)
        except yaml.YAMLError as exc:
            mark = getattr(exc, 'problem_mark', None)
            raise DocumentError("invalid YAML", f"line {mark.line + 1}" if mark is not None else None) from exc
    else:
        data = document
    if not isinstance(data, Mapping):
        raise DocumentError("snapshot document must be a mapping")
    if data.get('format') != FORMAT_VERSION:
        raise DocumentError(f"unsupported format {data.get('format')!r}", 'format')

    coerce = (lambda n: n)
    if topology is not None and topology.nodes and isinstance(topology.nodes[0], str):
        coerce = str

    links: Dict[Edge, Tuple[int, ...]] = {}
    for i, entry in enumerate(data.get('links') or []):
        try:
            u, v = entry['edge']
            slots = tuple(int(s) for s in entry['slots'])
        except (KeyError, TypeError, ValueError):
            raise DocumentError("expected {edge: [u, v], slots: [...]}", f"links[{i}]") from None
        edge = canonical_edge(coerce(u), coerce(v))
        if topology is not None and edge not in topology.graph.edges:
            raise DocumentError(f"edge {edge!r} is not in topology {topology.name}", f"links[{i}]")
        links[edge] = tuple(sorted(slots))
    if topology is not None:
        for edge in topology.edges:
            links.setdefault(edge, ())

    try:
        return Snapshot(
            links=links,
            k=int(data['k']),
            p=float(data.get('p', 1.0)),
            mu=float(data.get('mu', math.inf)),
            mode=DecoherenceMode(data.get('mode', DecoherenceMode.PER_QUBIT.value)),
            seed=data.get('seed'),
        )
    except KeyError:
        raise DocumentError("missing required key", 'k') from None
    except ValueError as exc:
        raise DocumentError(str(exc)) from exc
