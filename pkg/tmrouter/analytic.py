"""
Closed-form rates: effective link probability, the large-k bound, and the
exact linear-chain rate at p = 1 under decoherence.
"""
import itertools
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from tmrouter.core import ConfigError, DecoherenceMode, SizeLimitError
from tmrouter.linkgen import survival_probability
from tmrouter.topology import Topology, greedy_edge_disjoint_paths

logger = logging.getLogger(__name__)

MAX_BRUTEFORCE_BITS = 20


def _check_probability(name: str, value: float) -> None:
    """Reject a probability outside [0, 1]."""
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"{name} must lie in [0, 1], got {value}")


def p_eff(p: float, k: int) -> float:
    """
    Probability that an edge holds at least one link after ``k`` slots.

    Args:
        p: Per-slot link probability
        k: Block length

    Returns:
        1 - (1 - p)^k, exactly ``p`` when k is 1
    """
    _check_probability('p', p)
    if k < 1:
        raise ConfigError(f"Block length k must be >= 1, got {k}")
    if k == 1:
        return float(p)
    return 1.0 - (1.0 - p) ** k


def rate_bound_infinity(topology: Topology, p: float, q: Optional[float] = None) -> float:
    """
    Large-k rate bound p * sum over greedy paths of the path value.

    With uniform ``q`` a path of ``m`` hops contributes q^(m-1).

    Args:
        topology: Network with consumers
        p: Per-slot link probability
        q: Uniform swap probability; None keeps the topology's own values
    """
    _check_probability('p', p)
    if q is not None:
        _check_probability('q', q)
        topology = topology.with_uniform_q(q)
    paths = greedy_edge_disjoint_paths(topology)
    return p * math.fsum(math.prod(topology.q(n) for n in path[1:-1]) for path in paths)


@dataclass(frozen=True)
class ChainRateInput:
    """
    A linear chain of ``d`` edges (d - 1 repeaters) operated at p = 1.

    ``mode`` defaults to a single lifetime per link.
    """
    d: int
    q: float
    k: int
    mu: float
    mode: DecoherenceMode = DecoherenceMode.PER_LINK

    def __post_init__(self):
        """Validate the chain parameters."""
        if self.d < 1:
            raise ConfigError(f"Chain length d must be >= 1, got {self.d}")
        if self.k < 1:
            raise ConfigError(f"Block length k must be >= 1, got {self.k}")
        _check_probability('q', self.q)
        if not self.mu > 0:
            raise ConfigError(f"Mean lifetime mu must be positive, got {self.mu}")
        object.__setattr__(self, 'mode', DecoherenceMode(self.mode))

    def older_survival(self) -> list:
        """Survival probability to slot k of the links made in slots 1..k-1."""
        return [survival_probability(self.k - i, self.mu, self.mode) for i in range(1, self.k)]


def poisson_binomial_pmf(probs: Sequence[float]) -> np.ndarray:
    """Distribution of a sum of independent Bernoulli variables, by convolution."""
    pmf = np.ones(1)
    for prob in probs:
        pmf = np.convolve(pmf, [1.0 - prob, prob])
    return pmf


def chain_rate_p1(chain: ChainRateInput) -> float:
    """
    Expected rate of a linear chain with every slot succeeding.

    The slot-k link always survives. On each edge the number N of older
    links still alive is Poisson-binomial; the chain delivers 1 + M pairs
    where M is the minimum of d independent copies of N, so the rate is
    q^(d-1) / k * (1 + E[M]).
    """
    scale = chain.q ** (chain.d - 1) / chain.k
    if chain.k == 1:
        return scale
    pmf = poisson_binomial_pmf(chain.older_survival())
    tail = np.cumsum(pmf[::-1])[::-1]
    expected_min = math.fsum(float(tail[m]) ** chain.d for m in range(1, len(pmf)))
    logger.debug("Chain d=%d k=%d mu=%s: E[M]=%r", chain.d, chain.k, chain.mu, expected_min)
    return scale * (1.0 + expected_min)


def chain_rate_bruteforce(chain: ChainRateInput, max_bits: int = MAX_BRUTEFORCE_BITS) -> float:
    """
    Chain rate by enumerating every survival outcome of the older links.

    Raises:
        SizeLimitError: when d * (k - 1) exceeds ``max_bits``
    """
    bits = chain.d * (chain.k - 1)
    if bits > max_bits:
        raise SizeLimitError(f"Brute-force chain rate limited to {max_bits} outcomes bits, got {bits}")
    survive = chain.older_survival()
    terms = []
    for outcome in itertools.product((0, 1), repeat=bits):
        prob = 1.0
        for i, alive in enumerate(outcome):
            s = survive[i % (chain.k - 1)]
            prob *= s if alive else 1.0 - s
        per_edge = [sum(outcome[e * (chain.k - 1):(e + 1) * (chain.k - 1)]) for e in range(chain.d)]
        terms.append(prob * (1 + min(per_edge)))
    return chain.q ** (chain.d - 1) / chain.k * math.fsum(terms)
