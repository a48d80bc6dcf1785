"""
Monte Carlo rate estimation: experiment configuration, per-trial pipeline,
parameter sweeps, k_opt search and CSV output.
"""
import csv
import dataclasses
import io
import itertools
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

from tmrouter.base import InternalPhase, SwapPlan
from tmrouter.core import ConfigError, DecoherenceMode, InvariantError, Metric, SizeLimitError
from tmrouter.linkgen import Snapshot, generate_snapshot
from tmrouter.oracle import MAX_EXACT_LINKS, check_enumerable, count_probability, enumerate_snapshots, snapshot_capacity_exact
from tmrouter.pool import TrialPool
from tmrouter.routing import ChainSet, DynamicRouting, StaticRouting, single_success_filter, snapshot_yield, trace_chains
from tmrouter.topology import Topology, named_topology

logger = logging.getLogger(__name__)

PROTOCOLS = ('dynamic', 'static')
SWEEPABLE = ('p', 'q', 'k', 'mu')
MAX_SWEPT = 2
DEFAULT_TRIALS = 10_000
DEFAULT_MAX_POINTS = 10_000

CSV_COLUMNS = [
    'topology', 'protocol', 'metric', 'straight_path', 'single_success',
    'p', 'q', 'k', 'mu', 'decoherence', 'trials', 'mean_rate', 'stderr', 'seed',
]
KOPT_COLUMNS = [
    'topology', 'protocol', 'metric', 'straight_path', 'single_success',
    'p', 'q', 'mu', 'decoherence', 'trials', 'k_max', 'k_opt', 'mean_rate', 'stderr',
    'separated', 'seed',
]
COMPARE_COLUMNS = [
    'topology', 'metric', 'straight_path', 'single_success',
    'p', 'q', 'k', 'mu', 'decoherence', 'trials',
    'dynamic_rate', 'dynamic_stderr', 'static_rate', 'static_stderr',
    'difference', 'difference_stderr', 'seed',
]


def trial_rng(seed: int, point: int, trial: int) -> np.random.Generator:
    """Independent random stream for one trial of one sweep point."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(point, trial)))


def _as_list(value: Any) -> List[Any]:
    """Wrap a scalar in a list; copy lists and tuples."""
    if isinstance(value, (list, tuple)):
        return list(value)
    return [value]


def _as_float(name: str, value: Any) -> float:
    """Coerce a config value to float or raise ConfigError."""
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}") from None


def _as_int(name: str, value: Any) -> int:
    """Coerce a config value to an integer, rejecting bools and fractions."""
    if isinstance(value, bool):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    try:
        number = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be an integer, got {value!r}") from None
    if number != value and not isinstance(value, str):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    return number


@dataclass
class ExperimentConfig:
    """
    Everything that defines a Monte Carlo experiment.

    ``p``, ``q``, ``k`` and ``mu`` are scalars or sweep lists; at most two
    of them may be swept in one run. ``q=None`` keeps the swap
    probabilities stored in the topology.
    """
    topology: Union[str, Topology] = 'grid21'
    protocol: str = 'dynamic'
    metric: Metric = Metric.EUCLIDEAN
    straight_path: bool = True
    single_success: bool = False
    decoherence: DecoherenceMode = DecoherenceMode.PER_QUBIT
    p: Any = 0.5
    q: Any = 1.0
    k: Any = 1
    mu: Any = math.inf
    trials: int = DEFAULT_TRIALS
    seed: int = 0
    checked: bool = False
    max_points: int = DEFAULT_MAX_POINTS

    def __post_init__(self):
        """
        Validate and normalise every field.

        Raises:
            ConfigError: on an unknown choice, an out-of-range value, or more
                than two swept parameters
        """
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"Unknown protocol {self.protocol!r}, expected one of {PROTOCOLS}")
        try:
            self.metric = Metric(self.metric)
        except ValueError:
            raise ConfigError(f"Unknown metric {self.metric!r}") from None
        try:
            self.decoherence = DecoherenceMode(self.decoherence)
        except ValueError:
            raise ConfigError(f"Unknown decoherence mode {self.decoherence!r}") from None
        self.trials = _as_int('trials', self.trials)
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        self.seed = _as_int('seed', self.seed)
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")

        swept = []
        for name in SWEEPABLE:
            values = _as_list(getattr(self, name))
            if not values:
                raise ConfigError(f"Sweep list for {name} is empty")
            if len(values) > 1:
                swept.append(name)
            cleaned = [self._clean(name, v) for v in values]
            setattr(self, name, cleaned if isinstance(getattr(self, name), (list, tuple)) else cleaned[0])
        if len(swept) > MAX_SWEPT:
            raise ConfigError(f"At most {MAX_SWEPT} parameters may be swept at once, got {swept}")

    @staticmethod
    def _clean(name: str, value: Any) -> Any:
        """Validate one value of a sweepable parameter."""
        if name == 'k':
            k = _as_int('k', value)
            if k < 1:
                raise ConfigError(f"k must be >= 1, got {k}")
            return k
        if name == 'q' and value is None:
            return None
        number = _as_float(name, value)
        if name == 'mu':
            if not number > 0:
                raise ConfigError(f"mu must be positive or inf, got {value!r}")
        elif not 0.0 <= number <= 1.0:
            raise ConfigError(f"{name} must lie in [0, 1], got {value!r}")
        return number

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> 'ExperimentConfig':
        """
        Build a config from a mapping, e.g. a loaded YAML file.

        Raises:
            ConfigError: on unknown keys or invalid values
        """
        if not isinstance(data, Mapping):
            raise ConfigError("Experiment config must be a mapping")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known - {'format'})
        if unknown:
            raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")
        return cls(**{key: value for key, value in data.items() if key in known})

    @property
    def swept(self) -> List[str]:
        """Names of the parameters holding more than one value."""
        return [name for name in SWEEPABLE if isinstance(getattr(self, name), list) and len(getattr(self, name)) > 1]

    @property
    def is_sweep(self) -> bool:
        """True when any sweepable parameter is a list."""
        return any(isinstance(getattr(self, name), list) for name in SWEEPABLE)

    def points(self) -> List['ExperimentConfig']:
        """
        Scalar configs for every parameter combination, in sweep order.

        Raises:
            SizeLimitError: when the grid exceeds ``max_points``
        """
        grids = [_as_list(getattr(self, name)) for name in SWEEPABLE]
        total = math.prod(len(g) for g in grids)
        if total > self.max_points:
            raise SizeLimitError(f"Sweep has {total} points, limit is {self.max_points}")
        return [
            dataclasses.replace(self, **dict(zip(SWEEPABLE, combo)))
            for combo in itertools.product(*grids)
        ]

    @property
    def topology_name(self) -> str:
        """Label of the topology for CSV output."""
        if isinstance(self.topology, Topology):
            return self.topology.name
        return str(self.topology)

    def resolve_topology(self) -> Topology:
        """The topology of a scalar config, with ``q`` applied."""
        if self.is_sweep:
            raise ConfigError("resolve_topology needs a scalar config")
        if isinstance(self.topology, Topology):
            topology = self.topology
            return topology if self.q is None else topology.with_uniform_q(self.q)
        return named_topology(self.topology, q=self.q)

    def echo(self) -> Dict[str, Any]:
        """Parameter echo carried by a rate estimate."""
        return {
            'topology': self.topology_name,
            'protocol': self.protocol,
            'metric': self.metric.value,
            'straight_path': self.straight_path,
            'single_success': self.single_success,
            'p': self.p,
            'q': self.q,
            'k': self.k,
            'mu': self.mu,
            'decoherence': self.decoherence.value,
            'seed': self.seed,
        }


def _format(value: Any) -> str:
    """Render one CSV cell."""
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if value is None:
        return ''
    if isinstance(value, float):
        if math.isinf(value):
            return 'inf'
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class RateEstimate:
    """Mean rate per time slot over independent trials, with its standard error."""
    mean: float
    stderr: float
    trials: int
    params: Dict[str, Any] = field(default_factory=dict)

    def as_row(self) -> Dict[str, str]:
        """CSV row keyed by :data:`CSV_COLUMNS`."""
        row = {name: _format(self.params.get(name)) for name in CSV_COLUMNS}
        row['trials'] = str(self.trials)
        row['mean_rate'] = _format(self.mean)
        row['stderr'] = _format(self.stderr)
        return row


@dataclass(frozen=True)
class TrialResult:
    """Everything one trial produced."""
    snapshot: Snapshot
    plan: SwapPlan
    chains: ChainSet
    value: float


@dataclass(frozen=True)
class KOptResult:
    """Block length with the highest estimated rate."""
    k_opt: int
    estimates: List[RateEstimate]
    separated: bool

    @property
    def best(self) -> RateEstimate:
        """Estimate at ``k_opt``."""
        return self.estimates[self.k_opt - 1]

    def as_row(self) -> Dict[str, str]:
        """CSV row keyed by :data:`KOPT_COLUMNS`."""
        best = self.best
        row = {name: _format(best.params.get(name)) for name in KOPT_COLUMNS}
        row['trials'] = str(best.trials)
        row['k_max'] = str(len(self.estimates))
        row['k_opt'] = str(self.k_opt)
        row['mean_rate'] = _format(best.mean)
        row['stderr'] = _format(best.stderr)
        row['separated'] = _format(self.separated)
        return row


@dataclass(frozen=True)
class ProtocolComparison:
    """
    Dynamic and static rates of one point, measured on the same snapshots.

    ``difference`` is dynamic minus static; its standard error comes from
    the per-trial differences, so it is usually much smaller than either
    rate's own error.
    """
    dynamic: RateEstimate
    static: RateEstimate
    difference: float
    difference_stderr: float

    def as_row(self) -> Dict[str, str]:
        """CSV row keyed by :data:`COMPARE_COLUMNS`."""
        row = {name: _format(self.dynamic.params.get(name)) for name in COMPARE_COLUMNS}
        row['trials'] = str(self.dynamic.trials)
        row['dynamic_rate'] = _format(self.dynamic.mean)
        row['dynamic_stderr'] = _format(self.dynamic.stderr)
        row['static_rate'] = _format(self.static.mean)
        row['static_stderr'] = _format(self.static.stderr)
        row['difference'] = _format(self.difference)
        row['difference_stderr'] = _format(self.difference_stderr)
        return row


def build_protocol(config: ExperimentConfig, topology: Topology) -> InternalPhase:
    """
    Internal-phase protocol selected by a config.

    Args:
        config: Experiment config naming the protocol and its options
        topology: Resolved topology the protocol routes on

    Returns:
        A DynamicRouting or StaticRouting instance
    """
    if config.protocol == 'static':
        return StaticRouting(topology)
    return DynamicRouting(topology, config.metric, config.straight_path)


def check_trial(result: TrialResult, topology: Topology) -> None:
    """
    Invariants every trial must satisfy.

    Raises:
        InvariantError: on an invalid plan, a link shared by two chains, a
            chain not joining Alice and Bob, or a yield above the exact
            capacity of a small snapshot
    """
    result.plan.validate(result.snapshot, topology)
    seen = set()
    for chain in result.chains:
        if chain.nodes[0] != topology.alice or chain.nodes[-1] != topology.bob:
            raise InvariantError(f"Chain {chain.nodes!r} does not join Alice and Bob")
        for link in chain.links:
            if link in seen:
                raise InvariantError(f"Link {link!r} used by two chains")
            seen.add(link)
    if result.snapshot.total_links <= MAX_EXACT_LINKS:
        capacity = snapshot_capacity_exact(result.snapshot, topology)
        if result.value > capacity + 1e-9:
            raise InvariantError(f"Protocol yield {result.value!r} exceeds exact capacity {capacity!r}")


class TrialRunner:
    """
    Runs single trials of one scalar config.

    Holds the resolved topology and protocol so a sweep point is set up
    once; ``rate`` is safe to call from several threads.
    """

    def __init__(self, config: ExperimentConfig, point: int = 0, topology: Optional[Topology] = None):
        """
        Initialize the runner.

        Args:
            config: Scalar experiment config
            point: Sweep index used to derive trial streams
            topology: Pre-resolved topology (q already applied)

        Raises:
            ConfigError: when ``config`` still holds sweep lists
        """
        if config.is_sweep:
            raise ConfigError("A trial runner needs a scalar config")
        self.config = config
        self.point = point
        self.topology = topology if topology is not None else config.resolve_topology()
        self.protocol = build_protocol(config, self.topology)

    def snapshot(self, trial: int) -> Snapshot:
        """
        External phase of one trial, on that trial's own stream.

        Args:
            trial: Trial index within the point

        Returns:
            The snapshot, filtered to single successes when configured
        """
        config = self.config
        snapshot = generate_snapshot(
            self.topology,
            config.p,
            config.k,
            config.mu,
            config.decoherence,
            rng=trial_rng(config.seed, self.point, trial),
            seed=(config.seed, self.point, trial),
        )
        if config.single_success:
            snapshot = single_success_filter(snapshot)
        return snapshot

    def evaluate(self, snapshot: Snapshot) -> TrialResult:
        """
        Internal phase, chain tracing and yield for one snapshot.

        Raises:
            InvariantError: in checked mode, when the trial breaks an invariant
        """
        plan = self.protocol.plan(snapshot)
        chains = trace_chains(plan, snapshot, self.topology)
        result = TrialResult(snapshot, plan, chains, snapshot_yield(chains, self.topology))
        if self.config.checked:
            check_trial(result, self.topology)
        return result

    def run(self, trial: int) -> TrialResult:
        """Run trial ``trial`` end to end."""
        return self.evaluate(self.snapshot(trial))

    def rate(self, trial: int) -> float:
        """Yield of one trial divided by k."""
        return self.run(trial).value / self.config.k


def run_trial(config: ExperimentConfig, trial: int, point: int = 0, topology: Optional[Topology] = None) -> TrialResult:
    """Replay one trial exactly as :func:`estimate_rate` runs it."""
    return TrialRunner(config, point, topology).run(trial)


def _summarise(rates: Sequence[float], config: ExperimentConfig) -> RateEstimate:
    """Sample mean and standard error of per-trial rates."""
    values = np.asarray(rates, dtype=float)
    mean = float(values.mean())
    stderr = float(values.std(ddof=1) / math.sqrt(len(values))) if len(values) > 1 else 0.0
    return RateEstimate(mean=mean, stderr=stderr, trials=len(values), params=config.echo())


def _each_point(config: ExperimentConfig) -> Iterator[Tuple[int, int, ExperimentConfig, Topology]]:
    """Yield ``(index, total, point config, topology)``, resolving each q once."""
    topologies: Dict[Any, Topology] = {}
    points = config.points()
    for index, point_config in enumerate(points):
        if point_config.q not in topologies:
            topologies[point_config.q] = point_config.resolve_topology()
        yield index, len(points), point_config, topologies[point_config.q]


def estimate_rate(
    config: ExperimentConfig,
    pool: Optional[TrialPool] = None,
    point: int = 0,
    topology: Optional[Topology] = None,
) -> RateEstimate:
    """
    Estimate the rate of a scalar config.

    Args:
        config: Scalar experiment config
        pool: Worker pool; trials run inline when omitted
        point: Sweep index used to derive trial streams
        topology: Pre-resolved topology (q already applied)

    Returns:
        The mean of yield / k over ``config.trials`` trials
    """
    runner = TrialRunner(config, point, topology)
    pool = pool if pool is not None else TrialPool(1)
    estimate = _summarise(pool.map_range(runner.rate, config.trials), config)
    logger.debug("Point %d %s: mean=%r stderr=%r", point, config.echo(), estimate.mean, estimate.stderr)
    return estimate


def sweep(config: ExperimentConfig, pool: Optional[TrialPool] = None) -> List[RateEstimate]:
    """One estimate per parameter combination, in sweep order."""
    estimates = []
    for index, total, point_config, topology in _each_point(config):
        estimate = estimate_rate(point_config, pool, index, topology)
        logger.info(
            "Sweep point %d/%d (p=%s q=%s k=%s mu=%s): %.6g +/- %.2g",
            index + 1, total, point_config.p, point_config.q, point_config.k, point_config.mu,
            estimate.mean, estimate.stderr,
        )
        estimates.append(estimate)
    return estimates


def compare_point(
    config: ExperimentConfig,
    pool: Optional[TrialPool] = None,
    point: int = 0,
    topology: Optional[Topology] = None,
) -> ProtocolComparison:
    """
    Run both protocols of a scalar config on identical snapshots.

    Trial ``i`` draws one snapshot from its stream and hands it to the
    dynamic and the static protocol, so the two rates are paired.

    Args:
        config: Scalar experiment config; its ``protocol`` is ignored
        pool: Worker pool; trials run inline when omitted
        point: Sweep index used to derive trial streams
        topology: Pre-resolved topology (q already applied)

    Returns:
        Both estimates and their paired difference
    """
    dynamic = TrialRunner(dataclasses.replace(config, protocol='dynamic'), point, topology)
    static = TrialRunner(dataclasses.replace(config, protocol='static'), point, dynamic.topology)

    def paired(trial: int) -> Tuple[float, float]:
        """Rates of both protocols on trial ``trial``'s snapshot."""
        snapshot = dynamic.snapshot(trial)
        return dynamic.evaluate(snapshot).value / config.k, static.evaluate(snapshot).value / config.k

    pool = pool if pool is not None else TrialPool(1)
    values = np.asarray(pool.map_range(paired, config.trials), dtype=float).reshape(-1, 2)
    difference = _summarise(values[:, 0] - values[:, 1], config)
    return ProtocolComparison(
        dynamic=_summarise(values[:, 0], dynamic.config),
        static=_summarise(values[:, 1], static.config),
        difference=difference.mean,
        difference_stderr=difference.stderr,
    )


def compare_protocols(config: ExperimentConfig, pool: Optional[TrialPool] = None) -> List[ProtocolComparison]:
    """One dynamic-versus-static comparison per parameter combination, in sweep order."""
    comparisons = []
    for index, total, point_config, topology in _each_point(config):
        comparison = compare_point(point_config, pool, index, topology)
        logger.info(
            "Compare point %d/%d (p=%s q=%s k=%s mu=%s): dynamic - static = %.6g +/- %.2g",
            index + 1, total, point_config.p, point_config.q, point_config.k, point_config.mu,
            comparison.difference, comparison.difference_stderr,
        )
        comparisons.append(comparison)
    return comparisons


def find_k_opt(config: ExperimentConfig, k_max: int, pool: Optional[TrialPool] = None) -> KOptResult:
    """
    Block length in 1..k_max maximising the estimated rate.

    Ties go to the smaller k. The result is separated when its mean beats
    every adjacent k by more than two combined standard errors.

    Raises:
        ConfigError: when k_max < 1 or a parameter other than k is swept
    """
    if k_max < 1:
        raise ConfigError(f"k_max must be >= 1, got {k_max}")
    swept = [name for name in config.swept if name != 'k']
    if swept:
        raise ConfigError(f"find_k_opt sweeps k itself; also swept: {swept}")
    if any(isinstance(v, float) and math.isinf(v) for v in _as_list(config.mu)):
        logger.warning("k_opt without decoherence is always the largest k tried")
    scan = dataclasses.replace(config, k=list(range(1, k_max + 1)))
    estimates = sweep(scan, pool)

    best = 0
    for i, estimate in enumerate(estimates):
        if estimate.mean > estimates[best].mean:
            best = i
    separated = True
    for j in (best - 1, best + 1):
        if 0 <= j < len(estimates):
            gap = estimates[best].mean - estimates[j].mean
            if not gap > 2.0 * math.hypot(estimates[best].stderr, estimates[j].stderr):
                separated = False
    k_opt = best + 1
    logger.info("k_opt=%d (%s)", k_opt, 'separated' if separated else 'not separated')
    return KOptResult(k_opt=k_opt, estimates=estimates, separated=separated)


def k_opt_map(config: ExperimentConfig, k_max: int, pool: Optional[TrialPool] = None) -> List[KOptResult]:
    """
    k_opt at every combination of the swept p, q and mu values.

    Every point scans k = 1..k_max with the same trial streams, so
    neighbouring points are compared on common random numbers.

    Raises:
        ConfigError: when k_max < 1
        SizeLimitError: when the grid exceeds ``config.max_points``
    """
    results = []
    points = dataclasses.replace(config, k=1).points()
    for index, point_config in enumerate(points):
        result = find_k_opt(point_config, k_max, pool)
        logger.info(
            "k_opt point %d/%d (p=%s q=%s mu=%s): k_opt=%d",
            index + 1, len(points), point_config.p, point_config.q, point_config.mu, result.k_opt,
        )
        results.append(result)
    return results


def expected_rate_exhaustive(config: ExperimentConfig, topology: Optional[Topology] = None) -> float:
    """
    Exact expected protocol rate without decoherence.

    Enumerates every link-count vector, weights it by its probability and
    applies the configured protocol.

    Raises:
        ConfigError: when mu is finite
        SizeLimitError: when edges x k exceeds the enumeration guard
    """
    if not math.isinf(config.mu):
        raise ConfigError("Exhaustive expectation needs mu = inf")
    runner = TrialRunner(config, topology=topology)
    check_enumerable(runner.topology, config.k)
    terms = []
    for counts, snapshot in enumerate_snapshots(runner.topology, config.k):
        weight = count_probability(counts, config.p, config.k)
        if weight == 0.0:
            continue
        if config.single_success:
            snapshot = single_success_filter(snapshot)
        terms.append(weight * runner.evaluate(snapshot).value)
    return math.fsum(terms) / config.k


def format_rows(rows: Iterable[Mapping[str, str]], columns: Sequence[str], header: bool = True) -> str:
    """
    Render rows as CSV text.

    Args:
        rows: Mappings keyed by ``columns``
        columns: Column order
        header: Whether to start with the column names
    """
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(columns), lineterminator='\n')
    if header:
        writer.writeheader()
    writer.writerows(rows)
    return buffer.getvalue()


def write_rows(
    rows: Sequence[Mapping[str, str]],
    columns: Sequence[str],
    path: Optional[Union[str, Path]] = None,
    append: bool = False,
    stream: Optional[TextIO] = None,
) -> None:
    """
    Write CSV rows to ``path`` or ``stream`` (stdout by default).

    The header is skipped only when appending to a non-empty file.
    """
    if path is None:
        (stream or sys.stdout).write(format_rows(rows, columns))
        return
    path = Path(path)
    header = not (append and path.exists() and path.stat().st_size > 0)
    with path.open('a' if append else 'w', encoding='utf-8', newline='') as handle:
        handle.write(format_rows(rows, columns, header=header))


def format_estimates(estimates: Sequence[RateEstimate], header: bool = True) -> str:
    """Rate estimates as CSV text."""
    return format_rows((e.as_row() for e in estimates), CSV_COLUMNS, header)


def write_estimates(
    estimates: Sequence[RateEstimate],
    path: Optional[Union[str, Path]] = None,
    append: bool = False,
    stream: Optional[TextIO] = None,
) -> None:
    """Write rate estimates as CSV; see :func:`write_rows`."""
    write_rows([e.as_row() for e in estimates], CSV_COLUMNS, path, append, stream)
