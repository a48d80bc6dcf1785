"""
Command-line front end.

Sub-commands: simulate, sweep, kopt, oracle, analytic, explain-snapshot and
gen-topology. Experiment settings come from an optional YAML ``--config``
file, with explicit flags taking precedence.
"""
import argparse
import csv
import io
import itertools
import logging
import math
import re
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import yaml

from tmrouter import __version__
from tmrouter.analytic import (
    MAX_BRUTEFORCE_BITS,
    ChainRateInput,
    chain_rate_bruteforce,
    chain_rate_p1,
    p_eff,
    rate_bound_infinity,
)
from tmrouter.core import (
    ConfigError,
    DecoherenceMode,
    InvariantError,
    Metric,
    RoutingError,
    SizeLimitError,
    TopologyError,
)
from tmrouter.linkgen import load_snapshot, snapshot_to_document
from tmrouter.montecarlo import (
    COMPARE_COLUMNS,
    KOPT_COLUMNS,
    PROTOCOLS,
    ExperimentConfig,
    compare_protocols,
    find_k_opt,
    k_opt_map,
    run_trial,
    sweep,
    write_estimates,
    write_rows,
)
from tmrouter.oracle import (
    METHODS,
    average_capacity_exhaustive,
    snapshot_capacities,
    snapshot_capacity_exact,
    snapshot_capacity_greedy,
)
from tmrouter.pool import TrialPool, default_workers
from tmrouter.topology import chain_topology, dump_topology, grid_topology, named_topology

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 3
EXIT_TOPOLOGY = 4
EXIT_SIZE = 5
EXIT_INVARIANT = 6

_INT_RANGE = re.compile(r'\s*(-?\d+)\s*\.\.\s*(-?\d+)\s*(?::\s*(\d+)\s*)?')


def parse_int_sweep(text: str, name: str = 'k') -> Union[int, List[int]]:
    """
    Parse an integer value or sweep.

    Accepts ``7``, ``lo..hi`` or ``lo..hi:step`` (inclusive), and comma
    lists such as ``1,2,5``.
    """
    match = _INT_RANGE.fullmatch(text)
    if match:
        lo, hi = int(match.group(1)), int(match.group(2))
        step = int(match.group(3) or 1)
        if step < 1 or hi < lo:
            raise ConfigError(f"Invalid range for {name}: {text!r}")
        return list(range(lo, hi + 1, step))
    try:
        values = [int(part) for part in text.split(',')]
    except ValueError:
        raise ConfigError(f"Invalid integer sweep for {name}: {text!r}") from None
    return values[0] if len(values) == 1 else values


def parse_real_sweep(text: str, name: str = 'p') -> Union[float, List[float]]:
    """Parse a real value or a comma list; ``inf`` is accepted."""
    try:
        values = [float(part) for part in text.split(',')]
    except ValueError:
        raise ConfigError(f"Invalid real sweep for {name}: {text!r}") from None
    if any(math.isnan(v) for v in values):
        raise ConfigError(f"NaN is not a valid value for {name}")
    return values[0] if len(values) == 1 else values


def _common_parser() -> argparse.ArgumentParser:
    """Flags shared by every sub-command."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--topology', help="Preset name (grid21, chain5, sixnode-base, ...) or topology file")
    common.add_argument('--config', type=Path, help="YAML experiment config; flags override it")
    common.add_argument('--seed', type=int, help="Master random seed")
    common.add_argument('--threads', type=int, help="Worker threads (default: $TMROUTER_THREADS or 1)")
    common.add_argument('--output', '-o', type=Path, help="Write results to this file instead of stdout")
    common.add_argument('--append', action='store_true', help="Append CSV rows to --output")
    common.add_argument('-v', '--verbose', action='count', default=0, help="-v for INFO, -vv for DEBUG")
    return common


def _parameter_parser() -> argparse.ArgumentParser:
    """The p, q, k and mu flags, each accepting a sweep."""
    params = argparse.ArgumentParser(add_help=False)
    params.add_argument('--p', help="Link probability, e.g. 0.5 or 0.1,0.3,0.5")
    params.add_argument('--q', help="Uniform swap probability, e.g. 0.9 or 0.8,0.9")
    params.add_argument('--k', help="Block length, e.g. 4, 1..15 or 1..15:2")
    params.add_argument('--mu', help="Mean memory lifetime in slots, or inf")
    return params


def _experiment_parser() -> argparse.ArgumentParser:
    """Protocol and Monte Carlo flags."""
    experiment = argparse.ArgumentParser(add_help=False)
    experiment.add_argument('--protocol', choices=PROTOCOLS)
    experiment.add_argument('--metric', choices=[m.value for m in Metric])
    experiment.add_argument('--straight-path', dest='straight_path', action='store_true', default=None)
    experiment.add_argument('--no-straight-path', dest='straight_path', action='store_false')
    experiment.add_argument('--single-success', dest='single_success', action='store_true', default=None)
    experiment.add_argument('--decoherence', choices=[m.value for m in DecoherenceMode])
    experiment.add_argument('--trials', type=int)
    experiment.add_argument('--checked', action='store_true', default=None,
                            help="Assert per-trial invariants")
    return experiment


def build_parser() -> argparse.ArgumentParser:
    """
    Build the argument parser with every sub-command.

    Returns:
        The top-level parser
    """
    common = _common_parser()
    params = _parameter_parser()
    experiment = _experiment_parser()

    parser = argparse.ArgumentParser(
        prog='tmrouter',
        description="Entanglement routing simulator for time-multiplexed repeater networks",
    )
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest='command', required=True)

    commands.add_parser('simulate', parents=[common, params, experiment],
                        help="Estimate the rate of one parameter point")
    sweep_cmd = commands.add_parser('sweep', parents=[common, params, experiment],
                                    help="Estimate rates over up to two swept parameters")
    sweep_cmd.add_argument('--compare', action='store_true',
                           help="Run both protocols on the same snapshots and report dynamic - static")
    kopt = commands.add_parser('kopt', parents=[common, params, experiment],
                               help="Find the block length with the highest rate")
    kopt.add_argument('--k-max', type=int, default=10)

    oracle = commands.add_parser('oracle', parents=[common, params],
                                 help="Global-knowledge capacities")
    mode = oracle.add_mutually_exclusive_group(required=True)
    mode.add_argument('--enumerate', action='store_true', help="Average capacity over all snapshots")
    mode.add_argument('--snapshot', type=Path, help="Capacities of one serialized snapshot")
    oracle.add_argument('--method', choices=METHODS + ('both',), default='both')
    oracle.add_argument('--per-snapshot', action='store_true',
                        help="With --enumerate, one row per snapshot instead of averages")

    analytic = commands.add_parser('analytic', parents=[common, params],
                                   help="Closed-form rates")
    analytic.add_argument('--p-eff', action='store_true', help="1 - (1 - p)^k")
    analytic.add_argument('--bound', action='store_true', help="Large-k rate bound on --topology")
    analytic.add_argument('--chain', action='store_true', help="Linear-chain rate at p = 1")
    analytic.add_argument('--d', type=int, help="Chain length in edges")
    analytic.add_argument('--mode', choices=[m.value for m in DecoherenceMode],
                          default=DecoherenceMode.PER_LINK.value)

    explain = commands.add_parser('explain-snapshot', parents=[common, params, experiment],
                                  help="Replay one trial and dump snapshot, plan and chains")
    explain.add_argument('--trial', type=int, default=0)

    gen = commands.add_parser('gen-topology', parents=[common], help="Write a topology document")
    gen.add_argument('--kind', choices=('grid', 'chain', 'preset'), required=True)
    gen.add_argument('--width', type=int, default=21)
    gen.add_argument('--height', type=int)
    gen.add_argument('--alice', help="Grid coordinate x,y")
    gen.add_argument('--bob', help="Grid coordinate x,y")
    gen.add_argument('--d', type=int, default=5)
    gen.add_argument('--name', help="Preset name for --kind preset")
    gen.add_argument('--q', type=float)
    return parser


def configure_logging(verbosity: int) -> None:
    """
    Configure the root logger on stderr.

    Args:
        verbosity: 0 for WARNING, 1 for INFO, 2 or more for DEBUG
    """
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def load_config_file(path: Optional[Path]) -> Dict[str, Any]:
    """
    Read a YAML experiment config.

    Args:
        path: Config file, or None for no file

    Returns:
        The mapping, empty when there is no file or the file is empty

    Raises:
        ConfigError: when the file is unreadable, invalid YAML, or not a mapping
    """
    if path is None:
        return {}
    try:
        data = yaml.safe_load(path.read_text(encoding='utf-8'))
    except OSError as exc:
        raise ConfigError(f"Cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"Invalid YAML in config {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"Config {path} must be a mapping")
    return data


def settings_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    """Config file contents overlaid with every flag given on the command line."""
    settings = load_config_file(getattr(args, 'config', None))
    if getattr(args, 'p', None) is not None:
        settings['p'] = parse_real_sweep(args.p, 'p')
    if getattr(args, 'q', None) is not None:
        settings['q'] = parse_real_sweep(args.q, 'q') if isinstance(args.q, str) else args.q
    if getattr(args, 'k', None) is not None:
        settings['k'] = parse_int_sweep(args.k, 'k')
    if getattr(args, 'mu', None) is not None:
        settings['mu'] = parse_real_sweep(args.mu, 'mu')
    for name in ('topology', 'seed', 'protocol', 'metric', 'straight_path',
                 'single_success', 'decoherence', 'trials', 'checked'):
        value = getattr(args, name, None)
        if value is not None:
            settings[name] = value
    return settings


def _open_output(args: argparse.Namespace):
    """Output handle and whether the caller must close it."""
    if args.output is None:
        return sys.stdout, False
    return args.output.open('a' if args.append else 'w', encoding='utf-8', newline=''), True


def _write_text(args: argparse.Namespace, text: str) -> None:
    """Write ``text`` to --output (honouring --append) or stdout."""
    handle, owned = _open_output(args)
    try:
        handle.write(text)
    finally:
        if owned:
            handle.close()


def _pool(args: argparse.Namespace) -> TrialPool:
    """Worker pool sized by --threads or the environment default."""
    workers = args.threads if args.threads is not None else default_workers()
    return TrialPool(workers)


def cmd_simulate(args: argparse.Namespace) -> int:
    """Estimate one scalar point and write its CSV row."""
    config = ExperimentConfig.from_mapping(settings_from_args(args))
    if config.is_sweep:
        raise ConfigError("simulate takes scalar parameters; use the sweep command for lists")
    with _pool(args) as pool:
        estimates = sweep(config, pool)
    write_estimates(estimates, args.output, args.append)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    """Estimate every sweep point, or compare both protocols with --compare."""
    config = ExperimentConfig.from_mapping(settings_from_args(args))
    with _pool(args) as pool:
        if args.compare:
            rows = [c.as_row() for c in compare_protocols(config, pool)]
            write_rows(rows, COMPARE_COLUMNS, args.output, args.append)
            return EXIT_OK
        estimates = sweep(config, pool)
    write_estimates(estimates, args.output, args.append)
    return EXIT_OK


def cmd_kopt(args: argparse.Namespace) -> int:
    """
    Find k_opt.

    With scalar p, q and mu the per-k estimates are written and k_opt goes
    to stderr; when any of them is swept, one k_opt row per point is written.
    """
    settings = settings_from_args(args)
    settings['k'] = 1
    config = ExperimentConfig.from_mapping(settings)
    with _pool(args) as pool:
        if config.is_sweep:
            results = k_opt_map(config, args.k_max, pool)
            write_rows([r.as_row() for r in results], KOPT_COLUMNS, args.output, args.append)
            return EXIT_OK
        result = find_k_opt(config, args.k_max, pool)
    write_estimates(result.estimates, args.output, args.append)
    print(f"k_opt={result.k_opt} separated={'true' if result.separated else 'false'}", file=sys.stderr)
    return EXIT_OK


def cmd_oracle(args: argparse.Namespace) -> int:
    """Global-knowledge capacities of one snapshot file or of every snapshot."""
    settings = settings_from_args(args)
    topology_ref = settings.get('topology', 'sixnode-base')
    methods = METHODS if args.method == 'both' else (args.method,)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')

    if args.snapshot is not None:
        if args.per_snapshot:
            raise ConfigError("--per-snapshot goes with --enumerate")
        topology = named_topology(topology_ref, q=_scalar(settings.get('q'), 'q'))
        try:
            text = args.snapshot.read_text(encoding='utf-8')
        except OSError as exc:
            raise ConfigError(f"Cannot read snapshot {args.snapshot}: {exc}") from exc
        snapshot = load_snapshot(text, topology)
        writer.writerow(['edge_links', 'exact', 'greedy'])
        writer.writerow([
            snapshot.total_links,
            repr(snapshot_capacity_exact(snapshot, topology)),
            repr(snapshot_capacity_greedy(snapshot, topology)),
        ])
    elif args.per_snapshot:
        base = named_topology(topology_ref)
        p = float(_scalar(settings.get('p', 0.5), 'p'))
        q = _scalar(settings.get('q'), 'q')
        k = int(_scalar(settings.get('k', 1), 'k'))
        writer.writerow(['counts', 'probability', 'exact', 'greedy'])
        for row in snapshot_capacities(base, p, None if q is None else float(q), k):
            writer.writerow([
                ' '.join(str(c) for c in row.counts), repr(row.probability), repr(row.exact), repr(row.greedy),
            ])
    else:
        base = named_topology(topology_ref)
        ps = _listify(settings.get('p', 0.5))
        qs = _listify(settings.get('q'))
        ks = _listify(settings.get('k', 1))
        writer.writerow(['topology', 'p', 'q', 'k', 'method', 'average_rate'])
        for p, q, k in itertools.product(ps, qs, ks):
            for method in methods:
                rate = average_capacity_exhaustive(base, float(p), None if q is None else float(q), int(k), method)
                writer.writerow([
                    base.name, repr(float(p)), '' if q is None else repr(float(q)), int(k), method, repr(rate),
                ])
    _write_text(args, buffer.getvalue())
    return EXIT_OK


def _listify(value: Any) -> List[Any]:
    """Wrap a scalar in a list."""
    return list(value) if isinstance(value, (list, tuple)) else [value]


def _scalar(value: Any, name: str) -> Any:
    """Unwrap a one-element list; reject longer ones."""
    if isinstance(value, (list, tuple)):
        if len(value) != 1:
            raise ConfigError(f"{name} must be a single value here")
        return value[0]
    return value


def cmd_analytic(args: argparse.Namespace) -> int:
    """Print the requested closed forms as name=value lines."""
    if not (args.p_eff or args.bound or args.chain):
        raise ConfigError("Choose at least one of --p-eff, --bound, --chain")
    settings = settings_from_args(args)
    lines = []
    if args.p_eff:
        p = float(_scalar(settings.get('p', 0.5), 'p'))
        k = int(_scalar(settings.get('k', 1), 'k'))
        lines.append(f"p_eff={p_eff(p, k)!r}")
    if args.bound:
        topology = named_topology(settings.get('topology', 'grid21'))
        p = float(_scalar(settings.get('p', 0.5), 'p'))
        q = _scalar(settings.get('q'), 'q')
        lines.append(f"rate_bound={rate_bound_infinity(topology, p, None if q is None else float(q))!r}")
    if args.chain:
        if args.d is None:
            raise ConfigError("--chain needs --d")
        chain = ChainRateInput(
            d=args.d,
            q=float(_scalar(settings.get('q', 1.0), 'q')),
            k=int(_scalar(settings.get('k', 1), 'k')),
            mu=float(_scalar(settings.get('mu', math.inf), 'mu')),
            mode=DecoherenceMode(args.mode),
        )
        lines.append(f"chain_rate={chain_rate_p1(chain)!r}")
        if chain.d * (chain.k - 1) <= MAX_BRUTEFORCE_BITS:
            lines.append(f"chain_rate_bruteforce={chain_rate_bruteforce(chain)!r}")
    _write_text(args, ''.join(line + '\n' for line in lines))
    return EXIT_OK


def cmd_explain_snapshot(args: argparse.Namespace) -> int:
    """Replay one trial of point 0 and dump it as YAML."""
    config = ExperimentConfig.from_mapping(settings_from_args(args))
    if config.is_sweep:
        raise ConfigError("explain-snapshot takes scalar parameters")
    if args.trial < 0:
        raise ConfigError(f"--trial must be >= 0, got {args.trial}")
    result = run_trial(config, args.trial)
    document = {
        'format': 1,
        'parameters': config.echo(),
        'trial': args.trial,
        'snapshot': snapshot_to_document(result.snapshot),
        'plan': result.plan.to_document(),
        'chains': result.chains.to_document(),
        'yield': result.value,
    }
    _write_text(args, yaml.safe_dump(document, sort_keys=False))
    return EXIT_OK


def _coordinate(text: Optional[str], default: Tuple[int, int], name: str) -> Tuple[int, int]:
    """Parse an ``x,y`` grid coordinate."""
    if text is None:
        return default
    try:
        x, y = (int(part) for part in text.split(','))
    except ValueError:
        raise ConfigError(f"--{name} must be x,y, got {text!r}") from None
    return x, y


def cmd_gen_topology(args: argparse.Namespace) -> int:
    """Write a grid, chain or preset topology document."""
    if args.kind == 'grid':
        width = args.width
        height = args.height if args.height is not None else width
        topology = grid_topology(
            width,
            height,
            _coordinate(args.alice, (width // 4, height // 4), 'alice'),
            _coordinate(args.bob, (width // 2, height // 2), 'bob'),
            q=args.q if args.q is not None else 1.0,
        )
    elif args.kind == 'chain':
        topology = chain_topology(args.d, q=args.q if args.q is not None else 1.0)
    else:
        name = args.name or args.topology
        if not name:
            raise ConfigError("--kind preset needs --name")
        topology = named_topology(name, q=args.q)
    _write_text(args, dump_topology(topology))
    return EXIT_OK


COMMANDS = {
    'simulate': cmd_simulate,
    'sweep': cmd_sweep,
    'kopt': cmd_kopt,
    'oracle': cmd_oracle,
    'analytic': cmd_analytic,
    'explain-snapshot': cmd_explain_snapshot,
    'gen-topology': cmd_gen_topology,
}


def exit_code_for(error: RoutingError) -> int:
    """Process exit status for a package error."""
    if isinstance(error, ConfigError):
        return EXIT_CONFIG
    if isinstance(error, TopologyError):
        return EXIT_TOPOLOGY
    if isinstance(error, SizeLimitError):
        return EXIT_SIZE
    if isinstance(error, InvariantError):
        return EXIT_INVARIANT
    return EXIT_ERROR


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run the command line.

    Returns:
        Process exit status (argparse exits with 2 on usage errors)
    """
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        return COMMANDS[args.command](args)
    except RoutingError as exc:
        logger.error("%s", exc)
        return exit_code_for(exc)
    except OSError as exc:
        logger.error("%s", exc)
        return EXIT_ERROR
