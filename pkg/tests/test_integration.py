"""
Integration tests for tmrouter.
Checks the end-to-end behaviour of the simulator on the reference scenarios.

Long-running variants only run with TMROUTER_SLOW_TESTS=1.
"""
import contextlib
import io
import math
import os
import tempfile
import unittest

import numpy as np

from tmrouter.analytic import ChainRateInput, chain_rate_p1, p_eff
from tmrouter.cli import main
from tmrouter.core import DecoherenceMode, Metric
from tmrouter.linkgen import generate_snapshot
from tmrouter.montecarlo import ExperimentConfig, estimate_rate, expected_rate_exhaustive, find_k_opt, sweep
from tmrouter.oracle import (
    average_capacity_exhaustive,
    enumerate_snapshots,
    snapshot_capacity_exact,
    snapshot_capacity_greedy,
)
from tmrouter.pool import TrialPool, default_workers
from tmrouter.routing import dynamic_internal_phase, snapshot_yield, trace_chains
from tmrouter.topology import grid_topology, named_topology

SLOW = os.environ.get('TMROUTER_SLOW_TESTS') == '1'


def rates_separated(higher, lower, sigmas=2.0):
    """True when ``higher`` beats ``lower`` by ``sigmas`` combined standard errors."""
    return higher.mean - lower.mean >= sigmas * math.hypot(higher.stderr, lower.stderr)


class TestLinkGeneration(unittest.TestCase):
    """Integration test cases for the effective link probability."""

    def test_p_eff_law(self):
        """Test the fraction of edges holding a link matches 1-(1-p)^k."""
        grid = named_topology('grid21')
        rng = np.random.default_rng(20240601)
        for p in (0.2, 0.5, 0.8):
            for k in (1, 2, 5, 10):
                with self.subTest(p=p, k=k):
                    hits = 0
                    samples = 0
                    while samples < 100_000:
                        snapshot = generate_snapshot(grid, p, k, rng=rng)
                        hits += sum(1 for slots in snapshot.links.values() if slots)
                        samples += len(grid.edges)
                    expected = p_eff(p, k)
                    sigma = math.sqrt(expected * (1 - expected) / samples)
                    self.assertLess(abs(hits / samples - expected), 4 * sigma + 1e-12)


class TestGridBehaviour(unittest.TestCase):
    """Integration test cases on square lattices."""

    def test_rate_grows_with_k(self):
        """Test the grid21 rate rises with k and stays under 4p."""
        estimates = sweep(ExperimentConfig(topology='grid21', p=0.5, q=1.0, k=[1, 2, 4], trials=100, seed=2))
        for lower, higher in zip(estimates, estimates[1:]):
            self.assertGreaterEqual(higher.mean, lower.mean - 2 * math.hypot(higher.stderr, lower.stderr))
        for estimate in estimates:
            self.assertLessEqual(estimate.mean, 4 * 0.5 + 3 * estimate.stderr)

    def test_straight_path_heuristic(self):
        """Test the heuristic keeps every chain between same-column consumers."""
        grid = grid_topology(5, 5, (2, 1), (2, 3))
        with_heuristic = estimate_rate(ExperimentConfig(topology=grid, p=1.0, q=1.0, trials=3))
        without = estimate_rate(ExperimentConfig(topology=grid, p=1.0, q=1.0, trials=3, straight_path=False))
        self.assertEqual(with_heuristic.mean, 3.0)
        self.assertEqual(without.mean, 1.0)

    def test_straight_path_placements(self):
        """Test every interior same-row or same-column pair at least two apart keeps three or four chains."""
        for width in (5, 7):
            for x in range(1, width - 1):
                for ya in range(width):
                    for yb in range(width):
                        if abs(ya - yb) < 2:
                            continue
                        for alice, bob in (((x, ya), (x, yb)), ((ya, x), (yb, x))):
                            with self.subTest(width=width, alice=alice, bob=bob):
                                grid = grid_topology(width, width, alice, bob)
                                rate = estimate_rate(ExperimentConfig(topology=grid, p=1.0, q=1.0, trials=1))
                                self.assertIn(rate.mean, (3.0, 4.0))

    def test_straight_path_off_line(self):
        """Test consumers on neither a shared row nor a shared column can drop to two chains."""
        grid = grid_topology(7, 7, (1, 1), (2, 4))
        rate = estimate_rate(ExperimentConfig(topology=grid, p=1.0, q=1.0, trials=1))
        self.assertEqual(rate.mean, 2.0)

    def test_diagonal_consumers_yield_four(self):
        """Test diagonal consumers on a full grid get all four chains."""
        grid = grid_topology(5, 5, (1, 1), (3, 3))
        self.assertEqual(estimate_rate(ExperimentConfig(topology=grid, p=1.0, q=1.0, trials=2)).mean, 4.0)

    def test_diagonal_equivalence(self):
        """Test dynamic and static routing perform equally on diagonal consumers."""
        grid = grid_topology(5, 5, (1, 1), (3, 3))
        for q in (0.5, 0.9, 1.0):
            with self.subTest(q=q):
                dynamic = estimate_rate(ExperimentConfig(topology=grid, p=1.0, q=q, trials=2))
                static = estimate_rate(ExperimentConfig(topology=grid, protocol='static', p=1.0, q=q, trials=2))
                self.assertEqual(dynamic.mean, static.mean)
                self.assertAlmostEqual(dynamic.mean, 2 * q ** 3 + 2 * q ** 7, places=12)


class TestSixNodeNetwork(unittest.TestCase):
    """Integration test cases on the six-node reconstructions."""

    def test_oracle_agreement(self):
        """Test greedy equals exact and local never beats exact on all snapshots."""
        six = named_topology('sixnode-base', q=0.9)
        count = 0
        for _, snapshot in enumerate_snapshots(six, 1):
            exact = snapshot_capacity_exact(snapshot, six)
            greedy = snapshot_capacity_greedy(snapshot, six)
            self.assertLessEqual(abs(exact - greedy), 1e-7 * exact + 1e-300)
            plan = dynamic_internal_phase(snapshot, six, Metric.HOP)
            self.assertLessEqual(snapshot_yield(trace_chains(plan, snapshot, six), six), exact + 1e-9)
            count += 1
        self.assertEqual(count, 128)

    def test_global_rate_prefers_more_channels(self):
        """Test removing a channel never raises the global rate."""
        for family in ('sixnode', 'sixnode-alt'):
            base = named_topology(f'{family}-base')
            reduced = [named_topology(f'{family}-{v}') for v in ('no23', 'noA3')]
            for p in (0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9):
                rate = average_capacity_exhaustive(base, p, q=0.9)
                for variant in reduced:
                    with self.subTest(family=family, p=p, variant=variant.name):
                        self.assertGreaterEqual(rate + 1e-12, average_capacity_exhaustive(variant, p, q=0.9))

    def test_local_rate_penalised_by_extra_channel(self):
        """Test the local rate without edge (2,3) beats the full graph at some p."""
        gains = []
        for p in (0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9):
            base = expected_rate_exhaustive(ExperimentConfig(topology='sixnode-alt-base', metric='hop', p=p, q=0.9))
            reduced = expected_rate_exhaustive(ExperimentConfig(topology='sixnode-alt-no23', metric='hop', p=p, q=0.9))
            gains.append(reduced - base)
        self.assertGreater(max(gains), 0.005)


class TestChainRate(unittest.TestCase):
    """Integration test cases for the linear-chain closed form."""

    def test_monte_carlo_matches_closed_form(self):
        """Test the simulated five-edge chain against the closed form."""
        for mu in (2.0, 10.0):
            for k in range(1, 7):
                with self.subTest(mu=mu, k=k):
                    config = ExperimentConfig(
                        topology='chain5', p=1.0, q=0.9, k=k, mu=mu, decoherence='per_link', trials=1500, seed=k,
                    )
                    estimate = estimate_rate(config)
                    expected = chain_rate_p1(ChainRateInput(d=5, q=0.9, k=k, mu=mu, mode=DecoherenceMode.PER_LINK))
                    self.assertLessEqual(abs(estimate.mean - expected), 4 * estimate.stderr + 1e-12)

    def test_limits(self):
        """Test k=1 and unbounded lifetime both give q^(d-1)."""
        self.assertEqual(chain_rate_p1(ChainRateInput(d=5, q=0.9, k=1, mu=3.0)), 0.9 ** 4)
        self.assertAlmostEqual(chain_rate_p1(ChainRateInput(d=5, q=0.9, k=6, mu=math.inf)), 0.9 ** 4, places=12)

    def test_kopt_certain_links(self):
        """Test p=1 forces k_opt=1 on a chain."""
        config = ExperimentConfig(topology='chain5', p=1.0, q=0.95, mu=10.0, trials=100)
        self.assertEqual(find_k_opt(config, 10).k_opt, 1)


class TestSingleSuccess(unittest.TestCase):
    """Integration test cases for the one-link-per-edge comparison."""

    def test_filtered_rate_scales_inversely_with_k(self):
        """Test rate(k) * k is nearly constant once p_eff saturates."""
        scaled = []
        for k in range(4, 11):
            config = ExperimentConfig(topology='chain2', p=0.5, q=0.9, k=k, single_success=True)
            scaled.append(expected_rate_exhaustive(config) * k)
        centre = sum(scaled) / len(scaled)
        for value in scaled:
            self.assertLessEqual(abs(value - centre), 0.15 * centre)

    def test_unfiltered_beats_filtered(self):
        """Test keeping every link beats one link per edge at k=10."""
        kwargs = dict(topology='grid9', p=0.5, q=0.9, k=10, trials=150, seed=6)
        full = estimate_rate(ExperimentConfig(**kwargs))
        filtered = estimate_rate(ExperimentConfig(single_success=True, **kwargs))
        self.assertTrue(rates_separated(full, filtered))


class TestDeterminism(unittest.TestCase):
    """Integration test cases for reproducible output."""

    def run_twice(self, *argv):
        outputs = []
        with tempfile.TemporaryDirectory() as tmp:
            for threads in ('1', '4'):
                path = os.path.join(tmp, f'out{threads}')
                with contextlib.redirect_stdout(io.StringIO()), contextlib.redirect_stderr(io.StringIO()):
                    code = main(list(argv) + ['--threads', threads, '-o', path])
                self.assertEqual(code, 0)
                with open(path, 'rb') as handle:
                    outputs.append(handle.read())
        self.assertEqual(outputs[0], outputs[1])
        return outputs[0]

    def test_simulate(self):
        """Test simulate output is byte-identical across thread counts."""
        self.run_twice('simulate', '--topology', 'grid9', '--p', '0.5', '--k', '3', '--mu', '5',
                       '--trials', '60', '--seed', '13')

    def test_kopt(self):
        """Test kopt output is byte-identical across thread counts."""
        self.run_twice('kopt', '--topology', 'chain4', '--p', '0.6', '--mu', '8', '--k-max', '4',
                       '--trials', '50', '--seed', '1')

    def test_explain_snapshot(self):
        """Test trial replay output is byte-identical across thread counts."""
        self.run_twice('explain-snapshot', '--topology', 'grid7', '--p', '0.7', '--k', '2', '--trial', '12')

    def test_oracle(self):
        """Test oracle output is byte-identical across thread counts."""
        self.run_twice('oracle', '--enumerate', '--p', '0.3,0.7', '--q', '0.9')

    def test_env_thread_default(self):
        """Test the default worker count reads the environment."""
        self.assertGreaterEqual(default_workers(), 1)


@unittest.skipUnless(SLOW, "set TMROUTER_SLOW_TESTS=1 to run")
class TestSlowAcceptance(unittest.TestCase):
    """Long-running integration test cases at full desk scale."""

    def setUp(self):
        """Set up test fixtures."""
        self.pool = TrialPool(max(default_workers(), 4))

    def tearDown(self):
        """Tear down test fixtures."""
        self.pool.shutdown()

    def test_bound_approach(self):
        """Test the grid21 rate climbs towards 4p and never exceeds it."""
        config = ExperimentConfig(topology='grid21', p=0.5, q=1.0, k=[1, 2, 5, 10, 20, 50, 100], trials=60, seed=3)
        estimates = sweep(config, self.pool)
        for lower, higher in zip(estimates, estimates[1:]):
            self.assertGreaterEqual(higher.mean, lower.mean - 2 * math.hypot(higher.stderr, lower.stderr))
        for estimate in estimates:
            self.assertLessEqual(estimate.mean, 2.0 + 3 * estimate.stderr)
        self.assertGreaterEqual(estimates[-1].mean, 0.85 * 2.0)

    def test_local_braess_monte_carlo(self):
        """Test the simulated local rate without edge (2,3) beats the full graph by 2 sigma."""
        kwargs = dict(metric='hop', p=0.9, q=0.9, trials=200_000, seed=21)
        base = estimate_rate(ExperimentConfig(topology='sixnode-alt-base', **kwargs), self.pool)
        reduced = estimate_rate(ExperimentConfig(topology='sixnode-alt-no23', **kwargs), self.pool)
        self.assertTrue(rates_separated(reduced, base))

    def test_kopt_trends(self):
        """Test k_opt falls with p and rises with the memory lifetime."""
        def k_opt(p, mu):
            config = ExperimentConfig(topology='grid9', p=p, q=0.95, mu=mu, trials=3000, seed=5)
            return find_k_opt(config, 10, self.pool).k_opt

        self.assertGreaterEqual(k_opt(0.2, 10.0), k_opt(0.5, 10.0))
        self.assertGreaterEqual(k_opt(0.5, 10.0), k_opt(0.9, 10.0))
        self.assertEqual(k_opt(1.0, 10.0), 1)
        self.assertLessEqual(k_opt(0.3, 3.0), k_opt(0.3, 30.0))
        self.assertEqual(k_opt(0.3, 1e9), 10)

    def test_single_success_on_grid(self):
        """Test the filtered grid21 rate scales as 1/k and loses to the full rate."""
        kwargs = dict(topology='grid21', p=0.5, q=0.9, trials=300, seed=8)
        filtered = sweep(ExperimentConfig(single_success=True, k=list(range(4, 11)), **kwargs), self.pool)
        scaled = [e.mean * e.params['k'] for e in filtered]
        centre = sum(scaled) / len(scaled)
        for value in scaled:
            self.assertLessEqual(abs(value - centre), 0.15 * centre)
        full = estimate_rate(ExperimentConfig(k=10, **kwargs), self.pool)
        self.assertTrue(rates_separated(full, filtered[-1]))


if __name__ == '__main__':
    unittest.main()
