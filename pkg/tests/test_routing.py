"""
Unit tests for the internal-phase protocols, chain tracing and yields.
"""
import unittest

from tmrouter.base import SwapPlan
from tmrouter.core import InvariantError, Link, Metric, TopologyError
from tmrouter.linkgen import Snapshot, generate_snapshot
from tmrouter.routing import (
    ChainSet,
    DynamicRouting,
    StaticRouting,
    dynamic_internal_phase,
    single_success_filter,
    snapshot_yield,
    static_internal_phase,
    trace_chains,
)
from tmrouter.topology import chain_topology, greedy_edge_disjoint_paths, grid_topology, named_topology


def full_snapshot(topology, k=1):
    """Every edge carries a link in every slot."""
    return Snapshot(links={edge: tuple(range(1, k + 1)) for edge in topology.edges}, k=k)


def run_dynamic(topology, snapshot, metric=Metric.EUCLIDEAN, straight_path=True):
    plan = dynamic_internal_phase(snapshot, topology, metric, straight_path)
    return snapshot_yield(trace_chains(plan, snapshot, topology), topology)


class TestDynamicRouting(unittest.TestCase):
    """Test cases for the distance-based local protocol."""

    def test_left_right_pair(self):
        """Test a repeater joins its Alice-side and Bob-side links."""
        chain = chain_topology(2)
        snapshot = full_snapshot(chain)
        plan = dynamic_internal_phase(snapshot, chain)
        self.assertEqual(plan.pairs_at(1), [(Link((0, 1), 1), Link((1, 2), 1))])
        chains = trace_chains(plan, snapshot, chain)
        self.assertEqual(len(chains), 1)
        self.assertEqual(chains.chains[0].bsm_count, 1)
        self.assertEqual(chains.chains[0].nodes, (0, 1, 2))

    def test_self_connection(self):
        """Test two links to one neighbour are joined to each other."""
        chain = chain_topology(2)
        snapshot = Snapshot(links={(0, 1): (1, 2), (1, 2): ()}, k=2)
        plan = dynamic_internal_phase(snapshot, chain)
        self.assertEqual(plan.pairs_at(1), [(Link((0, 1), 2), Link((0, 1), 1))])
        chains = trace_chains(plan, snapshot, chain)
        self.assertEqual(len(chains), 0)
        self.assertEqual(chains.leftover, 2)

    def test_single_link_makes_no_pair(self):
        """Test a node with one link does nothing."""
        chain = chain_topology(2)
        snapshot = Snapshot(links={(0, 1): (1,), (1, 2): ()}, k=1)
        self.assertEqual(len(dynamic_internal_phase(snapshot, chain)), 0)

    def test_consumers_never_swap(self):
        """Test Alice and Bob have no pairings."""
        grid = grid_topology(4, 4, (1, 1), (2, 2))
        plan = dynamic_internal_phase(full_snapshot(grid, 3), grid)
        self.assertEqual(plan.pairs_at(grid.alice), [])
        self.assertEqual(plan.pairs_at(grid.bob), [])
        plan.validate(full_snapshot(grid, 3), grid)

    def test_center_node_scenario(self):
        """Test a hand-built 3x3, k=3 snapshot around the centre node."""
        grid = grid_topology(3, 3, (0, 1), (2, 1), q=0.8)
        snapshot = Snapshot(links={(3, 4): (1, 2, 3), (4, 5): (2, 3), (1, 4): (1,)}, k=3)
        plan = dynamic_internal_phase(snapshot, grid)
        self.assertEqual(plan.pairs_at(4), [
            (Link((3, 4), 3), Link((4, 5), 3)),
            (Link((3, 4), 2), Link((4, 5), 2)),
            (Link((3, 4), 1), Link((1, 4), 1)),
        ])
        chains = trace_chains(plan, snapshot, grid)
        self.assertEqual(chains.bsm_counts, [1, 1])
        self.assertEqual(chains.leftover, 2)
        self.assertAlmostEqual(snapshot_yield(chains, grid), 1.6)

    def test_straight_path_heuristic(self):
        """Test same-column consumers: 3 chains with the heuristic, 1 without."""
        grid = grid_topology(5, 5, (2, 1), (2, 3))
        snapshot = full_snapshot(grid)
        self.assertEqual(run_dynamic(grid, snapshot, straight_path=True), 3.0)
        self.assertEqual(run_dynamic(grid, snapshot, straight_path=False), 1.0)

    def test_node_order_invariance(self):
        """Test the plan does not depend on the order nodes are visited."""
        grid = grid_topology(5, 5, (1, 1), (3, 2))
        snapshot = generate_snapshot(grid, 0.6, 4, mu=6.0, rng=17)
        forward = DynamicRouting(grid, Metric.EUCLIDEAN)
        backward = DynamicRouting(grid, Metric.EUCLIDEAN)
        backward._neighbors = dict(reversed(list(backward._neighbors.items())))
        self.assertEqual(forward.plan(snapshot).pairings, backward.plan(snapshot).pairings)

    def test_deterministic(self):
        """Test identical inputs give identical plans."""
        grid = named_topology('grid9')
        snapshot = generate_snapshot(grid, 0.5, 3, rng=4)
        self.assertEqual(
            dynamic_internal_phase(snapshot, grid, Metric.HOP).pairings,
            dynamic_internal_phase(snapshot, grid, Metric.HOP).pairings,
        )

    def test_euclidean_needs_coordinates(self):
        """Test the euclidean metric is rejected on the six-node graph."""
        with self.assertRaises(TopologyError):
            DynamicRouting(named_topology('sixnode-base'), Metric.EUCLIDEAN)

    def test_braess_snapshot(self):
        """Test a snapshot where the extra channel costs the local protocol a chain."""
        base = named_topology('sixnode-alt-base', q=0.9)
        reduced = named_topology('sixnode-alt-no23', q=0.9)
        missing = ('3', 'A')
        base_snapshot = Snapshot(links={e: () if e == missing else (1,) for e in base.edges}, k=1)
        reduced_snapshot = Snapshot(links={e: () if e == missing else (1,) for e in reduced.edges}, k=1)
        self.assertAlmostEqual(run_dynamic(base, base_snapshot, Metric.HOP), 0.81)
        self.assertAlmostEqual(run_dynamic(reduced, reduced_snapshot, Metric.HOP), 1.62)


class TestStaticRouting(unittest.TestCase):
    """Test cases for fixed-path routing."""

    def setUp(self):
        """Set up test fixtures."""
        self.chain = chain_topology(3, q=0.5)

    def test_min_rule(self):
        """Test counts (2, 1, 3) give one chain."""
        snapshot = Snapshot(links={(0, 1): (2, 3), (1, 2): (3,), (2, 3): (1, 2, 3)}, k=3)
        plan = StaticRouting(self.chain).plan(snapshot)
        self.assertEqual(plan.pairs_at(1), [(Link((0, 1), 3), Link((1, 2), 3))])
        chains = trace_chains(plan, snapshot, self.chain)
        self.assertEqual(chains.bsm_counts, [2])
        self.assertEqual(chains.leftover, 3)

    def test_parallel_chains(self):
        """Test counts (3, 3, 3) give three chains of two BSMs."""
        snapshot = full_snapshot(self.chain, 3)
        chains = trace_chains(StaticRouting(self.chain).plan(snapshot), snapshot, self.chain)
        self.assertEqual(chains.bsm_counts, [2, 2, 2])
        self.assertEqual(snapshot_yield(chains, self.chain), 0.75)

    def test_four_paths(self):
        """Test a full k=1 grid snapshot uses all four paths."""
        grid = grid_topology(5, 5, (1, 1), (3, 3))
        snapshot = full_snapshot(grid)
        plan = static_internal_phase(snapshot, greedy_edge_disjoint_paths(grid))
        self.assertEqual(sorted(trace_chains(plan, snapshot, grid).bsm_counts), [3, 3, 7, 7])

    def test_off_path_links_unused(self):
        """Test links off the chosen paths are never paired."""
        grid = grid_topology(5, 5, (1, 1), (3, 3))
        routing = StaticRouting(grid)
        path_edges = {e for path in routing.path_set for e in routing.path_set.edges_of(path)}
        plan = routing.plan(full_snapshot(grid, 2))
        for pairs in plan.pairings.values():
            for a, b in pairs:
                self.assertIn(a.edge, path_edges)
                self.assertIn(b.edge, path_edges)

    def test_diagonal_equivalence(self):
        """Test both protocols agree on a full diagonal snapshot."""
        for q in (0.5, 0.9, 1.0):
            grid = grid_topology(5, 5, (1, 1), (3, 3), q=q)
            snapshot = full_snapshot(grid)
            static = snapshot_yield(trace_chains(StaticRouting(grid).plan(snapshot), snapshot, grid), grid)
            self.assertEqual(run_dynamic(grid, snapshot), static)
            self.assertAlmostEqual(static, 2 * q ** 3 + 2 * q ** 7, places=12)


class TestTracing(unittest.TestCase):
    """Test cases for chain tracing and yields."""

    def test_empty(self):
        """Test an empty plan on an empty snapshot."""
        chain = chain_topology(2)
        snapshot = Snapshot(links={(0, 1): (), (1, 2): ()}, k=1)
        chains = trace_chains(SwapPlan(), snapshot, chain)
        self.assertEqual(chains, ChainSet())
        self.assertEqual(snapshot_yield(chains, chain), 0)

    def test_direct_link(self):
        """Test a link between the consumers is a chain with no BSM."""
        chain = chain_topology(1)
        snapshot = Snapshot(links={(0, 1): (1, 2)}, k=2)
        chains = trace_chains(SwapPlan(), snapshot, chain)
        self.assertEqual(chains.bsm_counts, [0, 0])
        self.assertEqual(snapshot_yield(chains, chain), 2.0)

    def test_cycle_discarded(self):
        """Test a closed loop of splices is not a chain."""
        grid = grid_topology(3, 3, (0, 0), (2, 2))
        snapshot = Snapshot(links={(1, 2): (1,), (2, 5): (1,), (4, 5): (1,), (1, 4): (1,)}, k=1)
        plan = SwapPlan()
        plan.add(1, Link((1, 2), 1), Link((1, 4), 1))
        plan.add(2, Link((1, 2), 1), Link((2, 5), 1))
        plan.add(5, Link((2, 5), 1), Link((4, 5), 1))
        plan.add(4, Link((4, 5), 1), Link((1, 4), 1))
        chains = trace_chains(plan, snapshot, grid)
        self.assertEqual(len(chains), 0)
        self.assertEqual(chains.leftover, 4)

    def test_chain_oriented_from_alice(self):
        """Test chains start at Alice even when Bob has the smaller id."""
        chain = chain_topology(2)
        flipped = chain.__class__(
            nodes=chain.nodes, edges=chain.edges, alice=2, bob=0, swap_prob={1: 0.5},
        )
        snapshot = full_snapshot(flipped)
        chains = trace_chains(dynamic_internal_phase(snapshot, flipped, Metric.HOP), snapshot, flipped)
        self.assertEqual(chains.chains[0].nodes, (2, 1, 0))

    def test_yield_with_q(self):
        """Test one chain through two repeaters at q=0.5."""
        chain = chain_topology(3, q=0.5)
        snapshot = full_snapshot(chain)
        plan = dynamic_internal_phase(snapshot, chain)
        self.assertEqual(snapshot_yield(trace_chains(plan, snapshot, chain), chain), 0.25)

    def test_four_chains_q1(self):
        """Test four chains at q=1 yield 4."""
        grid = named_topology('grid21')
        snapshot = full_snapshot(grid)
        plan = StaticRouting(grid).plan(snapshot)
        self.assertEqual(snapshot_yield(trace_chains(plan, snapshot, grid), grid), 4.0)

    def test_plan_validation(self):
        """Test an endpoint used twice fails validation."""
        chain = chain_topology(2)
        snapshot = Snapshot(links={(0, 1): (1,), (1, 2): (1, 2)}, k=2)
        plan = SwapPlan()
        plan.add(1, Link((0, 1), 1), Link((1, 2), 1))
        plan.add(1, Link((0, 1), 1), Link((1, 2), 2))
        with self.assertRaises(InvariantError):
            plan.validate(snapshot, chain)


class TestSingleSuccessFilter(unittest.TestCase):
    """Test cases for the one-link-per-edge filter."""

    def test_most_recent_kept(self):
        """Test slots {1, 3, 4} become {4} and empty stays empty."""
        snapshot = Snapshot(links={(0, 1): (1, 3, 4), (1, 2): ()}, k=4)
        filtered = single_success_filter(snapshot)
        self.assertEqual(filtered.links, {(0, 1): (4,), (1, 2): ()})
        self.assertEqual(filtered.k, 4)

    def test_full_grid(self):
        """Test a p=1, k=3 snapshot keeps exactly one link per edge."""
        grid = grid_topology(4, 4, (0, 0), (3, 3))
        filtered = single_success_filter(generate_snapshot(grid, 1.0, 3, rng=0))
        self.assertTrue(all(slots == (3,) for slots in filtered.links.values()))


if __name__ == '__main__':
    unittest.main()
