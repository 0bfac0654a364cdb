import numpy as np
import pytest

from oracles import all_simple_paths, random_digraph
from windnav.errors import DisconnectedGraphError
from windnav.functional import travel_time
from windnav.global_search import (
    CandidatePath,
    _dijkstra,
    build_graph,
    global_optimize,
    k_shortest,
    refine,
    segment_costs,
    yen_k_shortest,
)
from windnav.scenario import Scenario
from windnav.trajectory import Ellipse, Path, State, ellipse_domain
from windnav.windfield import WindField

TRIANGLE = [[(1, 1.0), (2, 5.0)], [(2, 1.0)], []]  # o=0, a=1, d=2


def test_triangle_two_best():
    assert yen_k_shortest(TRIANGLE, 0, 2, 2) == [(2.0, (0, 1, 2)), (5.0, (0, 2))]


def test_k_exceeding_path_count_returns_all():
    adj = [[(1, 1.0), (2, 2.0)], [(2, 1.0), (3, 4.0)], [(3, 1.0), (1, 0.5)], [(4, 1.0)], []]
    got = yen_k_shortest(adj, 0, 4, 50)
    assert got == all_simple_paths(adj, 0, 4)
    assert len(got) == 4


def test_first_path_is_dijkstra():
    rng = np.random.default_rng(8)
    for _ in range(20):
        adj = random_digraph(rng)
        d = _dijkstra(adj, 0, len(adj) - 1)
        if d is None:
            continue
        (cost, path), = yen_k_shortest(adj, 0, len(adj) - 1, 1)
        assert path == d[1]
        assert cost == pytest.approx(d[0], rel=1e-15)


@pytest.mark.parametrize("integer", [False, True], ids=["float", "tied"])
def test_yen_matches_brute_force(integer):
    rng = np.random.default_rng(21 if integer else 20)
    for _ in range(40):
        adj = random_digraph(rng, integer)
        expected = all_simple_paths(adj, 0, len(adj) - 1)
        if not expected:
            continue
        got = yen_k_shortest(adj, 0, len(adj) - 1, len(expected) + 1)
        assert got == expected


def test_yen_disconnected_and_bad_k():
    with pytest.raises(DisconnectedGraphError):
        yen_k_shortest([[], []], 0, 1, 1)
    with pytest.raises(ValueError):
        yen_k_shortest(TRIANGLE, 0, 2, 0)


def test_calm_degenerate_domain_graph():
    dom = ellipse_domain((0, 0), (1, 0), 1.0, 0.0)
    g = build_graph((0, 0), (1, 0), WindField.zero(), 1.0, dom, 0.5, 0.75)
    assert np.allclose(g.nodes[:, 1], 0.0)
    assert g.node_count == 3
    (cost, _), = yen_k_shortest(g.adjacency, g.origin, g.destination, 1)
    assert cost == pytest.approx(1.0, rel=1e-15)


def test_node_count_scales_with_resolution():
    dom = Ellipse((0, 0), (1, 0), 2.0)
    counts = [build_graph((0, 0), (1, 0), WindField.zero(), 1.0, dom, h).node_count for h in (0.1, 0.05)]
    assert 3.6 <= counts[1] / counts[0] <= 4.4


def test_edge_cost_equals_single_interval_travel_time(vortex_field):
    p, q = np.array([0.1, -0.2]), np.array([0.35, 0.05])
    c = segment_costs(p[None], q[None], vortex_field, 1.0)[0]
    z = State(float(np.linalg.norm(q - p)), Path(p, q, np.zeros((0, 2))))
    assert c == pytest.approx(travel_time(z, vortex_field, 1.0), abs=1e-12)


def test_graph_argument_checks():
    dom = Ellipse((0, 0), (1, 0), 2.0)
    with pytest.raises(ValueError):
        build_graph((0, 0), (1, 0), WindField.zero(), 1.0, dom, 0.0)
    with pytest.raises(ValueError):
        build_graph((0, 0), (1, 0), WindField.zero(), 1.0, dom, 0.1, 0.12)


def test_candidates_simple_and_consistent(vortex_field):
    dom = Ellipse((0, 0), (1, 0), 1.6)
    g = build_graph((0, 0), (1, 0), vortex_field, 1.0, dom, 0.1)
    cands = k_shortest(g, 6)
    costs = [c.discrete_cost for c in cands]
    assert costs == sorted(costs)
    for c in cands:
        assert len(set(c.nodes)) == len(c.nodes)
        assert c.discrete_cost == pytest.approx(sum(g.edge_cost(u, v) for u, v in zip(c.nodes[:-1], c.nodes[1:])),
                                                abs=1e-12)


def test_refine_straight_candidate_in_calm_air():
    pts = np.array([[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]])
    cand = refine(CandidatePath((0, 2, 1), pts, 1.0), WindField.zero(), 1.0, 8)
    assert cand.status == "converged"
    assert cand.iterations <= 1
    assert cand.refined_T == pytest.approx(1.0, rel=1e-12)
    assert cand.is_optimum


def test_refine_never_worse_than_polyline(vortex_field):
    dom = Ellipse((0, 0), (1, 0), 1.6)
    g = build_graph((0, 0), (1, 0), vortex_field, 1.0, dom, 0.1)
    for c in k_shortest(g, 3):
        refine(c, vortex_field, 1.0, 32)
        assert c.status == "converged"
        assert c.refined_T <= c.discrete_cost + 1e-6


def test_refine_failure_is_recorded():
    pts = np.array([[0.0, 0.0], [0.5, 0.0], [0.5, 0.0], [1.0, 0.0]])
    cand = refine(CandidatePath((0, 2, 2, 1), pts, 3.0), WindField.zero(), 1.0, 8)
    assert cand.status.startswith("failed")
    assert not cand.is_optimum
    assert cand.refined_T is None
    assert cand.discrete_cost == 3.0


def test_global_calm():
    sc = Scenario((0.0, 0.0), (1.0, 0.0), 1.0, WindField.zero(), N=8)
    res = global_optimize(sc, h=0.25, K=3)
    assert res.best.refined_T == pytest.approx(1.0, rel=1e-12)
    assert res.straight_T == pytest.approx(1.0, rel=1e-15)
    assert len(res.distinct_optima(1e-6)) == 1


def test_global_ranking_and_table(vortex_scenario):
    res = global_optimize(vortex_scenario, h=0.2, K=4)
    keys = [c.rank_key for c in res.candidates]
    assert keys == sorted(keys)
    rows = res.csv_rows()
    assert [r[0] for r in rows] == [1, 2, 3, 4]


def test_global_is_deterministic(vortex_scenario):
    a = global_optimize(vortex_scenario, h=0.2, K=4).csv_rows()
    b = global_optimize(vortex_scenario, h=0.2, K=4).csv_rows()
    assert a == b
