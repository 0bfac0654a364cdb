"""Graph-based initialization: grid digraph over the ellipse, Yen's K shortest paths, refinement."""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import DisconnectedGraphError, WindNavError
from .functional import Q_DEFAULT, KKTIterate, kernel_f, make_kernel, travel_time
from .kkt_solver import SolveOptions, SolveReport, reduced_hessian_min_eig, solve
from .scenario import Scenario
from .trajectory import Ellipse, Path, reparametrize_constant_speed, straight_line
from .windfield import WindField

log = logging.getLogger(__name__)

QE = Q_DEFAULT


# generic digraph + Yen ------------------------------------------------------

Adjacency = list[list[tuple[int, float]]]


def _dijkstra(adj: Adjacency, source: int, target: int, banned_edges: set[tuple[int, int]] | frozenset = frozenset(),
              banned_nodes: set[int] | frozenset = frozenset()) -> tuple[float, tuple[int, ...]] | None:
    """Shortest path with ties broken by the lexicographically smallest node sequence."""
    best: dict[int, tuple[float, tuple[int, ...]]] = {}
    heap: list[tuple[float, tuple[int, ...]]] = [(0.0, (source,))]
    while heap:
        d, path = heapq.heappop(heap)
        u = path[-1]
        if u in best:
            continue
        best[u] = (d, path)
        if u == target:
            return d, path
        for v, c in adj[u]:
            if v in best or v in banned_nodes or (u, v) in banned_edges:
                continue
            heapq.heappush(heap, (d + c, path + (v,)))
    return None


def path_cost(adj_map: dict[tuple[int, int], float], path: Sequence[int]) -> float:
    total = 0.0
    for u, v in zip(path[:-1], path[1:]):
        total += adj_map[(u, v)]
    return total


def yen_k_shortest(adj: Adjacency, source: int, target: int, K: int) -> list[tuple[float, tuple[int, ...]]]:
    """Up to ``K`` simple paths in nondecreasing ``(cost, node sequence)`` order."""
    if K < 1:
        raise ValueError("K must be at least 1")
    cost_of = {(u, v): c for u in range(len(adj)) for v, c in adj[u]}
    first = _dijkstra(adj, source, target)
    if first is None:
        raise DisconnectedGraphError(f"no path from {source} to {target}")
    accepted = [(path_cost(cost_of, first[1]), first[1])]
    seen = {first[1]}
    pool: list[tuple[float, tuple[int, ...]]] = []
    while len(accepted) < K:
        prev = accepted[-1][1]
        for i in range(len(prev) - 1):
            root = prev[: i + 1]
            spur = prev[i]
            banned_edges = {(p[i], p[i + 1]) for _, p in accepted if len(p) > i + 1 and p[: i + 1] == root}
            banned_nodes = set(root[:-1])
            found = _dijkstra(adj, spur, target, banned_edges, banned_nodes)
            if found is None:
                continue
            cand = root[:-1] + found[1]
            if cand in seen:
                continue
            seen.add(cand)
            heapq.heappush(pool, (path_cost(cost_of, cand), cand))
        if not pool:
            break
        accepted.append(heapq.heappop(pool))
    return accepted


# flight graph ----------------------------------------------------------------

@dataclass(frozen=True)
class FlightGraph:
    nodes: np.ndarray
    origin: int
    destination: int
    adjacency: Adjacency = dc_field(repr=False)
    h: float = math.nan
    ell: float = math.nan
    domain: Ellipse | None = None

    @property
    def node_count(self) -> int:
        return int(self.nodes.shape[0])

    @property
    def edge_count(self) -> int:
        return sum(len(a) for a in self.adjacency)

    def edge_cost(self, i: int, j: int) -> float:
        for v, c in self.adjacency[i]:
            if v == j:
                return c
        raise KeyError((i, j))

    def stats(self) -> dict:
        return {"nodes": self.node_count, "edges": self.edge_count, "h": self.h, "ell": self.ell}


def segment_costs(p: np.ndarray, q: np.ndarray, field: WindField, vbar: float, Q: int = QE) -> np.ndarray:
    """Travel time along straight segments ``p -> q`` with ``Q`` midpoint sub-samples."""
    s = ((np.arange(Q) + 0.5) / Q)[None, :, None]
    xi = (1.0 - s) * p[:, None, :] + s * q[:, None, :]
    vel = np.broadcast_to((q - p)[:, None, :], xi.shape)
    f = kernel_f(make_kernel(field, xi, vel, vbar))[0]
    return np.sum(f, axis=1) / Q


def _grid_nodes(domain: Ellipse, anchor: np.ndarray, h: float) -> np.ndarray:
    center, axis, a, b = domain.frame()
    perp = np.array([-axis[1], axis[0]])
    corners = np.array([center + sa * a * axis + sb * b * perp for sa in (-1, 1) for sb in (-1, 1)])
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    i0 = np.floor((lo - anchor) / h - 1e-9).astype(int)
    i1 = np.ceil((hi - anchor) / h + 1e-9).astype(int)
    xs = anchor[0] + h * np.arange(i0[0], i1[0] + 1)
    ys = anchor[1] + h * np.arange(i0[1], i1[1] + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    return pts[domain.contains(pts, rtol=1e-9)]


def build_graph(x_o, x_d, field: WindField, vbar: float, domain: Ellipse, h: float,
                ell: float | None = None) -> FlightGraph:
    """Grid digraph clipped to ``domain`` with both endpoints as nodes 0 and 1."""
    ell = 2.5 * h if ell is None else float(ell)
    if not h > 0:
        raise ValueError("h must be positive")
    if ell < h * math.sqrt(2.0) * (1.0 - 1e-12):
        raise ValueError("ell must be at least sqrt(2) h")
    x_o = np.asarray(x_o, dtype=float)
    x_d = np.asarray(x_d, dtype=float)
    grid = _grid_nodes(domain, x_o, h)
    keep = (np.linalg.norm(grid - x_o, axis=1) > 1e-9 * h) & (np.linalg.norm(grid - x_d, axis=1) > 1e-9 * h)
    nodes = np.vstack([x_o, x_d, grid[keep]])
    pairs = np.array(sorted(cKDTree(nodes).query_pairs(ell * (1.0 + 1e-12))), dtype=int).reshape(-1, 2)
    src = np.concatenate([pairs[:, 0], pairs[:, 1]])
    dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
    costs = segment_costs(nodes[src], nodes[dst], field, vbar) if len(src) else np.zeros(0)
    if np.any(~np.isfinite(costs)) or np.any(costs <= 0.0):
        raise WindNavError("non-positive or non-finite edge cost")
    adj: Adjacency = [[] for _ in range(len(nodes))]
    for u, v, c in zip(src.tolist(), dst.tolist(), costs.tolist()):
        adj[u].append((v, c))
    for a in adj:
        a.sort()
    graph = FlightGraph(nodes, 0, 1, adj, h, ell, domain)
    if not _reachable(adj, 0, 1):
        raise DisconnectedGraphError("origin and destination are not connected")
    log.info("graph: %d nodes, %d edges", graph.node_count, graph.edge_count)
    return graph


def _reachable(adj: Adjacency, s: int, t: int) -> bool:
    stack, seen = [s], {s}
    while stack:
        u = stack.pop()
        if u == t:
            return True
        for v, _ in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return False


# candidates and refinement ---------------------------------------------------

@dataclass
class CandidatePath:
    nodes: tuple[int, ...]
    points: np.ndarray
    discrete_cost: float
    refined_T: float | None = None
    report: SolveReport | None = None
    status: str = "unrefined"
    min_reduced_eig: float | None = None

    @property
    def is_optimum(self) -> bool:
        return self.status == "converged" and (self.min_reduced_eig or 0.0) > 0.0

    @property
    def iterations(self) -> int:
        return self.report.iterations if self.report is not None else 0

    @property
    def rank_key(self) -> tuple[int, float]:
        if self.refined_T is not None:
            return (0, self.refined_T)
        return (1, self.discrete_cost)


def k_shortest(graph: FlightGraph, K: int) -> list[CandidatePath]:
    out = []
    for cost, path in yen_k_shortest(graph.adjacency, graph.origin, graph.destination, K):
        out.append(CandidatePath(path, graph.nodes[list(path)], cost))
    return out


def candidate_state(cand: CandidatePath, N: int):
    return reparametrize_constant_speed(Path.from_nodes(cand.points), N)


def refine(cand: CandidatePath, field: WindField, vbar: float, N: int,
           opts: SolveOptions | None = None, L_tilde: float | None = None) -> CandidatePath:
    """Equal-chord resampling to ``N`` intervals, zero multiplier, then Newton-KKT."""
    try:
        z = candidate_state(cand, N)
        rep = solve(KKTIterate.from_state(z), field, vbar, opts, L_tilde)
    except WindNavError as exc:
        cand.status = f"failed: {exc}"
        return cand
    cand.report = rep
    cand.status = rep.status
    if rep.converged:
        cand.refined_T = rep.T
        try:
            cand.min_reduced_eig = reduced_hessian_min_eig(rep.final, field, vbar, opts.Q if opts else Q_DEFAULT)
        except WindNavError:
            cand.min_reduced_eig = None
    return cand


@dataclass
class GlobalResult:
    candidates: list[CandidatePath]
    graph: FlightGraph
    straight_T: float | None

    @property
    def best(self) -> CandidatePath:
        return self.candidates[0]

    def distinct_optima(self, tol: float) -> list[float]:
        """Refined local minima with pairwise T gaps above ``tol``."""
        vals: list[float] = []
        for c in sorted((c for c in self.candidates if c.is_optimum), key=lambda c: c.refined_T):
            if not vals or c.refined_T - vals[-1] > tol:
                vals.append(c.refined_T)
        return vals

    def csv_rows(self) -> list[tuple]:
        rows = []
        for rank, c in enumerate(self.candidates, start=1):
            rows.append((rank, c.discrete_cost, c.refined_T if c.refined_T is not None else math.nan,
                         c.iterations, c.status))
        return rows


CANDIDATE_HEADER = ("rank", "discrete_cost", "refined_T", "iterations", "status")


def global_optimize(scenario: Scenario, h: float | None = None, ell: float | None = None,
                    K: int | None = None, N: int | None = None,
                    opts: SolveOptions | None = None) -> GlobalResult:
    h = scenario.graph.h if h is None else h
    ell = scenario.graph.ell_value if ell is None and scenario.graph.ell is not None else ell
    K = scenario.graph.K if K is None else K
    N = scenario.N if N is None else N
    opts = scenario.solver if opts is None else opts
    domain, _ = scenario.domain_and_bounds()
    graph = build_graph(scenario.x_o, scenario.x_d, scenario.wind, scenario.vbar, domain, h, ell)
    cands = k_shortest(graph, K)
    for c in cands:
        refine(c, scenario.wind, scenario.vbar, N, opts, scenario.L_tilde)
    cands.sort(key=lambda c: c.rank_key)
    try:
        straight = travel_time(straight_line(scenario.x_o, scenario.x_d, N), scenario.wind, scenario.vbar, opts.Q)
    except WindNavError:
        straight = None
    return GlobalResult(cands, graph, straight)
