"""Scenario configuration: endpoints, airspeed, wind and solver/graph knobs."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path as FsPath
from typing import Any

import numpy as np

from .errors import ConfigError, WindExceedsAirspeedError
from .kkt_solver import SolveOptions
from .trajectory import Ellipse, ellipse_domain
from .windfield import WindBounds, WindField, compute_bounds

TOP_KEYS = {"x_O", "x_D", "vbar", "wind", "N", "solver", "graph", "seed", "bounds"}
SOLVER_KEYS = {"tol_abs", "tol_rel", "max_iter", "damping", "speed_floor", "Q"}
GRAPH_KEYS = {"h", "ell", "K"}
BOUNDS_KEYS = {"grid_resolution", "safety_factor"}


@dataclass(frozen=True)
class GraphOptions:
    h: float = 0.1
    ell: float | None = None
    K: int = 8

    @property
    def ell_value(self) -> float:
        return 2.5 * self.h if self.ell is None else self.ell


@dataclass(frozen=True)
class Scenario:
    x_o: tuple[float, float]
    x_d: tuple[float, float]
    vbar: float
    wind: WindField
    N: int = 32
    solver: SolveOptions = field(default_factory=SolveOptions)
    graph: GraphOptions = field(default_factory=GraphOptions)
    seed: int = 0
    grid_resolution: int = 201
    safety_factor: float = 1.1

    def __post_init__(self) -> None:
        if not self.vbar > 0:
            raise ConfigError("vbar must be positive")
        if self.N < 2:
            raise ConfigError("N must be at least 2")
        if math.dist(self.x_o, self.x_d) == 0.0:
            raise ConfigError("x_O and x_D coincide")

    @property
    def L_tilde(self) -> float:
        return math.dist(self.x_o, self.x_d)

    def solve_options(self) -> SolveOptions:
        return self.solver.resolved(self.L_tilde, self.vbar)

    def domain_and_bounds(self, max_rounds: int = 50) -> tuple[Ellipse, WindBounds]:
        """Fixed point of ``Omega(c0)`` and ``c0 = sup_Omega |w|``.

        The ellipse depends on ``c0`` and ``c0`` is measured on the ellipse, so
        both are iterated from ``c0 = 0`` until ``c0`` stops growing.
        """
        c0 = 0.0
        for _ in range(max_rounds):
            if c0 >= self.vbar:
                break
            dom = ellipse_domain(self.x_o, self.x_d, self.vbar, c0)
            wb = compute_bounds(self.wind, dom, self.grid_resolution, self.safety_factor)
            if wb.c0 <= c0 * (1.0 + 1e-12):
                return dom, wb
            c0 = wb.c0
        raise WindExceedsAirspeedError(f"wind bound c0={c0:.6g} reaches airspeed vbar={self.vbar}")

    def to_json(self) -> dict[str, Any]:
        s = self.solver
        return {
            "x_O": list(self.x_o),
            "x_D": list(self.x_d),
            "vbar": self.vbar,
            "wind": self.wind.to_json(),
            "N": self.N,
            "solver": {"tol_abs": s.tol_abs, "tol_rel": s.tol_rel, "max_iter": s.max_iter,
                       "damping": s.damping, "speed_floor": s.speed_floor, "Q": s.Q},
            "graph": {"h": self.graph.h, "ell": self.graph.ell, "K": self.graph.K},
            "bounds": {"grid_resolution": self.grid_resolution, "safety_factor": self.safety_factor},
            "seed": self.seed,
        }


def _point(v: Any, name: str) -> tuple[float, float]:
    try:
        a = np.asarray(v, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} must be a pair of numbers") from exc
    if a.shape != (2,) or not np.all(np.isfinite(a)):
        raise ConfigError(f"{name} must be a pair of finite numbers")
    return float(a[0]), float(a[1])


def _check_keys(d: Any, allowed: set[str], where: str) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")
    return d


def scenario_from_dict(data: Any) -> Scenario:
    data = _check_keys(data, TOP_KEYS, "config")
    for key in ("x_O", "x_D", "vbar", "wind"):
        if key not in data:
            raise ConfigError(f"missing required key {key!r}")
    solver = _check_keys(data.get("solver", {}), SOLVER_KEYS, "solver")
    graph = _check_keys(data.get("graph", {}), GRAPH_KEYS, "graph")
    bnd = _check_keys(data.get("bounds", {}), BOUNDS_KEYS, "bounds")
    try:
        opts = SolveOptions(**solver)
        gopts = GraphOptions(**graph)
        return Scenario(
            _point(data["x_O"], "x_O"),
            _point(data["x_D"], "x_D"),
            float(data["vbar"]),
            WindField.from_json(data["wind"]),
            int(data.get("N", 32)),
            opts,
            gopts,
            int(data.get("seed", 0)),
            int(bnd.get("grid_resolution", 201)),
            float(bnd.get("safety_factor", 1.1)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_scenario(path: str | FsPath) -> Scenario:
    try:
        text = FsPath(path).read_text(encoding="utf-8")
        data = json.loads(text)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return scenario_from_dict(data)


def with_seed(s: Scenario, seed: int) -> Scenario:
    return replace(s, seed=seed)
