"""Piecewise-linear paths on the pseudo-time grid, their norms and the ellipse domain.

A path with ``N`` intervals stores the two fixed endpoints and the ``N - 1``
interior nodes of the uniform grid ``tau_i = i / N``.  The velocity ``xi_tau``
is constant on each interval and equals ``N * (node[i+1] - node[i])``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.optimize import least_squares

from .errors import DegenerateGeometryError, ShapeMismatchError

FEAS_TOL = 1e-10

NORM_KINDS = ("Zinf", "Z2", "Yinf", "Y2")


def _frozen(a: Iterable[float] | np.ndarray, shape: tuple[int, ...] | None = None) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if shape is not None:
        arr = arr.reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Path:
    """Polyline with fixed endpoints on a uniform pseudo-time grid."""

    x_o: np.ndarray
    x_d: np.ndarray
    interior: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "x_o", _frozen(self.x_o, (2,)))
        object.__setattr__(self, "x_d", _frozen(self.x_d, (2,)))
        object.__setattr__(self, "interior", _frozen(self.interior, (-1, 2)))

    @classmethod
    def from_nodes(cls, nodes: np.ndarray) -> "Path":
        nodes = np.asarray(nodes, dtype=float)
        if nodes.ndim != 2 or nodes.shape[1] != 2 or nodes.shape[0] < 2:
            raise ShapeMismatchError("nodes must have shape (N+1, 2) with N >= 1")
        return cls(nodes[0], nodes[-1], nodes[1:-1])

    @property
    def N(self) -> int:
        return self.interior.shape[0] + 1

    @property
    def nodes(self) -> np.ndarray:
        return np.vstack([self.x_o, self.interior, self.x_d])

    @property
    def velocities(self) -> np.ndarray:
        return self.N * np.diff(self.nodes, axis=0)

    def polyline_length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.nodes, axis=0), axis=1)))

    def at(self, tau: np.ndarray) -> np.ndarray:
        """Evaluate the piecewise-linear path at pseudo-times ``tau`` in [0, 1]."""
        tau = np.clip(np.asarray(tau, dtype=float), 0.0, 1.0)
        nodes = self.nodes
        grid = np.linspace(0.0, 1.0, self.N + 1)
        return np.stack([np.interp(tau, grid, nodes[:, 0]), np.interp(tau, grid, nodes[:, 1])], axis=-1)


@dataclass(frozen=True)
class State:
    """Optimization variable ``z = (L, xi)``."""

    L: float
    path: Path

    def __post_init__(self) -> None:
        object.__setattr__(self, "L", float(self.L))
        if not self.L > 0.0:
            raise DegenerateGeometryError(f"state length must be positive, got {self.L}")

    @property
    def N(self) -> int:
        return self.path.N

    def feasibility_residual(self) -> float:
        """``max_i | |xi_tau_i|^2 - L^2 | / L^2``."""
        speeds2 = np.sum(self.path.velocities**2, axis=1)
        return float(np.max(np.abs(speeds2 - self.L**2)) / self.L**2)

    def is_feasible(self, tol: float = FEAS_TOL) -> bool:
        return self.feasibility_residual() <= tol

    def plus(self, d: "Direction", mu: float = 1.0) -> "State":
        if d.N != self.N:
            raise ShapeMismatchError(f"direction has N={d.N}, state has N={self.N}")
        p = self.path
        return State(self.L + mu * d.dL, Path(p.x_o, p.x_d, p.interior + mu * d.dnodes))

    def minus(self, other: "State") -> "Direction":
        """Difference of two states sharing endpoints and grid."""
        if other.N != self.N:
            raise ShapeMismatchError("grids differ")
        return Direction(self.L - other.L, self.path.interior - other.path.interior)

    def to_json(self) -> dict:
        return {
            "x_O": self.path.x_o.tolist(),
            "x_D": self.path.x_d.tolist(),
            "N": self.N,
            "nodes": self.path.nodes.tolist(),
            "L": self.L,
        }

    @classmethod
    def from_json(cls, data: dict) -> "State":
        nodes = np.asarray(data["nodes"], dtype=float)
        if nodes.shape[0] != int(data["N"]) + 1:
            raise ShapeMismatchError("node count does not match N")
        return cls(float(data["L"]), Path.from_nodes(nodes))

    def csv_rows(self) -> list[tuple[float, float, float]]:
        nodes = self.path.nodes
        taus = np.linspace(0.0, 1.0, self.N + 1)
        return [(float(t), float(x), float(y)) for t, (x, y) in zip(taus, nodes)]


@dataclass(frozen=True)
class Direction:
    """Perturbation ``dz = (dL, dxi)`` with zero endpoint displacement."""

    dL: float
    dnodes: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "dL", float(self.dL))
        object.__setattr__(self, "dnodes", _frozen(self.dnodes, (-1, 2)))

    @property
    def N(self) -> int:
        return self.dnodes.shape[0] + 1

    @property
    def nodes(self) -> np.ndarray:
        zero = np.zeros((1, 2))
        return np.vstack([zero, self.dnodes, zero])

    @property
    def velocities(self) -> np.ndarray:
        return self.N * np.diff(self.nodes, axis=0)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([[self.dL], self.dnodes.ravel()])

    @classmethod
    def from_vector(cls, v: np.ndarray, N: int) -> "Direction":
        v = np.asarray(v, dtype=float)
        if v.shape != (2 * (N - 1) + 1,):
            raise ShapeMismatchError(f"expected {2 * (N - 1) + 1} coefficients, got {v.shape}")
        return cls(v[0], v[1:].reshape(N - 1, 2))

    @classmethod
    def zeros(cls, N: int) -> "Direction":
        return cls(0.0, np.zeros((N - 1, 2)))

    def scaled(self, s: float) -> "Direction":
        return Direction(s * self.dL, s * self.dnodes)

    def __add__(self, other: "Direction") -> "Direction":
        if other.N != self.N:
            raise ShapeMismatchError("grids differ")
        return Direction(self.dL + other.dL, self.dnodes + other.dnodes)


@dataclass(frozen=True)
class Ellipse:
    """Closed region ``|x - f_a| + |x - f_b| <= major_sum``."""

    focus_a: np.ndarray
    focus_b: np.ndarray
    major_sum: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "focus_a", _frozen(self.focus_a, (2,)))
        object.__setattr__(self, "focus_b", _frozen(self.focus_b, (2,)))
        object.__setattr__(self, "major_sum", float(self.major_sum))
        focal = float(np.linalg.norm(self.focus_b - self.focus_a))
        if self.major_sum < focal * (1.0 - 1e-14):
            raise DegenerateGeometryError("major_sum is shorter than the focal distance")

    @property
    def focal_distance(self) -> float:
        return float(np.linalg.norm(self.focus_b - self.focus_a))

    def frame(self) -> tuple[np.ndarray, np.ndarray, float, float]:
        """Center, unit major axis, semi-major and semi-minor axis lengths."""
        center = 0.5 * (self.focus_a + self.focus_b)
        d = self.focus_b - self.focus_a
        nd = float(np.linalg.norm(d))
        axis = d / nd if nd > 0.0 else np.array([1.0, 0.0])
        a = 0.5 * self.major_sum
        b = math.sqrt(max(a * a - 0.25 * nd * nd, 0.0))
        return center, axis, a, b

    def contains(self, x: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        s = np.linalg.norm(x - self.focus_a, axis=-1) + np.linalg.norm(x - self.focus_b, axis=-1)
        return s <= self.major_sum * (1.0 + rtol) + 1e-300


def ellipse_domain(x_o, x_d, vbar: float, c0: float) -> Ellipse:
    """Ellipse with foci at the endpoints that contains every optimal route."""
    if not c0 < vbar:
        raise DegenerateGeometryError(f"wind bound c0={c0} must be below airspeed vbar={vbar}")
    x_o = np.asarray(x_o, dtype=float)
    x_d = np.asarray(x_d, dtype=float)
    lt = float(np.linalg.norm(x_d - x_o))
    return Ellipse(x_o, x_d, lt * (vbar + c0) / (vbar - c0))


def straight_line(x_o, x_d, N: int) -> State:
    """Constant-speed segment from ``x_o`` to ``x_d`` on ``N`` intervals."""
    if N < 1:
        raise ShapeMismatchError("N must be at least 1")
    x_o = np.asarray(x_o, dtype=float)
    x_d = np.asarray(x_d, dtype=float)
    lt = float(np.linalg.norm(x_d - x_o))
    if lt == 0.0:
        raise DegenerateGeometryError("origin and destination coincide")
    s = np.arange(1, N)[:, None] / N
    return State(lt, Path(x_o, x_d, x_o + s * (x_d - x_o)))


def _march(vertices: np.ndarray, seg_len: np.ndarray, chord: float, steps: int):
    """Walk ``steps`` equal chords along a polyline; return points and the final cursor."""
    points = []
    seg = 0
    t0 = 0.0
    p = vertices[0]
    m = len(seg_len)
    for _ in range(steps):
        found = False
        while seg < m:
            a = vertices[seg]
            d = vertices[seg + 1] - a
            dd = seg_len[seg] ** 2
            r = a - p
            # |r + t d|^2 = chord^2, take the exit root of the circle
            bq = float(r @ d)
            cq = float(r @ r) - chord * chord
            disc = bq * bq - dd * cq
            if disc >= 0.0:
                t = (-bq + math.sqrt(disc)) / dd
                if t >= t0 - 1e-14 and t <= 1.0 + 1e-12:
                    t = min(max(t, t0), 1.0)
                    p = a + t * d
                    t0 = t
                    found = True
                    break
            seg += 1
            t0 = 0.0
        if not found:
            return None
        points.append(p)
    return np.array(points).reshape(-1, 2)


def _equal_chords_lsq(vertices: np.ndarray, seg_len: np.ndarray, n: int,
                      starts: int = 4) -> np.ndarray | None:
    """Equal chords by least squares over ordered node arc lengths.

    The first start is equal arc spacing, later ones are seeded random orderings.
    """
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = float(cum[-1])

    def at(s: np.ndarray) -> np.ndarray:
        return np.stack([np.interp(s, cum, vertices[:, k]) for k in range(2)], axis=1)

    def chords(s: np.ndarray) -> np.ndarray:
        pts = at(np.concatenate([[0.0], np.sort(s), [total]]))
        return np.linalg.norm(np.diff(pts, axis=0), axis=1)

    def resid(s: np.ndarray) -> np.ndarray:
        c = chords(s)
        return c[1:] - c[:-1]

    base = total * np.arange(1, n) / n
    rng = np.random.default_rng(0)
    for attempt in range(starts):
        s0 = base if attempt == 0 else np.sort(rng.uniform(0.0, total, n - 1))
        sol = least_squares(resid, s0, bounds=(0.0, total), xtol=1e-15, ftol=1e-15, gtol=1e-15)
        s = np.sort(sol.x)
        c = chords(s)
        if np.max(c) - np.min(c) <= 1e-11 * total and np.min(c) > 0.0:
            return at(s)
    return None


def reparametrize_constant_speed(path: Path, n_intervals: int | None = None) -> State:
    """Place nodes on the polyline so that every interval has the same chord length.

    All nodes lie on the input geometry.  When every input vertex falls on the
    output grid (straight polylines, aligned corners) the polyline is
    reproduced exactly and the length is preserved; otherwise corners are cut
    by chords and the returned ``L`` is the length of the new polyline.
    """
    n = path.N if n_intervals is None else int(n_intervals)
    if n < 1:
        raise ShapeMismatchError("interval count must be at least 1")
    vertices = path.nodes
    seg_len = np.linalg.norm(np.diff(vertices, axis=0), axis=1)
    if np.any(seg_len == 0.0):
        raise DegenerateGeometryError("zero-length interval in path")
    end = vertices[-1]
    total = float(seg_len.sum())
    if n == 1:
        chord = float(np.linalg.norm(end - vertices[0]))
        if chord == 0.0:
            raise DegenerateGeometryError("closed polyline cannot be reparametrized on one interval")
        return State(chord, Path(vertices[0], end, np.zeros((0, 2))))

    def gap(chord: float) -> float:
        pts = _march(vertices, seg_len, chord, n - 1)
        if pts is None:
            return -math.inf
        return float(np.linalg.norm(end - pts[-1])) - chord

    def chords_equal(chord: float) -> np.ndarray | None:
        pts = _march(vertices, seg_len, chord, n - 1)
        if pts is None:
            return None
        last = float(np.linalg.norm(end - pts[-1]))
        return pts if abs(last - chord) <= 1e-11 * total else None

    # gap jumps where the chord circle leaves a folded-back segment, so bisect
    # every sign change of a scan and keep the first bracket that closes
    hi = total / n * (1.0 + 1e-12)
    grid = np.linspace(0.0, hi, 65)
    vals = [math.inf] + [gap(float(c)) for c in grid[1:]]
    pts = None
    for k in range(len(grid) - 1, 0, -1):
        if not (vals[k - 1] >= 0.0 > vals[k] or vals[k] == 0.0):
            continue
        lo, up = float(grid[k - 1]), float(grid[k])
        if vals[k] == 0.0:
            lo = up
        for _ in range(200):
            mid = 0.5 * (lo + up)
            if mid <= lo or mid >= up:
                break
            if gap(mid) >= 0.0:
                lo = mid
            else:
                up = mid
        pts = chords_equal(lo)
        if pts is not None:
            break
    if pts is None:
        pts = _equal_chords_lsq(vertices, seg_len, n)
    if pts is None:
        raise DegenerateGeometryError("equal-chord placement failed")
    new_nodes = np.vstack([vertices[0], pts, end])
    L = n * float(np.mean(np.linalg.norm(np.diff(new_nodes, axis=0), axis=1)))
    return State(L, Path(vertices[0], end, pts))


def resample(state: State, M: int) -> State:
    """Interpolate onto ``M`` uniform intervals, then restore constant speed."""
    if M < 1:
        raise ShapeMismatchError("M must be at least 1")
    tau = np.linspace(0.0, 1.0, M + 1)
    nodes = state.path.at(tau)
    nodes[0] = state.path.x_o
    nodes[-1] = state.path.x_d
    return reparametrize_constant_speed(Path.from_nodes(nodes), M)


def _xi_parts(obj) -> tuple[float, np.ndarray]:
    if isinstance(obj, State):
        return obj.L, obj.path.nodes
    if isinstance(obj, Direction):
        return obj.dL, obj.nodes
    raise TypeError(f"cannot take Z-norm of {type(obj).__name__}")


def l2_sq_nodal(nodes: np.ndarray) -> float:
    """Exact squared L2 norm of the piecewise-linear interpolant of ``nodes``."""
    a, b = nodes[:-1], nodes[1:]
    n = len(a)
    return float(np.sum(np.sum(a * a + a * b + b * b, axis=1)) / (3.0 * n))


def l2_sq_interval(values: np.ndarray) -> float:
    """Exact squared L2 norm of a piecewise-constant function on the uniform grid."""
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    return float(np.sum(values**2) / n)


def z_components(obj) -> tuple[float, float, float, float, float]:
    """``(|L|, sup|xi|, sup|xi_tau|, |xi|_L2, |xi_tau|_L2)`` of a state or direction."""
    L, nodes = _xi_parts(obj)
    n = nodes.shape[0] - 1
    vel = n * np.diff(nodes, axis=0)
    return (
        abs(L),
        float(np.max(np.linalg.norm(nodes, axis=1))),
        float(np.max(np.linalg.norm(vel, axis=1))),
        math.sqrt(l2_sq_nodal(nodes)),
        math.sqrt(l2_sq_interval(vel)),
    )


def norm(obj, which: str) -> float:
    """Zinf, Z2, Yinf or Y2 norm.

    Y-norms accept any object exposing ``z`` (State or Direction) and ``lam``
    (array-like or an object with ``values``).
    """
    if which not in NORM_KINDS:
        raise ValueError(f"unknown norm {which!r}")
    if which.startswith("Y"):
        if not hasattr(obj, "z") or not hasattr(obj, "lam"):
            raise TypeError("Y-norms need an iterate with z and lam")
        lam = np.asarray(getattr(obj.lam, "values", obj.lam), dtype=float)
        zn = norm(obj.z, "Z" + which[1:])
        if which == "Yinf":
            return zn + float(np.max(np.abs(lam)))
        return zn + math.sqrt(l2_sq_interval(lam))
    L, sup_x, sup_v, l2_x, l2_v = z_components(obj)
    if which == "Zinf":
        return L + sup_x + sup_v
    return L + l2_x + l2_v


def hilbert_z2_sq(d: Direction) -> float:
    """Squared-sum form ``dL^2 + |dxi|_L2^2 + |dxi_tau|_L2^2`` of the Z2 norm."""
    _, _, _, l2_x, l2_v = z_components(d)
    return d.dL**2 + l2_x**2 + l2_v**2
