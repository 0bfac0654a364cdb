"""Analytic wind fields with exact derivatives up to third order.

Tensor layout: ``derivative(x, k)`` has shape ``(..., 2, 2, ..., 2)`` with
``k + 1`` trailing axes.  The first trailing axis indexes the wind component,
the remaining ones the spatial directions, so ``w_xx[a, b, c]`` in the
multilinear notation is ``einsum('k,kmn,m,n', a, wxx, b, c)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import ConfigError, DegenerateGeometryError
from .trajectory import Ellipse

KINDS = ("constant", "linear-shear", "gaussian-vortex", "superposition")
_ROT = np.array([[0.0, -1.0], [1.0, 0.0]])


@dataclass(frozen=True)
class WindField:
    """Immutable description of a wind field.

    ``params`` per kind:

    * constant: ``vector``
    * linear-shear: ``matrix`` and optional ``offset`` (``w = A x + b``)
    * gaussian-vortex: ``center``, ``amplitude``, ``width``
    * superposition: ``components`` (tuple of WindField)
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown wind kind {self.kind!r}")

    # constructors -------------------------------------------------------
    @classmethod
    def constant(cls, vector: Sequence[float]) -> "WindField":
        return cls("constant", {"vector": tuple(float(v) for v in vector)})

    @classmethod
    def zero(cls) -> "WindField":
        return cls.constant((0.0, 0.0))

    @classmethod
    def linear_shear(cls, matrix, offset=(0.0, 0.0)) -> "WindField":
        m = np.asarray(matrix, dtype=float).reshape(2, 2)
        return cls("linear-shear", {"matrix": tuple(map(tuple, m.tolist())), "offset": tuple(float(v) for v in offset)})

    @classmethod
    def gaussian_vortex(cls, center, amplitude: float, width: float) -> "WindField":
        if not width > 0.0:
            raise ConfigError("vortex width must be positive")
        return cls(
            "gaussian-vortex",
            {"center": tuple(float(v) for v in center), "amplitude": float(amplitude), "width": float(width)},
        )

    @classmethod
    def superposition(cls, components: Sequence["WindField"]) -> "WindField":
        return cls("superposition", {"components": tuple(components)})

    # evaluation ---------------------------------------------------------
    def jet(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """``(w, w_x, w_xx, w_xxx)`` at points ``x`` of shape ``(..., 2)``."""
        x = np.asarray(x, dtype=float)
        lead = x.shape[:-1]
        if self.kind == "constant":
            w = np.broadcast_to(np.array(self.params["vector"]), lead + (2,)).copy()
            return w, np.zeros(lead + (2, 2)), np.zeros(lead + (2, 2, 2)), np.zeros(lead + (2, 2, 2, 2))
        if self.kind == "linear-shear":
            A = np.array(self.params["matrix"])
            b = np.array(self.params["offset"])
            w = x @ A.T + b
            wx = np.broadcast_to(A, lead + (2, 2)).copy()
            return w, wx, np.zeros(lead + (2, 2, 2)), np.zeros(lead + (2, 2, 2, 2))
        if self.kind == "gaussian-vortex":
            return _vortex_jet(x, self.params)
        parts = [c.jet(x) for c in self.params["components"]]
        if not parts:
            return self.zero().jet(x)
        return tuple(sum(p[i] for p in parts) for i in range(4))  # type: ignore[return-value]

    def eval(self, x: np.ndarray) -> np.ndarray:
        return self.jet(x)[0]

    def derivative(self, x: np.ndarray, order: int) -> np.ndarray:
        if order not in (1, 2, 3):
            raise ValueError("order must be 1, 2 or 3")
        return self.jet(x)[order]

    # serialization ------------------------------------------------------
    def to_json(self) -> dict[str, Any]:
        if self.kind == "superposition":
            return {"kind": self.kind, "components": [c.to_json() for c in self.params["components"]]}
        out: dict[str, Any] = {"kind": self.kind}
        for k, v in self.params.items():
            out[k] = [list(r) for r in v] if k == "matrix" else (list(v) if isinstance(v, tuple) else v)
        return out

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "WindField":
        if not isinstance(data, dict) or "kind" not in data:
            raise ConfigError("wind spec must be an object with a 'kind'")
        kind = data["kind"]
        allowed = {
            "constant": {"kind", "vector"},
            "linear-shear": {"kind", "matrix", "offset"},
            "gaussian-vortex": {"kind", "center", "amplitude", "width"},
            "superposition": {"kind", "components"},
        }
        if kind not in allowed:
            raise ConfigError(f"unknown wind kind {kind!r}")
        extra = set(data) - allowed[kind]
        if extra:
            raise ConfigError(f"unknown keys in wind spec: {sorted(extra)}")
        try:
            if kind == "constant":
                return cls.constant(data["vector"])
            if kind == "linear-shear":
                return cls.linear_shear(data["matrix"], data.get("offset", (0.0, 0.0)))
            if kind == "gaussian-vortex":
                return cls.gaussian_vortex(data["center"], data["amplitude"], data["width"])
            return cls.superposition([cls.from_json(c) for c in data["components"]])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed {kind} wind spec: {exc}") from exc


def _vortex_jet(x: np.ndarray, p: dict) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    a = p["amplitude"]
    s2 = p["width"] ** 2
    r = x - np.array(p["center"])
    phi = np.exp(-np.sum(r * r, axis=-1) / (2.0 * s2))
    eye = np.eye(2)
    jr = r @ _ROT.T
    d1 = -r / s2 * phi[..., None]
    rr = r[..., :, None] * r[..., None, :]
    d2 = (rr / s2**2 - eye / s2) * phi[..., None, None]
    rrr = rr[..., :, :, None] * r[..., None, None, :]
    sym = (
        eye[:, :, None] * r[..., None, None, :]
        + eye[:, None, :] * r[..., None, :, None]
        + eye[None, :, :] * r[..., :, None, None]
    )
    d3 = (-rrr / s2**3 + sym / s2**2) * phi[..., None, None, None]
    w = a * jr * phi[..., None]
    wx = a * (_ROT * phi[..., None, None] + jr[..., :, None] * d1[..., None, :])
    wxx = a * (
        _ROT[:, :, None] * d1[..., None, None, :]
        + _ROT[:, None, :] * d1[..., None, :, None]
        + jr[..., :, None, None] * d2[..., None, :, :]
    )
    wxxx = a * (
        _ROT[:, :, None, None] * d2[..., None, None, :, :]
        + _ROT[:, None, :, None] * d2[..., None, :, None, :]
        + _ROT[:, None, None, :] * d2[..., None, :, :, None]
        + jr[..., :, None, None, None] * d3[..., None, :, :, :]
    )
    return w, wx, wxx, wxxx


@dataclass(frozen=True)
class WindBounds:
    """Supremum bounds of ``|w|`` and the Frobenius norms of its derivatives."""

    c0: float
    c1: float
    c2: float
    c3: float
    domain: Ellipse | None
    method: str
    safety_factor: float = 1.0

    def lemma_range_ok(self, vbar: float) -> bool:
        """Whether ``c0 <= vbar / sqrt(5)``, the range where the derivative bounds apply."""
        return self.c0 <= vbar / math.sqrt(5.0)

    def to_json(self) -> dict[str, Any]:
        dom = None
        if self.domain is not None:
            dom = {
                "focus_a": self.domain.focus_a.tolist(),
                "focus_b": self.domain.focus_b.tolist(),
                "major_sum": self.domain.major_sum,
            }
        return {
            "c0": self.c0,
            "c1": self.c1,
            "c2": self.c2,
            "c3": self.c3,
            "domain": dom,
            "method": self.method,
            "safety_factor": self.safety_factor,
        }


def _linear_parts(f: WindField) -> tuple[np.ndarray, np.ndarray] | None:
    """Return ``(A, b)`` if the field is affine, else None."""
    if f.kind == "constant":
        return np.zeros((2, 2)), np.array(f.params["vector"])
    if f.kind == "linear-shear":
        return np.array(f.params["matrix"]), np.array(f.params["offset"])
    if f.kind == "superposition":
        A, b = np.zeros((2, 2)), np.zeros(2)
        for c in f.params["components"]:
            part = _linear_parts(c)
            if part is None:
                return None
            A, b = A + part[0], b + part[1]
        return A, b
    return None


def _ellipse_grid(domain: Ellipse, n: int) -> np.ndarray:
    center, axis, a, b = domain.frame()
    perp = np.array([-axis[1], axis[0]])
    u = np.linspace(-a, a, n)
    v = np.linspace(-b, b, n) if b > 0.0 else np.zeros(1)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    pts = center + uu[..., None] * axis + vv[..., None] * perp
    pts = pts.reshape(-1, 2)
    return pts[domain.contains(pts, rtol=1e-9)]


def _affine_sup(A: np.ndarray, b: np.ndarray, domain: Ellipse) -> float:
    center, axis, a, bb = domain.frame()
    perp = np.array([-axis[1], axis[0]])
    p = A @ center + b
    q = a * (A @ axis)
    r = bb * (A @ perp)

    def neg(theta: float) -> float:
        v = p + q * math.cos(theta) + r * math.sin(theta)
        return -float(v @ v)

    thetas = np.linspace(0.0, 2.0 * math.pi, 4097)
    vals = [neg(t) for t in thetas]
    i = int(np.argmin(vals))
    step = thetas[1] - thetas[0]
    res = minimize_scalar(neg, bounds=(thetas[i] - step, thetas[i] + step), method="bounded",
                          options={"xatol": 1e-14})
    best = min(vals[i], float(res.fun))
    return math.sqrt(max(-best, 0.0))


def compute_bounds(field: WindField, domain: Ellipse, grid_resolution: int = 201,
                   safety_factor: float = 1.1) -> WindBounds:
    """Bound constants ``c0..c3`` of ``field`` over ``domain``.

    Affine fields get exact suprema.  Other fields are sampled on a uniform
    grid over the ellipse-aligned bounding box and inflated by ``safety_factor``.
    """
    if grid_resolution < 2:
        raise ValueError("grid_resolution must be at least 2")
    if safety_factor < 1.0:
        raise ValueError("safety_factor must be >= 1")
    if not domain.major_sum > 0.0:
        raise DegenerateGeometryError("domain has zero size")
    lin = _linear_parts(field)
    if lin is not None:
        A, b = lin
        return WindBounds(_affine_sup(A, b, domain), float(np.linalg.norm(A)), 0.0, 0.0, domain, "analytic", 1.0)
    pts = _ellipse_grid(domain, grid_resolution)
    w, wx, wxx, wxxx = field.jet(pts)
    c = [
        float(np.max(np.linalg.norm(t.reshape(len(pts), -1), axis=1))) * safety_factor
        for t in (w, wx, wxx, wxxx)
    ]
    return WindBounds(c[0], c[1], c[2], c[3], domain, "sampled", safety_factor)


def _fd_scale(field: WindField) -> float:
    if field.kind == "gaussian-vortex":
        return field.params["width"]
    if field.kind == "superposition":
        scales = [_fd_scale(c) for c in field.params["components"]]
        return min(scales) if scales else 1.0
    return 1.0


def _sample_box(field: WindField) -> tuple[np.ndarray, np.ndarray]:
    if field.kind == "gaussian-vortex":
        c = np.array(field.params["center"])
        s = 3.0 * field.params["width"]
        return c - s, c + s
    if field.kind == "superposition" and field.params["components"]:
        boxes = [_sample_box(c) for c in field.params["components"]]
        return np.min([b[0] for b in boxes], axis=0), np.max([b[1] for b in boxes], axis=0)
    return np.array([-1.0, -1.0]), np.array([1.0, 1.0])


@dataclass
class FieldCheckReport:
    max_rel_error: dict[int, float]
    sample_count: int
    tol: float = 1e-5

    @property
    def passed(self) -> bool:
        return all(v <= self.tol for v in self.max_rel_error.values())


def verify_field(field: WindField, sample_count: int = 100, seed: int = 0,
                 domain: Ellipse | None = None) -> FieldCheckReport:
    """Compare each analytic derivative with central differences of the order below."""
    rng = np.random.default_rng(seed)
    if domain is not None:
        pts = _ellipse_grid(domain, 64)
        pts = pts[rng.integers(0, len(pts), sample_count)]
    else:
        lo, hi = _sample_box(field)
        pts = lo + (hi - lo) * rng.random((sample_count, 2))
    # differences of affine fields are exact for any step, so a coarse one limits rounding
    h = 2.0**-7 if _linear_parts(field) is not None else 1e-4 * _fd_scale(field)
    errs = {1: 0.0, 2: 0.0, 3: 0.0}
    for x in pts:
        for order in (1, 2, 3):
            exact = field.jet(x)[order]
            fd = np.empty_like(exact)
            for m in range(2):
                e = np.zeros(2)
                e[m] = h
                fd[..., m] = (field.jet(x + e)[order - 1] - field.jet(x - e)[order - 1]) / (2 * h)
            scale = float(np.max(np.abs(exact)))
            diff = float(np.max(np.abs(fd - exact)))
            if diff == 0.0:
                continue
            errs[order] = max(errs[order], diff / max(scale, 1e-300))
    return FieldCheckReport(errs, sample_count)
