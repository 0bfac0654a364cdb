"""Time-rate integrand, its directional derivatives, travel time and the Lagrangian.

The integrand is split into the tailwind term ``f1 = -xi_tau.w / g`` and the
length term ``f2 = sqrt(F) / g`` with ``g = vbar^2 - w.w`` and
``F = (xi_tau.w)^2 + g |xi_tau|^2``.  Every derivative below is written as a
sum of the individual product-rule terms rather than a simplified closed form,
so that each line can be compared against a hand derivation.

All kernel functions broadcast over leading axes: ``xi``, ``xi_tau`` and each
direction component have shape ``(..., 2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError, SpeedBelowFloorError, WindExceedsAirspeedError
from .trajectory import Direction, Path, State, norm
from .windfield import WindField

Q_DEFAULT = 4

Pair = tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class PointwiseKernel:
    xi: np.ndarray
    xi_tau: np.ndarray
    w: np.ndarray
    w_x: np.ndarray
    w_xx: np.ndarray
    w_xxx: np.ndarray
    vbar: float


def make_kernel(field: WindField, xi, xi_tau, vbar: float) -> PointwiseKernel:
    xi = np.asarray(xi, dtype=float)
    xi_tau = np.asarray(xi_tau, dtype=float)
    w, wx, wxx, wxxx = field.jet(xi)
    if np.any(np.sum(w * w, axis=-1) >= vbar * vbar):
        raise WindExceedsAirspeedError("wind speed reaches the airspeed at an evaluation point")
    xi_tau = np.broadcast_to(xi_tau, w.shape)
    return PointwiseKernel(xi, xi_tau, w, wx, wxx, wxxx, float(vbar))


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum(a * b, axis=-1)


def _lin(wx: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.einsum("...km,...m->...k", wx, v)


def _bil(wxx: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("...kmn,...m,...n->...k", wxx, a, b)


def _tri(wxxx: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    return np.einsum("...kmnp,...m,...n,...p->...k", wxxx, a, b, c)


def kernel_f(k: PointwiseKernel):
    """Return ``(f, f1, f2, g, F)``."""
    a = _dot(k.xi_tau, k.w)
    g = k.vbar**2 - _dot(k.w, k.w)
    F = a * a + g * _dot(k.xi_tau, k.xi_tau)
    f1 = -a / g
    f2 = np.sqrt(F) / g
    return f1 + f2, f1, f2, g, F


# g and its derivatives ----------------------------------------------------

def _g1(k: PointwiseKernel, dx):
    return -2.0 * _dot(k.w, _lin(k.w_x, dx))


def _g2(k: PointwiseKernel, dx, ex):
    return -2.0 * _dot(_lin(k.w_x, dx), _lin(k.w_x, ex)) - 2.0 * _dot(k.w, _bil(k.w_xx, dx, ex))


def _g3(k: PointwiseKernel, dx, Dx):
    # exact third derivative g'''[d, d, D]
    return (
        -4.0 * _dot(_lin(k.w_x, dx), _bil(k.w_xx, dx, Dx))
        - 2.0 * _dot(_lin(k.w_x, Dx), _bil(k.w_xx, dx, dx))
        - 2.0 * _dot(k.w, _tri(k.w_xxx, dx, dx, Dx))
    )


# F and its derivatives ----------------------------------------------------

def _F1(k: PointwiseKernel, d: Pair):
    dx, dt = d
    xt, w = k.xi_tau, k.w
    g = k.vbar**2 - _dot(w, w)
    return (
        2.0 * _dot(xt, w) * (_dot(dt, w) + _dot(xt, _lin(k.w_x, dx)))
        + _g1(k, dx) * _dot(xt, xt)
        + 2.0 * g * _dot(xt, dt)
    )


def _F2(k: PointwiseKernel, d: Pair, e: Pair):
    dx, dt = d
    ex, et = e
    xt, w, wx = k.xi_tau, k.w, k.w_x
    g = k.vbar**2 - _dot(w, w)
    a = _dot(xt, w)
    return (
        2.0 * a * _dot(dt, _lin(wx, ex))
        + 2.0 * _dot(xt, _lin(wx, ex)) * _dot(dt, w)
        + 2.0 * _dot(et, w) * _dot(dt, w)
        + 2.0 * _dot(xt, _lin(wx, ex)) * _dot(xt, _lin(wx, dx))
        + 2.0 * a * _dot(xt, _bil(k.w_xx, dx, ex))
        + 2.0 * _dot(et, w) * _dot(xt, _lin(wx, dx))
        + 2.0 * a * _dot(et, _lin(wx, dx))
        + _g2(k, ex, dx) * _dot(xt, xt)
        + 2.0 * _g1(k, dx) * _dot(et, xt)
        + 2.0 * _g1(k, ex) * _dot(xt, dt)
        + 2.0 * g * _dot(et, dt)
    )


def _F3(k: PointwiseKernel, d: Pair, e: Pair):
    """``F'''[d]^2[e]``."""
    dx, dt = d
    ex, et = e
    xt, w, wx, wxx = k.xi_tau, k.w, k.w_x, k.w_xx
    a = _dot(xt, w)
    return (
        4.0 * _dot(et, w) * _dot(dt, _lin(wx, dx))
        + 4.0 * _dot(xt, _lin(wx, ex)) * _dot(dt, _lin(wx, dx))
        + 4.0 * a * _dot(dt, _bil(wxx, dx, ex))
        + 4.0 * _dot(dt, _lin(wx, ex)) * _dot(xt, _lin(wx, dx))
        + 4.0 * _dot(dt, w) * _dot(et, _lin(wx, dx))
        + 4.0 * _dot(dt, w) * _dot(xt, _bil(wxx, dx, ex))
        + 4.0 * _dot(dt, w) * _dot(dt, _lin(wx, ex))
        + 4.0 * _dot(xt, _lin(wx, dx)) * _dot(et, _lin(wx, dx))
        + 4.0 * _dot(xt, _lin(wx, dx)) * _dot(xt, _bil(wxx, dx, ex))
        + 2.0 * _dot(et, w) * _dot(xt, _bil(wxx, dx, dx))
        + 2.0 * _dot(xt, _lin(wx, ex)) * _dot(xt, _bil(wxx, dx, dx))
        + 2.0 * a * _dot(xt, _tri(k.w_xxx, dx, dx, ex))
        + 2.0 * a * _dot(et, _bil(wxx, dx, dx))
        + _g3(k, dx, ex) * _dot(xt, xt)
        + 2.0 * _g2(k, dx, dx) * _dot(et, xt)
        + 4.0 * _g2(k, ex, dx) * _dot(dt, xt)
        + 4.0 * _g1(k, dx) * _dot(dt, et)
        + 2.0 * _g1(k, ex) * _dot(dt, dt)
    )


# directional derivatives of f ---------------------------------------------

def kernel_d1(k: PointwiseKernel, d: Pair):
    dx, dt = (np.asarray(v, dtype=float) for v in d)
    _, _, _, g, F = kernel_f(k)
    xt, w = k.xi_tau, k.w
    g1 = _g1(k, dx)
    df1 = g**-2 * _dot(xt, w) * g1 - _dot(xt, _lin(k.w_x, dx)) / g - _dot(w, dt) / g
    df2 = -(g**-2) * g1 * np.sqrt(F) + 0.5 / g * F**-0.5 * _F1(k, (dx, dt))
    return df1 + df2


def kernel_d2(k: PointwiseKernel, d: Pair, e: Pair):
    dx, dt = (np.asarray(v, dtype=float) for v in d)
    ex, et = (np.asarray(v, dtype=float) for v in e)
    _, _, _, g, F = kernel_f(k)
    xt, w, wx = k.xi_tau, k.w, k.w_x
    a = _dot(xt, w)
    gd, ge, gde = _g1(k, dx), _g1(k, ex), _g2(k, dx, ex)
    ddf1 = (
        -2.0 * g**-3 * ge * a * gd
        + g**-2 * _dot(et, w) * gd
        + g**-2 * _dot(xt, _lin(wx, ex)) * gd
        + g**-2 * a * gde
        + g**-2 * ge * _dot(xt, _lin(wx, dx))
        - _dot(et, _lin(wx, dx)) / g
        - _dot(xt, _bil(k.w_xx, dx, ex)) / g
        + g**-2 * ge * _dot(w, dt)
        - _dot(dt, _lin(wx, ex)) / g
    )
    Fd, Fe, Fde = _F1(k, (dx, dt)), _F1(k, (ex, et)), _F2(k, (dx, dt), (ex, et))
    sF = np.sqrt(F)
    ddf2 = (
        2.0 * g**-3 * ge * gd * sF
        - g**-2 * gde * sF
        - 0.5 * g**-2 * gd / sF * Fe
        - 0.5 * g**-2 * ge / sF * Fd
        + 0.5 / g / sF * Fde
        - 0.25 / g * F**-1.5 * Fd * Fe
    )
    return ddf1 + ddf2


def kernel_d3(k: PointwiseKernel, d: Pair, D: Pair, speed_floor: float = 0.0):
    """``f'''[d]^2[D]``; aborts if any ``|xi_tau|`` is below ``speed_floor``."""
    speed = np.linalg.norm(k.xi_tau, axis=-1)
    if np.any(speed <= 0.0) or np.any(speed < speed_floor):
        raise SpeedBelowFloorError(f"|xi_tau| = {float(np.min(speed))} below floor {speed_floor}")
    dx, dt = (np.asarray(v, dtype=float) for v in d)
    Dx, Dt = (np.asarray(v, dtype=float) for v in D)
    _, _, _, g, F = kernel_f(k)
    xt, w, wx, wxx = k.xi_tau, k.w, k.w_x, k.w_xx
    a = _dot(xt, w)
    gd, gD = _g1(k, dx), _g1(k, Dx)
    gdd, gDd = _g2(k, dx, dx), _g2(k, Dx, dx)
    gddD = _g3(k, dx, Dx)
    xwd, xwD = _dot(xt, _lin(wx, dx)), _dot(xt, _lin(wx, Dx))
    dddf1 = (
        6.0 * g**-4 * gD * gd**2 * a
        - 4.0 * g**-3 * gd * gDd * a
        - 2.0 * g**-3 * gD * gdd * a
        + g**-2 * gddD * a
        - 2.0 * g**-3 * gd**2 * xwD
        + g**-2 * gdd * xwD
        - 4.0 * g**-3 * gD * gd * xwd
        + 2.0 * g**-2 * gDd * xwd
        + 2.0 * g**-2 * gd * _dot(xt, _bil(wxx, dx, Dx))
        + g**-2 * gD * _dot(xt, _bil(wxx, dx, dx))
        - _dot(xt, _tri(k.w_xxx, dx, dx, Dx)) / g
        - 2.0 * g**-3 * gd**2 * _dot(Dt, w)
        + g**-2 * gdd * _dot(Dt, w)
        + 2.0 * g**-2 * gd * _dot(Dt, _lin(wx, dx))
        - _dot(Dt, _bil(wxx, dx, dx)) / g
        - 4.0 * g**-3 * gD * gd * _dot(dt, w)
        + 2.0 * g**-2 * gDd * _dot(dt, w)
        + 2.0 * g**-2 * gd * _dot(dt, _lin(wx, Dx))
        + 2.0 * g**-2 * gD * _dot(dt, _lin(wx, dx))
        - 2.0 * _dot(dt, _bil(wxx, dx, Dx)) / g
    )
    d_, D_ = (dx, dt), (Dx, Dt)
    Fd, FD = _F1(k, d_), _F1(k, D_)
    FdD, Fdd = _F2(k, d_, D_), _F2(k, d_, d_)
    FddD = _F3(k, d_, D_)
    sF = np.sqrt(F)
    dddf2 = (
        -6.0 * g**-4 * gD * gd**2 * sF
        + 4.0 * g**-3 * gd * gDd * sF
        + g**-3 * gd**2 / sF * FD
        + 2.0 * g**-3 * gD * gdd * sF
        - g**-2 * gddD * sF
        - 0.5 * g**-2 * gdd / sF * FD
        + g**-3 * gD * gd / sF * Fd
        - 0.5 * g**-2 * gDd / sF * Fd
        + 0.25 * g**-2 * gd * F**-1.5 * Fd * FD
        - 0.5 * g**-2 * gd / sF * FdD
        + g**-3 * gD * gd / sF * Fd
        - 0.5 * g**-2 * gDd / sF * Fd
        + 0.25 * g**-2 * gd * F**-1.5 * Fd * FD
        - 0.5 * g**-2 * gd / sF * FdD
        + 0.25 * g**-2 * gD * F**-1.5 * Fd**2
        + 0.375 / g * F**-2.5 * Fd**2 * FD
        - 0.5 / g * F**-1.5 * Fd * FdD
        - 0.5 * g**-2 * gD / sF * Fdd
        - 0.25 / g * F**-1.5 * Fdd * FD
        + 0.5 / g / sF * FddD
    )
    return dddf1 + dddf2


# quadrature on a path -----------------------------------------------------

@dataclass(frozen=True)
class Quadrature:
    """Midpoint sub-samples: interval index, local coordinate and weight per point."""

    N: int
    Q: int

    @property
    def s(self) -> np.ndarray:
        return (np.arange(self.Q) + 0.5) / self.Q

    @property
    def weight(self) -> float:
        return 1.0 / (self.N * self.Q)


def _points(nodes: np.ndarray, Q: int) -> tuple[np.ndarray, np.ndarray]:
    """Positions ``(N, Q, 2)`` and velocities ``(N, Q, 2)`` at the sub-samples."""
    N = nodes.shape[0] - 1
    s = ((np.arange(Q) + 0.5) / Q)[None, :, None]
    a, b = nodes[:-1, None, :], nodes[1:, None, :]
    xi = (1.0 - s) * a + s * b
    vel = np.broadcast_to((N * (b - a)), xi.shape)
    return xi, vel


def path_kernel(path: Path, field: WindField, vbar: float, Q: int = Q_DEFAULT) -> PointwiseKernel:
    xi, vel = _points(path.nodes, Q)
    return make_kernel(field, xi, vel, vbar)


def travel_time(state: State | Path, field: WindField, vbar: float, Q: int = Q_DEFAULT) -> float:
    path = state.path if isinstance(state, State) else state
    k = path_kernel(path, field, vbar, Q)
    f = kernel_f(k)[0]
    return float(np.sum(f) / (path.N * Q))


def _dir_points(d: Direction, Q: int) -> Pair:
    return _points(d.nodes, Q)


def travel_time_directional(state: State, field: WindField, vbar: float, dirs: list[Direction],
                            Q: int = Q_DEFAULT, speed_floor: float = 0.0) -> float:
    """Directional derivative of T: ``T'[d]``, ``T''[d, e]`` or ``T'''[d]^2[D]``."""
    k = path_kernel(state.path, field, vbar, Q)
    pairs = [_dir_points(d, Q) for d in dirs]
    if len(dirs) == 1:
        vals = kernel_d1(k, pairs[0])
    elif len(dirs) == 2:
        vals = kernel_d2(k, pairs[0], pairs[1])
    elif len(dirs) == 3:
        if not np.allclose(dirs[0].dnodes, dirs[1].dnodes, rtol=0, atol=0):
            raise ValueError("third derivative needs the first direction repeated")
        vals = kernel_d3(k, pairs[0], pairs[2], speed_floor)
    else:
        raise ValueError("1, 2 or 3 directions expected")
    return float(np.sum(vals) / (state.N * Q))


def _unit_pairs(shape: tuple[int, ...]) -> list[Pair]:
    out = []
    for slot in range(2):
        for comp in range(2):
            dx = np.zeros(shape)
            dt = np.zeros(shape)
            (dx if slot == 0 else dt)[..., comp] = 1.0
            out.append((dx, dt))
    return out


def _local_jacobian(N: int, Q: int) -> np.ndarray:
    """``(Q, 4, 4)`` map from ``(x_i, x_{i+1})`` to ``(xi, xi_tau)`` at each sub-sample."""
    s = (np.arange(Q) + 0.5) / Q
    J = np.zeros((Q, 4, 4))
    eye = np.eye(2)
    for q in range(Q):
        J[q, :2, :2] = (1.0 - s[q]) * eye
        J[q, :2, 2:] = s[q] * eye
        J[q, 2:, :2] = -N * eye
        J[q, 2:, 2:] = N * eye
    return J


def travel_time_derivatives(state: State, field: WindField, vbar: float, order: int,
                            Q: int = Q_DEFAULT) -> np.ndarray:
    """Gradient (order 1) or Hessian (order 2) of the discrete T in Direction coefficients."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    N = state.N
    k = path_kernel(state.path, field, vbar, Q)
    units = _unit_pairs(k.xi.shape)
    J = _local_jacobian(N, Q)
    wq = 1.0 / (N * Q)
    nfull = 2 * (N + 1)
    if order == 1:
        loc = np.stack([kernel_d1(k, u) for u in units], axis=-1)  # (N, Q, 4)
        node_g = np.einsum("nqa,qab->nb", loc, J) * wq  # (N, 4)
        full = np.zeros(nfull)
        for i in range(N):
            full[2 * i:2 * i + 4] += node_g[i]
        out = np.zeros(2 * (N - 1) + 1)
        out[1:] = full[2:-2]
        return out
    loc = np.empty(k.xi.shape[:-1] + (4, 4))
    for a in range(4):
        for b in range(a, 4):
            v = kernel_d2(k, units[a], units[b])
            loc[..., a, b] = v
            loc[..., b, a] = v
    node_h = np.einsum("qai,nqab,qbj->nij", J, loc, J) * wq
    full = np.zeros((nfull, nfull))
    for i in range(N):
        full[2 * i:2 * i + 4, 2 * i:2 * i + 4] += node_h[i]
    out = np.zeros((2 * (N - 1) + 1,) * 2)
    out[1:, 1:] = full[2:-2, 2:-2]
    return 0.5 * (out + out.T)


# constraint ---------------------------------------------------------------

def constraint(state: State) -> np.ndarray:
    return np.sum(state.path.velocities**2, axis=1) - state.L**2


def constraint_d1(state: State, d: Direction) -> np.ndarray:
    if d.N != state.N:
        raise ShapeMismatchError("direction and state grids differ")
    return 2.0 * np.sum(state.path.velocities * d.velocities, axis=1) - 2.0 * state.L * d.dL


def constraint_d2(d: Direction, e: Direction) -> np.ndarray:
    if d.N != e.N:
        raise ShapeMismatchError("direction grids differ")
    return 2.0 * (np.sum(d.velocities * e.velocities, axis=1) - d.dL * e.dL)


def constraint_jacobian(state: State) -> np.ndarray:
    """Row ``i`` holds the coefficients of ``h_i'`` in the Direction basis."""
    N = state.N
    v = state.path.velocities
    full = np.zeros((N, 2 * (N + 1)))
    for i in range(N):
        full[i, 2 * i:2 * i + 2] = -2.0 * N * v[i]
        full[i, 2 * i + 2:2 * i + 4] = 2.0 * N * v[i]
    A = np.zeros((N, 2 * (N - 1) + 1))
    A[:, 0] = -2.0 * state.L
    A[:, 1:] = full[:, 2:-2]
    return A


def constraint_hessian_weighted(lam: np.ndarray, N: int) -> np.ndarray:
    """Matrix of ``sum_i w_i h_i''`` for interval weights ``w``."""
    lam = np.asarray(lam, dtype=float)
    full = np.zeros((2 * (N + 1), 2 * (N + 1)))
    blk = 2.0 * N * N * np.array([[1.0, -1.0], [-1.0, 1.0]])
    for i in range(N):
        full[2 * i:2 * i + 4, 2 * i:2 * i + 4] += lam[i] * np.kron(blk, np.eye(2))
    H = np.zeros((2 * (N - 1) + 1,) * 2)
    H[0, 0] = -2.0 * float(np.sum(lam))
    H[1:, 1:] = full[2:-2, 2:-2]
    return H


# Lagrangian ---------------------------------------------------------------

@dataclass(frozen=True)
class Multiplier:
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise ValueError("multiplier entries must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @classmethod
    def zeros(cls, N: int) -> "Multiplier":
        return cls(np.zeros(N))


@dataclass(frozen=True)
class KKTStep:
    """Increment ``(dz, dlam)`` of a KKT iterate."""

    z: Direction
    lam: Multiplier

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.z.to_vector(), self.lam.values])


@dataclass(frozen=True)
class KKTIterate:
    z: State
    lam: Multiplier

    def __post_init__(self) -> None:
        if self.z.N != self.lam.N:
            raise ShapeMismatchError(f"state has N={self.z.N}, multiplier has N={self.lam.N}")

    @property
    def N(self) -> int:
        return self.z.N

    @classmethod
    def from_state(cls, z: State) -> "KKTIterate":
        return cls(z, Multiplier.zeros(z.N))

    def plus(self, step: KKTStep, mu: float = 1.0) -> "KKTIterate":
        return KKTIterate(self.z.plus(step.z, mu), Multiplier(self.lam.values + mu * step.lam.values))

    def minus(self, other: "KKTIterate") -> KKTStep:
        return KKTStep(self.z.minus(other.z), Multiplier(self.lam.values - other.lam.values))


@dataclass(frozen=True)
class Residual:
    grad_z: np.ndarray
    grad_lambda: np.ndarray

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.grad_z**2) + np.sum(self.grad_lambda**2)))


def lagrangian(chi: KKTIterate, field: WindField, vbar: float, Q: int = Q_DEFAULT) -> float:
    """``T(xi) + <lam, h(z)>`` with the L2 pairing of interval-constant functions."""
    return travel_time(chi.z, field, vbar, Q) + float(np.sum(chi.lam.values * constraint(chi.z))) / chi.N


def lagrangian_grad(chi: KKTIterate, field: WindField, vbar: float, Q: int = Q_DEFAULT) -> Residual:
    gz = travel_time_derivatives(chi.z, field, vbar, 1, Q)
    gz = gz + constraint_jacobian(chi.z).T @ chi.lam.values / chi.N
    return Residual(gz, constraint(chi.z))


def residual_norm(chi: KKTIterate, field: WindField, vbar: float, Q: int = Q_DEFAULT) -> float:
    return lagrangian_grad(chi, field, vbar, Q).norm()


def kkt_distance(a: KKTIterate, b: KKTIterate, which: str = "Y2") -> float:
    return norm(a.minus(b), which)
