"""Theoretical constants of the convergence analysis, witnesses and a violation search.

Every constant is evaluated from the wind bounds ``c0..c3``, the airspeed and
the endpoint distance.  ``B_lower`` (coercivity on the constraint kernel) has
no closed form and is estimated from the discrete reduced Hessian, so every
constant that depends on it is labelled ``estimated``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Any

import numpy as np
import scipy.linalg as sla

from .errors import SingularSystemError, WitnessError
from .functional import (
    Q_DEFAULT,
    KKTIterate,
    _local_jacobian,
    _points,
    _unit_pairs,
    path_kernel,
    constraint_d1,
    constraint_d2,
    kernel_d1,
    kernel_d2,
    kernel_d3,
    make_kernel,
    travel_time_derivatives,
    travel_time_directional,
)
from .kkt_solver import assemble
from .trajectory import Direction, Ellipse, State, hilbert_z2_sq, l2_sq_interval, l2_sq_nodal
from .windfield import WindBounds, WindField

FORMULA = "formula"
ESTIMATED = "estimated"
SAMPLED = "sampled"


# closed-form constants -------------------------------------------------------

def _speeds(wb: WindBounds, vbar: float) -> tuple[float, float, float]:
    if not wb.c0 < vbar:
        raise ValueError(f"c0={wb.c0} must be below vbar={vbar}")
    v_lo = math.sqrt(vbar**2 - wb.c0**2)
    v_hi = math.sqrt(vbar**2 + wb.c0**2)
    rho = (vbar + wb.c0) / (vbar - wb.c0)
    return v_lo, v_hi, rho


def alpha_constants(wb: WindBounds, vbar: float) -> tuple[float, float]:
    v_lo, _, _ = _speeds(wb, vbar)
    return 21.0 * wb.c1 / (4.0 * v_lo**2), 7.0 / (2.0 * v_lo)


def beta_constants(wb: WindBounds, vbar: float) -> tuple[float, float, float]:
    v_lo, _, _ = _speeds(wb, vbar)
    c1, c2 = wb.c1, wb.c2
    return 14.0 * c1**2 / v_lo**3 + 4.0 * c2 / v_lo**2, 7.0 * c1 / v_lo**2, 4.0 / v_lo


def gamma_constants(wb: WindBounds, vbar: float) -> tuple[float, ...]:
    v, _, _ = _speeds(wb, vbar)
    c1, c2, c3 = wb.c1, wb.c2, wb.c3
    g0 = 2.0 / v**4 * (37.0 * c1**3 + 21.0 * c1 * c2 * v + 2.0 * c3 * v**2)
    g1 = (29.0 * c1**2 + 7.0 * v * c2) / v**3
    g2 = (57.0 * c1**2 + 13.0 * v * c2) / v**3
    g3 = 40.0 * c1 / v**2
    g4 = 20.0 * c1 / v**2
    g5 = 18.0 / v
    return g0, g1, g2, g3, g4, g5


def gamma_bar(gam: tuple[float, ...], rho: float, L_tilde: float, R: float) -> float:
    g0, g1, g2, g3, g4, g5 = gam
    lo = L_tilde - R
    return max(
        (rho * L_tilde + R) * g0 + g2 / 2.0,
        g4 / lo + g2 / 2.0,
        g1 + g3 / (2.0 * lo),
        g3 / (2.0 * lo) + g5 / lo**2,
    )


def b_upper(beta: tuple[float, float, float], rho: float, L_tilde: float, R: float) -> float:
    b0, b1, b2 = beta
    return b1 + max((rho * L_tilde + R) * b0, b2 / (L_tilde + R))


def beta_hats(wb: WindBounds, vbar: float, L_tilde: float, R: float,
              L_star: float | None = None) -> tuple[float, float]:
    """Lipschitz constants of ``f1''`` and ``f2''``.

    Without ``L_star`` the factors ``L*-R`` and ``L*+R`` are replaced by their
    bounds ``L_tilde-R`` and ``rho L_tilde+R`` (larger result).
    """
    v_lo, v_hi, rho = _speeds(wb, vbar)
    c0, c1, c2, c3 = wb.c0, wb.c1, wb.c2, wb.c3
    lead = 4.0 / v_lo**12
    bh1 = lead * (5.0 + 80 * c0 * c1 * vbar**4 + 8 * c0 * c1 * vbar**2 + 12 * c0 * c1 + 16 * c0 * c2
                  + 4 * c0 * c3 + 16 * c1**2 + 12 * c1 * c2 + 4 * c1 + 4 * c2 + 2 * c3)
    lo = (L_star if L_star is not None else L_tilde) - R
    hi = L_star + R if L_star is not None else rho * L_tilde + R
    inv = 3.0 / (v_lo * lo) + 6.0 / (v_lo**3 * lo**3) + 6.0 / (v_lo**5 * lo**5)
    bh2 = lead * (20.0 + 10 * c1 + 7 * c2 + c3 + 10 * c0 * c1 + 36 * c0 * c1 * vbar**2
                  + 88 * c0 * c1 * vbar**4 + 20 * c0 * c2 + 8 * c0 * c3 + 20 * c1**2 + 24 * c1 * c2
                  + inv * (v_hi**2 * hi + 2 * c0 * c1 * hi**2))
    return bh1, bh2


def kappa_of(R: float, c: float, wb: WindBounds, vbar: float, L_tilde: float) -> float:
    """Inf-sup constant ``(c-R) [3/8 + 2 (rho + R/L_tilde)^2]^(-1/2)``."""
    if R >= c:
        raise ValueError(f"R={R} must be below c={c}")
    _, _, rho = _speeds(wb, vbar)
    return (c - R) / math.sqrt(3.0 / 8.0 + 2.0 * (rho + R / L_tilde) ** 2)


def omega1_of(B_lower: float, B_up: float, R: float, kappa: float) -> float:
    return math.sqrt(2.0) * max(4.0 / B_lower, (1.0 + 4.0 * (B_up + R) / B_lower) / kappa,
                                (B_up + R) / kappa**2)


def omega2_of(B_hat: float, R: float) -> float:
    return (8.0 + B_hat) * R


@dataclass
class BoundSet:
    vbar: float
    wind: WindBounds
    L_tilde: float
    L_low: float
    L_high: float
    R: float
    alpha0: float
    alpha1: float
    beta0: float
    beta1: float
    beta2: float
    gammas: tuple[float, ...]
    Gamma: float
    B_upper: float
    beta_hat1: float
    beta_hat2: float
    B_hat: float
    lemma_range_ok: bool
    B_lower_est: float | None = None
    c: float | None = None
    u: np.ndarray | None = None
    kappa: float | None = None
    omega1: float | None = None
    omega2: float | None = None
    omega: float | None = None
    R_C: float | None = None
    binding_cap: str | None = None
    provenance: dict[str, str] = dc_field(default_factory=dict)

    @property
    def rho(self) -> float:
        return self.L_high / self.L_tilde

    def gamma_at(self, R: float) -> float:
        return gamma_bar(self.gammas, self.rho, self.L_tilde, R)

    def b_upper_at(self, R: float) -> float:
        return b_upper((self.beta0, self.beta1, self.beta2), self.rho, self.L_tilde, R)

    def kappa_at(self, R: float) -> float:
        if self.c is None:
            raise ValueError("inf-sup constant needs c")
        return kappa_of(R, self.c, self.wind, self.vbar, self.L_tilde)

    def b_hat_at(self, R: float) -> float:
        return max(beta_hats(self.wind, self.vbar, self.L_tilde, R))

    def to_json(self) -> dict[str, Any]:
        vals = {
            "L_tilde": self.L_tilde, "L_low": self.L_low, "L_high": self.L_high, "R": self.R,
            "alpha0": self.alpha0, "alpha1": self.alpha1,
            "beta0": self.beta0, "beta1": self.beta1, "beta2": self.beta2,
            **{f"gamma{i}": g for i, g in enumerate(self.gammas)},
            "Gamma": self.Gamma, "B_upper": self.B_upper,
            "beta_hat1": self.beta_hat1, "beta_hat2": self.beta_hat2, "B_hat": self.B_hat,
            "B_lower_est": self.B_lower_est, "c": self.c, "kappa": self.kappa,
            "omega1": self.omega1, "omega2": self.omega2, "omega": self.omega, "R_C": self.R_C,
        }
        return {
            "vbar": self.vbar,
            "wind_bounds": self.wind.to_json(),
            "u": None if self.u is None else [float(x) for x in self.u],
            "lemma_range_ok": self.lemma_range_ok,
            "binding_cap": self.binding_cap,
            "constants": {k: {"value": v, "provenance": self.provenance.get(k, FORMULA)}
                          for k, v in vals.items()},
        }


def compute_constants(wb: WindBounds, vbar: float, L_tilde: float, R: float,
                      B_lower: float | None = None, c: float | None = None,
                      u: np.ndarray | None = None, L_star: float | None = None) -> BoundSet:
    """Evaluate all constants at radius ``R``.

    ``kappa`` needs ``c`` and is left unset when ``R >= c``; the omegas and
    ``R_C`` additionally need the coercivity estimate ``B_lower``.
    """
    if not R < L_tilde:
        raise ValueError(f"R={R} must be below L_tilde={L_tilde}")
    if R < 0:
        raise ValueError("R must be nonnegative")
    v_lo, v_hi, rho = _speeds(wb, vbar)
    a0, a1 = alpha_constants(wb, vbar)
    beta = beta_constants(wb, vbar)
    gam = gamma_constants(wb, vbar)
    bh1, bh2 = beta_hats(wb, vbar, L_tilde, R, L_star)
    wprov = SAMPLED if wb.method == "sampled" else FORMULA
    prov = {k: wprov for k in ("alpha0", "beta0", "beta1", "Gamma", "B_upper", "B_hat",
                               "beta_hat1", "beta_hat2", "L_high")}
    prov.update({f"gamma{i}": wprov for i in range(5)})
    bs = BoundSet(
        vbar=vbar, wind=wb, L_tilde=L_tilde, L_low=L_tilde, L_high=rho * L_tilde, R=R,
        alpha0=a0, alpha1=a1, beta0=beta[0], beta1=beta[1], beta2=beta[2], gammas=gam,
        Gamma=gamma_bar(gam, rho, L_tilde, R), B_upper=b_upper(beta, rho, L_tilde, R),
        beta_hat1=bh1, beta_hat2=bh2, B_hat=max(bh1, bh2),
        lemma_range_ok=wb.lemma_range_ok(vbar), B_lower_est=B_lower, c=c,
        u=None if u is None else np.asarray(u, dtype=float), provenance=prov,
    )
    if c is not None:
        prov["c"] = ESTIMATED
        if R < c:
            bs.kappa = kappa_of(R, c, wb, vbar, L_tilde)
            prov["kappa"] = ESTIMATED
    if B_lower is not None:
        prov["B_lower_est"] = ESTIMATED
        bs.omega2 = omega2_of(bs.B_hat, R)
        prov["omega2"] = wprov
        if bs.kappa is not None and B_lower > 0 and c is not None and c > 0:
            bs.omega1 = omega1_of(B_lower, bs.B_upper, R, bs.kappa)
            bs.omega = bs.omega1 * bs.omega2
            omegas_and_radius(bs)
            for k in ("omega1", "omega", "R_C"):
                prov[k] = ESTIMATED
    return bs


# radius selection ------------------------------------------------------------

def _caps(bs: BoundSet, R: float) -> dict[str, float]:
    B = bs.B_lower_est
    return {"Gamma": B / (2.0 * bs.gamma_at(R)), "B_lower/40": B / 40.0, "L_tilde/2": bs.L_tilde / 2.0}


def _admissible(bs: BoundSet, R: float) -> tuple[bool, str | None]:
    """Whether radius ``R`` meets every cap and ``omega < 2``; else the first failing condition."""
    for name, cap in _caps(bs, R).items():
        if not R < cap:
            return False, name
    if bs.c is None or not R < bs.c:
        return False, "c"
    k = bs.kappa_at(R)
    w = omega1_of(bs.B_lower_est, bs.b_upper_at(R), R, k) * omega2_of(bs.b_hat_at(R), R)
    if not w < 2.0:
        return False, "omega"
    return True, None


def omegas_and_radius(bs: BoundSet, grid: int = 400,
                      bisect_steps: int = 60) -> tuple[float, float, float, float]:
    """``(omega1, omega2, omega, R_C)`` at ``bs.R``; ``R_C`` is the largest admissible radius.

    A log-spaced grid locates the first inadmissible radius, bisection then
    sharpens it.  The condition that fails just above ``R_C`` is stored in
    ``bs.binding_cap``.
    """
    if bs.B_lower_est is None or not bs.B_lower_est > 0:
        raise ValueError("a positive coercivity estimate is required")
    if bs.c is None or not bs.c > 0:
        raise ValueError("a positive inf-sup direction constant c is required")
    top = min(bs.L_tilde, bs.c)
    Rs = top * np.logspace(-12, 0, grid)
    good, bad, why = 0.0, None, None
    for R in Rs:
        ok, reason = _admissible(bs, float(R))
        if not ok:
            bad, why = float(R), reason
            break
        good = float(R)
    if bad is None:
        bad = top
        why = "L_tilde/2"
    for _ in range(bisect_steps):
        mid = 0.5 * (good + bad)
        ok, reason = _admissible(bs, mid)
        if ok:
            good = mid
        else:
            bad, why = mid, reason
    bs.R_C = good if good > 0 else None
    bs.binding_cap = why
    if bs.kappa is None and bs.R < bs.c:
        bs.kappa = bs.kappa_at(bs.R)
    bs.omega1 = omega1_of(bs.B_lower_est, bs.B_upper, bs.R, bs.kappa)
    bs.omega2 = omega2_of(bs.B_hat, bs.R)
    bs.omega = bs.omega1 * bs.omega2
    return bs.omega1, bs.omega2, bs.omega, bs.R_C if bs.R_C is not None else 0.0


def default_radius(wb: WindBounds, vbar: float, L_tilde: float, B_lower: float,
                   factor: float = 0.99) -> float:
    """``factor`` times the largest ``R`` with ``R <= min(B/(2 Gamma(R)), B/40, L_tilde/2)``."""
    if not B_lower > 0:
        raise ValueError("coercivity estimate must be positive")
    _, _, rho = _speeds(wb, vbar)
    gam = gamma_constants(wb, vbar)

    def cap(R: float) -> float:
        return min(B_lower / (2.0 * gamma_bar(gam, rho, L_tilde, R)), B_lower / 40.0, L_tilde / 2.0)

    lo, hi = 0.0, L_tilde / 2.0
    if hi <= cap(hi):
        return factor * hi
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if mid <= cap(mid):
            lo = mid
        else:
            hi = mid
    return factor * lo


# coercivity ------------------------------------------------------------------

def z2_gram(N: int) -> np.ndarray:
    """Gram matrix of ``dL^2 + |dxi|_L2^2 + |dxi_tau|_L2^2`` in Direction coefficients."""
    n = N - 1
    mass = np.zeros((n, n))
    stiff = np.zeros((n, n))
    h = 1.0 / N
    for i in range(n):
        mass[i, i] = 4.0 * h / 6.0
        stiff[i, i] = 2.0 * N
        if i + 1 < n:
            mass[i, i + 1] = mass[i + 1, i] = h / 6.0
            stiff[i, i + 1] = stiff[i + 1, i] = -float(N)
    G = np.zeros((2 * n + 1, 2 * n + 1))
    G[0, 0] = 1.0
    G[1:, 1:] = np.kron(mass + stiff, np.eye(2))
    return G


def kernel_basis(chi: KKTIterate, field: WindField, vbar: float, Q: int = Q_DEFAULT):
    sys = assemble(chi, field, vbar, Q)
    if np.linalg.matrix_rank(sys.A) < sys.A.shape[0]:
        raise SingularSystemError("constraint Jacobian is rank deficient")
    return sys, sla.null_space(sys.A)


def estimate_coercivity(chi: KKTIterate, field: WindField, vbar: float, Q: int = Q_DEFAULT) -> float:
    """Smallest ``dz^T H dz / |dz|_Z2^2`` over the constraint kernel."""
    sys, Z = kernel_basis(chi, field, vbar, Q)
    if Z.shape[1] == 0:
        return math.inf
    M = Z.T @ z2_gram(chi.N) @ Z
    Hr = Z.T @ sys.H @ Z
    return float(np.min(sla.eigh(0.5 * (Hr + Hr.T), 0.5 * (M + M.T), eigvals_only=True)))


# witnesses -------------------------------------------------------------------

def default_direction(x_o, x_d) -> np.ndarray:
    x_o = np.asarray(x_o, dtype=float)
    x_d = np.asarray(x_d, dtype=float)
    return (x_d - x_o) / np.linalg.norm(x_d - x_o)


def direction_constant(z: State, u: np.ndarray) -> float:
    """``min_i xi_tau_i . u``."""
    return float(np.min(z.path.velocities @ np.asarray(u, dtype=float)))


def _direction_from_velocities(dL: float, dvel: np.ndarray) -> Direction:
    N = dvel.shape[0]
    nodes = np.cumsum(dvel / N, axis=0)
    return Direction(dL, nodes[:-1])


def regularity_witness(z: State, rhs, u, c: float | None = None, tol: float = 1e-10) -> Direction:
    """A direction ``dz`` with ``h'(z)[dz] = rhs``."""
    u = np.asarray(u, dtype=float)
    rhs = np.asarray(getattr(rhs, "values", rhs), dtype=float)
    if rhs.shape != (z.N,):
        raise WitnessError(f"rhs must have {z.N} entries")
    b = z.path.velocities @ u
    floor = 0.0 if c is None else c
    if np.any(b <= 0.0) or np.any(b < floor):
        raise WitnessError(f"xi_tau.u = {float(np.min(b))} not above {floor}")
    L = z.L
    dL = -np.mean(rhs / (2.0 * b)) / (L * np.mean(1.0 / b))
    dvel = ((rhs / 2.0 + L * dL) / b)[:, None] * u[None, :]
    d = _direction_from_velocities(dL, dvel)
    scale = max(1.0, float(np.max(np.abs(rhs))))
    err = float(np.max(np.abs(constraint_d1(z, d) - rhs)))
    if err > tol * scale * max(1.0, L):
        raise WitnessError(f"surjectivity residual {err:.3e}")
    return d


@dataclass(frozen=True)
class InfSupCheck:
    direction: Direction
    pairing: float
    lam_l2: float
    dz_z2: float

    @property
    def ratio(self) -> float:
        if self.lam_l2 == 0.0:
            return math.inf
        return self.pairing / (self.lam_l2 * self.dz_z2)


def infsup_pairing(z: State, lam, d: Direction) -> float:
    lam = np.asarray(getattr(lam, "values", lam), dtype=float)
    return float(np.sum(lam * constraint_d1(z, d)) / z.N)


def infsup_witness(z: State, lam, u, c: float, R: float = 0.0, kappa: float | None = None) -> InfSupCheck:
    """Direction realizing the inf-sup lower bound for the multiplier ``lam``.

    Checks on return that the pairing is at least ``(c-R) |lam|^2`` and, when
    ``kappa`` is given, that the ratio reaches it.
    """
    u = np.asarray(u, dtype=float)
    lam = np.asarray(getattr(lam, "values", lam), dtype=float)
    if lam.shape != (z.N,):
        raise WitnessError(f"multiplier must have {z.N} entries")
    b = z.path.velocities @ u
    if np.any(b < (c - R) * (1.0 - 1e-12)):
        raise WitnessError(f"xi_tau.u = {float(np.min(b))} below c-R = {c - R}")
    L = z.L
    lam_t = lam - np.mean(lam)
    dvel = 0.5 * lam_t[:, None] * u[None, :]
    dL = (np.mean(b * lam_t) - (c - R) * np.mean(lam)) / (2.0 * L)
    d = _direction_from_velocities(dL, dvel)
    pair = infsup_pairing(z, lam, d)
    lam2 = l2_sq_interval(lam)
    out = InfSupCheck(d, pair, math.sqrt(lam2), math.sqrt(hilbert_z2_sq(d)))
    slack = 1e-12 * max(1.0, abs(pair))
    if pair < (c - R) * lam2 - slack:
        raise WitnessError(f"pairing {pair} below (c-R)|lam|^2 = {(c - R) * lam2}")
    if kappa is not None and lam2 > 0 and out.ratio < kappa * (1.0 - 1e-12):
        raise WitnessError(f"inf-sup ratio {out.ratio} below kappa {kappa}")
    return out


# violation search ------------------------------------------------------------

@dataclass
class CheckStats:
    samples: int = 0
    violations: int = 0
    max_ratio: float = 0.0

    def add(self, lhs: np.ndarray, rhs: np.ndarray, rtol: float = 1e-9) -> None:
        lhs = np.abs(np.asarray(lhs, dtype=float)).ravel()
        rhs = np.asarray(rhs, dtype=float).ravel()
        self.samples += lhs.size
        self.violations += int(np.sum(lhs > rhs * (1.0 + rtol) + 1e-300))
        pos = rhs > 0
        if np.any(pos):
            self.max_ratio = max(self.max_ratio, float(np.max(lhs[pos] / rhs[pos])))

    def to_json(self) -> dict:
        return {"samples": self.samples, "violations": self.violations, "max_ratio": self.max_ratio}


CHECKS = ("alpha", "beta", "gamma", "Gamma", "B_upper", "Lzz", "general")


@dataclass
class ViolationReport:
    checks: dict[str, CheckStats]
    skipped: int
    gamma_scale: float
    seed: int
    control: dict[str, CheckStats] | None = None
    control_scale: float | None = None

    @property
    def total_violations(self) -> int:
        return sum(c.violations for c in self.checks.values())

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "gamma_scale": self.gamma_scale,
            "skipped_outside_domain": self.skipped,
            "total_violations": self.total_violations,
            "checks": {k: v.to_json() for k, v in self.checks.items()},
            **({} if self.control is None else {
                "control": {"scale": self.control_scale,
                            "violations": sum(c.violations for c in self.control.values()),
                            "checks": {k: v.to_json() for k, v in self.control.items()}}}),
        }


def _sample_in_ellipse(dom: Ellipse, n: int, rng: np.random.Generator) -> np.ndarray:
    center, axis, a, b = dom.frame()
    perp = np.array([-axis[1], axis[0]])
    r = np.sqrt(rng.uniform(0, 1, n))
    t = rng.uniform(0, 2 * np.pi, n)
    return center + (a * r * np.cos(t))[:, None] * axis + (b * r * np.sin(t))[:, None] * perp


def _rand_vec(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.standard_normal((n, 2))
    return v * np.exp(rng.uniform(-3, 3, (n, 1)))


def _pointwise(bs: BoundSet, field: WindField, vbar: float, n: int, L_lo: float, L_hi: float,
               rng: np.random.Generator, stats: dict[str, CheckStats], gamma_scale: float,
               control: tuple[float, dict[str, CheckStats]] | None = None) -> None:
    dom = bs.wind.domain
    xi = _sample_in_ellipse(dom, n, rng)
    speed = rng.uniform(L_lo, L_hi, n)
    ang = rng.uniform(0, 2 * np.pi, n)
    xt = speed[:, None] * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    k = make_kernel(field, xi, xt, vbar)
    d = (_rand_vec(rng, n), _rand_vec(rng, n))
    e = (_rand_vec(rng, n), _rand_vec(rng, n))
    D = (_rand_vec(rng, n), _rand_vec(rng, n))
    nrm = lambda v: np.linalg.norm(v, axis=1)  # noqa: E731
    s = nrm(xt)
    dx, dt, ex, et, Dx, Dt = (nrm(v) for v in (*d, *e, *D))
    stats["alpha"].add(kernel_d1(k, d), bs.alpha0 * s * dx + bs.alpha1 * dt)
    stats["beta"].add(kernel_d2(k, d, e),
                      bs.beta0 * s * dx * ex + bs.beta1 * (dx * et + dt * ex) + bs.beta2 * dt * et / s)
    g0, g1, g2, g3, g4, g5 = (gamma_scale * g for g in bs.gammas)
    rhs = ((g0 * s * dx**2 + g2 * dx * dt + g4 * dt**2 / s) * Dx
           + (g1 * dx**2 + g3 * dx * dt / s + g5 * dt**2 / s**2) * Dt)
    lhs = kernel_d3(k, d, D)
    stats["gamma"].add(lhs, rhs)
    if control is not None:
        control[1]["gamma"].add(lhs, control[0] / gamma_scale * rhs)


def _random_direction(N: int, rng: np.random.Generator) -> Direction:
    """Smooth (few sine modes), white-noise or zigzag node displacements."""
    kind = rng.integers(0, 3)
    tau = np.linspace(0, 1, N + 1)[1:-1]
    if kind == 0:
        nodes = np.zeros((N - 1, 2))
        for m in range(1, int(rng.integers(1, 4)) + 1):
            nodes += rng.standard_normal(2)[None, :] * np.sin(m * np.pi * tau)[:, None]
    elif kind == 1:
        nodes = rng.standard_normal((N - 1, 2))
    else:
        sign = (-1.0) ** np.arange(N - 1)
        nodes = sign[:, None] * rng.standard_normal(2)[None, :]
    return Direction(rng.standard_normal(), nodes)


def _zinf(d: Direction) -> float:
    return abs(d.dL) + float(np.max(np.linalg.norm(d.nodes, axis=1))) + float(
        np.max(np.linalg.norm(d.velocities, axis=1)))


def third_derivative_matrix(z: State, field: WindField, vbar: float, D: Direction,
                            Q: int = Q_DEFAULT) -> np.ndarray:
    """Matrix of the third derivative of T along ``D`` on the interior node coefficients."""
    N = z.N
    k = path_kernel(z.path, field, vbar, Q)
    Dp = _points(D.nodes, Q)
    units = _unit_pairs(k.xi.shape)
    diag = [kernel_d3(k, u, Dp) for u in units]
    loc = np.empty(k.xi.shape[:-1] + (4, 4))
    for a in range(4):
        loc[..., a, a] = diag[a]
        for b in range(a + 1, 4):
            s = (units[a][0] + units[b][0], units[a][1] + units[b][1])
            v = 0.5 * (kernel_d3(k, s, Dp) - diag[a] - diag[b])
            loc[..., a, b] = v
            loc[..., b, a] = v
    J = _local_jacobian(N, Q)
    node = np.einsum("qai,nqab,qbj->nij", J, loc, J) / (N * Q)
    full = np.zeros((2 * (N + 1),) * 2)
    for i in range(N):
        full[2 * i:2 * i + 4, 2 * i:2 * i + 4] += node[i]
    M = full[2:-2, 2:-2]
    return 0.5 * (M + M.T)


def _worst_direction(M: np.ndarray, G: np.ndarray) -> Direction:
    """Interior displacement maximizing ``|v^T M v| / v^T G v``."""
    w, V = sla.eigh(M, G)
    v = V[:, int(np.argmax(np.abs(w)))]
    return Direction(0.0, v.reshape(-1, 2))


def _path_checks(bs: BoundSet, field: WindField, vbar: float, chi_star: KKTIterate, R: float,
                 rng: np.random.Generator, stats: dict[str, CheckStats], gamma_scale: float,
                 Q: int, adversarial: bool = False, uniform: bool = False,
                 control: tuple[float, dict[str, CheckStats]] | None = None) -> bool:
    """One state in the neighbourhood; ``adversarial`` picks worst-case test directions.

    States leaving the bound domain are skipped unless the field is ``uniform``,
    whose constants hold everywhere.
    """
    N = chi_star.N
    G = z2_gram(N)[1:, 1:]
    off = _random_direction(N, rng)
    share = rng.uniform(0.05, 0.95)
    off = off.scaled(share * R * rng.uniform(0, 1) / _zinf(off))
    z = chi_star.z.plus(off)
    lam = chi_star.lam.values + rng.uniform(-1, 1, N) * (1 - share) * R
    pts, _ = _points(z.path.nodes, Q)
    if not uniform and not np.all(bs.wind.domain.contains(pts.reshape(-1, 2), rtol=1e-12)):
        return False
    L_star = chi_star.z.L
    vel = np.linalg.norm(z.path.velocities, axis=1)
    gen = stats["general"]
    gen.add(np.array([z.L - L_star]), np.array([R]))
    gen.add(vel - L_star, np.full(N, R))
    gen.add(lam - chi_star.lam.values, np.full(N, R))

    if adversarial:
        dz = _worst_direction(third_derivative_matrix(z, field, vbar, off, Q), G)
    else:
        dz = Direction(0.0, _random_direction(N, rng).dnodes)
    t3 = travel_time_directional(z, field, vbar, [dz, dz, off], Q)
    dl2 = l2_sq_nodal(dz.nodes) + l2_sq_interval(dz.velocities)
    Dinf = float(np.max(np.linalg.norm(off.nodes, axis=1))) + float(np.max(np.linalg.norm(off.velocities, axis=1)))
    stats["Gamma"].add(np.array([t3]), np.array([gamma_scale * bs.Gamma * dl2 * Dinf]))
    if control is not None:
        control[1]["Gamma"].add(np.array([t3]), np.array([control[0] * bs.Gamma * dl2 * Dinf]))

    if adversarial:
        e = _worst_direction(travel_time_derivatives(z, field, vbar, 2, Q)[1:, 1:], G)
    else:
        e = _random_direction(N, rng)
    t2 = travel_time_directional(z, field, vbar, [e, e], Q)
    el2 = l2_sq_nodal(e.nodes) + l2_sq_interval(e.velocities)
    stats["B_upper"].add(np.array([t2]), np.array([bs.B_upper * el2]))
    lzz = t2 + float(np.sum(lam * constraint_d2(e, e))) / N
    stats["Lzz"].add(np.array([lzz]), np.array([(bs.B_upper + 2.0 * R) * hilbert_z2_sq(e)]))
    return True


def violation_search(bs: BoundSet, field: WindField, vbar: float, sample_budget: int, seed: int,
                     chi_star: KKTIterate, gamma_scale: float = 1.0, path_share: float = 0.02,
                     Q: int = Q_DEFAULT, control_scale: float | None = None) -> ViolationReport:
    """Random check of every derivative bound around the optimum ``chi_star``.

    ``sample_budget`` pointwise kernel samples are drawn for each of the
    ``f', f'', f'''`` bounds; ``path_share`` of that many states in the
    radius-``bs.R`` neighbourhood are drawn for the travel-time bounds, every
    fourth one tested along the extremal generalized eigenvector.
    ``gamma_scale`` multiplies the third-derivative constants, so values far
    below 1 must produce violations. ``control_scale`` additionally scores the
    same samples against third-derivative constants scaled by that factor,
    reported separately and excluded from ``total_violations``.
    """
    if bs.wind.domain is None:
        raise ValueError("bound set carries no domain")
    rng = np.random.default_rng(seed)
    stats = {k: CheckStats() for k in CHECKS}
    control = None if control_scale is None else (
        control_scale, {"gamma": CheckStats(), "Gamma": CheckStats()})
    R = bs.R
    L_star = chi_star.z.L
    lo, hi = max(L_star - R, 1e-12), L_star + R
    left = sample_budget
    while left > 0:
        n = min(left, 20000)
        _pointwise(bs, field, vbar, n, lo, hi, rng, stats, gamma_scale, control)
        left -= n
    n_path = max(1, int(sample_budget * path_share))
    uniform = field.kind == "constant"
    skipped = 0
    for i in range(n_path):
        if not _path_checks(bs, field, vbar, chi_star, R, rng, stats, gamma_scale, Q,
                            adversarial=i % 4 == 3, uniform=uniform, control=control):
            skipped += 1
    return ViolationReport(stats, skipped, gamma_scale, seed,
                           None if control is None else control[1], control_scale)


def for_optimum(chi_star: KKTIterate, wb: WindBounds, vbar: float, field: WindField,
                R: float | None = None, u=None, Q: int = Q_DEFAULT) -> BoundSet:
    """Bound set at a converged optimum with estimated ``B_lower``, ``c`` and default ``R``."""
    p = chi_star.z.path
    L_tilde = float(np.linalg.norm(p.x_d - p.x_o))
    u = default_direction(p.x_o, p.x_d) if u is None else np.asarray(u, dtype=float)
    c = direction_constant(chi_star.z, u)
    B = estimate_coercivity(chi_star, field, vbar, Q)
    if R is None:
        R = default_radius(wb, vbar, L_tilde, B) if B > 0 else 0.0
    return compute_constants(wb, vbar, L_tilde, R, B_lower=B if B > 0 else None, c=c, u=u,
                             L_star=chi_star.z.L)

