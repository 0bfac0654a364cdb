"""Newton-KKT iteration for the constant-speed travel-time problem."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field as dc_field, replace

import numpy as np
import scipy.linalg as sla

from .errors import DiagnosticsError, SingularSystemError, SpeedBelowFloorError, WindNavError
from .functional import (
    Q_DEFAULT,
    KKTIterate,
    KKTStep,
    Multiplier,
    constraint,
    constraint_hessian_weighted,
    constraint_jacobian,
    lagrangian_grad,
    travel_time,
    travel_time_derivatives,
)
from .trajectory import Direction, norm
from .windfield import WindField

log = logging.getLogger(__name__)

DAMPING_MODES = ("none", "armijo-halving")
MU_MIN = 2.0**-20


@dataclass(frozen=True)
class SolveOptions:
    tol_abs: float | None = None
    tol_rel: float = 1e-12
    max_iter: int = 50
    damping: str = "none"
    speed_floor: float | None = None
    Q: int = Q_DEFAULT

    def __post_init__(self) -> None:
        if self.damping not in DAMPING_MODES:
            raise ValueError(f"damping must be one of {DAMPING_MODES}")
        if self.tol_abs is not None and not self.tol_abs > 0:
            raise ValueError("tol_abs must be positive")
        if not self.tol_rel > 0:
            raise ValueError("tol_rel must be positive")
        if self.max_iter < 0:
            raise ValueError("max_iter must be nonnegative")

    def resolved(self, L_tilde: float, vbar: float) -> "SolveOptions":
        """Fill scenario-dependent defaults."""
        return replace(
            self,
            tol_abs=1e-10 * L_tilde / vbar if self.tol_abs is None else self.tol_abs,
            speed_floor=1e-6 * L_tilde if self.speed_floor is None else self.speed_floor,
        )


@dataclass(frozen=True)
class KKTSystem:
    """Blocks of the Newton system.

    The constraint pairing is the L2 inner product of interval-constant
    functions, so both off-diagonal blocks carry the weight ``1/N`` and the
    multiplier equation is scaled the same way.  This keeps the matrix
    symmetric while ``A`` holds the plain per-interval derivatives ``h_i'``.
    """

    H: np.ndarray
    A: np.ndarray
    rhs_z: np.ndarray
    rhs_lam: np.ndarray

    @property
    def weight(self) -> float:
        return 1.0 / self.A.shape[0]

    def matrix(self) -> np.ndarray:
        nz, m = self.H.shape[0], self.A.shape[0]
        K = np.zeros((nz + m, nz + m))
        K[:nz, :nz] = self.H
        K[:nz, nz:] = self.weight * self.A.T
        K[nz:, :nz] = self.weight * self.A
        return K

    def rhs(self) -> np.ndarray:
        return np.concatenate([self.rhs_z, self.weight * self.rhs_lam])


def _min_speed(chi: KKTIterate) -> float:
    return float(np.min(np.linalg.norm(chi.z.path.velocities, axis=1)))


def assemble(chi: KKTIterate, field: WindField, vbar: float, Q: int = Q_DEFAULT,
             speed_floor: float = 0.0) -> KKTSystem:
    vmin = _min_speed(chi)
    if vmin <= 0.0 or vmin < speed_floor:
        raise SpeedBelowFloorError(f"interval speed {vmin} below floor {speed_floor}")
    N = chi.N
    H = travel_time_derivatives(chi.z, field, vbar, 2, Q)
    H = H + constraint_hessian_weighted(chi.lam.values / N, N)
    res = lagrangian_grad(chi, field, vbar, Q)
    return KKTSystem(0.5 * (H + H.T), constraint_jacobian(chi.z), -res.grad_z, -res.grad_lambda)


def newton_step(sys: KKTSystem) -> KKTStep:
    """Solve the saddle system with a Bunch-Kaufman (LAPACK sysv) factorization."""
    nz, m = sys.H.shape[0], sys.A.shape[0]
    N = m
    if np.linalg.matrix_rank(sys.A) < m:
        raise SingularSystemError("constraint Jacobian is rank deficient")
    K = sys.matrix()
    b = sys.rhs()
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return KKTStep(Direction.zeros(N), Multiplier.zeros(N))
    with warnings.catch_warnings():
        warnings.simplefilter("error", sla.LinAlgWarning)
        try:
            x = sla.solve(K, b, assume_a="sym")
            r = b - K @ x
            if np.linalg.norm(r) > 1e-10 * bnorm:
                x = x + sla.solve(K, r, assume_a="sym")
        except (np.linalg.LinAlgError, sla.LinAlgWarning) as exc:
            raise SingularSystemError(f"saddle factorization failed: {exc}") from exc
    r = b - K @ x
    if not np.all(np.isfinite(x)) or np.linalg.norm(r) > 1e-10 * bnorm:
        raise SingularSystemError(f"linear solve residual {np.linalg.norm(r):.3e} too large")
    return KKTStep(Direction.from_vector(x[:nz], N), Multiplier(x[nz:]))


@dataclass
class IterRecord:
    iteration: int
    residual_norm: float
    step_norm: float
    mu: float
    T: float
    feasibility: float
    y2_to_final: float = math.nan


@dataclass
class SolveReport:
    records: list[IterRecord]
    status: str
    final: KKTIterate
    iterates: list[KKTIterate] = dc_field(repr=False)
    tol: float = math.nan
    message: str = ""

    @property
    def iterations(self) -> int:
        return len(self.iterates) - 1

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def T(self) -> float:
        return self.records[-1].T

    def csv_rows(self) -> list[tuple]:
        return [(r.iteration, r.residual_norm, r.step_norm, r.mu, r.T, r.feasibility) for r in self.records]


CSV_HEADER = ("iter", "residual", "step_norm", "mu", "T", "feasibility")


def _evaluate(chi: KKTIterate, field: WindField, vbar: float, Q: int) -> tuple[float, float]:
    res = lagrangian_grad(chi, field, vbar, Q).norm()
    return res, travel_time(chi.z, field, vbar, Q)


def solve(chi0: KKTIterate, field: WindField, vbar: float, opts: SolveOptions | None = None,
          L_tilde: float | None = None) -> SolveReport:
    """Run Newton-KKT from ``chi0`` until the residual drops below tolerance."""
    opts = opts or SolveOptions()
    if L_tilde is None:
        p = chi0.z.path
        L_tilde = float(np.linalg.norm(p.x_d - p.x_o)) or chi0.z.L
    opts = opts.resolved(L_tilde, vbar)
    Q = opts.Q
    chi = chi0
    try:
        res, T = _evaluate(chi, field, vbar, Q)
    except WindNavError as exc:
        rec = IterRecord(0, math.nan, math.nan, math.nan, math.nan, chi.z.feasibility_residual())
        return SolveReport([rec], "infeasible-kernel", chi, [chi], math.nan, str(exc))
    tol = opts.tol_abs + opts.tol_rel * res
    records: list[IterRecord] = []
    iterates = [chi]
    status = "max_iter"
    message = ""
    for it in range(opts.max_iter + 1):
        rec = IterRecord(it, res, math.nan, math.nan, T, chi.z.feasibility_residual())
        records.append(rec)
        if res <= tol:
            status = "converged"
            break
        if it == opts.max_iter:
            break
        try:
            step = newton_step(assemble(chi, field, vbar, Q, opts.speed_floor))
        except SingularSystemError as exc:
            status, message = "singular", str(exc)
            break
        except WindNavError as exc:
            status, message = "infeasible-kernel", str(exc)
            break
        rec.step_norm = norm(step, "Y2")
        mu = 1.0
        accepted = False
        while mu >= MU_MIN:
            try:
                trial = chi.plus(step, mu)
                tres, tT = _evaluate(trial, field, vbar, Q)
                ok = np.isfinite(tres) and (opts.damping == "none" or tres < res)
            except WindNavError as exc:
                ok, message = False, str(exc)
            if ok:
                accepted = True
                break
            if opts.damping == "none":
                break
            mu *= 0.5
        if not accepted:
            status = "infeasible-kernel"
            message = message or "no step length decreased the residual"
            break
        rec.mu = mu
        chi, res, T = trial, tres, tT
        iterates.append(chi)
        log.debug("iter %d residual %.3e mu %g", it + 1, res, mu)
    for rec, x in zip(records, iterates):
        rec.y2_to_final = norm(x.minus(chi), "Y2")
    return SolveReport(records, status, chi, iterates, tol, message)


@dataclass
class ContractionDiagnostics:
    errors: list[float]
    ratios: list[float]
    quadratic_quotients: list[float]
    yinf_distances: list[float] = dc_field(default_factory=list)

    @property
    def max_yinf_distance(self) -> float:
        """Largest L-infinity distance of an iterate from the reference, checked after the fact."""
        return max(self.yinf_distances, default=0.0)

    @property
    def all_contracting(self) -> bool:
        return all(r < 1.0 for r in self.ratios)

    @property
    def tail_decreasing(self) -> bool:
        return len(self.ratios) >= 2 and self.ratios[-1] < self.ratios[-2]


def contraction_diagnostics(report: SolveReport, reference: KKTIterate | None = None,
                            noise_floor: float | None = None) -> ContractionDiagnostics:
    """Observed ratios ``|e_{k+1}|_Y2 / |e_k|_Y2`` against ``reference`` (default: final iterate).

    Errors at or below ``noise_floor`` (default ``1e-12`` times the Y2 size of
    the reference) carry no information and end the sequence.
    """
    if report.status != "converged" or len(report.iterates) < 3:
        raise DiagnosticsError("need a converged run with at least three iterates")
    ref = reference if reference is not None else report.final
    if noise_floor is None:
        noise_floor = 1e-12 * max(norm(ref, "Y2"), 1.0)
    errs = [norm(x.minus(ref), "Y2") for x in report.iterates]
    used = []
    for e in errs:
        if e <= noise_floor:
            break
        used.append(e)
    ratios = [b / a for a, b in zip(used[:-1], used[1:])]
    quads = [b / a**2 for a, b in zip(used[:-1], used[1:])]
    yinf = [norm(x.minus(ref), "Yinf") for x in report.iterates]
    return ContractionDiagnostics(errs, ratios, quads, yinf)


def reduced_hessian_min_eig(chi: KKTIterate, field: WindField, vbar: float, Q: int = Q_DEFAULT) -> float:
    """Smallest eigenvalue of ``Z^T H Z`` with ``Z`` an orthonormal basis of ``ker h'``."""
    sys = assemble(chi, field, vbar, Q)
    Z = sla.null_space(sys.A)
    if Z.shape[1] == 0:
        return math.inf
    return float(np.min(np.linalg.eigvalsh(Z.T @ sys.H @ Z)))


def constraint_inf_norm(chi: KKTIterate) -> float:
    return float(np.max(np.abs(constraint(chi.z))))
