import math

import numpy as np
import pytest

from oracles import dense_solve
from windnav.cli import perturbed_start
from windnav.errors import DiagnosticsError, SingularSystemError
from windnav.functional import KKTIterate, Multiplier, lagrangian_grad, travel_time_derivatives
from windnav.kkt_solver import (
    KKTSystem,
    SolveOptions,
    assemble,
    constraint_inf_norm,
    contraction_diagnostics,
    newton_step,
    reduced_hessian_min_eig,
    solve,
)
from windnav.trajectory import Direction, straight_line
from windnav.verification import random_state
from windnav.windfield import WindField

ZERO = WindField.zero()


def start(N, x_d=(1.0, 0.0)):
    return KKTIterate.from_state(straight_line((0, 0), x_d, N))


def test_assemble_without_multiplier_uses_hessian(vortex_field):
    z = random_state((0, 0), (1, 0), 8, np.random.default_rng(0))
    sys = assemble(KKTIterate.from_state(z), vortex_field, 1.0)
    assert np.array_equal(sys.H, travel_time_derivatives(z, vortex_field, 1.0, 2))


def test_assemble_feasible_rhs_lambda_zero(vortex_field):
    chi = KKTIterate(straight_line((0, 0), (3, 4), 4), Multiplier(np.arange(4.0)))
    assert not np.any(assemble(chi, vortex_field, 1.0).rhs_lam)


@pytest.mark.parametrize("seed", range(3))
def test_assembled_blocks_match_differences(vortex_field, seed):
    rng = np.random.default_rng(seed)
    z = random_state((0, 0), (1, 0), 6, rng)
    chi = KKTIterate(z, Multiplier(0.1 * rng.normal(size=6)))
    sys = assemble(chi, vortex_field, 1.0)
    d = Direction(rng.normal(), rng.normal(size=(5, 2)) / 6)
    h = 1e-5

    def grad(s):
        r = lagrangian_grad(KKTIterate(z.plus(d, s), chi.lam), vortex_field, 1.0)
        return r.grad_z, r.grad_lambda

    (gp, hp), (gm, hm) = grad(h), grad(-h)
    fd_H = (gp - gm) / (2 * h)
    fd_A = (hp - hm) / (2 * h)
    exact_H = sys.H @ d.to_vector()
    assert np.max(np.abs(fd_H - exact_H)) <= 1e-5 * np.max(np.abs(exact_H))
    assert np.max(np.abs(fd_A - sys.A @ d.to_vector())) <= 1e-5 * np.max(np.abs(fd_A))


def test_kkt_matrix_structure(vortex_field):
    chi = KKTIterate(random_state((0, 0), (1, 0), 8, np.random.default_rng(4)), Multiplier(np.linspace(-1, 1, 8)))
    K = assemble(chi, vortex_field, 1.0).matrix()
    nz = 2 * 7 + 1
    assert np.array_equal(K, K.T)
    assert not np.any(K[nz:, nz:])


def test_zero_rhs_gives_zero_step():
    sys = assemble(start(4), ZERO, 1.0)
    step = newton_step(sys)
    assert not np.any(step.to_vector())


def test_newton_step_against_dense_inverse():
    chi = KKTIterate(random_state((0, 0), (1, 0), 2, np.random.default_rng(1), amp=0.2), Multiplier(np.array([0.1, -0.2])))
    sys = assemble(chi, ZERO, 1.0)
    step = newton_step(sys)
    ref = dense_solve(sys.matrix(), sys.rhs())
    assert np.max(np.abs(step.to_vector() - ref)) <= 1e-12


@pytest.mark.parametrize("s", [-3.0, 0.5, 1e3])
def test_newton_step_is_linear_in_rhs(vortex_field, s):
    chi = KKTIterate(random_state((0, 0), (1, 0), 8, np.random.default_rng(2)), Multiplier.zeros(8))
    sys = assemble(chi, vortex_field, 1.0)
    scaled = KKTSystem(sys.H, sys.A, s * sys.rhs_z, s * sys.rhs_lam)
    a, b = newton_step(sys).to_vector(), newton_step(scaled).to_vector()
    assert np.allclose(b, s * a, rtol=1e-10, atol=1e-14 * abs(s))


def test_singular_saddle_system_detected():
    A = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    sys = KKTSystem(np.zeros((3, 3)), A, np.ones(3), np.ones(2))
    with pytest.raises(SingularSystemError):
        newton_step(sys)


def test_rank_deficient_jacobian_detected():
    sys = KKTSystem(np.eye(3), np.ones((2, 3)), np.ones(3), np.ones(2))
    with pytest.raises(SingularSystemError):
        newton_step(sys)


def test_solver_reports_singular_status(monkeypatch, vortex_field):
    import windnav.kkt_solver as ks

    def boom(sys):
        raise SingularSystemError("forced")

    monkeypatch.setattr(ks, "newton_step", boom)
    z = random_state((0, 0), (1, 0), 8, np.random.default_rng(0))
    rep = solve(KKTIterate.from_state(z), vortex_field, 1.0)
    assert rep.status == "singular"
    assert rep.final is rep.iterates[0]


def test_optimum_converges_immediately():
    rep = solve(start(16), ZERO, 1.0)
    assert rep.status == "converged"
    assert rep.iterations == 0
    assert rep.T == pytest.approx(1.0, rel=1e-15)


def test_perturbed_still_air_returns_to_segment():
    rng = np.random.default_rng(3)
    z = straight_line((0, 0), (1, 0), 16)
    pert = rng.uniform(-1, 1, (15, 2))
    pert *= 0.05 / np.max(np.abs(pert))
    rep = solve(KKTIterate.from_state(z.plus(Direction(0.0, pert))), ZERO, 1.0)
    assert rep.converged
    assert np.max(np.abs(rep.final.z.path.nodes - z.path.nodes)) <= 1e-8


@pytest.mark.parametrize("c", [0.2, 1 / 3, 0.6])
def test_tailwind_optimum(c):
    rep = solve(start(16, (2.0, 0.0)), WindField.constant((c, 0.0)), 1.0)
    assert rep.converged
    assert rep.T == pytest.approx(2.0 / (1.0 + c), rel=1e-9)


@pytest.mark.parametrize("c", [0.3, 0.7])
def test_crosswind_optimum(c):
    rep = solve(start(16), WindField.constant((0.0, c)), 1.0)
    assert rep.converged
    assert rep.T == pytest.approx(1.0 / math.sqrt(1.0 - c * c), rel=1e-6)


def test_local_uniqueness_from_two_starts(vortex_run, vortex_scenario):
    sc = vortex_scenario
    rng = np.random.default_rng(0)
    Ts = []
    for radius in (0.02, 0.05):
        rep = solve(perturbed_start(vortex_run.final, radius, rng), sc.wind, sc.vbar, sc.solver, sc.L_tilde)
        assert rep.converged
        Ts.append(rep.T)
    assert abs(Ts[0] - Ts[1]) <= 1e-10
    assert abs(Ts[0] - vortex_run.T) <= 1e-10


def test_vortex_run_structure(vortex_run, vortex_scenario):
    assert vortex_run.converged
    assert constraint_inf_norm(vortex_run.final) <= 1e-8
    assert reduced_hessian_min_eig(vortex_run.final, vortex_scenario.wind, vortex_scenario.vbar) > 0.0


def test_contraction_ratios(vortex_run):
    diag = contraction_diagnostics(vortex_run)
    assert diag.all_contracting
    assert diag.ratios[-1] <= diag.ratios[0]
    assert len(diag.yinf_distances) == len(vortex_run.iterates)
    assert diag.yinf_distances[-1] == 0.0
    assert diag.max_yinf_distance == diag.yinf_distances[0]


def test_diagnostics_need_iterates():
    with pytest.raises(DiagnosticsError):
        contraction_diagnostics(solve(start(8), ZERO, 1.0))


def test_damped_residual_non_increasing():
    field = WindField.gaussian_vortex((0.5, 0.0), 6.0, 0.12)
    rep = solve(start(32), field, 1.0, SolveOptions(damping="armijo-halving"))
    res = [r.residual_norm for r in rep.records]
    assert all(b <= a for a, b in zip(res[:-1], res[1:]))
    assert rep.converged


def test_grid_refinement_second_order():
    field = WindField.gaussian_vortex((0.5, 0.0), 0.3, 0.5)
    Ts = [solve(start(N), field, 1.0).T for N in (8, 16, 32)]
    ratio = (Ts[0] - Ts[1]) / (Ts[1] - Ts[2])
    assert 3.0 <= ratio <= 5.0


def test_csv_rows_and_tolerance_defaults():
    rep = solve(start(8), WindField.constant((0.0, 0.3)), 1.0)
    assert rep.csv_rows()[0][0] == 0
    assert rep.tol == pytest.approx(1e-10 + 1e-12 * rep.records[0].residual_norm)


def test_solve_options_validation():
    with pytest.raises(ValueError):
        SolveOptions(damping="linesearch")
    with pytest.raises(ValueError):
        SolveOptions(tol_abs=0.0)
