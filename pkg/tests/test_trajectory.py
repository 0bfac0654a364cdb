import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import dense_l2, point_at_arclength
from windnav.errors import DegenerateGeometryError, ShapeMismatchError
from windnav.functional import KKTIterate, Multiplier
from windnav.trajectory import (
    Direction,
    Ellipse,
    Path,
    State,
    ellipse_domain,
    norm,
    reparametrize_constant_speed,
    resample,
    straight_line,
)

L_SHAPE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])


def test_straight_line_unit():
    z = straight_line((0, 0), (1, 0), 4)
    assert np.allclose(z.path.interior, [[0.25, 0], [0.5, 0], [0.75, 0]], atol=0)
    assert z.L == 1.0
    assert z.is_feasible()


def test_straight_line_345():
    z = straight_line((0, 0), (3, 4), 2)
    assert np.array_equal(z.path.interior, [[1.5, 2.0]])
    assert z.L == 5.0


def test_straight_line_single_interval():
    z = straight_line((1, 1), (4, 5), 1)
    assert z.path.interior.shape == (0, 2)
    assert z.L == 5.0


def test_straight_line_rejects_coincident_endpoints():
    with pytest.raises(DegenerateGeometryError):
        straight_line((1, 1), (1, 1), 4)
    with pytest.raises(ShapeMismatchError):
        straight_line((0, 0), (1, 0), 0)


def test_velocities_are_interval_constant():
    p = Path.from_nodes(np.array([[0, 0], [1, 0], [1, 2], [3, 2]], dtype=float))
    assert np.array_equal(p.velocities, 3 * np.array([[1, 0], [0, 2], [2, 0]]))


def test_reparametrize_quadratic_sampling():
    tau = np.linspace(0, 1, 5)
    p = Path.from_nodes(np.stack([tau**2, 0 * tau], axis=1))
    z = reparametrize_constant_speed(p)
    assert np.allclose(z.path.interior, [[0.25, 0], [0.5, 0], [0.75, 0]], atol=1e-15)
    assert z.L == pytest.approx(1.0, abs=1e-15)


def test_reparametrize_idempotent():
    z = straight_line((0, 0), (2, 1), 6)
    again = reparametrize_constant_speed(z.path)
    assert np.allclose(again.path.nodes, z.path.nodes, atol=1e-12)
    assert again.L == pytest.approx(z.L, abs=1e-12)


def test_reparametrize_l_shape_against_arclength_table():
    z = reparametrize_constant_speed(Path.from_nodes(L_SHAPE), 4)
    assert z.L == pytest.approx(2.0, abs=1e-12)
    expected = [point_at_arclength(L_SHAPE, s) for s in (0.5, 1.0, 1.5)]
    assert np.allclose(z.path.interior, expected, atol=1e-12)
    assert z.is_feasible()


def test_reparametrize_rejects_zero_interval():
    p = Path.from_nodes(np.array([[0, 0], [1, 0], [1, 0], [2, 0]], dtype=float))
    with pytest.raises(DegenerateGeometryError):
        reparametrize_constant_speed(p)


def _turning_polyline(rng, m, max_turn, lengths):
    ang = rng.uniform(-np.pi, np.pi)
    pts = [np.zeros(2)]
    for ln in lengths:
        pts.append(pts[-1] + ln * np.array([np.cos(ang), np.sin(ang)]))
        ang += rng.uniform(-max_turn, max_turn)
    return np.array(pts)


@given(st.integers(1, 6), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_reparametrize_constant_speed_property(m, mult, seed):
    rng = np.random.default_rng(seed)
    verts = _turning_polyline(rng, m, np.pi / 2, rng.uniform(0.2, 1.0, m))
    p = Path.from_nodes(verts)
    z = reparametrize_constant_speed(p, m * mult)
    speeds = np.linalg.norm(z.path.velocities, axis=1)
    assert np.max(np.abs(speeds - z.L)) <= 1e-10 * z.L
    assert z.L <= p.polyline_length() * (1 + 1e-12)
    # every new node lies on the input polyline
    for q in z.path.interior:
        dist = []
        for a, b in zip(verts[:-1], verts[1:]):
            t = np.clip(np.dot(q - a, b - a) / np.dot(b - a, b - a), 0.0, 1.0)
            dist.append(np.linalg.norm(q - a - t * (b - a)))
        assert min(dist) <= 1e-9


@given(st.lists(st.integers(1, 4), min_size=1, max_size=5), st.floats(0.1, 3.0), st.integers(0, 2**31 - 1))
def test_reparametrize_preserves_length_on_aligned_corners(steps, unit, seed):
    rng = np.random.default_rng(seed)
    verts = _turning_polyline(rng, len(steps), np.pi / 2, unit * np.array(steps, dtype=float))
    p = Path.from_nodes(verts)
    z = reparametrize_constant_speed(p, sum(steps))
    assert z.L == pytest.approx(p.polyline_length(), rel=1e-12)
    assert z.is_feasible()


def test_resample_straight_refinement():
    z = straight_line((0, 0), (1, 2), 2)
    r = resample(z, 8)
    assert r.N == 8
    assert r.L == pytest.approx(z.L, rel=1e-14)
    assert np.allclose(r.path.nodes, straight_line((0, 0), (1, 2), 8).path.nodes, atol=1e-14)


def test_resample_refine_then_coarsen():
    z = reparametrize_constant_speed(Path.from_nodes(L_SHAPE), 2)
    back = resample(resample(z, 8), 2)
    assert np.allclose(back.path.nodes, z.path.nodes, atol=1e-12)


def test_resample_l_shape_length():
    z = reparametrize_constant_speed(Path.from_nodes(L_SHAPE), 2)
    assert resample(z, 4).L == pytest.approx(2.0, abs=1e-12)


def test_z2_of_zero_path_is_L():
    z = State(2.0, Path((0, 0), (0, 0), np.zeros((3, 2))))
    assert norm(z, "Z2") == 2.0


def test_hat_direction_norms():
    d = Direction(0.0, np.array([[0.0, 1.0]]))
    l2_x, l2_v = dense_l2(d.nodes)
    assert norm(d, "Z2") == pytest.approx(l2_x + l2_v, rel=1e-6)
    assert norm(d, "Z2") == pytest.approx(math.sqrt(1 / 3) + 2.0, rel=1e-14)
    assert norm(d, "Zinf") == 3.0


def test_y_norms_add_multiplier():
    d = Direction(0.5, np.array([[0.0, 1.0]]))
    chi = KKTIterate(straight_line((0, 0), (1, 0), 2), Multiplier(np.array([3.0, -4.0])))
    assert norm(chi, "Yinf") == pytest.approx(norm(chi.z, "Zinf") + 4.0)
    assert norm(chi, "Y2") == pytest.approx(norm(chi.z, "Z2") + math.sqrt(12.5))
    assert norm(d, "Zinf") == 3.5


def test_unknown_norm():
    with pytest.raises(ValueError):
        norm(Direction.zeros(3), "H1")


def _random_direction(rng, N):
    return Direction(rng.normal(), rng.normal(size=(N - 1, 2)))


@pytest.mark.parametrize("which", ["Zinf", "Z2"])
@given(seed=st.integers(0, 2**31 - 1), N=st.integers(2, 12), s=st.floats(-5, 5))
def test_norm_axioms(which, seed, N, s):
    rng = np.random.default_rng(seed)
    a, b = _random_direction(rng, N), _random_direction(rng, N)
    assert norm(a + b, which) <= norm(a, which) + norm(b, which) + 1e-12
    assert norm(a.scaled(s), which) == pytest.approx(abs(s) * norm(a, which), rel=1e-12, abs=1e-14)


@pytest.mark.parametrize("which", ["Yinf", "Y2"])
@given(seed=st.integers(0, 2**31 - 1), N=st.integers(2, 10), s=st.floats(-5, 5))
def test_y_norm_axioms(which, seed, N, s):
    from windnav.functional import KKTStep

    rng = np.random.default_rng(seed)
    a = KKTStep(_random_direction(rng, N), Multiplier(rng.normal(size=N)))
    b = KKTStep(_random_direction(rng, N), Multiplier(rng.normal(size=N)))
    ab = KKTStep(a.z + b.z, Multiplier(a.lam.values + b.lam.values))
    sa = KKTStep(a.z.scaled(s), Multiplier(s * a.lam.values))
    assert norm(ab, which) <= norm(a, which) + norm(b, which) + 1e-12
    assert norm(sa, which) == pytest.approx(abs(s) * norm(a, which), rel=1e-12, abs=1e-14)


@given(st.integers(0, 2**31 - 1), st.integers(2, 40))
def test_wirtinger_constant(seed, N):
    rng = np.random.default_rng(seed)
    d = Direction(0.0, rng.normal(size=(N - 1, 2)))
    l2_x, l2_v = dense_l2(d.nodes, samples=2000)
    from windnav.trajectory import l2_sq_interval, l2_sq_nodal

    x2, v2 = l2_sq_nodal(d.nodes), l2_sq_interval(d.velocities)
    assert x2 == pytest.approx(l2_x**2, rel=1e-3)
    assert x2 <= v2 / math.pi
    # the classical sharp constant for zero-boundary functions on the unit interval
    assert x2 <= v2 / math.pi**2 * (1 + 1e-12)


@pytest.mark.parametrize("vbar,c0,lt,expected", [(1.0, 0.0, 1.0, 1.0), (1.0, 1 / 3, 1.0, 2.0), (2.0, 1.0, 5.0, 15.0)])
def test_ellipse_domain_major_sum(vbar, c0, lt, expected):
    dom = ellipse_domain((0, 0), (lt, 0), vbar, c0)
    assert dom.major_sum == pytest.approx(expected, rel=1e-15)


def test_ellipse_domain_rejects_fast_wind():
    with pytest.raises(DegenerateGeometryError):
        ellipse_domain((0, 0), (1, 0), 1.0, 1.0)


def test_ellipse_contains_and_frame():
    e = Ellipse((-1, 0), (1, 0), 4.0)
    center, axis, a, b = e.frame()
    assert np.array_equal(center, [0, 0]) and np.array_equal(axis, [1, 0])
    assert (a, b) == (2.0, pytest.approx(math.sqrt(3)))
    assert e.contains(np.array([[2.0, 0.0], [0.0, 1.7], [0.0, 1.8]])).tolist() == [True, True, False]


def test_state_json_round_trip():
    z = straight_line((0, 0), (1, 1), 5)
    back = State.from_json(z.to_json())
    assert np.array_equal(back.path.nodes, z.path.nodes) and back.L == z.L
