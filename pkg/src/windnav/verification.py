"""Finite-difference checks of the analytic derivatives of f and T."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .functional import (
    Q_DEFAULT,
    kernel_d1,
    kernel_d2,
    kernel_d3,
    kernel_f,
    make_kernel,
    travel_time,
    travel_time_derivatives,
)
from .trajectory import Direction, State, straight_line
from .windfield import WindField

TOLERANCES = {"d1": 1e-7, "d2": 1e-5, "d3": 1e-3, "T1": 1e-7, "T2": 1e-5}


FLOOR = 1e-2


def rel_err(approx, exact, floor: float = FLOOR) -> np.ndarray:
    """Per-sample relative error with the denominator floored at ``floor`` times the batch RMS.

    Random directions occasionally hit a near-zero derivative; there the
    difference quotient only resolves rounding noise, so the floor keeps the
    comparison on the scale of the batch.
    """
    approx = np.asarray(approx, dtype=float)
    exact = np.asarray(exact, dtype=float)
    scale = floor * float(np.sqrt(np.mean(exact**2))) if exact.size else 0.0
    return np.abs(approx - exact) / np.maximum(np.abs(exact), max(scale, 1e-300))


@dataclass
class DerivativeReport:
    max_rel_error: dict[str, float]
    samples: int

    @property
    def passed(self) -> dict[str, bool]:
        return {k: v <= TOLERANCES[k] for k, v in self.max_rel_error.items()}

    @property
    def all_passed(self) -> bool:
        return all(self.passed.values())

    def to_json(self) -> dict:
        return {"samples": self.samples, "max_rel_error": self.max_rel_error,
                "tolerance": TOLERANCES, "passed": self.passed}


def sample_feasible(field: WindField, vbar: float, n: int, rng: np.random.Generator,
                    center=(0.5, 0.0), spread: float = 0.6) -> tuple[np.ndarray, np.ndarray]:
    """Points and velocities with ``|w| < 0.9 vbar`` and speed in ``[0.5, 2]``."""
    xs, vs = [], []
    while sum(len(x) for x in xs) < n:
        x = np.asarray(center) + spread * rng.uniform(-1, 1, (2 * n, 2))
        ok = np.linalg.norm(field.eval(x), axis=-1) < 0.9 * vbar
        x = x[ok]
        sp = rng.uniform(0.5, 2.0, len(x))
        ang = rng.uniform(0, 2 * np.pi, len(x))
        xs.append(x)
        vs.append(sp[:, None] * np.stack([np.cos(ang), np.sin(ang)], axis=1))
    return np.concatenate(xs)[:n], np.concatenate(vs)[:n]


def _unit_pair(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    a = rng.standard_normal((n, 2))
    b = rng.standard_normal((n, 2))
    s = np.sqrt(np.sum(a**2 + b**2, axis=1, keepdims=True))
    return a / s, b / s


def kernel_fd_errors(field: WindField, vbar: float, xi: np.ndarray, xt: np.ndarray,
                     rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Relative errors of ``kernel_d1/d2/d3`` against central differences."""
    n = len(xi)
    d, e, D = _unit_pair(rng, n), _unit_pair(rng, n), _unit_pair(rng, n)

    def f_at(p, s):
        return kernel_f(make_kernel(field, xi + s * p[0], xt + s * p[1], vbar))[0]

    k = make_kernel(field, xi, xt, vbar)
    h1 = 1e-6
    fd1 = (f_at(d, h1) - f_at(d, -h1)) / (2 * h1)
    h2 = 1e-5

    def d1_at(s):
        return kernel_d1(make_kernel(field, xi + s * e[0], xt + s * e[1], vbar), d)

    fd2 = (d1_at(h2) - d1_at(-h2)) / (2 * h2)

    def f2(s, t):
        return kernel_f(make_kernel(field, xi + s * d[0] + t * D[0], xt + s * d[1] + t * D[1], vbar))[0]

    def mixed(h):
        return ((f2(h, h) - 2 * f2(0, h) + f2(-h, h)) - (f2(h, -h) - 2 * f2(0, -h) + f2(-h, -h))) / (2 * h**3)

    # one Richardson step keeps the quotient accurate at a step where rounding is harmless
    h3 = 1e-2
    fd3 = (4.0 * mixed(h3 / 2) - mixed(h3)) / 3.0
    return {
        "d1": rel_err(fd1, kernel_d1(k, d)),
        "d2": rel_err(fd2, kernel_d2(k, d, e)),
        "d3": rel_err(fd3, kernel_d3(k, d, D)),
    }


def random_state(x_o, x_d, N: int, rng: np.random.Generator, amp: float = 0.05) -> State:
    base = straight_line(x_o, x_d, N)
    tau = np.linspace(0, 1, N + 1)[1:-1]
    bump = np.sin(np.pi * tau)[:, None] * rng.standard_normal(2)[None, :] * amp
    noise = 0.1 * amp * rng.standard_normal((N - 1, 2))
    return base.plus(Direction(rng.uniform(-0.05, 0.05), bump + noise))


def travel_time_fd_errors(state: State, field: WindField, vbar: float, rng: np.random.Generator,
                          Q: int = Q_DEFAULT) -> dict[str, tuple[float, float]]:
    """``(difference quotient, analytic)`` pairs for the gradient and Hessian along random directions."""
    N = state.N
    d = Direction(0.0, rng.standard_normal((N - 1, 2)) / N)
    e = Direction(0.0, rng.standard_normal((N - 1, 2)) / N)
    g = travel_time_derivatives(state, field, vbar, 1, Q)
    H = travel_time_derivatives(state, field, vbar, 2, Q)
    h1 = 1e-4

    def T(s):
        return travel_time(state.plus(d, s), field, vbar, Q)

    fd1 = (8.0 * (T(h1) - T(-h1)) - (T(2 * h1) - T(-2 * h1))) / (12 * h1)
    h2 = 1e-5
    gp = travel_time_derivatives(state.plus(e, h2), field, vbar, 1, Q)
    gm = travel_time_derivatives(state.plus(e, -h2), field, vbar, 1, Q)
    fd2 = float((gp - gm) @ d.to_vector()) / (2 * h2)
    return {"T1": (fd1, float(g @ d.to_vector())), "T2": (fd2, float(d.to_vector() @ H @ e.to_vector()))}


def derivative_check(field: WindField, vbar: float, samples: int = 200, seed: int = 0,
                     x_o=(0.0, 0.0), x_d=(1.0, 0.0), N: int = 8, Q: int = Q_DEFAULT) -> DerivativeReport:
    rng = np.random.default_rng(seed)
    mid = 0.5 * (np.asarray(x_o, dtype=float) + np.asarray(x_d, dtype=float))
    xi, xt = sample_feasible(field, vbar, samples, rng, center=mid)
    kerr = kernel_fd_errors(field, vbar, xi, xt, rng)
    out = {k: float(np.max(v)) for k, v in kerr.items()}
    pairs = [travel_time_fd_errors(random_state(x_o, x_d, N, rng), field, vbar, rng, Q) for _ in range(samples)]
    for key in ("T1", "T2"):
        fd, ex = np.array([p[key] for p in pairs]).T
        out[key] = float(np.max(rel_err(fd, ex)))
    return DerivativeReport(out, samples)
