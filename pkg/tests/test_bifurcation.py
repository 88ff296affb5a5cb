"""Averaged (x-mean) equation: split, Newton solve, nondegeneracy and w-dependence."""

import numpy as np
import pytest
from conftest import random_w
from hypothesis import given
from hypothesis import strategies as st

from nlwave.bifurcation import (
    QSolverError,
    QState,
    dv_dw,
    extract_f0,
    hill_potential,
    nondegeneracy_margin,
    q_residual,
    solve_q,
    split_f,
)
from nlwave.spectral import FourierField, NonlinearitySpec, TimeFunction, project_W

COS_T = NonlinearitySpec.from_terms([{"power": 0, "t": ["cos", 1]}])
COS_T_COS_X = NonlinearitySpec.from_terms([{"power": 0, "t": ["cos", 1], "x": ["cos", 1]}])
QUAD = NonlinearitySpec.from_terms([{"power": 0, "t": ["cos", 1]}, {"power": 2}])


def w_field(amp=0.1):
    return project_W(FourierField.from_function(lambda T, X: amp * np.cos(X) * np.cos(T), 1, 1))


class TestSplit:
    def test_x_dependent_forcing_drops(self):
        f0 = extract_f0(COS_T_COS_X)
        assert all(np.abs(c.coeffs).max() < 1e-15 for c in f0.coeffs)

    def test_t_forcing_kept(self):
        f0, f1 = split_f(COS_T)
        assert f0.coeffs[0].coeff(0, 1) == pytest.approx(0.5)
        assert np.abs(f1.coeffs[0].coeffs).max() < 1e-15

    def test_sum(self):
        f = NonlinearitySpec.from_terms([{"power": 1, "x": ["cos", 2]}, {"power": 1, "t": ["sin", 1]},
                                         {"power": 3, "amplitude": 0.5}])
        f0, f1 = split_f(f)
        for c, c0, c1 in zip(f.coeffs, f0.coeffs, f1.coeffs):
            assert (c0 + c1).allclose(c, atol=1e-15)


class TestSolveQ:
    def test_forcing_closed_form(self):
        eps, omega = 0.01, 1.37
        q = solve_q(COS_T, eps, omega, lmax=4)
        t = np.linspace(0, 2 * np.pi, 50)
        assert np.abs(q.v(t) + eps * np.cos(t) / omega ** 2).max() < 1e-14
        assert q.nondegeneracy_margin == pytest.approx(omega ** 2)
        assert q.mean_defect < 1e-18

    def test_linear_closed_form(self):
        f = NonlinearitySpec.from_terms([{"power": 0, "t": ["cos", 1]}, {"power": 1}])
        eps, omega = 0.2, 1.1
        q = solve_q(f, eps, omega, lmax=4)
        t = np.linspace(0, 2 * np.pi, 50)
        assert np.abs(q.v(t) + eps * np.cos(t) / (omega ** 2 + eps)).max() < 1e-14
        assert q.nondegeneracy_margin == pytest.approx(omega ** 2 + eps)

    def test_unit_margin(self):
        q = solve_q(COS_T, 1e-3, 1.0, lmax=4)
        assert q.nondegeneracy_margin == 1.0

    def test_eps_zero(self):
        q = solve_q(QUAD, 0.0, 1.3, lmax=6)
        assert np.abs(q.v.coeffs).max() == 0.0
        assert q.residual == 0.0

    def test_x_only_forcing_gives_zero(self):
        q = solve_q(COS_T_COS_X, 0.1, 1.3, lmax=6)
        assert np.abs(q.v.coeffs).max() < 1e-15

    def test_nonlinear_residual(self):
        q = solve_q(QUAD, 0.1, 1.2, w=w_field(), tol=1e-12, lmax=16)
        assert q.converged and q.residual <= 1e-12
        G = q_residual(QUAD, 0.1, 1.2, w_field(), q.v, 16).coeffs
        ls = np.arange(-16, 17)
        assert np.sqrt(np.sum((1 + ls[ls != 0] ** 2) * np.abs(G[ls != 0]) ** 2)) <= 1e-12
        assert q.v.is_real()
        assert q.v.coeff(0) == 0

    def test_mean_defect_nonzero_for_quadratic(self):
        q = solve_q(QUAD, 0.1, 1.2, lmax=16)
        mean_v2 = np.sum(np.abs(q.v.coeffs) ** 2)
        assert q.mean_defect == pytest.approx(0.1 * mean_v2, rel=1e-8)

    def test_quadratic_newton_tail(self):
        q = solve_q(QUAD, 0.5, 1.0, tol=1e-14, lmax=16)
        h = np.array(q.history)
        h = h[h > 1e-13]
        assert len(h) >= 3
        # r_{k+1} <= C r_k^2 with a modest constant
        C = max(h[k + 1] / h[k] ** 2 for k in range(1, len(h) - 1))
        assert C < 10

    def test_bordered_same_v(self):
        a = solve_q(QUAD, 0.1, 1.2, w=w_field(), lmax=16)
        b = solve_q(QUAD, 0.1, 1.2, w=w_field(), lmax=16, mode="bordered")
        assert np.abs(a.v.coeffs - b.v.coeffs).max() < 1e-13
        assert abs(b.multiplier) == pytest.approx(a.mean_defect, abs=1e-12)

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            solve_q(QUAD, 0.1, 1.2, mode="nope")

    def test_w_with_mean_rejected(self):
        with pytest.raises(ValueError):
            solve_q(QUAD, 0.1, 1.2, w=FourierField.from_function(lambda T, X: np.cos(T), 1, 1))

    def test_v_init_with_mean_rejected(self):
        with pytest.raises(ValueError):
            solve_q(QUAD, 0.1, 1.2, v_init=TimeFunction.constant(1.0))

    def test_resonant_linearization(self):
        # omega^2 l^2 = -eps b0 at l = 1 makes the Newton matrix singular
        f = NonlinearitySpec.from_terms([{"power": 0, "t": ["cos", 1]}, {"power": 1, "amplitude": -1.0}])
        with pytest.raises(QSolverError):
            solve_q(f, 1.0, 1.0, lmax=4)

    def test_divergence(self):
        f = NonlinearitySpec.from_terms([{"power": 0, "t": ["cos", 1], "amplitude": 50.0},
                                         {"power": 3, "amplitude": 5.0}])
        with pytest.raises(QSolverError):
            solve_q(f, 1.0, 0.3, lmax=8, max_iter=30)

    def test_json_round_trip(self):
        q = solve_q(QUAD, 0.1, 1.2, lmax=8)
        r = QState.from_json_obj(q.to_json_obj())
        assert np.array_equal(r.v.coeffs, q.v.coeffs)
        assert r.residual == q.residual and r.history == q.history


class TestMargin:
    def test_matches_solver(self):
        q = solve_q(QUAD, 0.1, 1.2, w=w_field(), lmax=12)
        m = nondegeneracy_margin(q.v, QUAD, 0.1, 1.2, lmax=12, w=w_field())
        assert m == pytest.approx(q.nondegeneracy_margin, rel=1e-12)

    def test_diagonal_case(self):
        assert nondegeneracy_margin(TimeFunction.zeros(3), COS_T, 0.1, 2.0, lmax=3) == 4.0


class TestDvDw:
    def test_eps_zero(self):
        h = w_field()
        d = dv_dw(QUAD, 0.0, 1.2, None, TimeFunction.zeros(8), h, 8)
        assert np.abs(d.coeffs).max() == 0.0

    def test_finite_difference_order(self, rng):
        eps, omega, L = 0.2, 1.2, 16
        w = w_field(0.2)
        h = project_W(random_w(rng, 2, 2, 0.1, 0.5))
        q = solve_q(QUAD, eps, omega, w=w, tol=1e-14, lmax=L)
        d = dv_dw(QUAD, eps, omega, w, q.v, h, L)
        errs = []
        deltas = [1e-2, 5e-3, 2.5e-3]
        for dl in deltas:
            qd = solve_q(QUAD, eps, omega, w=w + h * dl, tol=1e-14, lmax=L)
            errs.append(np.abs((qd.v.coeffs - q.v.coeffs) / dl - d.coeffs).max())
        orders = np.log(np.array(errs[:-1]) / np.array(errs[1:])) / np.log(2)
        assert np.all(orders >= 0.9)
        assert errs[-1] < 1e-3

    def test_rejects_mean_direction(self):
        with pytest.raises(ValueError):
            dv_dw(QUAD, 0.1, 1.2, None, TimeFunction.zeros(4),
                  FourierField.from_function(lambda T, X: np.cos(T), 1, 1), 4)


class TestHillPotential:
    def test_eps_zero(self):
        assert np.abs(hill_potential(QUAD, 0.0, 1.2, TimeFunction.zeros(2), None, 4).coeffs).max() == 0

    def test_quadratic(self):
        v = TimeFunction.from_trig([("cos", 1, 0.3)])
        p = hill_potential(QUAD, 0.1, 2.0, v, None, 4)
        # (eps/omega^2) * 2 v
        assert p.coeff(1) == pytest.approx(0.1 / 4 * 2 * 0.15)


class TestContinuity:
    @given(st.floats(-1.0, 1.0), st.integers(0, 10_000))
    def test_lipschitz_in_w(self, sgn, seed):
        rng = np.random.default_rng(seed)
        eps, omega, L = 0.1, 1.3, 12
        w1 = project_W(random_w(rng, 2, 2, 0.1, 0.3))
        dw = project_W(random_w(rng, 2, 2, 1e-3 * sgn, 0.3))
        v1 = solve_q(QUAD, eps, omega, w=w1, lmax=L).v
        v2 = solve_q(QUAD, eps, omega, w=w1 + dw, lmax=L).v
        dist = np.abs(v1.coeffs - v2.coeffs).max()
        assert dist <= 10 * eps * np.abs(dw.coeffs).max()
