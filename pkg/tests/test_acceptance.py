"""Acceptance criteria, one test per criterion.

Each criterion is a plain function returning ``(ok, detail)``; the tests record
the outcome for the terminal summary and assert it. Running this file as a
script prints one PASS/FAIL line per criterion.
"""

from __future__ import annotations

import functools
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import conftest  # noqa: E402
from conftest import random_field, random_w  # noqa: E402
from oracles import resonant_interval_union  # noqa: E402

from nlwave.bifurcation import dv_dw, nondegeneracy_margin, solve_q  # noqa: E402
from nlwave.hill import (  # noqa: E402
    asymptotics_report,
    eig_direct,
    eig_transformed,
    interlacing_violation,
    liouville_transform,
    weighted_gram,
)
from nlwave.nash_moser import (  # noqa: E402
    NeumannDivergence,
    Problem,
    SolverParams,
    assemble_linearized,
    factorize,
    final_spectrum,
    invert_direct,
    inverse_snorm_estimate,
    neumann_invert,
    precondition_split,
    reconstruct_from_split,
    run,
)
from nlwave.resonance import sweep_measure  # noqa: E402
from nlwave.spectral import (  # noqa: E402
    FourierField,
    NonlinearitySpec,
    TimeFunction,
    evaluate_nonlinearity,
    h1norm_time,
    multiply,
    nonlinearity_derivative,
    project_PN,
    project_PN_perp,
    project_W,
    snorm,
)

ONE = TimeFunction.constant(1.0)
A2 = TimeFunction.from_trig([("const", 2.0), ("cos", 1, 1.0)])
A_TEST = TimeFunction.from_trig([("const", 1.0), ("cos", 1, 0.3)])
F_TEST = NonlinearitySpec.from_terms([{"power": 0, "t": ["cos", 1], "x": ["cos", 1]}, {"power": 2}])
EPS, OMEGA = 1e-3, 1.37

ROUND_TRIP_PAIRS = [
    ("a=2+cos t, d=1", A2, TimeFunction.constant(1.0)),
    ("a=2+cos t, d=0.5", A2, TimeFunction.constant(0.5)),
    ("a=1+0.3cos t+0.2sin 2t, d=0.7+0.2cos 3t",
     TimeFunction.from_trig([("const", 1.0), ("cos", 1, 0.3), ("sin", 2, 0.2)]),
     TimeFunction.from_trig([("const", 0.7), ("cos", 3, 0.2)])),
]


@functools.lru_cache(maxsize=None)
def _solve_test_problem():
    t0 = time.perf_counter()
    sol = run(Problem(A_TEST, F_TEST, EPS, OMEGA), SolverParams())
    return sol, time.perf_counter() - t0


def reference_solution():
    return _solve_test_problem()[0]


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


# ---------------------------------------------------------------------------
# Criteria
# ---------------------------------------------------------------------------


def criterion_1():
    spec, dt = _timed(lambda: eig_direct(ONE, TimeFunction.constant(2.5), 20, 256))
    ref = np.array([2.5] + [l * l + 2.5 for l in range(1, 21) for _ in (0, 1)])
    err = float(np.abs(spec.eigenvalues - ref).max())
    ok = err < 1e-9 and dt < 5
    return ok, f"max error {err:.2e} (< 1e-9), {dt:.2f} s (< 5 s)"


def criterion_2():
    def work():
        L = liouville_transform(A2, ONE)
        return L, asymptotics_report(eig_transformed(L.rho, 30, 128), L, slack=1e-6)

    (L, rep), dt = _timed(work)
    ok = rep.applicable and rep.passed and dt < 10
    return ok, (f"rho0={L.rho0:.6f} rho1={L.rho1:.6f}, {len(rep.rows)} rows, "
                f"sandwich+eta {'ok' if rep.passed else 'violated'}, {dt:.2f} s (< 10 s)")


def _round_trip(a, d):
    L = liouville_transform(a, d)
    lam = eig_direct(a, d, 20, 128).eigenvalues
    mu = eig_transformed(L.rho, 20, 128).eigenvalues
    return float(np.max(np.abs(lam - mu / L.c ** 2) / (1 + np.abs(lam))))


def criterion_3():
    errs, dt = _timed(lambda: [_round_trip(a, d) for _, a, d in ROUND_TRIP_PAIRS])
    ok = max(errs) <= 1e-7 and dt < 30
    return ok, f"rel errors {', '.join(f'{e:.1e}' for e in errs)} (<= 1e-7), {dt:.2f} s (< 30 s)"


def criterion_4():
    spectra = [(ONE, eig_direct(ONE, TimeFunction.constant(2.5), 20, 256))]
    spectra += [(a, eig_direct(a, d, 20, 128)) for _, a, d in ROUND_TRIP_PAIRS]
    sol = reference_solution()
    spectra.append((A_TEST, final_spectrum(sol, 30, 128)[0]))
    inter = max(interlacing_violation(s.eigenvalues) for _, s in spectra)
    gram = max(weighted_gram(s, a) for a, s in spectra)
    ok = inter <= 1e-9 and gram < 1e-8
    return ok, f"{len(spectra)} spectra, interlacing violation {inter:.1e}, Gram deviation {gram:.1e}"


def criterion_5():
    f0 = NonlinearitySpec.from_terms([{"power": 0, "t": ["sin", 1]}])
    q = solve_q(f0, 0.1, 1.0, lmax=8)
    err = h1norm_time(q.v + TimeFunction.from_trig([("sin", 1, 0.1)]).resized(8))
    margin = nondegeneracy_margin(TimeFunction.zeros(8), f0, 0.0, 1.0, lmax=8)
    ok = err < 1e-10 and margin == 1.0
    return ok, f"|v + 0.1 sin t|_H1 = {err:.1e} (< 1e-10), margin {margin!r} (== 1)"


def criterion_6():
    sol, dt = _solve_test_problem()
    resid = sol.residual.value
    fine = run(Problem(A_TEST, F_TEST, EPS, OMEGA), SolverParams(N0=16, Lmax=64, min_steps=0))
    J = max(sol.u.jmax, fine.u.jmax)
    Lt = max(sol.u.lmax, fine.u.lmax)
    diff = float(np.abs(sol.u.resized(J, Lt).coeffs - fine.u.resized(J, Lt).coeffs).max())
    ratios = sol.trace.step_ratios()
    ok = resid < 1e-8 and diff <= 1e-7 and all(r <= 0.25 for r in ratios) and dt < 120
    return ok, (f"residual {resid:.2e} (< 1e-8), doubled-run diff {diff:.1e} (<= 1e-7), "
                f"step ratios {[f'{r:.1e}' for r in ratios]} (<= 1/4), {dt:.1f} s (< 120 s)")


def criterion_7():
    sol = reference_solution()
    N, L = 16, 16
    rng = np.random.default_rng(0)
    recon, agree, skipped = [], [], 0
    for eps in (1e-3, 0.05, 0.2):
        w = sol.w.resized(N, L)
        q = solve_q(F_TEST, eps, OMEGA, w, lmax=L)
        op = assemble_linearized(F_TEST, eps, OMEGA, A_TEST, w, q.v, N, L)
        sp = precondition_split(op)
        D = op.dense()
        recon.append(float(np.abs(reconstruct_from_split(sp) - D).max() / np.abs(D).max()))
        rhs = project_W(random_field(rng, N, L))
        h_d, _ = invert_direct(op, rhs)
        try:
            h_n, _ = neumann_invert(sp, rhs)
        except NeumannDivergence:
            skipped += 1
            continue
        agree.append(float(np.abs(h_n.coeffs - h_d.coeffs).max() / np.abs(h_d.coeffs).max()))
    pre = run(Problem(A_TEST, F_TEST, EPS, OMEGA), SolverParams(inversion_mode="preconditioned"))
    full = float(np.abs(pre.u.coeffs - sol.u.coeffs).max() / np.abs(sol.u.coeffs).max())
    agree.append(full)
    ok = max(recon) <= 1e-8 and max(agree) <= 1e-8
    return ok, (f"reconstruction {max(recon):.1e} (<= 1e-8), direct vs Neumann {max(agree):.1e} "
                f"(<= 1e-8; full solve {full:.1e}; {skipped} divergent cases skipped)")


def inverse_scaling(Ns=(8, 16, 32)):
    sol = reference_solution()
    p = sol.params
    vals = []
    for N in Ns:
        w = sol.w.resized(min(N, sol.w.jmax), p.Lmax)
        op = assemble_linearized(F_TEST, EPS, OMEGA, A_TEST, w, sol.v, N, p.Lmax)
        est = inverse_snorm_estimate(factorize(op), p.s)
        vals.append(est * p.gamma / N ** (p.tau - 1))
    return vals


def criterion_8():
    vals = inverse_scaling()
    spread = max(vals) / min(vals)
    return spread < 2, f"values {[f'{v:.4f}' for v in vals]}, max/min {spread:.2f} (< 2)"


def criterion_9():
    gammas = [0.05, 0.1, 0.2]
    res, dt = _timed(lambda: sweep_measure(ONE, None, 0.0, (1.05, 1.95), 10_000, gammas, 1.5, 4))
    meas = {g: res.resonant_fraction(g) for g in gammas}
    exact = {g: resonant_interval_union(1.05, 1.95, 4, g, 1.5) for g in gammas}
    within = all(0.5 <= meas[g] / exact[g] <= 2 for g in gammas)
    halves = [meas[g / 2] / meas[g] for g in gammas if g / 2 in meas]
    exact_halves = [exact[g / 2] / exact[g] for g in gammas if g / 2 in exact]
    ratio_ok = all(0.35 <= r <= 0.65 for r in halves)
    ok = within and ratio_ok and dt < 60
    return ok, (f"fractions {[f'{meas[g]:.5f}' for g in gammas]} vs exact "
                f"{[f'{exact[g]:.5f}' for g in gammas]} ({'within' if within else 'outside'} 2x), "
                f"halving ratios {[f'{r:.3f}' for r in halves]} (in [0.35, 0.65]: {ratio_ok}; "
                f"exact union gives {[f'{r:.3f}' for r in exact_halves]}), "
                f"{dt:.1f} s (< 60 s)")


def _smoothing_ok():
    rng = np.random.default_rng(7)
    for _ in range(100):
        u = random_w(rng, 8, 3)
        for N in range(1, 9):
            for r in (1, 2, 3):
                if snorm(project_PN(u, N), 1 + r) > N ** r * snorm(u, 1) * (1 + 1e-14):
                    return False
                if snorm(project_PN_perp(u, N), 1) > N ** (-r) * snorm(u, 1 + r) * (1 + 1e-14):
                    return False
    return True


def _algebra_plateau():
    def cmax(J, L):
        rng = np.random.default_rng(1)
        best = 0.0
        for _ in range(100):
            u = random_field(rng, J, L, decay=0.3)
            v = random_field(rng, J, L, decay=0.3)
            best = max(best, snorm(multiply(u, v), 1) / (snorm(u, 1) * snorm(v, 1)))
        return best

    return cmax(4, 4), cmax(8, 8)


def _orders(errs):
    e = np.asarray(errs)
    return np.log(e[:-1] / e[1:]) / np.log(2)


def _frechet_F():
    rng = np.random.default_rng(11)
    f = NonlinearitySpec.from_terms([{"power": 1, "t": ["cos", 1]}, {"power": 3, "x": ["cos", 1]},
                                     {"power": 2, "amplitude": 0.5}])
    u = random_field(rng, 2, 2, scale=0.3)
    h = random_field(rng, 2, 2, scale=0.3)
    J = L = 12
    F0 = evaluate_nonlinearity(f, u, J, L)
    Dh = multiply(nonlinearity_derivative(f, u, J, L), h).resized(J, L)
    errs = [snorm((evaluate_nonlinearity(f, u + h * d, J, L) - F0) * (1 / d) - Dh, 0)
            for d in (1e-2, 5e-3, 2.5e-3)]
    return float(_orders(errs).min())


def _frechet_dv():
    rng = np.random.default_rng(12)
    eps, L = 0.2, 16
    f = NonlinearitySpec.from_terms([{"power": 0, "t": ["cos", 1]}, {"power": 2}])
    w = project_W(FourierField.from_function(lambda T, X: 0.2 * np.cos(X) * np.cos(T), 1, 1))
    h = project_W(random_w(rng, 2, 2, 0.1, 0.5))
    q = solve_q(f, eps, 1.2, w=w, tol=1e-14, lmax=L)
    d = dv_dw(f, eps, 1.2, w, q.v, h, L)
    errs = []
    for dl in (1e-2, 5e-3, 2.5e-3):
        qd = solve_q(f, eps, 1.2, w=w + h * dl, tol=1e-14, lmax=L)
        errs.append(np.abs((qd.v.coeffs - q.v.coeffs) / dl - d.coeffs).max())
    return float(_orders(errs).min())


def criterion_10():
    smooth = _smoothing_ok()
    c4, c8 = _algebra_plateau()
    oF, odv = _frechet_F(), _frechet_dv()
    ok = smooth and c8 <= 1.1 * c4 and oF >= 0.9 and odv >= 0.9
    return ok, (f"smoothing on 100 fields {'ok' if smooth else 'violated'}, algebra constant "
                f"{c4:.3f} -> {c8:.3f} under doubling, FD order F {oF:.2f}, dv_dw {odv:.2f} (>= 0.9)")


CRITERIA = {k: globals()[f"criterion_{k}"] for k in range(1, 11)}


def _record(k):
    ok, detail = CRITERIA[k]()
    conftest.ACCEPTANCE_RESULTS[k] = (ok, detail)
    print(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok, detail


@pytest.mark.parametrize("k", list(CRITERIA))
def test_criterion(k):
    ok, detail = _record(k)
    assert ok, detail


if __name__ == "__main__":
    results = [_record(k)[0] for k in CRITERIA]
    sys.exit(0 if all(results) else 1)
