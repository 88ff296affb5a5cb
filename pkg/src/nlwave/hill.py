"""
Periodic Hill eigenproblem

    -y'' + d(t) y = lam a(t) y,    y 2pi-periodic,

solved by Fourier-Galerkin discretization, both directly (generalized
symmetric problem) and through the Liouville normal form

    -z'' + rho(xi) z = mu z,    mu = c^2 lam.

With c = mean(sqrt a), xi = g(t) = c^{-1} int_0^t sqrt(a), t = psi(xi) and
y = a^{-1/4} z, the normal-form potential is

    rho(xi) = c^2 Q(psi(xi)) + c^2 d(psi(xi)) / a(psi(xi)),
    Q = a'' / (4 a^2) - 5 a'^2 / (16 a^3).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import fft as sfft
from scipy import linalg, optimize

from .spectral import PositivityError, TimeFunction, check_positive, toeplitz_from_coeffs

__all__ = [
    "LiouvilleData",
    "HillSpectrum",
    "AsymptoticsReport",
    "HillSolverError",
    "adaptive_fit",
    "compute_c",
    "sqrt_a",
    "potential_Q",
    "liouville_transform",
    "hypothesis2_check",
    "eig_transformed",
    "eig_direct",
    "asymptotics_report",
    "weighted_gram",
    "interlacing_violation",
    "sign_changes",
    "real_basis",
]

FIT_TOL = 1e-16
MAX_FIT_POINTS = 1 << 15


class HillSolverError(RuntimeError):
    """Discretized Hill problem could not be solved."""


# ---------------------------------------------------------------------------
# Smooth periodic function fitting
# ---------------------------------------------------------------------------


def adaptive_fit(func: Callable[[np.ndarray], np.ndarray], n0: int = 64,
                 tol: float = FIT_TOL, nmax: int = MAX_FIT_POINTS) -> TimeFunction:
    """Fit a smooth real 2pi-periodic function by doubling the sample count.

    Stops when every coefficient with |l| > n/4 is below ``tol`` times the
    largest, then trims trailing coefficients below that threshold.
    """
    n = n0
    while True:
        t = 2 * np.pi * np.arange(n) / n
        vals = np.real(np.asarray(func(t), dtype=complex))
        g = sfft.fft(vals) / n
        k = np.fft.fftfreq(n, 1.0 / n)
        scale = max(np.abs(g).max(), 1e-300)
        tail = np.abs(g[np.abs(k) > n // 4]).max(initial=0.0)
        if tail <= tol * scale or n >= nmax:
            break
        n *= 2
    big = np.nonzero(np.abs(g) > tol * scale)[0]
    K = int(np.abs(k[big]).max(initial=0)) if big.size else 0
    K = min(K, n // 2 - 1)
    return TimeFunction.from_grid(vals, K)


def compute_c(a: TimeFunction, n: int | None = None) -> float:
    """Mean of sqrt(a) over a period (trapezoid rule, spectrally accurate)."""
    check_positive(a)
    if n is not None:
        return float(np.mean(np.sqrt(np.real(a.to_grid(n)))))
    n = max(64, 8 * (2 * a.lmax + 1))
    prev = None
    while n <= MAX_FIT_POINTS:
        cur = float(np.mean(np.sqrt(np.real(a.to_grid(n)))))
        if prev is not None and abs(cur - prev) <= 1e-15 * abs(cur):
            return cur
        prev, n = cur, 2 * n
    return prev


def sqrt_a(a: TimeFunction) -> TimeFunction:
    check_positive(a)
    return adaptive_fit(lambda t: np.sqrt(a(t)))


def _a_derivs(a: TimeFunction, t: np.ndarray):
    return a(t), a.derivative(1)(t), a.derivative(2)(t)


def _q_values(a: TimeFunction, t: np.ndarray) -> np.ndarray:
    A, A1, A2 = _a_derivs(a, t)
    return A2 / (4 * A ** 2) - 5 * A1 ** 2 / (16 * A ** 3)


def potential_Q(a: TimeFunction) -> TimeFunction:
    """Normal-form potential ``Q = a''/(4a^2) - 5a'^2/(16a^3)`` as a fitted time function."""
    check_positive(a)
    if a.lmax == 0:
        return TimeFunction.zeros(0)
    return adaptive_fit(lambda t: _q_values(a, t))


# ---------------------------------------------------------------------------
# Liouville transform
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LiouvilleData:
    """Liouville normal-form data for a pair (a, d).

    Attributes
    ----------
    c : float
        Mean of sqrt(a).
    xi : ndarray
        Uniform grid on [0, 2 pi).
    psi_samples : ndarray
        psi(xi) on that grid; strictly increasing, psi(0) = 0.
    rho : TimeFunction
        Normal-form potential as a function of xi.
    rho0, rho1 : float
        min of rho and (1/pi) * integral of rho.
    Q : TimeFunction
        Potential part coming from a alone (function of t).
    r_quarter : TimeFunction
        a^{1/4} (function of t).
    """

    c: float
    xi: np.ndarray
    psi_samples: np.ndarray
    rho: TimeFunction
    rho0: float
    rho1: float
    Q: TimeFunction
    r_quarter: TimeFunction
    g: Callable = field(repr=False, default=None)

    @property
    def hypothesis_holds(self) -> bool:
        return hypothesis2_check(self)[0]


def _g_evaluator(s: TimeFunction, c: float):
    """Return callables g(t) and g'(t) for g = (1/c) int_0^t sqrt(a)."""
    ls = s.modes
    nz = ls != 0
    coef = s.coeffs[nz] / (1j * ls[nz]) / c
    lnz = ls[nz]

    def g(t):
        t = np.asarray(t, dtype=float)
        ph = np.exp(1j * np.multiply.outer(t, lnz)) - 1.0
        return t + np.real(ph @ coef)

    def gp(t):
        return s(t) / c

    return g, gp


def _invert_monotone(g, gp, xi: np.ndarray, tol: float = 1e-15, maxit: int = 60) -> np.ndarray:
    t = xi.copy()
    for _ in range(maxit):
        step = (g(t) - xi) / gp(t)
        t = t - step
        if np.abs(step).max() <= tol * 2 * np.pi:
            break
    else:
        raise HillSolverError("psi inversion did not converge")
    return t


def liouville_transform(a: TimeFunction, d: TimeFunction, n_xi: int | None = None) -> LiouvilleData:
    """Liouville normal form of ``-y'' + d y = lam a y``.

    The inverse ``psi`` of ``g`` is obtained by Newton iteration on the
    spectral antiderivative, which is exact to round-off; ``rho`` is then fitted
    adaptively in ``xi``.
    """
    check_positive(a)
    s = sqrt_a(a)
    c = float(np.real(s.coeffs[s.lmax]))
    g, gp = _g_evaluator(s, c)
    if np.any(s(np.linspace(0, 2 * np.pi, 4 * (2 * s.lmax + 1) + 1)) <= 0):
        raise HillSolverError("g is not monotone")

    def psi_of(xi):
        return _invert_monotone(g, gp, np.asarray(xi, dtype=float))

    def rho_of(xi):
        t = psi_of(xi)
        A = a(t)
        return c ** 2 * _q_values(a, t) + c ** 2 * d(t) / A

    if a.lmax == 0 and d.lmax == 0:
        rho = TimeFunction.constant(d.mean() * c ** 2 / a.mean())
    else:
        rho = adaptive_fit(rho_of)
    n = n_xi or max(256, 8 * (2 * rho.lmax + 1))
    xi = 2 * np.pi * np.arange(n) / n
    psi = psi_of(xi)
    if np.any(np.diff(psi) <= 0):
        raise HillSolverError("psi samples are not strictly increasing")

    rho0 = _periodic_min(rho)
    rho1 = 2.0 * rho.mean()
    Q = potential_Q(a)
    rq = adaptive_fit(lambda t: a(t) ** 0.25)
    return LiouvilleData(c=c, xi=xi, psi_samples=psi, rho=rho, rho0=rho0, rho1=rho1,
                         Q=Q, r_quarter=rq, g=g)


def _periodic_min(f: TimeFunction, oversample: int = 32) -> float:
    if f.lmax == 0:
        return f.mean()
    n = oversample * (2 * f.lmax + 1)
    vals = np.real(f.to_grid(n))
    k = int(np.argmin(vals))
    h = 2 * np.pi / n
    res = optimize.minimize_scalar(lambda t: float(f(t)), bounds=(k * h - h, k * h + h),
                                   method="bounded", options={"xatol": 1e-13})
    return float(min(res.fun, vals[k]))


def hypothesis2_check(L: LiouvilleData | TimeFunction, tol: float = 1e-10) -> tuple[bool, float]:
    """Positivity of the normal-form potential: returns ``(rho0 > tol, rho0)``."""
    rho0 = L.rho0 if isinstance(L, LiouvilleData) else _periodic_min(L)
    return bool(rho0 > tol), float(rho0)


# ---------------------------------------------------------------------------
# Eigenproblems
# ---------------------------------------------------------------------------


def real_basis(M: int) -> np.ndarray:
    """Unitary map from real coordinates [1, cos 1, sin 1, ..., cos M, sin M]
    to exponential coefficients over |l| <= M."""
    U = np.zeros((2 * M + 1, 2 * M + 1), dtype=complex)
    U[M, 0] = 1.0
    r = 1 / np.sqrt(2)
    for l in range(1, M + 1):
        U[M + l, 2 * l - 1] = r
        U[M - l, 2 * l - 1] = r
        U[M + l, 2 * l] = -1j * r
        U[M - l, 2 * l] = 1j * r
    return U


def _labels(n: int) -> list[tuple[int, str]]:
    out = [(0, "single")]
    for k in range(1, n):
        out.append(((k + 1) // 2, "minus" if k % 2 else "plus"))
    return out


@dataclass(frozen=True, eq=False)
class HillSpectrum:
    """Sorted periodic spectrum with eigenfunctions.

    ``eigenfunctions[k]`` holds exponential coefficients over ``|l| <= modes``
    of the k-th eigenfunction, normalized so that ``c^{-1} int a |y|^2 = 1``
    (``a = 1, c = 1`` for the normal form).
    """

    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    labels: list
    modes: int
    c: float = 1.0
    kind: str = "lambda"
    degeneracies: list = field(default_factory=list)

    @property
    def n_bands(self) -> int:
        return (len(self.eigenvalues) - 1) // 2

    def band(self, l: int) -> tuple:
        """Eigenvalues ``(lam_l^-, lam_l^+)``; for l = 0 the single ground value twice."""
        if l == 0:
            return float(self.eigenvalues[0]), float(self.eigenvalues[0])
        return float(self.eigenvalues[2 * l - 1]), float(self.eigenvalues[2 * l])

    def basis_vectors(self) -> np.ndarray:
        """Columns orthonormal for the Gram matrix ``T(a_hat)`` (``Y^H B Y = I``)."""
        return self.eigenfunctions.T * np.sqrt(2 * np.pi / self.c)

    def eigenfunction(self, k: int) -> TimeFunction:
        return TimeFunction(self.eigenfunctions[k])

    def mu(self) -> np.ndarray:
        return self.eigenvalues if self.kind == "mu" else self.c ** 2 * self.eigenvalues


def _finish(vals: np.ndarray, vecs_real: np.ndarray, M: int, n_keep: int, c: float,
            kind: str, norm: float) -> HillSpectrum:
    U = real_basis(M)
    vecs = (U @ vecs_real[:, :n_keep]) * norm
    # fix a deterministic sign: first significant real-grid entry positive
    for k in range(n_keep):
        v = vecs[:, k]
        big = np.argmax(np.abs(v) > 1e-8 * np.abs(v).max())
        ph = v[big] / abs(v[big])
        # exp coefficients of a real function: conjugate pairs, rotate only by sign
        sgn = np.sign(np.real(ph)) or np.sign(np.imag(ph)) or 1.0
        vecs[:, k] = v * sgn
    ev = vals[:n_keep]
    degen = [k for k in range(1, n_keep - 1, 2) if abs(ev[k + 1] - ev[k]) <= 1e-10 * max(1, abs(ev[k]))]
    return HillSpectrum(eigenvalues=np.array(ev), eigenfunctions=vecs.T.copy(),
                        labels=_labels(n_keep), modes=M, c=c, kind=kind,
                        degeneracies=[(k + 1) // 2 for k in degen])


def _n_keep(L: int | None, M: int) -> int:
    if L is None:
        return 2 * M + 1
    if L > M:
        raise ValueError(f"band count {L} exceeds discretization modes {M}")
    return 2 * L + 1


def eig_transformed(rho: TimeFunction, L: int | None, modes: int) -> HillSpectrum:
    """Spectrum of ``-z'' + rho z = mu z`` in normal form.

    Parameters
    ----------
    rho : TimeFunction
        Real potential in the normal-form variable.
    L : int or None
        Number of bands to return (2L+1 eigenvalues); None returns all.
    modes : int
        Fourier truncation |l| <= modes; must be at least 4L.
    """
    if L is not None and modes < 4 * L:
        raise ValueError(f"modes={modes} below 4*L={4 * L}")
    if rho.lmax > 2 * modes:
        raise ValueError(f"potential support {rho.lmax} exceeds 2*modes={2 * modes}")
    U = real_basis(modes)
    ls = np.arange(-modes, modes + 1)
    A = np.diag(ls.astype(float) ** 2).astype(complex) + toeplitz_from_coeffs(rho.coeffs, modes)
    Ar = np.real(U.conj().T @ A @ U)
    Ar = (Ar + Ar.T) / 2
    vals, vecs = linalg.eigh(Ar)
    return _finish(vals, vecs, modes, _n_keep(L, modes), 1.0, "mu", 1 / np.sqrt(2 * np.pi))


def eig_direct(a: TimeFunction, d: TimeFunction, L: int | None, modes: int) -> HillSpectrum:
    """Spectrum of ``-y'' + d y = lam a y`` by generalized symmetric diagonalization.

    Eigenfunctions are normalized in the weighted product
    ``(y, z) = c^{-1} int_0^{2pi} a y conj(z) dt``.
    """
    check_positive(a)
    if a.lmax > 2 * modes or d.lmax > 2 * modes:
        raise ValueError("coefficient support exceeds 2*modes")
    c = compute_c(a)
    U = real_basis(modes)
    ls = np.arange(-modes, modes + 1)
    A = np.diag(ls.astype(float) ** 2).astype(complex) + toeplitz_from_coeffs(d.coeffs, modes)
    B = toeplitz_from_coeffs(a.coeffs, modes)
    Ar = np.real(U.conj().T @ A @ U)
    Br = np.real(U.conj().T @ B @ U)
    Ar, Br = (Ar + Ar.T) / 2, (Br + Br.T) / 2
    try:
        vals, vecs = linalg.eigh(Ar, Br)
    except linalg.LinAlgError as exc:
        raise HillSolverError("weight matrix is not positive definite") from exc
    return _finish(vals, vecs, modes, _n_keep(L, modes), c, "lambda", np.sqrt(c / (2 * np.pi)))


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


@dataclass
class AsymptoticsReport:
    applicable: bool
    rows: list
    passed: bool
    min_mu_margin: float

    def failures(self) -> list:
        return [r for r in self.rows if not r["pass"]]


def asymptotics_report(spec: HillSpectrum, L: LiouvilleData, slack: float = 1e-6,
                       bands: int | None = None) -> AsymptoticsReport:
    """Per-band check of the eigenvalue sandwich and the eta bounds.

    For every band l >= 1 and parity, with ``mu = c^2 lam``:

    * ``l^2 + rho0 <= mu <= l^2 + rho1``
    * ``(sqrt(1 + rho0) - 1)/l <= eta = sqrt(mu) - l <= rho1 / l``

    together with ``mu >= rho0`` for all computed values. Each inequality gets
    ``slack`` of room. ``eta_tilde = sqrt(lam) - l/c`` is reported alongside.
    """
    ok, rho0 = hypothesis2_check(L)
    mu = spec.mu()
    rho1 = L.rho1
    nb = spec.n_bands if bands is None else min(bands, spec.n_bands)
    rows = []
    if not ok:
        return AsymptoticsReport(applicable=False, rows=[], passed=False,
                                 min_mu_margin=float(np.min(mu) - rho0))
    all_ok = bool(np.all(mu >= rho0 - slack))
    for l in range(1, nb + 1):
        for k, par in ((2 * l - 1, "minus"), (2 * l, "plus")):
            m = float(mu[k])
            eta = np.sqrt(max(m, 0.0)) - l
            lo = (np.sqrt(1 + rho0) - 1) / l
            hi = rho1 / l
            lam = m / L.c ** 2
            passed = (l * l + rho0 - slack <= m <= l * l + rho1 + slack) and (lo - slack <= eta <= hi + slack)
            rows.append({"l": l, "parity": par, "lambda": lam, "mu": m, "eta": float(eta),
                         "eta_tilde": float(np.sqrt(max(lam, 0.0)) - l / L.c),
                         "sandwich_lo": l * l + rho0, "sandwich_hi": l * l + rho1,
                         "eta_lo": float(lo), "eta_hi": float(hi), "pass": bool(passed)})
            all_ok &= passed
    return AsymptoticsReport(applicable=True, rows=rows, passed=bool(all_ok),
                             min_mu_margin=float(np.min(mu) - rho0))


def weighted_gram(spec: HillSpectrum, a: TimeFunction, c: float | None = None) -> float:
    """Max entry of ``|G - I|`` for ``G_ik = c^{-1} int a psi_i conj(psi_k) dt``."""
    c = spec.c if c is None else c
    B = toeplitz_from_coeffs(a.coeffs, spec.modes)
    P = spec.eigenfunctions.T
    G = (2 * np.pi / c) * (P.conj().T @ B @ P)
    return float(np.abs(G - np.eye(G.shape[0])).max())


def interlacing_violation(eigenvalues: np.ndarray) -> float:
    """Largest amount by which the ordering lam_0 <= lam_1^- <= lam_1^+ <= ... fails."""
    ev = np.asarray(eigenvalues, dtype=float)
    return float(max(0.0, np.max(ev[:-1] - ev[1:], initial=0.0)))


def sign_changes(y: TimeFunction, n: int = 4096) -> int:
    """Number of sign changes of a real periodic function on a uniform grid."""
    vals = np.real(y.to_grid(n))
    s = np.sign(vals)
    s = s[s != 0]
    return int(np.count_nonzero(s != np.roll(s, 1)))
