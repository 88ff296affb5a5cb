"""
Range-kernel split and the x-averaged (Q) equation

    omega^2 v'' = eps * Pi_V f(t, x, v(t) + w(t, x)),    mean(v) = 0,

solved by Newton iteration on the zero-mean Fourier modes of v.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .spectral import (
    FourierField,
    NonlinearitySpec,
    TimeFunction,
    evaluate_nonlinearity,
    h1norm_time,
    nonlinearity_derivative,
    toeplitz_from_coeffs,
)

__all__ = [
    "QState",
    "QSolverError",
    "extract_f0",
    "split_f",
    "solve_q",
    "q_residual",
    "nondegeneracy_margin",
    "dv_dw",
    "hill_potential",
]


class QSolverError(RuntimeError):
    """Newton iteration for the averaged equation failed."""


@dataclass(frozen=True, eq=False)
class QState:
    """Result of :func:`solve_q`.

    ``residual`` is the H^1 norm of the zero-mean part of
    ``omega^2 v'' - eps Pi_V F(v + w)`` on the working truncation and
    ``mean_defect`` the modulus of its l = 0 coefficient. In bordered mode
    ``multiplier`` is the scalar that absorbs the mean equation.
    """

    v: TimeFunction
    residual: float
    mean_defect: float
    newton_iters: int
    nondegeneracy_margin: float
    converged: bool = True
    multiplier: float = 0.0
    history: tuple = ()

    def to_json_obj(self) -> dict:
        return {"v": self.v.to_json_obj(), "residual": self.residual,
                "mean_defect": self.mean_defect, "newton_iters": self.newton_iters,
                "nondegeneracy_margin": self.nondegeneracy_margin,
                "converged": self.converged, "multiplier": self.multiplier,
                "history": list(self.history)}

    @classmethod
    def from_json_obj(cls, obj: dict) -> "QState":
        return cls(v=TimeFunction.from_json_obj(obj["v"]), residual=obj["residual"],
                   mean_defect=obj["mean_defect"], newton_iters=obj["newton_iters"],
                   nondegeneracy_margin=obj["nondegeneracy_margin"],
                   converged=obj["converged"], multiplier=obj["multiplier"],
                   history=tuple(obj.get("history", ())))


def extract_f0(f: NonlinearitySpec) -> NonlinearitySpec:
    """x-averaged nonlinearity ``f0(t, u) = sum_m (Pi_V c_m)(t) u^m``."""
    return f.x_mean()


def split_f(f: NonlinearitySpec) -> tuple[NonlinearitySpec, NonlinearitySpec]:
    """``(f0, f - f0)``."""
    return f.x_mean(), f.x_fluctuation()


def _field(w: FourierField | None) -> FourierField:
    return FourierField.zeros(0, 0) if w is None else w


def _default_lmax(f: NonlinearitySpec, w: FourierField, v: TimeFunction | None) -> int:
    cands = [w.lmax, f.lmax, 4]
    if v is not None:
        cands.append(v.lmax)
    return max(cands)


def _state_field(v: TimeFunction, w: FourierField) -> FourierField:
    return w + v.lift()


def q_residual(f: NonlinearitySpec, eps: float, omega: float, w: FourierField,
               v: TimeFunction, lmax: int) -> TimeFunction:
    """``omega^2 v'' - eps Pi_V F(v + w)`` on ``|l| <= lmax`` (all modes, including l = 0)."""
    v = v.resized(lmax)
    rhs = evaluate_nonlinearity(f, _state_field(v, w), jmax=0, lmax=lmax).row(0)
    return TimeFunction(omega ** 2 * v.derivative(2).coeffs - eps * rhs.coeffs)


def _b0(f: NonlinearitySpec, v: TimeFunction, w: FourierField, lmax: int) -> TimeFunction:
    return nonlinearity_derivative(f, _state_field(v, w), jmax=0, lmax=lmax).row(0)


def _jacobian(b0: TimeFunction, eps: float, omega: float, L: int) -> np.ndarray:
    ls = np.arange(-L, L + 1).astype(float)
    J = np.diag(-omega ** 2 * ls ** 2).astype(complex)
    if eps != 0:
        J -= eps * toeplitz_from_coeffs(b0.coeffs, L)
    return J


def _h1(c: np.ndarray, ls: np.ndarray) -> float:
    return float(np.sqrt(np.sum((1 + ls.astype(float) ** 2) * np.abs(c) ** 2)))


def solve_q(f: NonlinearitySpec, eps: float, omega: float, w: FourierField | None = None,
            v_init: TimeFunction | None = None, tol: float = 1e-11, lmax: int | None = None,
            max_iter: int = 50, mode: str = "zero_mean") -> QState:
    """Newton solve of the averaged equation for a zero-mean ``v``.

    Parameters
    ----------
    f : NonlinearitySpec
    eps, omega : float
    w : FourierField, optional
        Range component (x-mean free). Defaults to 0.
    v_init : TimeFunction, optional
        Zero-mean starting guess; defaults to 0.
    tol : float
        Target for the H^1 norm of the zero-mean residual.
    lmax : int, optional
        t-truncation of v; defaults to the largest support among inputs.
    max_iter : int
    mode : {"zero_mean", "bordered"}
        ``"bordered"`` adds a scalar unknown on the mean equation so the
        Newton system is square on all modes; ``v`` is unchanged.

    Returns
    -------
    QState

    Raises
    ------
    QSolverError
        On divergence, iteration cap, or a singular Newton matrix.
    """
    if mode not in ("zero_mean", "bordered"):
        raise ValueError(f"unknown mode {mode!r}")
    w = _field(w)
    if np.any(w.coeffs[w.jmax] != 0):
        raise ValueError("w must have zero x-average")
    L = lmax if lmax is not None else _default_lmax(f, w, v_init)
    if v_init is None:
        v = TimeFunction.zeros(L)
    else:
        if abs(v_init.coeff(0)) != 0:
            raise ValueError("v_init must have zero mean")
        v = v_init.resized(L)
    ls = np.arange(-L, L + 1)
    nz = ls != 0
    hist = []
    mu = 0.0
    for it in range(1, max_iter + 1):
        G = q_residual(f, eps, omega, w, v, L).coeffs
        res = _h1(G[nz], ls[nz])
        hist.append(res)
        if not np.isfinite(res):
            raise QSolverError("Newton iteration produced non-finite residual")
        if res <= tol:
            margin = _margin_from_b0(_b0(f, v, w, 2 * L), eps, omega, L)
            return QState(v=v.without_mean() if eps != 0 else v, residual=res,
                          mean_defect=float(abs(G[L])), newton_iters=it,
                          nondegeneracy_margin=margin, multiplier=mu, history=tuple(hist))
        if it > 3 and res > 1e3 * hist[0] and hist[0] > 0:
            raise QSolverError(f"Newton diverged: residual {res:.3e}")
        Jf = _jacobian(_b0(f, v, w, 2 * L), eps, omega, L)
        try:
            with warnings.catch_warnings(), np.errstate(divide="raise", invalid="raise"):
                warnings.simplefilter("error", linalg.LinAlgWarning)
                if mode == "zero_mean":
                    dv = linalg.solve(Jf[np.ix_(nz, nz)], -G[nz])
                else:
                    # columns: zero-mean modes of v, then the multiplier on row l = 0
                    A = np.zeros((2 * L + 1, 2 * L + 1), dtype=complex)
                    A[:, :2 * L] = Jf[:, nz]
                    A[L, 2 * L] = -1.0
                    Gb = G.copy()
                    Gb[L] -= mu
                    sol = linalg.solve(A, -Gb)
                    dv = sol[:2 * L]
                    mu = float(np.real(mu + sol[2 * L]))
        except (linalg.LinAlgError, linalg.LinAlgWarning, FloatingPointError, ValueError) as exc:
            raise QSolverError("singular Newton matrix in the averaged equation") from exc
        c = v.coeffs.copy()
        c[nz] += dv
        v = TimeFunction(c).symmetrized().without_mean()
    raise QSolverError(f"Newton iteration cap {max_iter} reached, residual {hist[-1]:.3e}")


def _margin_from_b0(b0: TimeFunction, eps: float, omega: float, L: int) -> float:
    ls = np.arange(-L, L + 1)
    nz = ls != 0
    J = _jacobian(b0, eps, omega, L)[np.ix_(nz, nz)]
    off = J - np.diag(np.diag(J))
    if not np.any(off):
        return float(np.abs(np.diag(J)).min())
    return float(linalg.svdvals(J).min())


def nondegeneracy_margin(v: TimeFunction, f: NonlinearitySpec, eps: float, omega: float,
                         lmax: int | None = None, w: FourierField | None = None) -> float:
    """Smallest singular value of ``h -> omega^2 h'' - eps Pi_V f'(v + w) h`` on zero-mean modes."""
    w = _field(w)
    L = lmax if lmax is not None else max(v.lmax, 1)
    return _margin_from_b0(_b0(f, v.resized(L), w, 2 * L), eps, omega, L)


def dv_dw(f: NonlinearitySpec, eps: float, omega: float, w: FourierField | None,
          v: TimeFunction, h: FourierField, lmax: int | None = None) -> TimeFunction:
    """Derivative of the averaged-equation solution ``v(w)`` in direction ``h``.

    Solves ``(omega^2 d_tt - eps Pi_V f'(v + w)) dv = eps Pi_V(f'(v + w) h)``
    on zero-mean modes.
    """
    w = _field(w)
    if np.any(h.coeffs[h.jmax] != 0):
        raise ValueError("direction h must have zero x-average")
    L = lmax if lmax is not None else v.lmax
    if eps == 0:
        return TimeFunction.zeros(L, zero_mean=True)
    v = v.resized(L)
    u = _state_field(v, w)
    b = nonlinearity_derivative(f, u, jmax=max(w.jmax, h.jmax, 1) + h.jmax, lmax=2 * L + h.lmax)
    ls = np.arange(-L, L + 1)
    nz = ls != 0
    rhs = eps * (b * h).row(0).resized(L).coeffs
    J = _jacobian(b.row(0).resized(2 * L), eps, omega, L)[np.ix_(nz, nz)]
    try:
        sol = linalg.solve(J, rhs[nz])
    except linalg.LinAlgError as exc:
        raise QSolverError("singular linearization in dv_dw") from exc
    c = np.zeros(2 * L + 1, dtype=complex)
    c[nz] = sol
    return TimeFunction(c).symmetrized().without_mean()


def hill_potential(f: NonlinearitySpec, eps: float, omega: float, v: TimeFunction,
                   w: FourierField | None, lmax: int) -> TimeFunction:
    """``(eps/omega^2) Pi_V f'(v + w)`` truncated to ``|l| <= lmax``."""
    if eps == 0:
        return TimeFunction.zeros(0)
    b0 = _b0(f, v, _field(w), lmax)
    return TimeFunction(b0.coeffs * (eps / omega ** 2)).symmetrized()
