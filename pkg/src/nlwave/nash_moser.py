"""
Galerkin ladder for the range equation

    L_omega w = eps P_N Pi_W f(t, x, v(w) + w),    L_omega = omega^2 d_tt - a(t) d_xx,

with x-truncations N_n = floor(N0^(chi^n)) and a fixed t-truncation Lmax.

The first step is a Picard iteration at N0. Every later step solves

    Lin h = r_n + R_n(h),
    r_n    = L_omega w_n - eps P Pi_W F(w_n),
    R_n(h) = -eps P (F(w_n + h) - F(w_n) - DF(w_n) h),

where F(w) = Pi_W f(v(w) + w) and Lin = -L_omega + eps DF(w_n) is the
linearized operator (including the dependence of v on w). Lin is inverted
either by a dense LU factorization or through the Hill-eigenbasis splitting

    Lin = A (I x Y) |E|^{1/2} S (I - R) |E|^{1/2} (I x Y^H A),

with E_j = omega^2 Lambda - j^2, S = sign(E), and a Neumann series for
(I - R)^{-1}.

Unknowns are ordered j-major over j in {-N..-1, 1..N} and |l| <= Lmax,
in complex exponential coordinates. Real fields are exactly the vectors fixed
by the conjugation (j, l) -> conj(-j, -l), which every operator here commutes with.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import linalg
from scipy.sparse import linalg as spla

from .bifurcation import QSolverError, QState, hill_potential, solve_q
from .hill import HillSpectrum, compute_c, eig_direct
from .resonance import RESONANCE_FLOOR, MelnikovReport, l_cutoff, melnikov_check
from .spectral import (
    FourierField,
    NonlinearitySpec,
    TimeFunction,
    apply_Lomega,
    check_positive,
    evaluate_nonlinearity,
    nonlinearity_derivative,
    project_W,
    snorm,
    toeplitz_from_coeffs,
)

__all__ = [
    "Problem",
    "SolverParams",
    "TraceEntry",
    "IterationTrace",
    "Solution",
    "LinearizedOperator",
    "Factorization",
    "PreconditionedSplit",
    "NeumannDiagnostics",
    "ResidualReport",
    "SolverError",
    "SizingError",
    "MelnikovExclusion",
    "SingularOperatorError",
    "ContractionFailure",
    "NeumannDivergence",
    "ResidualToleranceError",
    "truncation_sequence",
    "field_to_vec",
    "vec_to_field",
    "snorm_weights",
    "assemble_linearized",
    "factorize",
    "invert_direct",
    "precondition_split",
    "reconstruct_from_split",
    "neumann_invert",
    "spectral_radius",
    "inverse_snorm_estimate",
    "step0",
    "step_n",
    "run",
    "pde_residual",
    "tame_monitor",
    "omega_sensitivity",
    "final_spectrum",
]

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------


class SolverError(RuntimeError):
    """Base class for failures of the range-equation solver."""

    partial = None


class SizingError(SolverError):
    """A truncation exceeds the configured caps."""


class MelnikovExclusion(SolverError):
    """The parameter point fails a non-resonance screen."""

    def __init__(self, msg: str, report: MelnikovReport | None = None, N: int | None = None):
        super().__init__(msg)
        self.report = report
        self.N = N


class SingularOperatorError(SolverError):
    """The linearized operator is numerically singular (resonance)."""


class ContractionFailure(SolverError):
    """A fixed-point loop stopped contracting."""


class NeumannDivergence(SolverError):
    """The Neumann series for (I - R)^{-1} does not converge."""

    def __init__(self, msg: str, diagnostics=None):
        super().__init__(msg)
        self.diagnostics = diagnostics


class ResidualToleranceError(SolverError):
    """The run ended with a residual above tolerance."""


# ---------------------------------------------------------------------------
# Parameters and problem data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Problem:
    a: TimeFunction
    f: NonlinearitySpec
    eps: float
    omega: float


@dataclass(frozen=True)
class SolverParams:
    """Solver configuration.

    ``sigma`` and ``beta`` are derived from ``tau`` and ``chi``. ``n_max`` is
    the number of steps after the first; ``min_steps`` forces at least that
    many even when the residual is already below ``tol_residual``.
    """

    gamma: float = 0.1
    tau: float = 1.5
    chi: float = 1.5
    N0: int = 8
    s: float = 1.0
    n_max: int = 3
    Lmax: int = 32
    tol_residual: float = 1e-8
    inversion_mode: str = "direct"
    min_steps: int = 1
    n_cap: int = 128
    max_dense_dim: int = 6000
    q_tol: float = 1e-11
    inner_max: int = 40
    inner_tol: float = 1e-14
    contraction_fail: float = 0.95
    picard_max: int = 100
    neumann_max_terms: int = 400
    neumann_tol: float = 1e-13
    residual_refine: int = 2
    estimate_inverse_norm: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 1 < self.tau < 2:
            raise ValueError("tau must lie in (1, 2)")
        if not self.chi > 1:
            raise ValueError("chi must exceed 1")
        if self.N0 < 1 or self.Lmax < 1:
            raise ValueError("N0 and Lmax must be positive")
        if self.s < 0:
            raise ValueError("s must be nonnegative")
        if self.inversion_mode not in ("direct", "preconditioned"):
            raise ValueError(f"unknown inversion mode {self.inversion_mode!r}")

    @property
    def sigma(self) -> float:
        return self.tau * (self.tau - 1) / (2 - self.tau)

    @property
    def beta(self) -> float:
        t, c, sg = self.tau, self.chi, self.sigma
        return c * (t - 1 + sg) + c * (2 * t + 2) + c / (c - 1) * (t - 1 + sg)

    def to_dict(self) -> dict:
        return asdict(self)


def truncation_sequence(N0: int, chi: float, n_max: int, cap: int | None = None) -> list[int]:
    """``N_n = floor(N0 ** (chi ** n))`` for ``n = 0..n_max``.

    Raises
    ------
    SizingError
        If some ``N_n`` exceeds ``cap``.
    """
    if N0 < 1 or chi <= 1:
        raise ValueError("need N0 >= 1 and chi > 1")
    out = []
    q = math.log(N0)
    for n in range(n_max + 1):
        x = math.exp(q * chi ** n)
        r = round(x)
        val = r if abs(x - r) <= 1e-9 * x else math.floor(x)
        if cap is not None and val > cap:
            raise SizingError(f"N_{n} = {val} exceeds hard cap {cap}")
        out.append(int(val))
    return out


# ---------------------------------------------------------------------------
# Coordinates
# ---------------------------------------------------------------------------


def _jvals(N: int) -> np.ndarray:
    return np.concatenate([np.arange(-N, 0), np.arange(1, N + 1)])


def field_to_vec(w: FourierField, N: int, L: int) -> np.ndarray:
    c = w.resized(N, L).coeffs
    return np.concatenate([c[:N], c[N + 1:]]).reshape(-1).copy()


def vec_to_field(x: np.ndarray, N: int, L: int) -> FourierField:
    c = np.zeros((2 * N + 1, 2 * L + 1), dtype=complex)
    x = np.asarray(x).reshape(2 * N, 2 * L + 1)
    c[:N] = x[:N]
    c[N + 1:] = x[N:]
    return FourierField(c)


def snorm_weights(N: int, L: int, s: float) -> np.ndarray:
    """Per-coordinate weights ``(1 + |j|^{2s})(1 + l^2)``."""
    j = np.abs(_jvals(N)).astype(float)
    l = np.arange(-L, L + 1).astype(float)
    return ((1 + j ** (2 * s))[:, None] * (1 + l ** 2)[None, :]).reshape(-1)


def _lomega_trunc(w: FourierField, omega: float, a: TimeFunction, N: int, L: int) -> FourierField:
    return apply_Lomega(w, omega, a).resized(N, L)


def _real_field(x: FourierField) -> FourierField:
    return project_W(x.symmetrized())


# ---------------------------------------------------------------------------
# Linearized operator
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class LinearizedOperator:
    """Matrix of ``h -> -L_omega h + eps P_N Pi_W[b h + b D_w v h]``.

    Either ``matrix`` (dense) or ``blocks`` (block diagonal in j, shape
    ``(2N, 2L+1, 2L+1)``) is set.
    """

    N: int
    L: int
    eps: float
    omega: float
    a: TimeFunction
    bhat: np.ndarray
    terms: tuple
    matrix: np.ndarray | None = None
    blocks: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return 2 * self.N * (2 * self.L + 1)

    @property
    def block_diagonal(self) -> bool:
        return self.matrix is None

    def dense(self) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix
        return linalg.block_diag(*self.blocks)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix @ x
        n = 2 * self.L + 1
        return np.einsum("jab,jb->ja", self.blocks, x.reshape(2 * self.N, n)).reshape(-1)

    def apply(self, h: FourierField) -> FourierField:
        return vec_to_field(self.matvec(field_to_vec(h, self.N, self.L)), self.N, self.L)

    def hill_potential(self) -> TimeFunction:
        """``(eps / omega^2) Pi_V b`` on ``|l| <= 2L`` as used in the diagonal blocks."""
        row = self.bhat[(self.bhat.shape[0] - 1) // 2] if self.bhat.size else np.zeros(1)
        return TimeFunction(row * (self.eps / self.omega ** 2)).symmetrized()


def _diag_blocks(omega: float, a: TimeFunction, N: int, L: int) -> np.ndarray:
    ls = np.arange(-L, L + 1).astype(float)
    B = toeplitz_from_coeffs(a.coeffs, L)
    j2 = _jvals(N).astype(float) ** 2
    return omega ** 2 * np.diag(ls ** 2)[None] - j2[:, None, None] * B[None]


def assemble_linearized(f: NonlinearitySpec, eps: float, omega: float, a: TimeFunction,
                        w: FourierField, v: TimeFunction, N: int, L: int,
                        include_dv: bool = True, force_dense: bool = False,
                        max_dim: int | None = None) -> LinearizedOperator:
    """Assemble the linearized range operator at ``u = v + w``.

    The coupling ``b = f'(v + w)`` is evaluated on ``|j| <= 2N, |l| <= 2L``,
    which is every coefficient the truncated products need. When ``b`` has no
    x-dependence the operator stays block diagonal in j and no dense matrix is
    formed.
    """
    check_positive(a)
    if w.jmax > 0 and np.any(w.coeffs[w.jmax] != 0):
        raise ValueError("w must have zero x-average")
    blocks = _diag_blocks(omega, a, N, L).astype(complex)
    n = 2 * L + 1
    dim = 2 * N * n
    terms = ["L_omega"]
    if eps == 0 or f.degree == 0:
        bhat = np.zeros((4 * N + 1, 4 * L + 1), dtype=complex)
        op = LinearizedOperator(N, L, eps, omega, a, bhat, tuple(terms), blocks=blocks)
        if force_dense:
            op.matrix, op.blocks = op.dense(), None
        return op
    u = w + v.lift()
    # exact x-support of b, so an x-independent coupling has no roundoff in j != 0
    rows = np.nonzero(np.any(u.coeffs != 0, axis=1))[0]
    ju = int(np.abs(u.jmodes[rows]).max()) if rows.size else 0
    jb = min(2 * N, f.jmax + (f.degree - 1) * ju)
    bhat = nonlinearity_derivative(f, u, jmax=jb, lmax=2 * L).resized(2 * N, 2 * L).coeffs
    terms.append("coupling")
    ls = np.arange(-L, L + 1)
    Ld = ls[:, None] - ls[None, :]
    xdep = np.any(np.delete(bhat, 2 * N, axis=0) != 0)
    if not xdep and not force_dense:
        blocks = blocks + eps * toeplitz_from_coeffs(bhat[2 * N], L)[None]
        return LinearizedOperator(N, L, eps, omega, a, bhat, tuple(terms), blocks=blocks)
    if max_dim is not None and dim > max_dim:
        raise SizingError(f"dense operator dimension {dim} exceeds cap {max_dim}")
    jv = _jvals(N)
    K = jv[:, None] - jv[None, :]
    M = bhat[K[:, None, :, None] + 2 * N, Ld[None, :, None, :] + 2 * L]
    M = (eps * M).reshape(dim, dim)
    Mv = M.reshape(2 * N, n, 2 * N, n)
    for k in range(2 * N):
        Mv[k, :, k, :] += blocks[k]
    if include_dv:
        terms.append("dv")
        nz = ls != 0
        JQ = -omega ** 2 * np.diag(ls[nz].astype(float) ** 2) - eps * toeplitz_from_coeffs(bhat[2 * N], L)[np.ix_(nz, nz)]
        Pm = bhat[(-jv)[None, :, None] + 2 * N, Ld[:, None, :] + 2 * L].reshape(n, dim)
        try:
            Dv = linalg.solve(JQ, eps * Pm[nz])
        except linalg.LinAlgError as exc:
            raise SingularOperatorError("averaged-equation linearization is singular") from exc
        Brow = bhat[jv[:, None, None] + 2 * N, Ld[None][:, :, nz] + 2 * L].reshape(dim, int(nz.sum()))
        M += eps * (Brow @ Dv)
    return LinearizedOperator(N, L, eps, omega, a, bhat, tuple(terms), matrix=M)


# ---------------------------------------------------------------------------
# Direct inversion
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class Factorization:
    """LU factors of a linearized operator (dense or per j block)."""

    op: LinearizedOperator
    lu: tuple | None
    block_lu: list | None
    min_pivot_ratio: float

    def solve_vec(self, b: np.ndarray, trans: int = 0) -> np.ndarray:
        if self.lu is not None:
            return linalg.lu_solve(self.lu, b, trans=trans, check_finite=False)
        n = 2 * self.op.L + 1
        bb = b.reshape(2 * self.op.N, n)
        out = np.empty_like(bb, dtype=complex)
        for k, f in enumerate(self.block_lu):
            out[k] = linalg.lu_solve(f, bb[k], trans=trans, check_finite=False)
        return out.reshape(-1)


def _pivot_ratio(U: np.ndarray) -> float:
    d = np.abs(np.diag(U))
    return float(d.min() / max(d.max(), 1e-300))


def factorize(op: LinearizedOperator, floor: float = RESONANCE_FLOOR) -> Factorization:
    """LU-factor the operator; a pivot ratio below ``floor`` signals resonance."""
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", linalg.LinAlgWarning)
        if op.matrix is not None:
            lu = linalg.lu_factor(op.matrix, check_finite=False)
            ratio = _pivot_ratio(lu[0])
            fac = Factorization(op, lu, None, ratio)
        else:
            bl = [linalg.lu_factor(b, check_finite=False) for b in op.blocks]
            ratio = min(_pivot_ratio(f[0]) for f in bl)
            fac = Factorization(op, None, bl, ratio)
    if not ratio > floor:
        raise SingularOperatorError(
            f"linearized operator is numerically singular (pivot ratio {ratio:.2e})")
    return fac


def invert_direct(op: LinearizedOperator | Factorization, rhs: FourierField,
                  rel_tol: float = 1e-10) -> tuple[FourierField, dict]:
    """Solve ``op h = rhs`` by LU; checks the relative residual of the solve."""
    fac = op if isinstance(op, Factorization) else factorize(op)
    o = fac.op
    b = field_to_vec(rhs, o.N, o.L)
    x = fac.solve_vec(b)
    nb = np.linalg.norm(b)
    res = float(np.linalg.norm(o.matvec(x) - b) / nb) if nb > 0 else 0.0
    if res > rel_tol:
        raise SingularOperatorError(f"linear solve residual {res:.2e} above {rel_tol:.0e}")
    return vec_to_field(x, o.N, o.L), {"solve_residual": res, "pivot_ratio": fac.min_pivot_ratio}


def inverse_snorm_estimate(fac: Factorization, s: float, iters: int = 40, seed: int = 0) -> float:
    """Largest singular value of the inverse in the s-norm.

    The s-norm is the weighted Euclidean norm with weights from
    :func:`snorm_weights`, so this is ``||W Lin^{-1} W^{-1}||_2``, found by
    Lanczos bidiagonalization (ARPACK) with ``iters`` as the restart budget.
    """
    o = fac.op
    wt = np.sqrt(snorm_weights(o.N, o.L, s))
    if o.dim == 1:
        return float(abs(fac.solve_vec(np.ones(1))[0]))
    op = spla.LinearOperator(
        (o.dim, o.dim), dtype=complex,
        matvec=lambda x: wt * fac.solve_vec(np.ravel(x) / wt),
        rmatvec=lambda y: fac.solve_vec(wt * np.ravel(y), trans=2) / wt)
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(o.dim) + 1j * rng.standard_normal(o.dim)
    sv = spla.svds(op, k=1, v0=v0, tol=1e-12, maxiter=max(iters, 1) * o.dim,
                   return_singular_vectors=False, solver="arpack")
    return float(sv[0])


# ---------------------------------------------------------------------------
# Eigenbasis splitting and Neumann inversion
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class PreconditionedSplit:
    """Factors of ``Lin = A (I x Y) |E|^{1/2} S (I - R) |E|^{1/2} (I x Y^H A)``.

    ``Y`` holds the Hill eigenvectors (columns, ``Y^H B Y = I`` with
    ``B = T(a_hat)``); ``E[k, m] = omega^2 lam_m - j_k^2``.
    """

    N: int
    L: int
    Y: np.ndarray
    B: np.ndarray
    E: np.ndarray
    sign: np.ndarray
    R: np.ndarray
    spectrum: HillSpectrum

    @property
    def D_half(self) -> np.ndarray:
        return np.sqrt(np.abs(self.E)).reshape(-1)

    def to_eigen(self, x: np.ndarray) -> np.ndarray:
        n = 2 * self.L + 1
        return (x.reshape(2 * self.N, n) @ self.Y.conj()).reshape(-1)

    def from_eigen(self, z: np.ndarray) -> np.ndarray:
        n = 2 * self.L + 1
        return (z.reshape(2 * self.N, n) @ self.Y.T).reshape(-1)


def _block_transform(Mat: np.ndarray, left: np.ndarray, right: np.ndarray, N: int, n: int) -> np.ndarray:
    """``(I x left) Mat (I x right)`` for block size n."""
    dim = 2 * N * n
    T = np.matmul(left[None], Mat.reshape(2 * N, n, dim)).reshape(dim, dim)
    return np.matmul(T.reshape(dim, 2 * N, n), right).reshape(dim, dim)


def precondition_split(op: LinearizedOperator, spectrum: HillSpectrum | None = None,
                       eps: float | None = None, omega: float | None = None,
                       N: int | None = None, floor: float = RESONANCE_FLOOR) -> PreconditionedSplit:
    """Hill-eigenbasis splitting of the linearized operator.

    The Hill problem uses the same weight ``a``, the potential
    ``(eps/omega^2) Pi_V b`` of the operator, and the full Fourier basis
    ``|l| <= L``, so the j-diagonal part is exactly diagonal in eigen
    coordinates.

    Raises
    ------
    MelnikovExclusion
        If some ``|omega^2 lam - j^2|`` is below ``floor``.
    """
    N = op.N if N is None else N
    omega = op.omega if omega is None else omega
    L = op.L
    n = 2 * L + 1
    if spectrum is None:
        spectrum = eig_direct(op.a, op.hill_potential(), None, L)
    if spectrum.modes != L or len(spectrum.eigenvalues) != n:
        raise ValueError("splitting needs the full Hill eigenbasis on |l| <= Lmax")
    Y = spectrum.basis_vectors()
    B = toeplitz_from_coeffs(op.a.coeffs, L)
    j2 = _jvals(N).astype(float) ** 2
    E = omega ** 2 * spectrum.eigenvalues[None, :] - j2[:, None]
    if np.abs(E).min() < floor:
        k, m = np.unravel_index(np.argmin(np.abs(E)), E.shape)
        raise MelnikovExclusion(
            f"small divisor |omega^2 lam - j^2| = {abs(E[k, m]):.2e} at j={_jvals(N)[k]}, "
            f"band {spectrum.labels[m]}", N=N)
    Ef = E.reshape(-1)
    sgn = np.sign(Ef)
    if op.terms == ("L_omega",):
        # pure -L_omega: diagonal in the Hill basis, so R vanishes identically
        R = np.zeros((Ef.size, Ef.size), dtype=complex)
    else:
        M = _block_transform(op.dense(), Y.conj().T, Y, N, n)
        rs = 1 / np.sqrt(np.abs(Ef))
        X = -M * rs[:, None] * rs[None, :]
        X[np.diag_indices_from(X)] += sgn
        R = sgn[:, None] * X
    return PreconditionedSplit(N=N, L=L, Y=Y, B=B, E=E, sign=sgn, R=R, spectrum=spectrum)


def reconstruct_from_split(sp: PreconditionedSplit) -> np.ndarray:
    """Dense ``A (I x Y) |E|^{1/2} S (I - R) |E|^{1/2} (I x Y^H A)``."""
    n = 2 * sp.L + 1
    dh = sp.D_half
    core = (np.eye(sp.R.shape[0]) - sp.R) * sp.sign[:, None]
    core = dh[:, None] * core * dh[None, :]
    BY = sp.B @ sp.Y
    return _block_transform(core, BY, sp.Y.conj().T @ sp.B, sp.N, n)


@dataclass
class NeumannDiagnostics:
    terms: int
    term_norms: list
    converged: bool
    ratio_estimate: float


def neumann_invert(sp: PreconditionedSplit, rhs: FourierField | np.ndarray, max_terms: int = 400,
                   tol: float = 1e-13) -> tuple:
    """Solve ``Lin h = rhs`` through the Neumann series of ``(I - R)^{-1}``.

    The series is truncated once a term falls below ``tol`` relative to the
    partial sum; ``terms`` in the diagnostics counts the terms summed.

    Raises
    ------
    NeumannDivergence
        If the terms stop decaying or ``max_terms`` is reached.
    """
    as_field = isinstance(rhs, FourierField)
    b = field_to_vec(rhs, sp.N, sp.L) if as_field else np.asarray(rhs, dtype=complex)
    rs = 1 / sp.D_half
    z = sp.sign * rs * sp.to_eigen(b)
    acc = z.copy()
    term = z
    norms = [float(np.linalg.norm(z))]
    converged = norms[0] == 0.0
    grow = 0
    p = 1
    while not converged and p < max_terms:
        term = sp.R @ term
        tn = float(np.linalg.norm(term))
        norms.append(tn)
        if tn <= tol * np.linalg.norm(acc):
            converged = True
            break
        acc += term
        p += 1
        grow = grow + 1 if tn > norms[-2] else 0
        if grow >= 10 or not np.isfinite(tn) or tn > 1e8 * max(norms[0], 1e-300):
            break
    k = min(len(norms) - 1, 20)
    ratio = (norms[-1] / norms[-1 - k]) ** (1.0 / k) if k > 0 and norms[-1 - k] > 0 else 0.0
    diag = NeumannDiagnostics(terms=p, term_norms=norms, converged=converged, ratio_estimate=float(ratio))
    if not converged:
        raise NeumannDivergence(
            f"Neumann series not converging after {p} terms (term ratio ~ {ratio:.3f})", diag)
    h = sp.from_eigen(rs * acc)
    return (vec_to_field(h, sp.N, sp.L) if as_field else h), diag


def spectral_radius(R: np.ndarray, iters: int = 300, seed: int = 0) -> float:
    """Power-iteration estimate ``(||R^k x|| / ||x||)^{1/k}``."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(R.shape[0]) + 1j * rng.standard_normal(R.shape[0])
    x /= np.linalg.norm(x)
    logsum = 0.0
    for _ in range(iters):
        x = R @ x
        nx = np.linalg.norm(x)
        if nx == 0:
            return 0.0
        logsum += math.log(nx)
        x /= nx
    return math.exp(logsum / iters)


# ---------------------------------------------------------------------------
# Trace
# ---------------------------------------------------------------------------


@dataclass
class TraceEntry:
    n: int
    N: int
    h_norm_s: float
    htt_norm_s: float
    S_n: float
    residual_s: float
    residual_max: float
    melnikov_min_margin: float
    inverse_norm_est: float
    neumann_terms: int
    inner_iters: int
    q_residual: float
    q_mean_defect: float


TRACE_FIELDS = [f.name for f in TraceEntry.__dataclass_fields__.values()]


@dataclass
class IterationTrace:
    entries: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, k):
        return self.entries[k]

    def append(self, e: TraceEntry) -> None:
        self.entries.append(e)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(e, name) for e in self.entries], dtype=float)

    def rows(self) -> list[dict]:
        return [asdict(e) for e in self.entries]

    def step_ratios(self) -> list[float]:
        h = self.column("h_norm_s")
        return [float(h[k + 1] / h[k]) if h[k] > 0 else 0.0 for k in range(len(h) - 1)]


@dataclass
class ResidualReport:
    snorm: float
    max_abs: float
    field: FourierField = field(repr=False, default=None)

    @property
    def value(self) -> float:
        return max(self.snorm, self.max_abs)


@dataclass
class Solution:
    u: FourierField
    v: TimeFunction
    w: FourierField
    q: QState
    trace: IterationTrace
    problem: Problem
    params: SolverParams
    residual: ResidualReport
    melnikov: MelnikovReport | None = None

    @property
    def N(self) -> int:
        return self.w.jmax


# ---------------------------------------------------------------------------
# Steps
# ---------------------------------------------------------------------------


def _range_F(problem: Problem, w: FourierField, N: int, L: int, q_prev: QState | None,
             q_tol: float) -> tuple[FourierField, QState]:
    """``P_N Pi_W f(v(w) + w)`` on ``(N, L)`` and the averaged-equation state at w."""
    q = solve_q(problem.f, problem.eps, problem.omega, w,
                v_init=None if q_prev is None else q_prev.v, tol=q_tol, lmax=L)
    Fw = evaluate_nonlinearity(problem.f, w + q.v.lift(), jmax=N, lmax=L)
    return project_W(Fw), q


def _solve_lomega(rhs: FourierField, omega: float, a: TimeFunction, N: int, L: int) -> FourierField:
    """Galerkin solve of ``L_omega w = rhs`` on ``1 <= |j| <= N, |l| <= L``."""
    op = LinearizedOperator(N, L, 0.0, omega, a, np.zeros((1, 1)), ("L_omega",),
                            blocks=_diag_blocks(omega, a, N, L).astype(complex))
    out = factorize(op).solve_vec(field_to_vec(rhs, N, L))
    return _real_field(-vec_to_field(out, N, L))


def _screen(problem: Problem, params: SolverParams, v: TimeFunction, w: FourierField | None,
            N: int, families: tuple) -> tuple[MelnikovReport, HillSpectrum, float]:
    a = problem.a
    c = compute_c(a)
    lc = l_cutoff(c, problem.omega, N)
    modes = max(4 * lc, 64)
    if families == ("lambda",) and w is None:
        d = TimeFunction.zeros(0)
    else:
        d = hill_potential(problem.f, problem.eps, problem.omega, v, w, 2 * params.Lmax)
    spec = eig_direct(a, d, lc, modes)
    rep = melnikov_check(spec, c, problem.omega, N, params.gamma, params.tau, families=families)
    return rep, spec, c


def _raise_melnikov(rep: MelnikovReport, N: int, stage: str):
    fam, j, l, par = rep.worst
    raise MelnikovExclusion(
        f"{stage}: Melnikov condition violated at j={j}, l={l} ({fam}, {par}), "
        f"margin {rep.min_margin:.3e}", report=rep, N=N)


def _entry(problem, params, n, N, h, w, q, resid, margin, inv_norm, terms, inner, t0) -> TraceEntry:
    s = params.s
    log.debug("step %d finished in %.3f s", n, time.perf_counter() - t0)
    return TraceEntry(n=n, N=N, h_norm_s=snorm(h, s), htt_norm_s=snorm(h.dt(2), s),
                      S_n=1.0 + snorm(w, s + params.beta), residual_s=resid.snorm,
                      residual_max=resid.max_abs, melnikov_min_margin=margin,
                      inverse_norm_est=inv_norm, neumann_terms=terms, inner_iters=inner,
                      q_residual=q.residual, q_mean_defect=q.mean_defect)


def _zero_q(L: int) -> QState:
    return QState(v=TimeFunction.zeros(L), residual=0.0, mean_defect=0.0, newton_iters=1,
                  nondegeneracy_margin=float("nan"))


def step0(problem: Problem, params: SolverParams, screen: bool = True):
    """Picard iteration ``w <- eps L_omega^{-1} P_{N0} Pi_W F(v(w) + w)`` from ``w = 0``.

    Returns
    -------
    (w0, q0, TraceEntry)
    """
    t0 = time.perf_counter()
    N, L = params.N0, params.Lmax
    margin = float("nan")
    if problem.eps == 0:
        w = FourierField.zeros(N, L)
        q = _zero_q(L)
        resid = pde_residual(q.v.lift() + w, problem.eps, problem.omega, problem.a, problem.f,
                             params.residual_refine, params.s)
        return w, q, _entry(problem, params, 0, N, w, w, q, resid, margin, 0.0, 0, 0, t0)
    if screen:
        rep, _, _ = _screen(problem, params, TimeFunction.zeros(0), None, N, ("lambda",))
        margin = rep.min_margin
        if not rep.passed:
            _raise_melnikov(rep, N, "first-step screen")
    w = FourierField.zeros(N, L)
    q = None
    prev = None
    it = 0
    for it in range(1, params.picard_max + 1):
        Fw, q = _range_F(problem, w, N, L, q, params.q_tol)
        w_new = _solve_lomega(Fw * problem.eps, problem.omega, problem.a, N, L)
        diff = snorm(w_new - w, params.s)
        w = w_new
        tol = params.inner_tol * max(1.0, snorm(w, params.s))
        if diff <= tol:
            break
        if prev is not None and diff >= prev and diff > 100 * tol:
            raise ContractionFailure(f"first-step Picard iteration not contracting "
                                     f"(ratio {diff / prev:.3f})")
        prev = diff
    else:
        raise ContractionFailure(f"first-step Picard iteration cap {params.picard_max} reached")
    _, q = _range_F(problem, w, N, L, q, params.q_tol)
    resid = pde_residual(w + q.v.lift(), problem.eps, problem.omega, problem.a, problem.f,
                         params.residual_refine, params.s)
    return w, q, _entry(problem, params, 0, N, w, w, q, resid, margin, float("nan"), 0, it, t0)


def _make_solver(op: LinearizedOperator, params: SolverParams):
    """Return ``(solve(field) -> field, info dict)`` for the configured inversion mode."""
    info = {"neumann_terms": 0, "inverse_norm_est": float("nan")}
    fac = factorize(op)
    if params.estimate_inverse_norm:
        info["inverse_norm_est"] = inverse_snorm_estimate(fac, params.s, seed=params.seed)
    if params.inversion_mode == "direct":
        def solve(rhs):
            return invert_direct(fac, rhs)[0]
    else:
        sp = precondition_split(op)

        def solve(rhs):
            h, d = neumann_invert(sp, rhs, params.neumann_max_terms, params.neumann_tol)
            info["neumann_terms"] = max(info["neumann_terms"], d.terms)
            return h
    return solve, info


def step_n(problem: Problem, params: SolverParams, w_n: FourierField, q_n: QState, n: int,
           screen: bool = True):
    """One step of the ladder: from ``w_n`` at ``N_n`` to ``w_{n+1}`` at ``N_{n+1}``.

    Returns
    -------
    (h, w_next, q_next, TraceEntry)
    """
    t0 = time.perf_counter()
    seq = truncation_sequence(params.N0, params.chi, n + 1, cap=params.n_cap)
    N, L = seq[n + 1], params.Lmax
    eps, om, a = problem.eps, problem.omega, problem.a
    margin = float("nan")
    if screen:
        rep, _, _ = _screen(problem, params, q_n.v, w_n, N, ("lambda", "linear"))
        margin = rep.min_margin
        if not rep.passed:
            _raise_melnikov(rep, N, f"step {n + 1} screen")
    op = assemble_linearized(problem.f, eps, om, a, w_n, q_n.v, N, L,
                             max_dim=params.max_dense_dim)
    solve, info = _make_solver(op, params)
    wN = w_n.resized(N, L)
    F0, q0 = _range_F(problem, wN, N, L, q_n, params.q_tol)
    r = _lomega_trunc(wN, om, a, N, L) - F0 * eps
    h = _real_field(solve(r))
    inner = 1
    linear = problem.f.degree <= 1
    prev = None
    wnorm = max(1.0, snorm(wN, params.s))
    q = q0
    while not linear:
        if inner >= params.inner_max:
            raise ContractionFailure(f"inner loop cap {params.inner_max} reached at step {n + 1}")
        Fh, q = _range_F(problem, wN + h, N, L, q, params.q_tol)
        Rh = (Fh - F0) * (-eps) + op.apply(h) + _lomega_trunc(h, om, a, N, L)
        h_new = _real_field(solve(r + Rh))
        inner += 1
        diff = snorm(h_new - h, params.s)
        h = h_new
        tol = params.inner_tol * wnorm
        if diff <= tol:
            break
        if prev is not None and diff > 100 * tol and diff / prev >= params.contraction_fail:
            raise ContractionFailure(f"inner loop contraction ratio {diff / prev:.3f} at step {n + 1}")
        prev = diff
    w_next = _real_field(wN + h)
    _, q = _range_F(problem, w_next, N, L, q, params.q_tol)
    resid = pde_residual(w_next + q.v.lift(), eps, om, a, problem.f, params.residual_refine, params.s)
    e = _entry(problem, params, n + 1, N, h, w_next, q, resid, margin, info["inverse_norm_est"],
               info["neumann_terms"], inner, t0)
    return h, w_next, q, e


def run(problem: Problem, params: SolverParams, screen: bool = True,
        require_tolerance: bool = True) -> Solution:
    """Full solve: first step, then ladder steps until the residual is below tolerance.

    Raises
    ------
    SolverError
        Any step failure; ``ResidualToleranceError`` if the final residual
        exceeds ``tol_residual`` (the partial solution is attached as
        ``exc.partial``).
    """
    trace = IterationTrace()
    if problem.eps > params.gamma ** 2:
        log.warning("epsilon %.3e exceeds gamma^2 = %.3e; convergence is not expected to be robust",
                    problem.eps, params.gamma ** 2)
    try:
        w, q, e = step0(problem, params, screen=screen)
    except SolverError as exc:
        exc.partial = None
        raise
    trace.append(e)
    log.info("step 0: N=%d |w|_s=%.3e residual=%.3e", e.N, e.h_norm_s, e.residual_s)
    steps = 0
    resid = max(e.residual_s, e.residual_max)
    while problem.eps != 0 and steps < params.n_max and not (resid < params.tol_residual and steps >= params.min_steps):
        try:
            _, w, q, e = step_n(problem, params, w, q, steps, screen=screen)
        except SolverError as exc:
            exc.partial = _assemble(problem, params, w, q, trace)
            raise
        trace.append(e)
        steps += 1
        resid = max(e.residual_s, e.residual_max)
        log.info("step %d: N=%d |h|_s=%.3e residual=%.3e", steps, e.N, e.h_norm_s, e.residual_s)
    sol = _assemble(problem, params, w, q, trace)
    if require_tolerance and sol.residual.value >= params.tol_residual:
        exc = ResidualToleranceError(f"final residual {sol.residual.value:.3e} above "
                                     f"tolerance {params.tol_residual:.1e}")
        exc.partial = sol
        raise exc
    return sol


def _assemble(problem: Problem, params: SolverParams, w: FourierField, q: QState,
              trace: IterationTrace) -> Solution:
    u = w + q.v.lift()
    if abs(u.coeff(0, 0)) > 1e-14:
        raise SolverError("solution has nonzero space-time mean")
    resid = pde_residual(u, problem.eps, problem.omega, problem.a, problem.f,
                         params.residual_refine, params.s)
    return Solution(u=u, v=q.v, w=w, q=q, trace=trace, problem=problem, params=params,
                    residual=resid)


def final_spectrum(sol: Solution, bands: int, modes: int) -> tuple[HillSpectrum, float]:
    """Hill spectrum with the potential of the final state, and ``c``."""
    p = sol.problem
    d = hill_potential(p.f, p.eps, p.omega, sol.v, sol.w, 2 * sol.params.Lmax)
    return eig_direct(p.a, d, bands, modes), compute_c(p.a)


# ---------------------------------------------------------------------------
# Certification and monitoring
# ---------------------------------------------------------------------------


def pde_residual(u: FourierField, eps: float, omega: float, a: TimeFunction, f: NonlinearitySpec,
                 refine: int = 2, s: float = 1.0) -> ResidualReport:
    """Residual of ``omega^2 u_tt - a u_xx - eps f(t, x, u)``.

    The coefficients are exact on the full support of the expression; the
    report holds their s-norm and the max of the grid values on a
    ``refine``-times oversampled grid.
    """
    u = u if isinstance(u, FourierField) else u.lift()
    Lu = apply_Lomega(u, omega, a)
    if eps == 0:
        res = Lu
    else:
        M = f.degree
        jout = f.jmax + M * u.jmax
        lout = f.lmax + M * u.lmax
        res = Lu - evaluate_nonlinearity(f, u, jmax=jout, lmax=lout) * eps
    nx = refine * (2 * res.jmax + 1)
    nt = refine * (2 * res.lmax + 1)
    vals = res.to_grid(nx, nt)
    return ResidualReport(snorm=snorm(res, s), max_abs=float(np.abs(vals).max()), field=res)


def tame_monitor(trace: IterationTrace, params: SolverParams, eps: float, omega: float,
                 growth: float = 2.0) -> dict:
    """Fit the constants of the tame decay laws along a trace.

    ``K2_k = ||h_k||_s gamma N_k^{sigma+1} / eps``,
    ``K2p_k = ||d_tt h_k||_s gamma omega^2 N_k / eps`` and
    ``C_n = S_n / N_{n+1}^{(tau-1+sigma)/(chi-1)}``.
    A constant is flagged when it grows by more than ``growth`` between
    consecutive steps. Traces shorter than two entries give an empty report.
    """
    if len(trace) < 2 or eps == 0:
        return {}
    g, sg, tau, chi = params.gamma, params.sigma, params.tau, params.chi
    Ns = trace.column("N")
    K2 = trace.column("h_norm_s") * g * Ns ** (sg + 1) / eps
    K2p = trace.column("htt_norm_s") * g * omega ** 2 * Ns / eps
    S = trace.column("S_n")
    expo = (tau - 1 + sg) / (chi - 1)
    Nnext = np.array(truncation_sequence(params.N0, chi, len(trace)))[1:len(trace) + 1]
    Ct = S / Nnext.astype(float) ** expo

    def flags(x):
        return [bool(x[k + 1] > growth * x[k]) for k in range(len(x) - 1)]

    return {"K2": K2.tolist(), "K2_prime": K2p.tolist(), "C_tilde": Ct.tolist(),
            "K2_growth": flags(K2), "K2_prime_growth": flags(K2p), "C_tilde_growth": flags(Ct),
            "flagged": any(flags(K2) + flags(K2p) + flags(Ct))}


def omega_sensitivity(problem: Problem, params: SolverParams, d_omega: float = 1e-5,
                      screen: bool = False) -> tuple[FourierField, float]:
    """Central finite difference ``du/domega`` and its s-norm."""
    lo = run(replace(problem, omega=problem.omega - d_omega), params, screen=screen)
    hi = run(replace(problem, omega=problem.omega + d_omega), params, screen=screen)
    J = max(lo.u.jmax, hi.u.jmax)
    Lt = max(lo.u.lmax, hi.u.lmax)
    du = (hi.u.resized(J, Lt) - lo.u.resized(J, Lt)) * (1 / (2 * d_omega))
    return du, snorm(du, params.s)
