"""Independent reference computations used by the tests.

Nothing here imports the package; each oracle recomputes a quantity from
first principles (explicit loops, closed forms, or brute-force grids).
"""

from __future__ import annotations

import math

import numpy as np


def double_sum_convolution(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Full 2-D coefficient convolution by explicit quadruple loop."""
    Ja, La = (a.shape[0] - 1) // 2, (a.shape[1] - 1) // 2
    Jb, Lb = (b.shape[0] - 1) // 2, (b.shape[1] - 1) // 2
    J, L = Ja + Jb, La + Lb
    out = np.zeros((2 * J + 1, 2 * L + 1), dtype=complex)
    for j1 in range(-Ja, Ja + 1):
        for l1 in range(-La, La + 1):
            c1 = a[j1 + Ja, l1 + La]
            if c1 == 0:
                continue
            for j2 in range(-Jb, Jb + 1):
                for l2 in range(-Lb, Lb + 1):
                    out[j1 + j2 + J, l1 + l2 + L] += c1 * b[j2 + Jb, l2 + Lb]
    return out


def grid_coefficients(func, J: int, L: int, nx: int = 256, nt: int = 256) -> np.ndarray:
    """Fourier coefficients of ``func(t, x)`` from a brute-force uniform grid."""
    x = 2 * np.pi * np.arange(nx) / nx
    t = 2 * np.pi * np.arange(nt) / nt
    X, T = np.meshgrid(x, t, indexing="ij")
    vals = func(T, X)
    out = np.zeros((2 * J + 1, 2 * L + 1), dtype=complex)
    for j in range(-J, J + 1):
        ex = np.exp(-1j * j * x)[:, None]
        for l in range(-L, L + 1):
            out[j + J, l + L] = np.sum(vals * ex * np.exp(-1j * l * t)[None, :]) / (nx * nt)
    return out


def trapezoid_mean(func, n: int) -> float:
    t = 2 * np.pi * np.arange(n) / n
    return float(np.mean(func(t)))


def hill_matrix_eigs(a_func, d_func, modes: int, n_quad: int = 2048):
    """Generalized eigenvalues of the Hill problem with matrices built by quadrature."""
    from scipy import linalg

    t = 2 * np.pi * np.arange(n_quad) / n_quad
    ls = np.arange(-modes, modes + 1)
    av = a_func(t)
    dv = d_func(t)
    E = np.exp(1j * np.outer(ls, t))
    B = (E.conj() * av) @ E.T / n_quad
    D = (E.conj() * dv) @ E.T / n_quad
    A = np.diag(ls.astype(float) ** 2) + D
    return linalg.eigh((A + A.conj().T) / 2, (B + B.conj().T) / 2, eigvals_only=True)


def resonant_interval_union(lo: float, hi: float, N: int, gamma: float, tau: float,
                            lmax: int | None = None) -> float:
    """Exact length fraction of ``{omega in (lo, hi): exists 1<=j<=N, l>=0 with |omega l - j| <= gamma/j^tau}``.

    Each condition is the closed interval ``[(j - r)/l, (j + r)/l]`` for l >= 1
    (l = 0 is never resonant for omega-independent j >= 1 when gamma < 1).
    """
    if lmax is None:
        lmax = int(math.ceil((N + 1) / lo)) + 2
    ivs = []
    for j in range(1, N + 1):
        r = gamma / j ** tau
        if j <= r:  # l = 0 case: |0 - j| <= r
            return 1.0
        for l in range(1, lmax + 1):
            a, b = (j - r) / l, (j + r) / l
            a, b = max(a, lo), min(b, hi)
            if a < b:
                ivs.append((a, b))
    ivs.sort()
    total = 0.0
    cur_a = cur_b = None
    for a, b in ivs:
        if cur_b is None or a > cur_b:
            if cur_b is not None:
                total += cur_b - cur_a
            cur_a, cur_b = a, b
        else:
            cur_b = max(cur_b, b)
    if cur_b is not None:
        total += cur_b - cur_a
    return total / (hi - lo)


def truncation_reference(N0: int, chi: float, n: int) -> int:
    """``floor(N0 ** (chi ** n))`` evaluated with 60 significant digits."""
    from decimal import Decimal, localcontext

    with localcontext() as ctx:
        ctx.prec = 60
        x = (Decimal(N0).ln() * Decimal(repr(chi)) ** n).exp()
        r = x.to_integral_value()
        if abs(x - r) < Decimal("1e-40"):
            return int(r)
        return int(x.to_integral_value(rounding="ROUND_FLOOR"))
