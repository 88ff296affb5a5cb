"""
Truncated double Fourier fields on the torus T x T.

A field is stored as a dense table of complex amplitudes

    u(t, x) = sum_{|j| <= J, |l| <= L} c[j, l] exp(i (j x + l t))

with ``j`` the x-wavenumber (axis 0) and ``l`` the t-wavenumber (axis 1).
Real-valued fields satisfy c[-j, -l] = conj(c[j, l]).

Norms follow the anisotropic Sobolev scale

    ||u||_s^2 = sum_j ||u_j||_{H^1}^2 (1 + |j|^{2s}),
    ||y||_{H^1}^2 = sum_l (1 + l^2) |y_l|^2.

Products are computed exactly by coefficient convolution; compositions with
polynomial nonlinearities go through an alias-free collocation grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import fft as sfft
from scipy import signal

__all__ = [
    "FourierField",
    "TimeFunction",
    "NonlinearitySpec",
    "GridResolutionError",
    "PositivityError",
    "h1norm_time",
    "snorm",
    "multiply",
    "project_V",
    "project_W",
    "project_PN",
    "project_PN_perp",
    "apply_Lomega",
    "evaluate_nonlinearity",
    "nonlinearity_derivative",
    "check_positive",
    "toeplitz_from_coeffs",
]

POSITIVITY_TOL = 1e-8


class GridResolutionError(ValueError):
    """Requested truncation exceeds what the collocation grid can represent."""


class PositivityError(ValueError):
    """A coefficient function that must be positive is not."""


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=complex, copy=True)
    arr.setflags(write=False)
    return arr


def _resize_axis(c: np.ndarray, axis: int, new_half: int) -> np.ndarray:
    old_half = (c.shape[axis] - 1) // 2
    if new_half == old_half:
        return c
    if new_half < old_half:
        sl = [slice(None)] * c.ndim
        sl[axis] = slice(old_half - new_half, old_half + new_half + 1)
        return c[tuple(sl)]
    pad = [(0, 0)] * c.ndim
    pad[axis] = (new_half - old_half, new_half - old_half)
    return np.pad(c, pad)


def _symmetrize(c: np.ndarray) -> np.ndarray:
    # exact Hermitian symmetry: s(-k) == conj(s(k)) bit for bit
    flipped = np.conj(c[tuple(slice(None, None, -1) for _ in range(c.ndim))])
    return (c + flipped) / 2


def _fast_len(n: int) -> int:
    return sfft.next_fast_len(int(n))


# ---------------------------------------------------------------------------
# Time functions (j = 0 column, the space V)
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TimeFunction:
    """A trigonometric polynomial in t with coefficients ``coeffs[l + lmax]``."""

    coeffs: np.ndarray
    zero_mean: bool = False

    def __post_init__(self):
        c = np.asarray(self.coeffs)
        if c.ndim != 1 or c.shape[0] % 2 != 1:
            raise ValueError("TimeFunction coefficients must be a 1-D array of odd length")
        c = _readonly(c)
        if self.zero_mean and c[(c.shape[0] - 1) // 2] != 0:
            raise ValueError("zero-mean TimeFunction has nonzero l=0 coefficient")
        object.__setattr__(self, "coeffs", c)

    # -- construction -------------------------------------------------------
    @classmethod
    def zeros(cls, lmax: int, zero_mean: bool = False) -> "TimeFunction":
        return cls(np.zeros(2 * lmax + 1, dtype=complex), zero_mean=zero_mean)

    @classmethod
    def constant(cls, value: float, lmax: int = 0) -> "TimeFunction":
        c = np.zeros(2 * lmax + 1, dtype=complex)
        c[lmax] = value
        return cls(c)

    @classmethod
    def from_trig(cls, terms: Sequence[tuple], lmax: int | None = None) -> "TimeFunction":
        """Build from ``("const", A)``, ``("cos", k, A)``, ``("sin", k, A)`` terms."""
        kmax = max([0] + [int(t[1]) for t in terms if t[0] != "const"])
        lmax = kmax if lmax is None else max(lmax, kmax)
        c = np.zeros(2 * lmax + 1, dtype=complex)
        for term in terms:
            kind = term[0]
            if kind == "const":
                c[lmax] += term[1]
            elif kind == "cos":
                k, amp = int(term[1]), term[2]
                c[lmax + k] += amp / 2
                c[lmax - k] += amp / 2
            elif kind == "sin":
                k, amp = int(term[1]), term[2]
                c[lmax + k] += amp / 2j
                c[lmax - k] -= amp / 2j
            else:
                raise ValueError(f"unknown trig term kind {kind!r}")
        return cls(_symmetrize(c))

    @classmethod
    def from_grid(cls, values: np.ndarray, lmax: int, zero_mean: bool = False) -> "TimeFunction":
        values = np.asarray(values)
        n = values.shape[0]
        if n < 2 * lmax + 1:
            raise GridResolutionError(f"grid of {n} points cannot resolve lmax={lmax}")
        g = sfft.fft(values) / n
        idx = np.arange(-lmax, lmax + 1) % n
        c = g[idx]
        if np.isrealobj(values) or np.allclose(np.imag(values), 0):
            c = _symmetrize(c)
        if zero_mean:
            c = c.copy()
            c[lmax] = 0
        return cls(c, zero_mean=zero_mean)

    @classmethod
    def from_function(cls, func: Callable[[np.ndarray], np.ndarray], lmax: int,
                      n: int | None = None) -> "TimeFunction":
        n = n or _fast_len(4 * (2 * lmax + 1))
        t = 2 * np.pi * np.arange(n) / n
        return cls.from_grid(np.real(func(t)), lmax)

    # -- basic properties ---------------------------------------------------
    @property
    def lmax(self) -> int:
        return (self.coeffs.shape[0] - 1) // 2

    @property
    def modes(self) -> np.ndarray:
        return np.arange(-self.lmax, self.lmax + 1)

    def coeff(self, l: int) -> complex:
        if abs(l) > self.lmax:
            return 0j
        return complex(self.coeffs[l + self.lmax])

    def mean(self) -> float:
        return float(np.real(self.coeffs[self.lmax]))

    def is_real(self, tol: float = 1e-12) -> bool:
        c = self.coeffs
        scale = max(1.0, float(np.abs(c).max(initial=0.0)))
        return bool(np.abs(c - np.conj(c[::-1])).max(initial=0.0) <= tol * scale)

    def resized(self, lmax: int) -> "TimeFunction":
        return TimeFunction(_resize_axis(self.coeffs, 0, lmax), zero_mean=self.zero_mean)

    def symmetrized(self) -> "TimeFunction":
        return TimeFunction(_symmetrize(self.coeffs), zero_mean=self.zero_mean)

    def without_mean(self) -> "TimeFunction":
        c = self.coeffs.copy()
        c[self.lmax] = 0
        return TimeFunction(c, zero_mean=True)

    # -- evaluation -------------------------------------------------------
    def to_grid(self, n: int) -> np.ndarray:
        if n < 2 * self.lmax + 1:
            raise GridResolutionError(f"grid of {n} points cannot hold lmax={self.lmax}")
        g = np.zeros(n, dtype=complex)
        g[np.arange(-self.lmax, self.lmax + 1) % n] = self.coeffs
        return sfft.ifft(g) * n

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        phase = np.exp(1j * np.multiply.outer(t, self.modes))
        return np.real(phase @ self.coeffs)

    def derivative(self, order: int = 1) -> "TimeFunction":
        c = self.coeffs * (1j * self.modes) ** order
        return TimeFunction(c, zero_mean=self.zero_mean or order > 0)

    def min_on_grid(self, oversample: int = 4) -> float:
        n = max(16, oversample * (2 * self.lmax + 1))
        return float(np.real(self.to_grid(n)).min())

    def lift(self) -> "FourierField":
        """View as an x-independent field (jmax = 0)."""
        return FourierField(self.coeffs[None, :])

    # -- arithmetic -------------------------------------------------------
    def _binary(self, other, op):
        if isinstance(other, TimeFunction):
            L = max(self.lmax, other.lmax)
            return TimeFunction(op(_resize_axis(self.coeffs, 0, L), _resize_axis(other.coeffs, 0, L)),
                                zero_mean=self.zero_mean and other.zero_mean)
        return TimeFunction(op(self.coeffs, other))

    def __add__(self, other):
        if not isinstance(other, TimeFunction):
            c = self.coeffs.copy()
            c[self.lmax] += other
            return TimeFunction(c)
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self + (-other)

    def __neg__(self):
        return TimeFunction(-self.coeffs, zero_mean=self.zero_mean)

    def __mul__(self, scalar):
        if isinstance(scalar, TimeFunction):
            c = signal.convolve(self.coeffs, scalar.coeffs)
            return TimeFunction(c)
        return TimeFunction(self.coeffs * scalar, zero_mean=self.zero_mean)

    __rmul__ = __mul__

    def to_json_obj(self) -> dict:
        return {"lmax": self.lmax, "zero_mean": self.zero_mean,
                "coeffs": [[int(l), float(c.real), float(c.imag)]
                           for l, c in zip(self.modes, self.coeffs)]}

    @classmethod
    def from_json_obj(cls, obj: dict) -> "TimeFunction":
        lmax = int(obj["lmax"])
        c = np.zeros(2 * lmax + 1, dtype=complex)
        for l, re, im in obj["coeffs"]:
            c[int(l) + lmax] = complex(re, im)
        return cls(c, zero_mean=bool(obj.get("zero_mean", False)))


def h1norm_time(y: TimeFunction) -> float:
    """H^1(T) norm with the diagonal convention sum (1 + l^2) |y_l|^2."""
    return float(np.sqrt(np.sum((1.0 + y.modes.astype(float) ** 2) * np.abs(y.coeffs) ** 2)))


# ---------------------------------------------------------------------------
# Space-time fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FourierField:
    """Dense coefficient table ``coeffs[j + jmax, l + lmax]`` of a field on T x T."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs)
        if c.ndim != 2 or c.shape[0] % 2 != 1 or c.shape[1] % 2 != 1:
            raise ValueError("FourierField coefficients must be a 2-D array with odd sides")
        object.__setattr__(self, "coeffs", _readonly(c))

    @classmethod
    def zeros(cls, jmax: int, lmax: int) -> "FourierField":
        return cls(np.zeros((2 * jmax + 1, 2 * lmax + 1), dtype=complex))

    @classmethod
    def from_grid(cls, values: np.ndarray, jmax: int, lmax: int) -> "FourierField":
        """Coefficients from samples ``values[p, q] = u(t_q, x_p)`` on a uniform grid."""
        values = np.asarray(values)
        nx, nt = values.shape
        if nx < 2 * jmax + 1 or nt < 2 * lmax + 1:
            raise GridResolutionError(
                f"grid {nx}x{nt} cannot resolve jmax={jmax}, lmax={lmax}")
        g = sfft.fft2(values) / (nx * nt)
        c = g[np.ix_(np.arange(-jmax, jmax + 1) % nx, np.arange(-lmax, lmax + 1) % nt)]
        if np.isrealobj(values):
            c = _symmetrize(c)
        return cls(c)

    @classmethod
    def from_function(cls, func: Callable[[np.ndarray, np.ndarray], np.ndarray],
                      jmax: int, lmax: int, oversample: int = 4) -> "FourierField":
        """Sample ``func(t, x)`` and fit; exact for trigonometric polynomials within range."""
        nx = _fast_len(oversample * (2 * jmax + 1))
        nt = _fast_len(oversample * (2 * lmax + 1))
        x = 2 * np.pi * np.arange(nx) / nx
        t = 2 * np.pi * np.arange(nt) / nt
        X, T = np.meshgrid(x, t, indexing="ij")
        return cls.from_grid(np.real(func(T, X)).astype(float), jmax, lmax)

    @classmethod
    def from_modes(cls, modes: dict, jmax: int | None = None, lmax: int | None = None) -> "FourierField":
        """Build from ``{(j, l): amplitude}``; conjugate partners are NOT added implicitly."""
        J = max([abs(j) for j, _ in modes] + [0]) if jmax is None else jmax
        L = max([abs(l) for _, l in modes] + [0]) if lmax is None else lmax
        c = np.zeros((2 * J + 1, 2 * L + 1), dtype=complex)
        for (j, l), amp in modes.items():
            c[j + J, l + L] += amp
        return cls(c)

    # -- properties ---------------------------------------------------------
    @property
    def jmax(self) -> int:
        return (self.coeffs.shape[0] - 1) // 2

    @property
    def lmax(self) -> int:
        return (self.coeffs.shape[1] - 1) // 2

    @property
    def jmodes(self) -> np.ndarray:
        return np.arange(-self.jmax, self.jmax + 1)

    @property
    def lmodes(self) -> np.ndarray:
        return np.arange(-self.lmax, self.lmax + 1)

    def coeff(self, j: int, l: int) -> complex:
        if abs(j) > self.jmax or abs(l) > self.lmax:
            return 0j
        return complex(self.coeffs[j + self.jmax, l + self.lmax])

    def row(self, j: int) -> TimeFunction:
        """The t-function u_j(t) multiplying exp(i j x)."""
        if abs(j) > self.jmax:
            return TimeFunction.zeros(self.lmax)
        return TimeFunction(self.coeffs[j + self.jmax])

    def is_real(self, tol: float = 1e-12) -> bool:
        c = self.coeffs
        scale = max(1.0, float(np.abs(c).max(initial=0.0)))
        return bool(np.abs(c - np.conj(c[::-1, ::-1])).max(initial=0.0) <= tol * scale)

    def resized(self, jmax: int, lmax: int) -> "FourierField":
        return FourierField(_resize_axis(_resize_axis(self.coeffs, 0, jmax), 1, lmax))

    def symmetrized(self) -> "FourierField":
        return FourierField(_symmetrize(self.coeffs))

    def max_abs(self) -> float:
        return float(np.abs(self.coeffs).max(initial=0.0))

    def flat(self) -> np.ndarray:
        return self.coeffs.reshape(-1)

    # -- grid transforms ----------------------------------------------------
    def to_grid(self, nx: int, nt: int) -> np.ndarray:
        """Complex grid values ``u(t_q, x_p)`` at ``x_p = 2 pi p / nx``, ``t_q = 2 pi q / nt``."""
        if nx < 2 * self.jmax + 1 or nt < 2 * self.lmax + 1:
            raise GridResolutionError(
                f"grid {nx}x{nt} cannot hold jmax={self.jmax}, lmax={self.lmax}")
        g = np.zeros((nx, nt), dtype=complex)
        g[np.ix_(self.jmodes % nx, self.lmodes % nt)] = self.coeffs
        return sfft.ifft2(g) * (nx * nt)

    def __call__(self, t, x) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        et = np.exp(1j * np.multiply.outer(t, self.lmodes))
        ex = np.exp(1j * np.multiply.outer(x, self.jmodes))
        return np.real(np.einsum("...j,jl,...l->...", ex, self.coeffs, et))

    # -- arithmetic ---------------------------------------------------------
    def _aligned(self, other: "FourierField"):
        J = max(self.jmax, other.jmax)
        L = max(self.lmax, other.lmax)
        return self.resized(J, L).coeffs, other.resized(J, L).coeffs

    def __add__(self, other):
        if isinstance(other, TimeFunction):
            other = other.lift()
        if isinstance(other, FourierField):
            a, b = self._aligned(other)
            return FourierField(a + b)
        c = self.coeffs.copy()
        c[self.jmax, self.lmax] += other
        return FourierField(c)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __neg__(self):
        return FourierField(-self.coeffs)

    def __mul__(self, scalar):
        if isinstance(scalar, (FourierField, TimeFunction)):
            return multiply(self, scalar)
        return FourierField(self.coeffs * scalar)

    __rmul__ = __mul__

    def dt(self, order: int = 1) -> "FourierField":
        return FourierField(self.coeffs * ((1j * self.lmodes) ** order)[None, :])

    def dx(self, order: int = 1) -> "FourierField":
        return FourierField(self.coeffs * ((1j * self.jmodes) ** order)[:, None])

    def allclose(self, other: "FourierField", atol: float = 1e-12, rtol: float = 0.0) -> bool:
        a, b = self._aligned(other)
        return bool(np.allclose(a, b, atol=atol, rtol=rtol))

    # -- serialization ------------------------------------------------------
    def to_json_obj(self) -> dict:
        J, L = self.jmax, self.lmax
        rows = []
        for j in range(0, J + 1):
            for l in range(-L, L + 1):
                c = self.coeffs[j + J, l + L]
                rows.append([j, l, float(c.real), float(c.imag)])
        return {"jmax": J, "lmax": L, "coeffs": rows}

    @classmethod
    def from_json_obj(cls, obj: dict) -> "FourierField":
        J, L = int(obj["jmax"]), int(obj["lmax"])
        c = np.zeros((2 * J + 1, 2 * L + 1), dtype=complex)
        for j, l, re, im in obj["coeffs"]:
            j, l = int(j), int(l)
            if j < 0:
                raise ValueError("serialized fields list only the j >= 0 half")
            c[j + J, l + L] = complex(re, im)
            if j > 0:
                c[-j + J, -l + L] = complex(re, -im)
        return cls(c)

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj())

    @classmethod
    def from_json(cls, text: str) -> "FourierField":
        return cls.from_json_obj(json.loads(text))


def _as_field(u) -> FourierField:
    if isinstance(u, TimeFunction):
        return u.lift()
    return u


def snorm(u: FourierField, s: float) -> float:
    """Anisotropic Sobolev norm ``||u||_s``."""
    u = _as_field(u)
    jw = 1.0 + np.abs(u.jmodes).astype(float) ** (2 * s)
    lw = 1.0 + u.lmodes.astype(float) ** 2
    return float(np.sqrt(np.sum(jw[:, None] * lw[None, :] * np.abs(u.coeffs) ** 2)))


def multiply(u, v, method: str = "convolution") -> FourierField:
    """Exact product of two truncated fields.

    The output carries the full support ``(Ju + Jv, Lu + Lv)``. ``method`` may be
    ``"convolution"`` (direct coefficient convolution) or ``"collocation"``
    (alias-free padded grid product); both agree to round-off.
    """
    u, v = _as_field(u), _as_field(v)
    J, L = u.jmax + v.jmax, u.lmax + v.lmax
    if method == "convolution":
        return FourierField(signal.convolve(u.coeffs, v.coeffs, method="auto"))
    if method == "collocation":
        nx, nt = _fast_len(2 * J + 1), _fast_len(2 * L + 1)
        prod = u.to_grid(nx, nt) * v.to_grid(nx, nt)
        g = sfft.fft2(prod) / (nx * nt)
        return FourierField(g[np.ix_(np.arange(-J, J + 1) % nx, np.arange(-L, L + 1) % nt)])
    raise ValueError(f"unknown product method {method!r}")


# ---------------------------------------------------------------------------
# Projections
# ---------------------------------------------------------------------------


def project_V(u: FourierField) -> TimeFunction:
    """x-average of ``u``: the j = 0 row."""
    return _as_field(u).row(0)


def project_W(u: FourierField) -> FourierField:
    """Remove the x-average."""
    c = _as_field(u).coeffs.copy()
    c[(c.shape[0] - 1) // 2, :] = 0
    return FourierField(c)


def _require_W(u: FourierField):
    if np.any(u.coeffs[u.jmax] != 0):
        raise ValueError("projector P_N is defined on W: input has a nonzero j=0 row")


def project_PN(u: FourierField, N: int) -> FourierField:
    """Keep x-modes 1 <= |j| <= N."""
    if N < 1:
        raise ValueError("N must be >= 1")
    _require_W(u)
    if N >= u.jmax:
        return u
    return u.resized(N, u.lmax)


def project_PN_perp(u: FourierField, N: int) -> FourierField:
    """Keep x-modes |j| > N."""
    if N < 1:
        raise ValueError("N must be >= 1")
    _require_W(u)
    c = u.coeffs.copy()
    c[np.abs(u.jmodes) <= N, :] = 0
    return FourierField(c)


# ---------------------------------------------------------------------------
# Differential operator and nonlinear compositions
# ---------------------------------------------------------------------------


def check_positive(a: TimeFunction, tol: float = POSITIVITY_TOL, oversample: int = 4) -> float:
    """Return min a on a ``oversample``-times refined grid; raise if below ``tol``."""
    m = a.min_on_grid(oversample)
    if m < tol:
        raise PositivityError(f"a positivity violated: min a = {m:.3e} < {tol:.1e}")
    return m


def apply_Lomega(w: FourierField, omega: float, a: TimeFunction) -> FourierField:
    """``omega^2 w_tt - a(t) w_xx``, exact (t-support grows by a.lmax)."""
    check_positive(a)
    w = _as_field(w)
    wtt = w.dt(2) * omega ** 2
    # -a w_xx = a * (j^2 w)
    aw = multiply(FourierField(w.coeffs * (w.jmodes.astype(float) ** 2)[:, None]), a.lift())
    return wtt + aw


@dataclass(frozen=True, eq=False)
class NonlinearitySpec:
    """Polynomial nonlinearity ``f(t, x, u) = sum_m c_m(t, x) u^m``."""

    coeffs: tuple = field(default_factory=tuple)

    def __post_init__(self):
        cs = tuple(_as_field(c) for c in self.coeffs)
        if not cs:
            cs = (FourierField.zeros(0, 0),)
        object.__setattr__(self, "coeffs", cs)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def jmax(self) -> int:
        return max(c.jmax for c in self.coeffs)

    @property
    def lmax(self) -> int:
        return max(c.lmax for c in self.coeffs)

    @classmethod
    def from_terms(cls, terms: Sequence[dict]) -> "NonlinearitySpec":
        """Terms ``{"power": m, "amplitude": A, "t": [...], "x": [...]}``.

        ``t`` / ``x`` factors are ``["const"]``, ``["cos", k]`` or ``["sin", k]``;
        the term contributes ``A * T(t) * X(x) * u**m``.
        """
        M = max([int(tm.get("power", 0)) for tm in terms] + [0])
        J = max([_factor_k(tm.get("x")) for tm in terms] + [0])
        L = max([_factor_k(tm.get("t")) for tm in terms] + [0])
        cs = [np.zeros((2 * J + 1, 2 * L + 1), dtype=complex) for _ in range(M + 1)]
        for tm in terms:
            amp = float(tm.get("amplitude", 1.0))
            cx = _factor_coeffs(tm.get("x"), J)
            ct = _factor_coeffs(tm.get("t"), L)
            cs[int(tm.get("power", 0))] += amp * np.outer(cx, ct)
        return cls(tuple(FourierField(_symmetrize(c)) for c in cs))

    def derivative(self) -> "NonlinearitySpec":
        if self.degree == 0:
            return NonlinearitySpec((FourierField.zeros(0, 0),))
        return NonlinearitySpec(tuple(c * m for m, c in enumerate(self.coeffs) if m > 0))

    def x_mean(self) -> "NonlinearitySpec":
        """f_0: coefficients replaced by their x-averages."""
        return NonlinearitySpec(tuple(project_V(c).lift() for c in self.coeffs))

    def x_fluctuation(self) -> "NonlinearitySpec":
        """f - f_0."""
        return NonlinearitySpec(tuple(project_W(c) for c in self.coeffs))

    def is_real(self, tol: float = 1e-12) -> bool:
        return all(c.is_real(tol) for c in self.coeffs)

    def to_json_obj(self) -> dict:
        return {"degree": self.degree, "coeffs": [c.to_json_obj() for c in self.coeffs]}

    @classmethod
    def from_json_obj(cls, obj: dict) -> "NonlinearitySpec":
        return cls(tuple(FourierField.from_json_obj(c) for c in obj["coeffs"]))


def _factor_k(fac) -> int:
    if not fac or fac[0] == "const":
        return 0
    return int(fac[1])


def _factor_coeffs(fac, K: int) -> np.ndarray:
    c = np.zeros(2 * K + 1, dtype=complex)
    if not fac or fac[0] == "const":
        c[K] = 1.0
    elif fac[0] == "cos":
        k = int(fac[1])
        c[K + k] += 0.5
        c[K - k] += 0.5
    elif fac[0] == "sin":
        k = int(fac[1])
        c[K + k] += 0.5 / 1j
        c[K - k] -= 0.5 / 1j
    else:
        raise ValueError(f"unknown factor {fac!r}")
    return c


def _composition_grid(f: NonlinearitySpec, u: FourierField, jout: int, lout: int):
    M = f.degree
    jtot = max(c.jmax + m * u.jmax for m, c in enumerate(f.coeffs))
    ltot = max(c.lmax + m * u.lmax for m, c in enumerate(f.coeffs))
    # alias-free for the requested output window, and at least the (M+1)-rule
    jc = max(2 * c.jmax + 1 for c in f.coeffs)
    lc = max(2 * c.lmax + 1 for c in f.coeffs)
    nx = _fast_len(max(jtot + jout + 1, (M + 1) * (2 * u.jmax + 1), 2 * jout + 1, jc))
    nt = _fast_len(max(ltot + lout + 1, (M + 1) * (2 * u.lmax + 1), 2 * lout + 1, lc))
    return nx, nt


def _compose(f: NonlinearitySpec, u: FourierField, jout: int, lout: int,
             grid: tuple | None = None) -> FourierField:
    nx, nt = grid or _composition_grid(f, u, jout, lout)
    if nx < 2 * jout + 1 or nt < 2 * lout + 1:
        raise GridResolutionError(
            f"requested truncation ({jout}, {lout}) exceeds grid Nyquist of {nx}x{nt}")
    ug = np.real(u.to_grid(nx, nt))
    acc = np.real(f.coeffs[-1].to_grid(nx, nt))
    for c in reversed(f.coeffs[:-1]):
        acc = acc * ug + np.real(c.to_grid(nx, nt))
    return FourierField.from_grid(acc, jout, lout)


def evaluate_nonlinearity(f: NonlinearitySpec, u, jmax: int | None = None,
                          lmax: int | None = None, grid: tuple | None = None) -> FourierField:
    """Coefficients of ``f(t, x, u(t, x))`` truncated to ``(jmax, lmax)``.

    Defaults to the truncation of ``u``. An explicit ``grid=(nx, nt)`` smaller
    than the requested window raises :class:`GridResolutionError`.
    """
    u = _as_field(u)
    jout = u.jmax if jmax is None else jmax
    lout = u.lmax if lmax is None else lmax
    return _compose(f, u, jout, lout, grid)


def nonlinearity_derivative(f: NonlinearitySpec, u, jmax: int | None = None,
                            lmax: int | None = None, grid: tuple | None = None) -> FourierField:
    """Coefficients of ``d f / d u`` evaluated at ``u``."""
    return evaluate_nonlinearity(f.derivative(), u, jmax, lmax, grid)


def toeplitz_from_coeffs(coeffs: np.ndarray, size_half: int) -> np.ndarray:
    """Matrix ``T[l, l'] = coeffs(l - l')`` over ``|l|, |l'| <= size_half``.

    ``coeffs`` is a centred 1-D coefficient array; entries beyond its support are 0.
    """
    c = np.asarray(coeffs)
    K = (c.shape[0] - 1) // 2
    idx = np.arange(-size_half, size_half + 1)
    diff = idx[:, None] - idx[None, :]
    out = np.zeros(diff.shape, dtype=c.dtype if np.iscomplexobj(c) else complex)
    mask = np.abs(diff) <= K
    out[mask] = c[diff[mask] + K]
    return out
