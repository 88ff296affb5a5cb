"""
Melnikov non-resonance checks, small divisors and resonance-measure sweeps.

For a Hill spectrum lam_l^+- with Liouville constant c the two condition
families are

    |omega sqrt(lam_l^+-) - j| > gamma / j^tau,
    |omega l / c - j|          > gamma / j^tau,

for 1 <= j <= N and all l >= 0. Only l up to a finite cutoff can be scanned;
past ``ceil(c (N+1) / omega) + 10`` both quantities grow monotonically in l.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .hill import HillSpectrum, compute_c, eig_direct
from .spectral import NonlinearitySpec, TimeFunction

__all__ = [
    "MelnikovReport",
    "SweepResult",
    "InsufficientBandsError",
    "l_cutoff",
    "melnikov_check",
    "omega_j",
    "f3_diagnostic",
    "sweep_grid",
    "sweep_measure",
    "RESONANCE_FLOOR",
]

CUTOFF_BUFFER = 10
RESONANCE_FLOOR = 1e-13


class InsufficientBandsError(ValueError):
    """The spectrum does not contain enough bands for the required cutoff."""


def l_cutoff(c: float, omega: float, N: int, buffer: int = CUTOFF_BUFFER) -> int:
    return int(math.ceil(c * (N + 1) / omega)) + buffer


@dataclass(frozen=True, eq=False)
class MelnikovReport:
    """Margins of both condition families.

    ``margins_lambda[j-1, k]`` refers to spectrum index k (label ``labels[k]``);
    ``margins_linear[j-1, l]`` to band l. ``worst`` is
    ``(family, j, l, parity)`` of the smallest margin.
    """

    margins_lambda: np.ndarray
    margins_linear: np.ndarray
    labels: list
    passed: bool
    min_margin: float
    l_cutoff: int
    worst: tuple

    @property
    def pass_(self) -> bool:
        return self.passed


def _thresholds(N: int, gamma: float, tau: float) -> np.ndarray:
    j = np.arange(1, N + 1, dtype=float)
    return gamma / j ** tau


def melnikov_check(spectrum: HillSpectrum, c: float, omega: float, N: int, gamma: float,
                   tau: float, families: Sequence[str] = ("lambda", "linear"),
                   cutoff: int | None = None) -> MelnikovReport:
    """Evaluate the Melnikov conditions for ``1 <= j <= N`` and ``0 <= l <= cutoff``.

    Raises
    ------
    InsufficientBandsError
        If the spectrum has fewer bands than the cutoff.
    """
    lc = l_cutoff(c, omega, N) if cutoff is None else cutoff
    if "lambda" in families and spectrum.n_bands < lc:
        raise InsufficientBandsError(
            f"spectrum has {spectrum.n_bands} bands, cutoff requires {lc}")
    thr = _thresholds(N, gamma, tau)[:, None]
    j = np.arange(1, N + 1, dtype=float)[:, None]
    n_k = 2 * lc + 1
    lam = np.maximum(np.asarray(spectrum.eigenvalues[:n_k], dtype=float), 0.0)
    if "lambda" in families:
        m_lam = np.abs(omega * np.sqrt(lam)[None, :] - j) - thr
    else:
        m_lam = np.full((N, n_k), np.inf)
    ls = np.arange(lc + 1, dtype=float)
    if "linear" in families:
        m_lin = np.abs(omega * ls[None, :] / c - j) - thr
    else:
        m_lin = np.full((N, lc + 1), np.inf)
    labels = spectrum.labels[:n_k]
    i1 = np.unravel_index(np.argmin(m_lam), m_lam.shape)
    i2 = np.unravel_index(np.argmin(m_lin), m_lin.shape)
    if m_lam[i1] <= m_lin[i2]:
        lab = labels[i1[1]]
        worst = ("lambda", int(i1[0]) + 1, lab[0], lab[1])
        mm = float(m_lam[i1])
    else:
        worst = ("linear", int(i2[0]) + 1, int(i2[1]), "-")
        mm = float(m_lin[i2])
    return MelnikovReport(margins_lambda=m_lam, margins_linear=m_lin, labels=labels,
                          passed=bool(mm > 0), min_margin=mm, l_cutoff=lc, worst=worst)


@dataclass(frozen=True)
class OmegaJ:
    value: float
    l: int
    parity: str
    resonant: bool


def omega_j(spectrum: HillSpectrum, omega: float, j: int, cutoff: int | None = None) -> OmegaJ:
    """Small divisor ``min_{l, +-} |omega^2 lam_l^+- - j^2|`` with its argmin."""
    j = abs(int(j))
    lc = l_cutoff(spectrum.c, omega, j) if cutoff is None else cutoff
    if spectrum.n_bands < lc:
        raise InsufficientBandsError(
            f"spectrum has {spectrum.n_bands} bands, cutoff requires {lc}")
    lam = np.asarray(spectrum.eigenvalues[:2 * lc + 1], dtype=float)
    vals = np.abs(omega ** 2 * lam - j * j)
    k = int(np.argmin(vals))
    l, par = spectrum.labels[k]
    v = float(vals[k])
    return OmegaJ(value=v, l=l, parity=par, resonant=bool(v < RESONANCE_FLOOR))


def f3_diagnostic(spectrum: HillSpectrum, omega: float, gamma: float, sigma: float,
                  N: int) -> tuple[float, tuple]:
    """``min_{1 <= j < k <= N} sqrt(omega_j omega_k) |j - k|^sigma / gamma^2`` and its pair."""
    if N < 2:
        raise ValueError("need N >= 2 for a pair scan")
    lc = l_cutoff(spectrum.c, omega, N)
    w = np.array([omega_j(spectrum, omega, j, lc).value for j in range(1, N + 1)])
    jj, kk = np.triu_indices(N, k=1)
    vals = np.sqrt(w[jj] * w[kk]) * np.abs(jj - kk).astype(float) ** sigma / gamma ** 2
    i = int(np.argmin(vals))
    return float(vals[i]), (int(jj[i]) + 1, int(kk[i]) + 1)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


@dataclass
class SweepResult:
    """Resonance mask over a uniform omega grid.

    ``pass_masks`` and ``min_margins`` are keyed by gamma; ``measure_fraction``
    and ``pass_mask`` refer to the first gamma. Fractions use trapezoid weights
    (half weight at both endpoints).
    """

    omega_grid: np.ndarray
    gammas: list
    pass_masks: dict
    min_margins: dict
    fractions: dict
    mode: str
    N: int
    tau: float
    errors: dict = field(default_factory=dict)

    @property
    def gamma(self) -> float:
        return self.gammas[0]

    @property
    def pass_mask(self) -> np.ndarray:
        return self.pass_masks[self.gamma]

    @property
    def measure_fraction(self) -> float:
        return self.fractions[self.gamma]

    def resonant_fraction(self, gamma: float | None = None) -> float:
        return 1.0 - self.fractions[self.gamma if gamma is None else gamma]

    def per_gamma(self) -> list:
        return [{"gamma": g, "measure_fraction": self.fractions[g],
                 "resonant_fraction": 1.0 - self.fractions[g]} for g in self.gammas]


def sweep_grid(interval: tuple, grid_points: int) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = interval
    om = np.linspace(lo, hi, grid_points)
    wts = np.ones(grid_points)
    wts[0] = wts[-1] = 0.5
    return om, wts


def _frozen_margins(lam: np.ndarray, c: float, om: np.ndarray, N: int, gamma: float,
                    tau: float, lc: int) -> np.ndarray:
    """Min margin per omega for a fixed spectrum, vectorized over the grid."""
    thr = _thresholds(N, gamma, tau)
    sq = np.sqrt(np.maximum(lam[:2 * lc + 1], 0.0))
    ls = np.arange(lc + 1, dtype=float)
    out = np.empty(om.shape[0])
    chunk = max(1, 200000 // max(1, N * (sq.size + ls.size)))
    for s in range(0, om.shape[0], chunk):
        o = om[s:s + chunk, None, None]
        j = np.arange(1, N + 1, dtype=float)[None, :, None]
        t = thr[None, :, None]
        m1 = (np.abs(o * sq[None, None, :] - j) - t).min(axis=(1, 2))
        m2 = (np.abs(o * ls[None, None, :] / c - j) - t).min(axis=(1, 2))
        out[s:s + chunk] = np.minimum(m1, m2)
    return out


def sweep_measure(a: TimeFunction, f: NonlinearitySpec | None, eps: float, interval: tuple,
                  grid_points: int, gammas, tau: float, N: int, mode: str = "frozen",
                  params=None, lmax: int = 32) -> SweepResult:
    """Estimate the non-resonant fraction of an omega interval.

    Parameters
    ----------
    a, f, eps :
        Problem data. With ``eps == 0`` (or ``f is None``) the Hill potential
        vanishes and a single spectrum serves the whole grid.
    interval : (float, float)
    grid_points : int
    gammas : float or sequence of float
    tau : float
    N : int
        Largest x-mode scanned.
    mode : {"frozen", "coupled"}
        ``"frozen"`` uses the potential from the averaged equation at w = 0;
        ``"coupled"`` runs the full solver per grid point and screens with its
        final potential (failed points count as resonant and are recorded).
    params : SolverParams, optional
        Used in coupled mode.
    lmax : int
        t-truncation for the averaged equation in frozen mode.
    """
    if mode not in ("frozen", "coupled"):
        raise ValueError(f"unknown sweep mode {mode!r}")
    gl = [float(gammas)] if np.isscalar(gammas) else [float(g) for g in gammas]
    om, wts = sweep_grid(interval, grid_points)
    c = compute_c(a)
    lc = l_cutoff(c, float(om.min()), N)
    modes = max(4 * lc, 64)
    errors = {}
    margins = {g: np.empty(om.shape[0]) for g in gl}
    if mode == "frozen" and (eps == 0 or f is None):
        spec = eig_direct(a, TimeFunction.zeros(0), lc, modes)
        for g in gl:
            margins[g] = _frozen_margins(spec.eigenvalues, c, om, N, g, tau, lc)
    elif mode == "frozen":
        from .bifurcation import hill_potential, solve_q

        for i, o in enumerate(om):
            try:
                q = solve_q(f, eps, o, None, lmax=lmax)
                d = hill_potential(f, eps, o, q.v, None, 2 * lmax)
                spec = eig_direct(a, d, lc, modes)
                for g in gl:
                    margins[g][i] = _frozen_margins(spec.eigenvalues, c, om[i:i + 1], N, g, tau, lc)[0]
            except Exception as exc:  # noqa: BLE001 - recorded per point
                errors[float(o)] = repr(exc)
                for g in gl:
                    margins[g][i] = -np.inf
    else:
        from .nash_moser import Problem, SolverParams, final_spectrum, run

        base = params or SolverParams()
        for i, o in enumerate(om):
            try:
                sol = run(Problem(a=a, f=f, eps=eps, omega=float(o)), base, screen=False)
                spec, cc = final_spectrum(sol, lc, modes)
                for g in gl:
                    margins[g][i] = _frozen_margins(spec.eigenvalues, cc, om[i:i + 1], N, g, tau, lc)[0]
            except Exception as exc:  # noqa: BLE001 - recorded per point
                errors[float(o)] = repr(exc)
                for g in gl:
                    margins[g][i] = -np.inf
    masks = {g: margins[g] > 0 for g in gl}
    fr = {g: float(np.sum(wts * masks[g]) / np.sum(wts)) for g in gl}
    return SweepResult(omega_grid=om, gammas=gl, pass_masks=masks, min_margins=margins,
                       fractions=fr, mode=mode, N=N, tau=tau, errors=errors)
