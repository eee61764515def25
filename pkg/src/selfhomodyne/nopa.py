"""Analytic statistics of the twin-beam (parametric fluorescence) state.

The state produced from vacuum sidebands is sum_n tau^n |n, n> (normalised),
with tau = tanh(r).  Everything here is closed form: photon-number
distributions, the joint and single quadrature densities measured by the
two self-homodyne detectors, and the phase-sensitive gain that sets the
importance weight of each self-homodyne sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

__all__ = [
    "TwinBeamParams",
    "QuadPdfCoeffs",
    "params_from_nbar",
    "joint_photon_pdf",
    "marginal_thermal_pdf",
    "diag45_photon_pdf",
    "total_photon_pdf_theory",
    "correlation_theory",
    "coherent_pair_correlation",
    "quad_pdf_coeffs",
    "joint_quad_pdf",
    "joint_quad_pdf_product_form",
    "single_quad_pdf",
    "gain",
    "weight_fn",
]


@dataclass(frozen=True)
class TwinBeamParams:
    """Twin-beam configuration.

    Both detectors share the quantum efficiency ``eta``; the pump phase is
    the phase reference and the two local oscillators have equal intensity.
    """

    tau: float
    eta: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.tau < 1.0):
            raise ValueError(f"tau must lie in [0, 1), got {self.tau}")
        if not (0.0 < self.eta <= 1.0):
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")

    @classmethod
    def from_nbar(cls, nbar: float, eta: float = 1.0) -> "TwinBeamParams":
        if nbar < 0:
            raise ValueError(f"nbar must be >= 0, got {nbar}")
        return cls(tau=math.sqrt(nbar / (nbar + 1.0)), eta=eta)

    @property
    def nbar(self) -> float:
        t2 = self.tau**2
        return t2 / (1.0 - t2)

    @property
    def r(self) -> float:
        return math.atanh(self.tau)

    @property
    def mu(self) -> float:
        return math.cosh(self.r)

    @property
    def nu(self) -> float:
        return math.sinh(self.r)

    @property
    def delta2_eta(self) -> float:
        """Variance of the Gaussian noise added to each detector's quadrature."""
        return (1.0 - self.eta) / (4.0 * self.eta)


def params_from_nbar(nbar: float, eta: float = 1.0) -> TwinBeamParams:
    return TwinBeamParams.from_nbar(nbar, eta)


def _log_tau2(p: TwinBeamParams) -> float:
    return 2.0 * math.log(p.tau) if p.tau > 0 else -math.inf


def _geometric(p: TwinBeamParams, n):
    """(1 - tau^2) tau^(2n), safe at tau = 0 and for large n."""
    n = np.asarray(n)
    t2 = p.tau**2
    if p.tau == 0:
        return np.where(n == 0, 1.0, 0.0)
    return (1.0 - t2) * np.exp(n * _log_tau2(p))


def _scalar(v):
    return float(v) if np.ndim(v) == 0 else v


def joint_photon_pdf(p: TwinBeamParams, n, m):
    """Twin-beam photon-number probability p(n, m), perfectly correlated."""
    n, m = np.asarray(n), np.asarray(m)
    return _scalar(np.where(n == m, _geometric(p, n), 0.0))


def marginal_thermal_pdf(p: TwinBeamParams, n):
    """Reduced single-mode statistics: thermal with mean ``p.nbar``."""
    return _scalar(_geometric(p, n))


def diag45_photon_pdf(p: TwinBeamParams, n, m):
    """Joint photon statistics of the +-45 degree polarised modes.

    Each of those modes is an independent squeezed vacuum, so odd photon
    numbers are forbidden.  Uses (2k-1)!!/(2^k k!) = C(2k, k)/4^k.
    """
    n, m = np.asarray(n), np.asarray(m)
    k, l = n // 2, m // 2
    even = (n % 2 == 0) & (m % 2 == 0)

    def log_central(j):
        return gammaln(2 * j + 1.0) - 2 * gammaln(j + 1.0) - j * math.log(4.0)

    if p.tau == 0:
        val = np.where((k == 0) & (l == 0), 1.0, 0.0)
    else:
        logv = log_central(k) + log_central(l) + math.log1p(-p.tau**2) + (k + l) * _log_tau2(p)
        val = np.exp(logv)
    return _scalar(np.where(even, val, 0.0))


def total_photon_pdf_theory(p: TwinBeamParams, n):
    """Total photon-number distribution s(n): only even totals occur."""
    n = np.asarray(n)
    return _scalar(np.where(n % 2 == 0, _geometric(p, n // 2), 0.0))


def correlation_theory(p: TwinBeamParams, N: int, n):
    """Truncated photon-number-difference correlation d_N(n)."""
    n = np.asarray(n)
    val = 1.0 - p.tau ** (2 * (N + 1))
    return _scalar(np.where(n == 0, val, 0.0))


def coherent_pair_correlation(nbar: float, N: int, n):
    """d_N(n) for two independent coherent states of mean ``nbar`` each.

    The standard-quantum-limit baseline for the twin-beam correlation.
    """
    n = np.atleast_1d(np.asarray(n))
    l = np.arange(N + 1)

    def poisson(j):
        j = np.asarray(j, dtype=float)
        if nbar == 0:
            return np.where(j == 0, 1.0, 0.0)
        return np.exp(j * math.log(nbar) - nbar - gammaln(j + 1.0))

    out = np.empty(n.shape)
    for i, ni in enumerate(n):
        ll = l[l >= max(-ni, 0)]
        out[i] = np.sum(poisson(ll) * poisson(ll + ni))
    return out if out.size > 1 else float(out[0])


@dataclass(frozen=True)
class QuadPdfCoeffs:
    """Coefficients of the joint photocurrent density.

    ``d2_plus``/``d2_minus`` are the noise-free widths d^2_{+kappa},
    d^2_{-kappa}; ``a2``, ``b2`` and ``c`` already include the detector
    noise (4 * delta2_eta added to each width).  Fields are arrays when the
    phases are arrays.
    """

    kappa: complex | np.ndarray
    d2_plus: float | np.ndarray
    d2_minus: float | np.ndarray
    a2: float | np.ndarray
    b2: float | np.ndarray
    c: float | np.ndarray
    delta2_eta: float


def quad_pdf_coeffs(p: TwinBeamParams, phi, psi) -> QuadPdfCoeffs:
    kappa = p.tau * np.exp(-1j * (np.asarray(phi) + np.asarray(psi)))
    denom = 1.0 - p.tau**2
    d2p = np.abs(1.0 + kappa) ** 2 / denom
    d2m = np.abs(1.0 - kappa) ** 2 / denom
    noise = 4.0 * p.delta2_eta
    Dp, Dm = d2p + noise, d2m + noise
    a2 = (Dp + Dm) / (Dp * Dm)
    c = (Dp - Dm) / (Dp + Dm)
    b2 = a2 * (1.0 - c**2)
    return QuadPdfCoeffs(
        kappa=kappa if np.ndim(kappa) else complex(kappa),
        d2_plus=_scalar(d2p),
        d2_minus=_scalar(d2m),
        a2=_scalar(a2),
        b2=_scalar(b2),
        c=_scalar(c),
        delta2_eta=p.delta2_eta,
    )


def joint_quad_pdf(p: TwinBeamParams, x, xp, phi, psi):
    """Joint density of the two rescaled photocurrents (sum/difference form)."""
    co = quad_pdf_coeffs(p, phi, psi)
    noise = 4.0 * co.delta2_eta
    Dp, Dm = co.d2_plus + noise, co.d2_minus + noise
    x, xp = np.asarray(x), np.asarray(xp)
    val = 2.0 / (math.pi * np.sqrt(Dp * Dm)) * np.exp(-((x + xp) ** 2) / Dp - (x - xp) ** 2 / Dm)
    return _scalar(val)


def joint_quad_pdf_product_form(p: TwinBeamParams, x, xp, phi, psi):
    """Same density written as marginal(x') times conditional(x | x')."""
    co = quad_pdf_coeffs(p, phi, psi)
    x, xp = np.asarray(x), np.asarray(xp)
    val = np.sqrt(co.a2 * co.b2) / math.pi * np.exp(-co.a2 * (x - co.c * xp) ** 2 - co.b2 * xp**2)
    return _scalar(val)


def single_quad_pdf(p: TwinBeamParams, x):
    """Density of one photocurrent alone: zero-mean Gaussian, thermal width."""
    var = 0.5 * (p.nbar + 0.5) + p.delta2_eta
    x = np.asarray(x)
    return _scalar(np.exp(-0.5 * x**2 / var) / math.sqrt(2 * math.pi * var))


def gain(p: TwinBeamParams, sum_phase):
    """Power gain of the central-frequency LO component.

    ``sum_phase`` is the sum of the two input LO phases.  With equal LO
    amplitudes |mu + nu exp(-i sum_phase)|^2 = mu^2 |1 + tau exp(-i sum_phase)|^2.
    """
    s = np.asarray(sum_phase)
    return _scalar(p.mu**2 * np.abs(1.0 + p.tau * np.exp(-1j * s)) ** 2)


def weight_fn(p: TwinBeamParams, sum_phase):
    """Density that maps the self-homodyne phase sum onto uniform phases."""
    return _scalar(1.0 / (2.0 * math.pi * np.asarray(gain(p, sum_phase))))
