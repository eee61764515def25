"""Fock-space special functions.

Quadrature convention used throughout the package::

    X_phi = (exp(-i phi) a + exp(i phi) a^dagger) / 2

so the vacuum quadrature variance is 1/4 and the position-space
wavefunctions carry an ``exp(-x**2)`` envelope.

Complex amplitudes are plain Python/numpy complex numbers and Fock indices
are non-negative ints.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import eval_genlaguerre, gammaln

__all__ = [
    "log_factorial",
    "laguerre_assoc",
    "displacement_matrix_element",
    "displacement_matrix",
    "quad_char_element",
    "quad_char_matrix",
    "quad_wavefunction",
    "quad_wavefunctions",
]


def log_factorial(n):
    """Return ``ln(n!)``. Accepts ints or integer arrays."""
    if np.ndim(n) == 0:
        n = int(n)
        if n < 0:
            raise ValueError("log_factorial needs n >= 0")
        return math.lgamma(n + 1.0)
    n = np.asarray(n)
    if np.any(n < 0):
        raise ValueError("log_factorial needs n >= 0")
    return gammaln(n + 1.0)


def laguerre_assoc(degree: int, order: int, x):
    """Associated Laguerre polynomial L_degree^(order)(x)."""
    out = eval_genlaguerre(degree, order, np.asarray(x, dtype=float))
    return out if np.ndim(out) else float(out)


def _laguerre_table(nmax: int, x: np.ndarray) -> np.ndarray:
    """All L_j^(a)(x) for 0 <= j, j + a <= nmax, shape (nmax+1, nmax+1, *x.shape).

    Indexed ``[j, a]``; entries with j + a > nmax are left at zero.
    """
    out = np.zeros((nmax + 1, nmax + 1) + x.shape)
    for a in range(nmax + 1):
        out[0, a] = 1.0
        if nmax - a >= 1:
            out[1, a] = 1.0 + a - x
        for k in range(1, nmax - a):
            out[k + 1, a] = ((2 * k + 1 + a - x) * out[k, a] - (k + a) * out[k - 1, a]) / (k + 1)
    return out


def displacement_matrix_element(n: int, m: int, w: complex) -> complex:
    """<n|D(w)|m> with D(w) = exp(w a^dagger - conj(w) a)."""
    if n < 0 or m < 0:
        raise ValueError("Fock indices must be non-negative")
    if n < m:
        return complex(np.conj(displacement_matrix_element(m, n, -w)))
    r2 = abs(w) ** 2
    pref = math.exp(0.5 * (log_factorial(m) - log_factorial(n)) - 0.5 * r2)
    return complex(pref * w ** (n - m) * laguerre_assoc(m, n - m, r2))


def displacement_matrix(w, nmax: int, n_cols: int | None = None) -> np.ndarray:
    """Matrix of <n|D(w)|m> for n <= nmax, m < n_cols (default nmax+1).

    ``w`` may be an array; the result has shape ``w.shape + (nmax+1, n_cols)``.
    Elements are exact matrix elements, not a truncated-exponential
    approximation, so any rectangular block is accurate.
    """
    w = np.asarray(w, dtype=complex)
    n_rows = nmax + 1
    n_cols = n_rows if n_cols is None else n_cols
    size = max(n_rows, n_cols)
    r2 = np.abs(w) ** 2
    lag = _laguerre_table(size - 1, r2)
    lf = gammaln(np.arange(size) + 1.0)
    gauss = np.exp(-0.5 * r2)
    # powers w^d and (-conj w)^d for d = 0..size-1
    pw = np.ones((size,) + w.shape, dtype=complex)
    pc = np.ones((size,) + w.shape, dtype=complex)
    for d in range(1, size):
        pw[d] = pw[d - 1] * w
        pc[d] = pc[d - 1] * (-np.conj(w))
    out = np.empty(w.shape + (n_rows, n_cols), dtype=complex)
    for n in range(n_rows):
        for m in range(n_cols):
            lo, d = min(n, m), abs(n - m)
            pref = np.exp(0.5 * (lf[lo] - lf[lo + d])) * gauss * lag[lo, d]
            out[..., n, m] = pref * (pw[d] if n >= m else pc[d])
    return out


def quad_char_element(n: int, m: int, k: float, phi: float) -> complex:
    """<n|exp(-i k X_phi)|m>, the quadrature characteristic-function element."""
    return displacement_matrix_element(n, m, -0.5j * k * np.exp(1j * phi))


def quad_char_matrix(k, nmax: int, phi: float = 0.0) -> np.ndarray:
    """Vectorised :func:`quad_char_element` over ``k``; shape ``k.shape + (D, D)``."""
    k = np.asarray(k, dtype=float)
    return displacement_matrix(-0.5j * k * np.exp(1j * phi), nmax)


def quad_wavefunctions(nmax: int, x) -> np.ndarray:
    """<x|n> for n = 0..nmax, shape ``(nmax+1,) + x.shape``.

    Normalised Hermite functions in the variance-1/4 convention, built by the
    stable three-term recurrence (no explicit Hermite polynomials).
    """
    x = np.asarray(x, dtype=float)
    y = math.sqrt(2.0) * x
    out = np.empty((nmax + 1,) + x.shape)
    out[0] = (2.0 / math.pi) ** 0.25 * np.exp(-x * x)
    if nmax >= 1:
        out[1] = math.sqrt(2.0) * y * out[0]
    for n in range(1, nmax):
        out[n + 1] = math.sqrt(2.0 / (n + 1)) * y * out[n] - math.sqrt(n / (n + 1)) * out[n - 1]
    return out


def quad_wavefunction(n: int, x):
    """<x|n> for a single Fock index."""
    vals = quad_wavefunctions(n, x)[n]
    return vals if np.ndim(vals) else float(vals)
