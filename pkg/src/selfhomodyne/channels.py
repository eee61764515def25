"""Exact Fock-basis dressing channels and reference states.

Two ways of folding detector inefficiency into the state are provided:

* :func:`gaussian_dress`, the Gaussian displacement-noise channel
  Gamma_eta(rho) = int d^2w/(pi mbar) exp(-|w|^2/mbar) D(w) rho D(w)^dagger
  with mbar = (1 - eta)/(2 eta).  This is what eta=1 pattern functions see
  when applied to raw eta<1 data.
* :func:`loss_dress`, the beam-splitter loss channel
  Lambda_eta(rho) = sum_k A_k rho A_k^dagger,
  A_k = sum_n sqrt(C(n+k, k) (1-eta)^k eta^n) |n><n+k|,
  the state of sqrt(eta) a + sqrt(1-eta) v.  This is what eta=1 pattern
  functions see when the photocurrents are rescaled by sqrt(eta).

Both are also available as superoperator tensors ``S[n, m, j, k]`` mapping
``rho[j, k]`` to ``out[n, m]``, which is how :func:`apply_per_mode` acts on
two-mode matrices stored as ``R[n1, m1, n2, m2] = <n1, m1|R|n2, m2>``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import gammaln, roots_laguerre

from .fockmath import displacement_matrix, quad_wavefunctions

__all__ = [
    "PAD",
    "FockDensityMatrix",
    "ChannelError",
    "thermal_state",
    "fock_state",
    "coherent_state",
    "twin_beam_state",
    "two_mode_number_probs",
    "quadrature_pdf",
    "gaussian_superop",
    "gaussian_dress",
    "loss_superop",
    "loss_dress",
    "inverse_loss",
    "apply_superop",
    "apply_per_mode",
]

#: Extra Fock levels used internally before cropping.
PAD = 16

RENORM_TOL = 1e-6
MAX_PAD = 256


class ChannelError(ValueError):
    """A channel could not be evaluated to the required accuracy."""


@dataclass
class FockDensityMatrix:
    """A truncated one- or two-mode density matrix.

    Single mode: ``elements[n, m]``.  Two modes: ``elements[n1, m1, n2, m2]``
    with (n1, m1) the ket indices of modes 1 and 2.
    """

    elements: np.ndarray

    def __post_init__(self):
        self.elements = np.asarray(self.elements, dtype=complex)
        if self.elements.ndim not in (2, 4) or len(set(self.elements.shape)) != 1:
            raise ValueError(f"expected a square (D, D) or (D, D, D, D) array, got {self.elements.shape}")

    @property
    def arity(self) -> int:
        return self.elements.ndim // 2

    @property
    def nmax(self) -> int:
        return self.elements.shape[0] - 1

    def matrix(self) -> np.ndarray:
        """Ordinary square matrix (two-mode index pairs flattened)."""
        d = self.elements.shape[0] ** self.arity
        return self.elements.reshape(d, d)

    def trace(self) -> float:
        return float(np.real(np.trace(self.matrix())))

    def check(self, tail_bound: float = 1e-6, psd_tol: float = 1e-10) -> None:
        """Raise ``ValueError`` unless Hermitian, trace in [1 - tail_bound, 1], PSD."""
        m = self.matrix()
        if not np.allclose(m, m.conj().T, atol=1e-12):
            raise ValueError("density matrix is not Hermitian")
        tr = self.trace()
        if not (1.0 - tail_bound <= tr <= 1.0 + 1e-12):
            raise ValueError(f"trace {tr} outside [1 - {tail_bound}, 1]")
        if np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min() < -psd_tol:
            raise ValueError("density matrix is not positive semidefinite")


def _check_eta(eta: float) -> None:
    if not (0.0 < eta <= 1.0):
        raise ValueError(f"eta must lie in (0, 1], got {eta}")


def _as_array(rho) -> np.ndarray:
    return rho.elements if isinstance(rho, FockDensityMatrix) else np.asarray(rho, dtype=complex)


# ---------------------------------------------------------------- states

def thermal_state(nbar: float, nmax: int) -> np.ndarray:
    """Diagonal thermal matrix, truncated (trace slightly below 1)."""
    n = np.arange(nmax + 1)
    if nbar == 0:
        return np.diag((n == 0).astype(complex))
    p = np.exp(n * math.log(nbar / (nbar + 1.0))) / (nbar + 1.0)
    return np.diag(p.astype(complex))


def fock_state(n: int, nmax: int) -> np.ndarray:
    if not 0 <= n <= nmax:
        raise ValueError("Fock index outside truncation")
    out = np.zeros((nmax + 1, nmax + 1), dtype=complex)
    out[n, n] = 1.0
    return out


def coherent_state(alpha: complex, nmax: int) -> np.ndarray:
    n = np.arange(nmax + 1)
    amp = np.exp(-0.5 * abs(alpha) ** 2 - 0.5 * gammaln(n + 1.0)) * np.asarray(alpha, dtype=complex) ** n
    return np.outer(amp, amp.conj())


def twin_beam_state(tau: float, nmax: int) -> np.ndarray:
    """R[n1, m1, n2, m2] of sqrt(1 - tau^2) sum_n tau^n |n, n>, truncated at nmax."""
    d = nmax + 1
    c = np.zeros((d, d))
    c[np.arange(d), np.arange(d)] = math.sqrt(1.0 - tau**2) * tau ** np.arange(d)
    return np.einsum("ab,cd->abcd", c, c).astype(complex)


def two_mode_number_probs(R) -> np.ndarray:
    """p(n, m) = <n, m|R|n, m>."""
    R = _as_array(R)
    idx = np.arange(R.shape[0])
    n, m = np.meshgrid(idx, idx, indexing="ij")
    return np.real(R[n, m, n, m])


def quadrature_pdf(rho, x, phi: float = 0.0) -> np.ndarray:
    """Density of the quadrature X_phi for a single-mode matrix."""
    rho = _as_array(rho)
    psi = quad_wavefunctions(rho.shape[0] - 1, x)
    ph = np.exp(-1j * np.arange(rho.shape[0]) * phi)
    amp = psi * ph.reshape((-1,) + (1,) * np.ndim(x))
    return np.real(np.einsum("n...,nm,m...->...", amp, rho, amp.conj()))


# ---------------------------------------------------------------- Gaussian noise

def _phase_mask(nmax_out: int, nmax_in: int) -> np.ndarray:
    n = np.arange(nmax_out + 1)
    j = np.arange(nmax_in + 1)
    off_out = n[:, None] - n[None, :]
    off_in = j[:, None] - j[None, :]
    return off_out[:, :, None, None] == off_in[None, None, :, :]


def _gaussian_superop_raw(mbar: float, nmax_in: int, nmax_out: int) -> np.ndarray:
    # Radial Gauss-Laguerre against exp(-(1 + mbar) t), t = |w|^2 / mbar, on
    # the polynomial part D(r) exp(r^2 / 2) of the real displacement matrix.
    # The angular integral of the phases exp(i(n-m-j+k)theta) is taken
    # exactly, which is the same as a uniform angular grid fine enough to
    # resolve every phase difference.
    nodes = nmax_in + nmax_out + 2
    s, w = roots_laguerre(nodes)
    t = s / (1.0 + mbar)
    r = np.sqrt(mbar * t)
    P = np.real(displacement_matrix(r, nmax_out, nmax_in + 1)) * np.exp(0.5 * r * r)[:, None, None]
    q, dn, dj = P.shape
    flat = P.reshape(q, dn * dj)
    S = ((flat * (w / (1.0 + mbar))[:, None]).T @ flat).reshape(dn, dj, dn, dj).transpose(0, 2, 1, 3)
    return S * _phase_mask(nmax_out, nmax_in)


def gaussian_superop(eta: float, nmax_in: int, nmax_out: int | None = None,
                     return_renorm: bool = False):
    """Superoperator of Gamma_eta, shape (nmax_out+1,)*2 + (nmax_in+1,)*2.

    Output levels are first computed up to ``nmax_in + PAD`` (doubling the
    padding while the channel visibly leaks past the top level); each input
    column is then rescaled so the channel is exactly trace preserving, and
    the rescale factors (which must all be 1 within 1e-6) are returned when
    ``return_renorm`` is set.
    """
    _check_eta(eta)
    nmax_out = nmax_in if nmax_out is None else nmax_out
    d_in = nmax_in + 1
    if eta == 1.0:
        S = np.zeros((nmax_out + 1, nmax_out + 1, d_in, d_in))
        k = min(nmax_out, nmax_in) + 1
        for a in range(k):
            for b in range(k):
                S[a, b, a, b] = 1.0
        return (S, np.ones(d_in)) if return_renorm else S
    mbar = (1.0 - eta) / (2.0 * eta)
    pad = PAD
    while True:
        S = _gaussian_superop_raw(mbar, nmax_in, max(nmax_out, nmax_in) + pad)
        col_trace = np.einsum("nnjj->j", S)
        if np.max(np.abs(col_trace - 1.0)) <= RENORM_TOL:
            break
        if pad >= MAX_PAD:
            raise ChannelError(
                f"Gaussian channel renormalisation {col_trace.min():.3g}..{col_trace.max():.3g} "
                f"is not within {RENORM_TOL} of 1 even with {pad} extra levels (eta={eta})")
        pad *= 2
    S = S / np.sqrt(np.outer(col_trace, col_trace))[None, None, :, :]
    S = S[: nmax_out + 1, : nmax_out + 1]
    return (S, col_trace) if return_renorm else S


def gaussian_dress(rho, eta: float, nmax_out: int | None = None, return_renorm: bool = False):
    """Gamma_eta(rho) for a single-mode matrix.

    ``nmax_out`` defaults to the input truncation.  With ``return_renorm``
    the per-level trace renormalisation factors are returned as well.
    """
    arr = _as_array(rho)
    if arr.ndim != 2:
        raise ValueError("gaussian_dress takes a single-mode matrix; use apply_per_mode for two modes")
    S, f = gaussian_superop(eta, arr.shape[0] - 1, nmax_out, return_renorm=True)
    out = apply_superop(S, arr)
    out = FockDensityMatrix(out) if isinstance(rho, FockDensityMatrix) else out
    return (out, f) if return_renorm else out


# ---------------------------------------------------------------- loss

def _bernoulli_coeffs(eta: float, nmax: int, k: int) -> np.ndarray:
    """c[n] with A_k = sum_n c[n] |n><n+k|, eta may exceed 1 (inverse map)."""
    n = np.arange(nmax + 1 - k)
    logc = 0.5 * (gammaln(n + k + 1.0) - gammaln(n + 1.0) - gammaln(k + 1.0))
    return np.exp(logc + 0.5 * n * math.log(eta))


def _bernoulli_series(rho: np.ndarray, eta: float, tol: float = 1e-14) -> np.ndarray:
    d = rho.shape[0]
    out = np.zeros_like(rho)
    lam = 1.0 - eta
    for k in range(d):
        c = _bernoulli_coeffs(eta, d - 1, k)
        # lam^k may be negative for the inverse map: keep the sign outside the sqrt
        term = lam**k * (c[:, None] * rho[k:, k:] * c[None, :])
        out[: d - k, : d - k] += term
        if k > 0 and np.linalg.norm(term) < tol and np.linalg.norm(rho[k:, k:]) * abs(lam) ** k < tol:
            break
    return 0.5 * (out + out.conj().T)


def loss_dress(rho, eta: float) -> np.ndarray:
    """Lambda_eta(rho): the state after a beam splitter of transmissivity eta.

    The output keeps the input truncation, and is exact there since loss
    never raises the photon number.
    """
    _check_eta(eta)
    arr = _as_array(rho)
    if arr.ndim != 2:
        raise ValueError("loss_dress takes a single-mode matrix; use apply_per_mode for two modes")
    out = arr.copy() if eta == 1.0 else _bernoulli_series(arr, eta)
    return FockDensityMatrix(out) if isinstance(rho, FockDensityMatrix) else out


def inverse_loss(rho, eta: float) -> np.ndarray:
    """Undo :func:`loss_dress`: the same series evaluated at 1/eta.

    This is sum_k (eta-1)^k/k! a^k eta^(-N/2) rho eta^(-N/2) a^dagger^k, which
    recovers the bare state from a loss-dressed one.  The result need not be
    positive if ``rho`` is not in the range of the loss channel.
    """
    _check_eta(eta)
    arr = _as_array(rho)
    return arr.copy() if eta == 1.0 else _bernoulli_series(arr, 1.0 / eta)


def loss_superop(eta: float, nmax_in: int, nmax_out: int | None = None) -> np.ndarray:
    """Superoperator of Lambda_eta, same layout as :func:`gaussian_superop`."""
    _check_eta(eta)
    nmax_out = nmax_in if nmax_out is None else nmax_out
    d_in = nmax_in + 1
    S = np.zeros((nmax_out + 1, nmax_out + 1, d_in, d_in))
    for k in range(d_in):
        c = _bernoulli_coeffs(eta, nmax_in, k) * (1.0 - eta) ** (0.5 * k)
        n = np.arange(min(d_in - k, nmax_out + 1))
        S[n[:, None], n[None, :], (n + k)[:, None], (n + k)[None, :]] = c[n][:, None] * c[n][None, :]
    return S


# ---------------------------------------------------------------- application

def apply_superop(S: np.ndarray, rho: np.ndarray) -> np.ndarray:
    out = np.tensordot(S, rho, axes=([2, 3], [0, 1]))
    return 0.5 * (out + out.conj().T)


_CHANNELS: dict[str, Callable] = {
    "gaussian": gaussian_superop,
    "loss": loss_superop,
}


def apply_per_mode(R, channel, eta: float, nmax_out: int | None = None):
    """Apply a single-mode channel to both modes of ``R[n1, m1, n2, m2]``.

    ``channel`` is ``"gaussian"``, ``"loss"`` or a callable
    ``(eta, nmax_in, nmax_out) -> S[n, m, j, k]``.
    """
    arr = _as_array(R)
    if arr.ndim != 4:
        raise ValueError("apply_per_mode needs a two-mode matrix R[n1, m1, n2, m2]")
    fn = _CHANNELS[channel] if isinstance(channel, str) else channel
    nmax_in = arr.shape[0] - 1
    S = fn(eta, nmax_in, nmax_in if nmax_out is None else nmax_out)
    # mode 1 lives on axes (0, 2): result [n1', n2', m1, m2]
    tmp = np.tensordot(S, arr, axes=([2, 3], [0, 2]))
    # mode 2 lives on axes (2, 3) of tmp: result [n1', n2', m1', m2']
    out = np.tensordot(tmp, S, axes=([2, 3], [2, 3]))
    out = out.transpose(0, 2, 1, 3)
    d = out.shape[0]
    flat = out.reshape(d * d, d * d)
    flat = 0.5 * (flat + flat.conj().T)
    res = flat.reshape(out.shape)
    return FockDensityMatrix(res) if isinstance(R, FockDensityMatrix) else res
