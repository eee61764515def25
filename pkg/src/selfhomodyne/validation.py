"""Built-in oracle checks run by ``selfhomodyne validate``.

Each check compares a production code path against an independent
computation and reports the worst deviation next to its tolerance.
"""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from . import channels, kernel, nopa
from .fockmath import quad_wavefunctions


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error)) and self.error <= self.tol

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: error={self.error:.3e} tol={self.tol:.1e}"


def _fock_amplitude(p: nopa.TwinBeamParams, y, yp, phi, psi, nterms: int) -> np.ndarray:
    """sum_n sqrt(1-tau^2) tau^n exp(-in(phi+psi)) <y|n><y'|n> on the outer grid y x y'."""
    n = np.arange(nterms + 1)
    coef = math.sqrt(1.0 - p.tau**2) * p.tau**n * np.exp(-1j * n * (phi + psi))
    a = quad_wavefunctions(nterms, np.ravel(y))
    b = quad_wavefunctions(nterms, np.ravel(yp))
    return (a * coef[:, None]).T @ b


def default_nterms(p: nopa.TwinBeamParams, eps: float = 1e-18) -> int:
    if p.tau == 0:
        return 0
    return int(math.ceil(math.log(eps) / (2.0 * math.log(p.tau))))


def fock_series_joint_pdf(p: nopa.TwinBeamParams, x, xp, phi, psi, nterms: int | None = None,
                          gh_nodes: int = 80) -> np.ndarray:
    """Joint photocurrent density from the Fock expansion of the twin beam.

    Returns the outer-grid density ``P[i, j]`` at (x[i], xp[j]).  For eta = 1
    it is |sum_n c_n <x|n><x'|n>|^2; for eta < 1 that density is smoothed
    with independent Gaussian noise of variance (1-eta)/(4 eta) per channel
    using Gauss-Hermite quadrature in both directions.
    """
    x, xp = np.atleast_1d(np.asarray(x, dtype=float)), np.atleast_1d(np.asarray(xp, dtype=float))
    nterms = default_nterms(p) if nterms is None else nterms
    if p.eta == 1.0:
        return np.abs(_fock_amplitude(p, x, xp, phi, psi, nterms)) ** 2
    t, w = np.polynomial.hermite.hermgauss(gh_nodes)
    shift = math.sqrt(2.0 * p.delta2_eta) * t
    y = (x[:, None] + shift[None, :]).ravel()
    yp = (xp[:, None] + shift[None, :]).ravel()
    dens = np.abs(_fock_amplitude(p, y, yp, phi, psi, nterms)) ** 2
    dens = dens.reshape(len(x), gh_nodes, len(xp), gh_nodes)
    return np.einsum("k,ikjl,l->ij", w / math.sqrt(math.pi), dens, w / math.sqrt(math.pi))


def check_pdf_fock_series(nbar: float = 1.0, eta: float = 1.0) -> CheckResult:
    p = nopa.TwinBeamParams.from_nbar(nbar, eta)
    rng = np.random.default_rng(7)
    x, xp = np.sort(rng.uniform(-3, 3, 15)), np.sort(rng.uniform(-3, 3, 15))
    phi, psi = 0.4, 1.3
    exact = nopa.joint_quad_pdf(p, x[:, None], xp[None, :], phi, psi)
    err = np.max(np.abs(exact - fock_series_joint_pdf(p, x, xp, phi, psi)))
    return CheckResult(f"joint quadrature pdf vs Fock series (nbar={nbar}, eta={eta})", float(err), 1e-8)


def _smeared_pdf(rho: np.ndarray, eta: float, x: np.ndarray, phis: np.ndarray) -> np.ndarray:
    """Quadrature densities of ``rho`` with Gaussian detector noise, by direct convolution."""
    dx = x[1] - x[0]
    clean = np.array([channels.quadrature_pdf(rho, x, ph) for ph in phis])
    d2 = (1.0 - eta) / (4.0 * eta)
    if d2 == 0:
        return clean
    g = np.exp(-np.subtract.outer(x, x) ** 2 / (2 * d2)) / math.sqrt(2 * math.pi * d2) * dx
    return clean @ g.T


def pattern_average(rho, eta: float, nmax: int, n_phi: int | None = None, x=None) -> np.ndarray:
    """Deterministic estimate of ``rho`` up to ``nmax``: the eta-matched
    pattern functions integrated against the exact smeared quadrature
    densities on a uniform phase grid.

    The phase average is exact once ``n_phi`` exceeds the largest phase
    frequency present in kernel times density.
    """
    kernel.check_eta(eta)
    rho = np.asarray(rho)
    x = np.linspace(-9.0, 9.0, 1801) if x is None else np.asarray(x, dtype=float)
    n_phi = 4 * (nmax + 1) if n_phi is None else int(n_phi)
    phis = 2 * math.pi * np.arange(n_phi) / n_phi
    pdf = _smeared_pdf(rho, eta, x, phis)
    spec = kernel.KernelSpec(eta, nmax).resolved()
    base = kernel.kernel_base_matrix(x, spec)
    offs = np.subtract.outer(np.arange(nmax + 1), np.arange(nmax + 1))
    dx = x[1] - x[0]
    est = np.zeros((nmax + 1, nmax + 1), dtype=complex)
    for ph, row in zip(phis, pdf):
        est += np.exp(1j * offs * ph) * np.tensordot(row * dx, base, axes=1)
    return est / n_phi


def check_kernel_completeness(eta: float = 0.9, nmax: int = 6, alpha: complex = 0.7 + 0.3j) -> CheckResult:
    """Average the pattern functions over the exact smeared quadrature density
    of a coherent state and compare with its Fock matrix."""
    rho = channels.coherent_state(alpha, nmax + 30)
    est = pattern_average(rho, eta, nmax)
    err = np.max(np.abs(est - rho[: nmax + 1, : nmax + 1]))
    return CheckResult(f"pattern-function completeness (coherent state, eta={eta})", float(err), 1e-6)


def check_kernel_table(eta: float = 0.9, nmax: int = 10, cache_dir=None) -> CheckResult:
    """Interpolated (and cached) kernel table against direct quadrature."""
    spec = kernel.KernelSpec(eta, nmax).resolved()
    tol = 1e-6
    with tempfile.TemporaryDirectory() as tmp:
        table = kernel.cached_kernel_table(spec, -6.0, 6.0, tol=tol, cache_dir=cache_dir or os.environ.get(kernel.CACHE_ENV) or tmp)
        x = np.random.default_rng(3).uniform(-6, 6, 300)
        direct = kernel.kernel_base_matrix(x, spec)
        scale = max(1.0, float(np.max(np.abs(direct))))
        err = float(np.max(np.abs(table.base(x) - direct))) / scale
    return CheckResult(f"kernel table interpolation (eta={eta}, nmax={nmax})", err, 10 * tol)


def check_gaussian_thermal(nbar: float = 2.0, eta: float = 0.8) -> CheckResult:
    mbar = (1.0 - eta) / (2.0 * eta)
    out = channels.gaussian_dress(channels.thermal_state(nbar, 30 + channels.PAD), eta, nmax_out=30)
    err = np.max(np.abs(out - channels.thermal_state(nbar + mbar, 30)))
    return CheckResult(f"Gaussian channel: thermal({nbar}) -> thermal(nbar + mbar), eta={eta}", float(err), 1e-6)


def check_loss_thermal(nbar: float = 2.0, eta: float = 0.7) -> CheckResult:
    out = channels.loss_dress(channels.thermal_state(nbar, 120), eta)[:31, :31]
    err = np.max(np.abs(out - channels.thermal_state(eta * nbar, 30)))
    return CheckResult(f"loss channel: thermal({nbar}) -> thermal(eta nbar), eta={eta}", float(err), 1e-8)


def check_loss_composition(e1: float = 0.7, e2: float = 0.6) -> CheckResult:
    rho = channels.coherent_state(1.2 - 0.5j, 40)
    err = np.max(np.abs(channels.loss_dress(channels.loss_dress(rho, e1), e2) - channels.loss_dress(rho, e1 * e2)))
    return CheckResult("loss channel composition", float(err), 1e-8)


def check_trace_preservation(eta: float = 0.8) -> CheckResult:
    rho = channels.coherent_state(1.5, 30)
    tr_in = np.real(np.trace(rho))
    g = channels.gaussian_dress(rho, eta, nmax_out=30 + 4 * channels.PAD)
    l = channels.loss_dress(rho, eta)
    err = max(abs(np.real(np.trace(g)) - tr_in), abs(np.real(np.trace(l)) - tr_in))
    return CheckResult(f"channel trace preservation (eta={eta})", float(err), 1e-8)


def run_all(kernel_eta: float = 0.9, cache_dir=None) -> list[CheckResult]:
    """Run every check; ``kernel_eta`` outside (1/2, 1] raises EfficiencyBoundError."""
    kernel.check_eta(kernel_eta)
    return [
        check_pdf_fock_series(1.0),
        check_pdf_fock_series(10.0),
        check_pdf_fock_series(10.0, 0.8),
        check_kernel_completeness(1.0),
        check_kernel_completeness(kernel_eta),
        check_kernel_table(kernel_eta, cache_dir=cache_dir),
        check_gaussian_thermal(),
        check_loss_thermal(),
        check_loss_composition(),
        check_trace_preservation(),
    ]
