"""Pattern-function kernels <n|K_eta(x - X_phi)|m> in the Fock basis.

The kernel is evaluated by direct quadrature of its Fourier representation

    <n|K_eta|m>(x, 0) = 1/2 int_0^inf dk k exp((1-eta) k^2 / (8 eta))
                        Re[exp(i k x) <n|exp(-i k X_0)|m>]

on Gauss-Legendre panels over [0, k_cutoff].  The characteristic-function
element carries exp(-k^2/8), so the integrand decays like
exp(-k^2 (2 eta - 1) / (8 eta)) and the integral exists only for eta > 1/2.
The phase dependence is exact: <n|K|m>(x, phi) = exp(i (n-m) phi) <n|K|m>(x, 0).
At phi = 0 the kernel is real and symmetric in (n, m).

:class:`KernelTable` tabulates the phase-free part on an x grid and
interpolates with cubic splines, falling back to direct evaluation outside
the grid.
"""

from __future__ import annotations

import functools
import hashlib
import json
import logging
import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from . import __version__
from .fockmath import quad_char_matrix

__all__ = [
    "EfficiencyBoundError",
    "KernelSpec",
    "default_k_cutoff",
    "kernel_element_base",
    "kernel_element",
    "kernel_base_matrix",
    "KernelTable",
    "build_kernel_table",
    "auto_kernel_table",
    "cached_kernel_table",
    "CACHE_ENV",
]

log = logging.getLogger(__name__)

CACHE_ENV = "SELFHOMODYNE_CACHE"
CACHE_FORMAT = 1
_X_BLOCK = 512


class EfficiencyBoundError(ValueError):
    """Raised for eta <= 1/2, where Fock-basis pattern functions are unbounded."""


def check_eta(eta: float) -> None:
    if not (0.5 < eta <= 1.0):
        raise EfficiencyBoundError(
            f"eta={eta}: Fock-basis pattern functions exist only for 1/2 < eta <= 1; "
            "the kernel integrand grows like exp(k^2 (1 - 2 eta) / (8 eta)) for eta <= 1/2"
        )


@functools.lru_cache(maxsize=64)
def default_k_cutoff(eta: float, nmax: int, eps: float = 1e-14) -> float:
    """Smallest k beyond which the kernel integrand envelope stays below eps * peak.

    The envelope is k exp((1-eta) k^2/(8 eta)) max_{n,m} |<n|exp(-ikX)|m>|,
    evaluated on a grid that extends well past the Gaussian decay scale.
    """
    check_eta(eta)
    a = (2 * eta - 1) / (8 * eta)
    kmax = math.sqrt((math.log(1 / eps) + 4 * (nmax + 1) * math.log(4 * nmax + 8) + 50) / a)
    while True:
        k = np.linspace(0.0, kmax, 4001)[1:]
        amp = np.abs(quad_char_matrix(k, nmax)).max(axis=(1, 2))
        env = k * np.exp((1 - eta) * k**2 / (8 * eta)) * amp
        above = np.nonzero(env > eps * env.max())[0]
        last = above[-1]
        if last < len(k) - 10:
            return float(k[min(last + 1, len(k) - 1)])
        kmax *= 1.5


@dataclass(frozen=True)
class KernelSpec:
    """Quadrature parameters of the pattern-function evaluation.

    ``k_cutoff=None`` means "use :func:`default_k_cutoff`"; call
    :meth:`resolved` to get a spec with the value filled in.
    """

    eta: float
    nmax: int
    k_cutoff: float | None = None
    quadrature_nodes: int = 4096
    panels: int = 16

    def __post_init__(self):
        check_eta(self.eta)
        if self.nmax < 0:
            raise ValueError("nmax must be >= 0")
        if self.quadrature_nodes % self.panels:
            raise ValueError("quadrature_nodes must be a multiple of panels")
        if self.k_cutoff is not None and self.k_cutoff <= 0:
            raise ValueError("k_cutoff must be positive")

    @property
    def dim(self) -> int:
        return self.nmax + 1

    def resolved(self) -> "KernelSpec":
        if self.k_cutoff is not None:
            return self
        return KernelSpec(self.eta, self.nmax, default_k_cutoff(self.eta, self.nmax),
                          self.quadrature_nodes, self.panels)

    def to_dict(self) -> dict:
        return asdict(self.resolved())

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _pairs(dim: int, diag_only: bool) -> tuple[np.ndarray, np.ndarray]:
    if diag_only:
        i = np.arange(dim)
        return i, i
    return np.triu_indices(dim)


@functools.lru_cache(maxsize=16)
def _quadrature(spec: KernelSpec, diag_only: bool):
    """Nodes k_j and per-pair weight columns (cos part, sin part)."""
    spec = spec.resolved()
    per = spec.quadrature_nodes // spec.panels
    t, w = np.polynomial.legendre.leggauss(per)
    edges = np.linspace(0.0, spec.k_cutoff, spec.panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    k = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    wk = (half[:, None] * w[None, :]).ravel()
    amp = quad_char_matrix(k, spec.nmax)
    rows, cols = _pairs(spec.dim, diag_only)
    amp = amp[:, rows, cols]
    g = 0.5 * wk * k * np.exp((1 - spec.eta) * k**2 / (8 * spec.eta))
    return k, g[:, None] * amp.real, g[:, None] * amp.imag


def _base_columns(x: np.ndarray, spec: KernelSpec, diag_only: bool) -> np.ndarray:
    """Phase-free kernel values for the pair list, shape (len(x), n_pairs)."""
    k, fr, fi = _quadrature(spec, diag_only)
    x = np.asarray(x, dtype=float).ravel()
    out = np.empty((x.size, fr.shape[1]))
    for s in range(0, x.size, _X_BLOCK):
        kx = np.outer(x[s:s + _X_BLOCK], k)
        out[s:s + _X_BLOCK] = np.cos(kx) @ fr - np.sin(kx) @ fi
    return out


def _columns_to_matrix(cols: np.ndarray, dim: int) -> np.ndarray:
    rows, cc = np.triu_indices(dim)
    out = np.empty((cols.shape[0], dim, dim))
    out[:, rows, cc] = cols
    out[:, cc, rows] = cols
    return out


def kernel_base_matrix(x, spec: KernelSpec) -> np.ndarray:
    """All <n|K_eta(x - X_0)|m>, shape ``(len(x), nmax+1, nmax+1)``."""
    return _columns_to_matrix(_base_columns(np.atleast_1d(x), spec, False), spec.dim)


def kernel_element_base(n: int, m: int, x, spec: KernelSpec):
    """<n|K_eta(x - X_0)|m> for one index pair (real)."""
    if not (0 <= n <= spec.nmax and 0 <= m <= spec.nmax):
        raise IndexError(f"indices ({n}, {m}) outside 0..{spec.nmax}")
    vals = kernel_base_matrix(x, spec)[:, n, m]
    return float(vals[0]) if np.ndim(x) == 0 else vals.reshape(np.shape(x))


def kernel_element(n: int, m: int, x, phi, spec: KernelSpec):
    """<n|K_eta(x - X_phi)|m> (complex)."""
    base = kernel_element_base(n, m, x, spec)
    return np.exp(1j * (n - m) * np.asarray(phi)) * base


class KernelTable:
    """Cubic-spline tabulation of the phase-free kernel on an x grid.

    With ``diag_only`` only the diagonal pattern functions <n|K|n> are
    stored.  Points outside the grid (or any point, for an empty grid) are
    evaluated directly.
    """

    def __init__(self, spec: KernelSpec, x_grid, values: np.ndarray | None = None, diag_only: bool = False):
        self.spec = spec.resolved()
        self.diag_only = diag_only
        self.x_grid = np.asarray(x_grid, dtype=float)
        if self.x_grid.size and np.any(np.diff(self.x_grid) <= 0):
            raise ValueError("x_grid must be strictly increasing")
        if self.x_grid.size >= 4:
            if values is None:
                values = _base_columns(self.x_grid, self.spec, diag_only)
            self.values = values
            self._spline = CubicSpline(self.x_grid, values, axis=0)
        else:
            self.values = None
            self._spline = None

    @property
    def lo(self) -> float:
        return float(self.x_grid[0]) if self._spline is not None else math.inf

    @property
    def hi(self) -> float:
        return float(self.x_grid[-1]) if self._spline is not None else -math.inf

    def columns(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        if self._spline is None:
            return _base_columns(x, self.spec, self.diag_only)
        out = self._spline(x)
        outside = (x < self.lo) | (x > self.hi)
        if outside.any():
            out[outside] = _base_columns(x[outside], self.spec, self.diag_only)
        return out

    def diag(self, x) -> np.ndarray:
        """<n|K|n>(x), shape (len(x), nmax+1)."""
        cols = self.columns(x)
        if self.diag_only:
            return cols
        rows, cc = np.triu_indices(self.spec.dim)
        return cols[:, rows == cc]

    def base(self, x) -> np.ndarray:
        """Full phase-free matrices, shape (len(x), nmax+1, nmax+1)."""
        if self.diag_only:
            raise ValueError("table holds diagonal pattern functions only")
        return _columns_to_matrix(self.columns(x), self.spec.dim)

    def max_midpoint_error(self) -> float:
        """Largest |interpolated - direct| over grid midpoints and pairs."""
        if self._spline is None:
            return 0.0
        mid = 0.5 * (self.x_grid[1:] + self.x_grid[:-1])
        return float(np.abs(self._spline(mid) - _base_columns(mid, self.spec, self.diag_only)).max())


def build_kernel_table(spec: KernelSpec, x_grid, diag_only: bool = False) -> KernelTable:
    return KernelTable(spec, x_grid, diag_only=diag_only)


def auto_kernel_table(spec: KernelSpec, lo: float, hi: float, tol: float = 1e-6,
                      diag_only: bool = False, spacing: float = 0.02) -> KernelTable:
    """Uniform-grid table on [lo, hi], refined until midpoint error <= tol * max(1, max|K|)."""
    while True:
        n = int(math.ceil((hi - lo) / spacing)) + 1
        table = KernelTable(spec, np.linspace(lo, hi, n), diag_only=diag_only)
        scale = max(1.0, float(np.abs(table.values).max()))
        err = table.max_midpoint_error()
        if err <= tol * scale:
            table.tolerance = tol
            table.midpoint_error = err
            return table
        log.debug("kernel table spacing %.4g: midpoint error %.3g, refining", spacing, err)
        spacing *= max(0.3, min(0.75, 0.9 * (tol * scale / err) ** 0.25))


def _cache_key(spec: KernelSpec, lo: float, hi: float, tol: float, diag_only: bool) -> dict:
    return {"format": CACHE_FORMAT, "code_version": __version__, "spec": spec.to_dict(),
            "lo": lo, "hi": hi, "tol": tol, "diag_only": diag_only}


def cached_kernel_table(spec: KernelSpec, lo: float, hi: float, tol: float = 1e-6,
                        diag_only: bool = False, cache_dir=None) -> KernelTable:
    """:func:`auto_kernel_table` with an on-disk cache.

    ``lo``/``hi`` are widened to whole numbers so nearby datasets share a
    table.  The cache directory comes from ``cache_dir`` or the
    ``SELFHOMODYNE_CACHE`` environment variable; without either nothing is
    cached.  A file whose header hash does not match, or that cannot be
    read, is rebuilt.
    """
    lo, hi = float(math.floor(lo)), float(math.ceil(hi))
    cache_dir = cache_dir or os.environ.get(CACHE_ENV)
    if not cache_dir:
        return auto_kernel_table(spec, lo, hi, tol, diag_only)
    key = _cache_key(spec, lo, hi, tol, diag_only)
    digest = hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()
    path = Path(cache_dir) / f"kernel-{digest[:16]}.npz"
    if path.exists():
        try:
            with np.load(path, allow_pickle=False) as f:
                header = json.loads(str(f["header"]))
                if header.get("digest") != digest:
                    raise ValueError("kernel cache header mismatch")
                table = KernelTable(spec, f["x_grid"], values=f["values"], diag_only=diag_only)
                table.tolerance = tol
                return table
        except Exception as exc:  # corrupt or stale cache: rebuild
            log.warning("discarding kernel cache %s: %s", path, exc)
    table = auto_kernel_table(spec, lo, hi, tol, diag_only)
    Path(cache_dir).mkdir(parents=True, exist_ok=True)
    header = json.dumps({**key, "digest": digest}, sort_keys=True)
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, header=np.array(header), x_grid=table.x_grid, values=table.values)
    os.replace(tmp, path)
    return table
