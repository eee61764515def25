"""Density-matrix estimation by averaging pattern functions over records.

Single mode:  rho_nm = E_w[ <n|K(x - X_phi)|m> ]
Two modes:    <n1,m1|R|n2,m2> = E_w[ <n1|K(x - X_phi)|n2> <m1|K(x' - X_psi)|m2> ]

where E_w is the self-normalised weighted mean sum(w v) / sum(w).  With the
ideal phase model every weight is 1 and this is the plain sample mean.

Records are processed in fixed chunks of ``sampler.CHUNK_SIZE``; each chunk
yields a :class:`Moments` accumulator and the accumulators are combined by a
fixed pairwise tree, so a given dataset always produces bit-identical
estimates regardless of the number of worker threads.

Standard errors use the delta-method variance of the self-normalised
estimator, sum(w^2 |v - mean|^2) / (sum w)^2, which reduces to the sample
variance over N for unit weights.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .kernel import KernelSpec, KernelTable, cached_kernel_table, check_eta
from .sampler import CHUNK_SIZE, SingleModeRecords, TwoModeRecords

__all__ = [
    "AnalysisMode",
    "Moments",
    "tree_merge",
    "DensityMatrixEstimate",
    "DerivedStat",
    "reconstruct_single",
    "reconstruct_joint",
    "total_number_dist",
    "number_correlation",
    "diag_probabilities",
    "stderr_saturation_probe",
    "write_stats_csv",
]

_BLOCK = 8192


@dataclass(frozen=True)
class AnalysisMode:
    """How data taken at efficiency ``eta`` are analysed.

    ``bare``: kernels at the true eta, recovering the state itself.
    ``dressed-gaussian``: eta=1 kernels on the raw data, giving the state
    with the detector's Gaussian noise folded in.
    ``dressed-loss``: eta=1 kernels on data rescaled by sqrt(eta), giving
    the state after an equivalent loss.
    """

    kind: str
    eta: float = 1.0

    KINDS = ("bare", "dressed-gaussian", "dressed-loss")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown analysis mode {self.kind!r}; expected one of {self.KINDS}")
        if self.kind == "bare":
            check_eta(self.eta)
        elif not (0.0 < self.eta <= 1.0):
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")

    @classmethod
    def bare(cls, eta: float) -> "AnalysisMode":
        return cls("bare", eta)

    @classmethod
    def dressed_gaussian(cls, eta: float = 1.0) -> "AnalysisMode":
        return cls("dressed-gaussian", eta)

    @classmethod
    def dressed_loss(cls, eta: float) -> "AnalysisMode":
        return cls("dressed-loss", eta)

    @property
    def kernel_eta(self) -> float:
        return self.eta if self.kind == "bare" else 1.0

    @property
    def x_scale(self) -> float:
        return math.sqrt(self.eta) if self.kind == "dressed-loss" else 1.0

    def to_dict(self) -> dict:
        return {"kind": self.kind, "eta": self.eta}


@dataclass
class Moments:
    """Weighted power sums of per-record values ``v`` (any array shape)."""

    n: int
    sw: float
    sw2: float
    swv: np.ndarray
    sw2v: np.ndarray
    sw2vv: np.ndarray

    def merge(self, other: "Moments") -> "Moments":
        return Moments(
            self.n + other.n, self.sw + other.sw, self.sw2 + other.sw2,
            self.swv + other.swv, self.sw2v + other.sw2v, self.sw2vv + other.sw2vv,
        )

    def mean(self) -> np.ndarray:
        return self.swv / self.sw

    def stderr(self) -> np.ndarray:
        mu = self.mean()
        var = self.sw2vv - 2.0 * np.real(np.conj(mu) * self.sw2v) + np.abs(mu) ** 2 * self.sw2
        return np.sqrt(np.maximum(var, 0.0)) / self.sw


def tree_merge(items: list):
    """Combine accumulators (or dicts of them) by a fixed balanced pairwise tree."""
    if not items:
        raise ValueError("nothing to merge")

    def merge(a, b):
        if isinstance(a, dict):
            return {k: a[k].merge(b[k]) for k in a}
        return a.merge(b)

    while len(items) > 1:
        nxt = [merge(items[i], items[i + 1]) for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]


@dataclass
class DensityMatrixEstimate:
    """Reconstructed matrix elements with per-element standard errors.

    Layouts of ``elements`` (and ``stderr``):

    * ``arity=1``: ``rho[n, m]``.
    * ``arity=2, kind="full"``: ``R[n1, m1, n2, m2] = <n1, m1|R|n2, m2>``.
    * ``arity=2, kind="number"``: ``p[n, m] = <n, m|R|n, m>`` only.
    """

    arity: int
    nmax: int
    kind: str
    elements: np.ndarray
    stderr: np.ndarray
    n_records: int
    mode: AnalysisMode
    kernel_spec: dict
    mean_weight: float = 1.0
    weight_stderr: float = 0.0
    provenance: dict = field(default_factory=dict)
    derived: dict = field(default_factory=dict)

    def number_probabilities(self) -> tuple[np.ndarray, np.ndarray]:
        """Photon-number probabilities: p(n) for one mode, p(n, m) for two."""
        if self.arity == 1:
            return np.real(np.diagonal(self.elements)).copy(), np.diagonal(self.stderr).copy()
        if self.kind == "number":
            return np.real(self.elements).copy(), self.stderr.copy()
        d = self.nmax + 1
        idx = np.arange(d)
        n, m = np.meshgrid(idx, idx, indexing="ij")
        return np.real(self.elements[n, m, n, m]), self.stderr[n, m, n, m]

    def to_dict(self) -> dict:
        el = np.asarray(self.elements)
        return {
            "format_version": 1,
            "code_version": __version__,
            "arity": self.arity,
            "kind": self.kind,
            "nmax": self.nmax,
            "n_records": self.n_records,
            "mode": self.mode.to_dict(),
            "kernel_spec": self.kernel_spec,
            "weight_normalization": "self-normalized",
            "mean_weight": self.mean_weight,
            "weight_stderr": self.weight_stderr,
            "elements": {"re": np.real(el).tolist(), "im": np.imag(el).tolist()},
            "stderr": np.asarray(self.stderr).tolist(),
            "provenance": self.provenance,
            "derived": {k: {"value": np.asarray(v["value"]).tolist(), "stderr": np.asarray(v["stderr"]).tolist()}
                        for k, v in self.derived.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DensityMatrixEstimate":
        el = np.asarray(d["elements"]["re"]) + 1j * np.asarray(d["elements"]["im"])
        return cls(
            arity=int(d["arity"]), nmax=int(d["nmax"]), kind=d["kind"], elements=el,
            stderr=np.asarray(d["stderr"], dtype=float), n_records=int(d["n_records"]),
            mode=AnalysisMode(**d["mode"]), kernel_spec=d["kernel_spec"],
            mean_weight=float(d.get("mean_weight", 1.0)), weight_stderr=float(d.get("weight_stderr", 0.0)),
            provenance=d.get("provenance", {}),
            derived={k: {"value": np.asarray(v["value"], dtype=float), "stderr": np.asarray(v["stderr"], dtype=float)}
                     for k, v in d.get("derived", {}).items()},
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "DensityMatrixEstimate":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _prepare_table(values: list[np.ndarray], spec: KernelSpec, diag_only: bool, table, tol: float) -> KernelTable:
    if table is not None:
        if table.spec != spec.resolved():
            raise ValueError("kernel table was built for a different KernelSpec")
        if diag_only is False and table.diag_only:
            raise ValueError("full reconstruction needs a full kernel table")
        return table
    lo = min(float(v.min()) for v in values)
    hi = max(float(v.max()) for v in values)
    sd = max(float(v.std()) for v in values)
    return cached_kernel_table(spec, min(lo, -5 * sd), max(hi, 5 * sd), tol=tol, diag_only=diag_only)


def _map_chunks(fn, n_records: int, threads: int):
    starts = list(range(0, n_records, CHUNK_SIZE))
    if threads <= 1:
        parts = [fn(s, min(s + CHUNK_SIZE, n_records)) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda s: fn(s, min(s + CHUNK_SIZE, n_records)), starts))
    return tree_merge(parts)


def _weight_summary(w: np.ndarray) -> tuple[float, float]:
    return float(w.mean()), float(w.std(ddof=1) / math.sqrt(len(w))) if len(w) > 1 else 0.0


def _resolve_spec(mode: AnalysisMode, nmax: int, spec: KernelSpec | None) -> KernelSpec:
    if spec is None:
        return KernelSpec(mode.kernel_eta, nmax).resolved()
    if abs(spec.eta - mode.kernel_eta) > 1e-12:
        raise ValueError(f"kernel eta {spec.eta} does not match analysis mode ({mode.kernel_eta})")
    if spec.nmax < nmax:
        raise ValueError("kernel nmax smaller than requested nmax")
    return KernelSpec(spec.eta, nmax, spec.k_cutoff, spec.quadrature_nodes, spec.panels).resolved()


def _phase_factors(phi: np.ndarray, d: int) -> np.ndarray:
    """exp(i (n - m) phi) as u^n conj(u)^m, shape (len(phi), d, d)."""
    u = np.exp(1j * np.multiply.outer(phi, np.arange(d)))
    return u[:, :, None] * u[:, None, :].conj()


def reconstruct_single(records: SingleModeRecords, mode: AnalysisMode, nmax: int,
                       spec: KernelSpec | None = None, threads: int = 1,
                       table: KernelTable | None = None, tol: float = 1e-6) -> DensityMatrixEstimate:
    """Estimate rho_nm (n, m <= nmax) of the detected mode."""
    if getattr(records, "arity", None) != 1:
        raise ValueError("reconstruct_single needs single-mode records")
    if len(records) == 0:
        raise ValueError("empty dataset")
    spec = _resolve_spec(mode, nmax, spec)
    d = nmax + 1
    xs = records.x * mode.x_scale
    table = _prepare_table([xs], spec, False, table, tol)

    def chunk(start, stop):
        acc = None
        for s in range(start, stop, _BLOCK):
            e = min(s + _BLOCK, stop)
            base = table.base(xs[s:e])
            w = records.weight[s:e]
            v = base * _phase_factors(records.phi[s:e], d)
            part = Moments(e - s, float(w.sum()), float((w * w).sum()),
                           np.einsum("r,rnm->nm", w, v), np.einsum("r,rnm->nm", w * w, v),
                           np.einsum("r,rnm->nm", w * w, base * base))
            acc = part if acc is None else acc.merge(part)
        return acc

    mom = _map_chunks(chunk, len(records), threads)
    mw, mws = _weight_summary(records.weight)
    return DensityMatrixEstimate(1, nmax, "matrix", mom.mean(), mom.stderr(), len(records), mode,
                                 spec.to_dict(), mw, mws)


def _moments_of(v: np.ndarray, w: np.ndarray) -> Moments:
    w2 = w * w
    return Moments(len(w), float(w.sum()), float(w2.sum()), np.tensordot(w, v, axes=1),
                   np.tensordot(w2, v, axes=1), np.tensordot(w2, v * v, axes=1))


def _derived_moments(a: np.ndarray, b: np.ndarray, w: np.ndarray) -> dict:
    """Per-record total-number and difference-correlation statistics.

    ``a[r, n]`` and ``b[r, m]`` are the diagonal pattern functions of record
    ``r``.  Accumulating s(n) and d_N(n) record by record keeps the
    covariances between different p(l, m), which a quadrature sum of the
    element errors would drop.

    ``total[n] = sum_l a[l] b[n - l]`` and
    ``correlation[N, i] = sum_{l <= N} a[l] b[n + l]`` with n = i - nmax//2.
    """
    r, d = a.shape
    total = np.zeros((r, d))
    for l in range(d):
        total[:, l:] += a[:, l:l + 1] * b[:, : d - l]
    half = (d - 1) // 2
    corr = np.empty((r, half + 1, 2 * half + 1))
    running = np.zeros((r, 2 * half + 1))
    for l in range(half + 1):
        running[:, half - l:] += a[:, l:l + 1] * b[:, : half + l + 1]
        corr[:, l] = running
    return {"total": _moments_of(total, w), "correlation": _moments_of(corr, w)}


def reconstruct_joint(records: TwoModeRecords, mode: AnalysisMode, nmax: int,
                      spec: KernelSpec | None = None, elements: str = "number", threads: int = 1,
                      table: KernelTable | None = None, tol: float = 1e-6) -> DensityMatrixEstimate:
    """Estimate the two-mode matrix from weighted joint records.

    ``elements="number"`` gives the photon-number probabilities p(n, m),
    which only need diagonal pattern functions; ``"full"`` gives every
    <n1, m1|R|n2, m2> and costs O((nmax+1)^4) per record.
    """
    if getattr(records, "arity", None) != 2:
        raise ValueError("reconstruct_joint needs two-mode records")
    if len(records) == 0:
        raise ValueError("empty dataset")
    if elements not in ("number", "full"):
        raise ValueError("elements must be 'number' or 'full'")
    spec = _resolve_spec(mode, nmax, spec)
    d = nmax + 1
    xs = records.x * mode.x_scale
    xps = records.xp * mode.x_scale
    diag_only = elements == "number"
    table = _prepare_table([xs, xps], spec, diag_only, table, tol)

    def chunk_number(start, stop):
        acc = None
        for s in range(start, stop, _BLOCK):
            e = min(s + _BLOCK, stop)
            kv = table.diag(np.concatenate([xs[s:e], xps[s:e]]))
            a, b = kv[: e - s], kv[e - s:]
            w = records.weight[s:e]
            w2 = w * w
            part = {"p": Moments(e - s, float(w.sum()), float(w2.sum()),
                                 (a * w[:, None]).T @ b, (a * w2[:, None]).T @ b,
                                 (a * a * w2[:, None]).T @ (b * b))}
            part.update(_derived_moments(a, b, w))
            acc = part if acc is None else tree_merge([acc, part])
        return acc

    def chunk_full(start, stop):
        acc = None
        for s in range(start, stop, _BLOCK):
            e = min(s + _BLOCK, stop)
            base = table.base(np.concatenate([xs[s:e], xps[s:e]]))
            ba, bb = base[: e - s], base[e - s:]
            A = (ba * _phase_factors(records.phi[s:e], d)).reshape(e - s, d * d)
            B = (bb * _phase_factors(records.psi[s:e], d)).reshape(e - s, d * d)
            w = records.weight[s:e]
            w2 = w * w
            part = {"p": Moments(e - s, float(w.sum()), float(w2.sum()),
                                 (A * w[:, None]).T @ B, (A * w2[:, None]).T @ B,
                                 (ba.reshape(e - s, -1) ** 2 * w2[:, None]).T @ bb.reshape(e - s, -1) ** 2)}
            part.update(_derived_moments(np.diagonal(ba, axis1=1, axis2=2),
                                         np.diagonal(bb, axis1=1, axis2=2), w))
            acc = part if acc is None else tree_merge([acc, part])
        return acc

    moms = _map_chunks(chunk_number if diag_only else chunk_full, len(records), threads)
    mom = moms.pop("p")
    derived = {k: {"value": m.mean(), "stderr": m.stderr()} for k, m in moms.items()}
    mean, err = mom.mean(), mom.stderr()
    if not diag_only:
        # [n1, n2, m1, m2] -> [n1, m1, n2, m2]
        mean = mean.reshape(d, d, d, d).transpose(0, 2, 1, 3)
        err = err.reshape(d, d, d, d).transpose(0, 2, 1, 3)
    mw, mws = _weight_summary(records.weight)
    return DensityMatrixEstimate(2, nmax, elements, mean, err, len(records), mode, spec.to_dict(), mw, mws,
                                 derived=derived)


@dataclass
class DerivedStat:
    """One derived distribution with propagated standard errors."""

    name: str
    n: np.ndarray
    value: np.ndarray
    stderr: np.ndarray


def _require_joint(est: DensityMatrixEstimate) -> None:
    if est.arity != 2:
        raise ValueError("statistic needs a two-mode estimate")


def total_number_dist(est: DensityMatrixEstimate, n_max: int | None = None) -> DerivedStat:
    """s(n) = sum_l p(l, n - l).

    Uses the per-record accumulation when the estimate carries it (exact
    errors); otherwise sums p(l, m) and adds their errors in quadrature,
    which ignores correlations between elements.
    """
    _require_joint(est)
    n_max = est.nmax if n_max is None else n_max
    if n_max > est.nmax:
        raise ValueError(f"total photon number {n_max} exceeds estimate nmax {est.nmax}")
    ns = np.arange(n_max + 1)
    if "total" in est.derived:
        t = est.derived["total"]
        return DerivedStat("total", ns, np.asarray(t["value"])[: n_max + 1].copy(),
                           np.asarray(t["stderr"])[: n_max + 1].copy())
    p, e = est.number_probabilities()
    val = np.array([sum(p[l, n - l] for l in range(n + 1)) for n in ns])
    err = np.sqrt([sum(e[l, n - l] ** 2 for l in range(n + 1)) for n in ns])
    return DerivedStat("total", ns, val, err)


def number_correlation(est: DensityMatrixEstimate, N: int) -> DerivedStat:
    """d_N(n) = sum_{l=max(-n,0)}^{N} p(l, n + l) for n in [-N, N].

    Error handling follows :func:`total_number_dist`.
    """
    _require_joint(est)
    if N < 0 or 2 * N > est.nmax:
        raise ValueError(f"correlation with N={N} needs nmax >= {2 * N}, estimate has {est.nmax}")
    ns = np.arange(-N, N + 1)
    if "correlation" in est.derived:
        c = est.derived["correlation"]
        half = est.nmax // 2
        rows = ns + half
        return DerivedStat("correlation", ns, np.asarray(c["value"])[N, rows].copy(),
                           np.asarray(c["stderr"])[N, rows].copy())
    p, e = est.number_probabilities()
    val, err = [], []
    for n in ns:
        ls = range(max(-n, 0), N + 1)
        val.append(sum(p[l, n + l] for l in ls))
        err.append(math.sqrt(sum(e[l, n + l] ** 2 for l in ls)))
    return DerivedStat("correlation", ns, np.array(val), np.array(err))


def diag_probabilities(est: DensityMatrixEstimate) -> DerivedStat:
    """p(n, n) for two modes, p(n) for one."""
    p, e = est.number_probabilities()
    if est.arity == 2:
        p, e = np.diagonal(p).copy(), np.diagonal(e).copy()
    return DerivedStat("diag", np.arange(len(p)), p, e)


def stderr_saturation_probe(est: DensityMatrixEstimate) -> np.ndarray:
    """sqrt(N) * stderr(rho_nn) for a single-mode estimate.

    For eta = 1 this approaches sqrt(2) once n is well above the mean photon
    number, whatever the state.
    """
    if est.arity != 1:
        raise ValueError("saturation probe needs a single-mode estimate")
    return math.sqrt(est.n_records) * np.diagonal(est.stderr)


def write_stats_csv(stat: DerivedStat, path) -> None:
    with open(path, "w") as fh:
        fh.write("n,value,stderr\n")
        for n, v, e in zip(stat.n, stat.value, stat.stderr):
            fh.write(f"{int(n)},{float(v)!r},{float(e)!r}\n")
