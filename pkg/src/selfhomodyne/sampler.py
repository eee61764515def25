"""Monte-Carlo generation of self-homodyne photocurrent records.

Each record holds the two rescaled photocurrents (x, x'), the quadrature
phases (phi, psi) at which they were taken and an importance weight.  With
the ideal phase model the phases are independent and uniform and every
weight is 1.  With the self-homodyne model the two input LO phases are
uniform; the detected quadrature phases follow from them and are
correlated, and each record carries weight 1/g where g is the gain of the
central-frequency component for that record.

Generation is split into fixed chunks of ``CHUNK_SIZE`` records.  Chunk i
draws from its own generator seeded by ``SeedSequence(seed, spawn_key=(i,))``,
so the stream is identical whatever the number of worker threads.
"""

from __future__ import annotations

import enum
import hashlib
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .nopa import TwinBeamParams, gain, quad_pdf_coeffs

__all__ = [
    "CHUNK_SIZE",
    "FORMAT_VERSION",
    "PhaseModel",
    "TwoModeRecords",
    "SingleModeRecords",
    "DatasetMeta",
    "chunk_rng",
    "draw_two_mode",
    "draw_single_mode",
    "generate_records",
    "generate_dataset",
    "read_dataset",
    "meta_path_for",
]

CHUNK_SIZE = 2**16
FORMAT_VERSION = 1
TWO_PI = 2.0 * math.pi


class PhaseModel(str, enum.Enum):
    IDEAL_UNIFORM = "ideal"
    SELF_HOMODYNE = "self"


@dataclass
class TwoModeRecords:
    x: np.ndarray
    xp: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    weight: np.ndarray
    sumphase: np.ndarray | None = None

    arity = 2

    def __len__(self) -> int:
        return len(self.x)

    @property
    def columns(self) -> list[str]:
        cols = ["x", "xp", "phi", "psi", "weight"]
        return cols + ["sumphase"] if self.sumphase is not None else cols

    def as_array(self) -> np.ndarray:
        return np.column_stack([getattr(self, c) for c in self.columns])

    def slice(self, start: int, stop: int) -> "TwoModeRecords":
        sp = None if self.sumphase is None else self.sumphase[start:stop]
        return TwoModeRecords(
            self.x[start:stop], self.xp[start:stop], self.phi[start:stop],
            self.psi[start:stop], self.weight[start:stop], sp,
        )

    @classmethod
    def concatenate(cls, parts: list["TwoModeRecords"]) -> "TwoModeRecords":
        sp = None
        if parts and parts[0].sumphase is not None:
            sp = np.concatenate([p.sumphase for p in parts])
        return cls(*(np.concatenate([getattr(p, c) for p in parts]) for c in ("x", "xp", "phi", "psi", "weight")), sp)


@dataclass
class SingleModeRecords:
    x: np.ndarray
    phi: np.ndarray
    weight: np.ndarray

    arity = 1
    columns = ["x", "phi", "weight"]

    def __len__(self) -> int:
        return len(self.x)

    def as_array(self) -> np.ndarray:
        return np.column_stack([self.x, self.phi, self.weight])

    def slice(self, start: int, stop: int) -> "SingleModeRecords":
        return SingleModeRecords(self.x[start:stop], self.phi[start:stop], self.weight[start:stop])

    @classmethod
    def concatenate(cls, parts: list["SingleModeRecords"]) -> "SingleModeRecords":
        return cls(*(np.concatenate([getattr(p, c) for p in parts]) for c in ("x", "phi", "weight")))


@dataclass
class DatasetMeta:
    params: TwinBeamParams
    phase_model: PhaseModel
    n_records: int
    seed: int
    arity: int = 2
    format_version: int = FORMAT_VERSION
    chunk_size: int = CHUNK_SIZE
    threads: int = 1
    sha256: str | None = None
    complete: bool = True
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "code_version": __version__,
            "arity": self.arity,
            "params": {"tau": self.params.tau, "nbar": self.params.nbar, "eta": self.params.eta},
            "phase_model": self.phase_model.value,
            "n_records": self.n_records,
            "seed": self.seed,
            "chunk_size": self.chunk_size,
            "threads": self.threads,
            "sha256": self.sha256,
            "complete": self.complete,
            **self.extra,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetMeta":
        known = {"format_version", "code_version", "arity", "params", "phase_model", "n_records",
                 "seed", "chunk_size", "threads", "sha256", "complete"}
        return cls(
            params=TwinBeamParams(tau=d["params"]["tau"], eta=d["params"]["eta"]),
            phase_model=PhaseModel(d["phase_model"]),
            n_records=int(d["n_records"]),
            seed=int(d["seed"]),
            arity=int(d.get("arity", 2)),
            format_version=int(d["format_version"]),
            chunk_size=int(d.get("chunk_size", CHUNK_SIZE)),
            threads=int(d.get("threads", 1)),
            sha256=d.get("sha256"),
            complete=bool(d.get("complete", True)),
            extra={k: v for k, v in d.items() if k not in known},
        )


def chunk_rng(seed: int, chunk_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(chunk_index,))))


def _self_homodyne_phases(p: TwinBeamParams, rng: np.random.Generator, size: int):
    lo_v = rng.uniform(0.0, TWO_PI, size)
    lo_h = rng.uniform(0.0, TWO_PI, size)
    sigma = 0.5 * (lo_v + lo_h)
    delta = 0.5 * (lo_v - lo_h)
    common = np.angle(np.exp(1j * sigma) + p.tau * np.exp(-1j * sigma))
    phi = np.mod(delta + common, TWO_PI)
    psi = np.mod(-delta + common, TWO_PI)
    sumphase = np.mod(lo_v + lo_h, TWO_PI)
    return phi, psi, sumphase


def draw_two_mode(p: TwinBeamParams, model: PhaseModel, rng: np.random.Generator, size: int) -> TwoModeRecords:
    """Draw ``size`` joint photocurrent records.

    x' is drawn from its Gaussian marginal, then x from the conditional
    Gaussian centred on c * x'.
    """
    model = PhaseModel(model)
    if model is PhaseModel.IDEAL_UNIFORM:
        phi = rng.uniform(0.0, TWO_PI, size)
        psi = rng.uniform(0.0, TWO_PI, size)
        sumphase = None
        weight = np.ones(size)
    else:
        phi, psi, sumphase = _self_homodyne_phases(p, rng, size)
        weight = 1.0 / gain(p, sumphase)
    co = quad_pdf_coeffs(p, phi, psi)
    z = rng.standard_normal((2, size))
    xp = z[0] / np.sqrt(2.0 * co.b2)
    x = co.c * xp + z[1] / np.sqrt(2.0 * co.a2)
    return TwoModeRecords(x, xp, phi, psi, np.asarray(weight, dtype=float), sumphase)


def draw_single_mode(p: TwinBeamParams, rng: np.random.Generator, size: int) -> SingleModeRecords:
    """Records of one photocurrent alone (thermal quadrature statistics)."""
    phi = rng.uniform(0.0, TWO_PI, size)
    sd = math.sqrt(0.5 * (p.nbar + 0.5) + p.delta2_eta)
    x = sd * rng.standard_normal(size)
    return SingleModeRecords(x, phi, np.ones(size))


def _draw_chunk(p, model, arity, seed, index, size):
    rng = chunk_rng(seed, index)
    if arity == 1:
        return draw_single_mode(p, rng, size)
    return draw_two_mode(p, model, rng, size)


def _chunk_sizes(n_records: int, chunk_size: int) -> list[int]:
    full, rest = divmod(n_records, chunk_size)
    return [chunk_size] * full + ([rest] if rest else [])


def _iter_chunks(p, model, n_records, seed, arity, threads, chunk_size=CHUNK_SIZE):
    sizes = _chunk_sizes(n_records, chunk_size)
    threads = max(1, int(threads))
    if threads == 1:
        for i, s in enumerate(sizes):
            yield _draw_chunk(p, model, arity, seed, i, s)
        return
    batch = 4 * threads
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for start in range(0, len(sizes), batch):
            idx = range(start, min(start + batch, len(sizes)))
            yield from pool.map(lambda i: _draw_chunk(p, model, arity, seed, i, sizes[i]), idx)


def generate_records(p: TwinBeamParams, model: PhaseModel, n_records: int, seed: int,
                     arity: int = 2, threads: int = 1):
    """Generate a dataset in memory (same stream as :func:`generate_dataset`)."""
    if n_records < 1:
        raise ValueError("n_records must be >= 1")
    parts = list(_iter_chunks(p, PhaseModel(model), n_records, seed, arity, threads))
    cls = SingleModeRecords if arity == 1 else TwoModeRecords
    return cls.concatenate(parts)


def meta_path_for(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def _format_chunk(rec) -> bytes:
    buf = io.StringIO()
    np.savetxt(buf, rec.as_array(), fmt="%.17g", delimiter=",")
    return buf.getvalue().encode("ascii")


def generate_dataset(p: TwinBeamParams, model: PhaseModel, n_records: int, seed: int, path,
                     arity: int = 2, threads: int = 1, extra: dict | None = None) -> DatasetMeta:
    """Write records to ``path`` as CSV plus a JSON metadata sidecar.

    Data go to ``<path>.partial`` first and are renamed only once complete;
    a failed run leaves the ``.partial`` file and a sidecar with
    ``complete: false``.
    """
    if n_records < 1:
        raise ValueError("n_records must be >= 1")
    model = PhaseModel(model)
    path = Path(path)
    tmp = path.with_name(path.name + ".partial")
    meta = DatasetMeta(p, model, n_records, int(seed), arity=arity, threads=int(threads),
                       complete=False, extra=dict(extra or {}))
    digest = hashlib.sha256()
    written = 0
    try:
        with open(tmp, "wb") as fh:
            if arity == 1:
                cols = SingleModeRecords.columns
            else:
                cols = ["x", "xp", "phi", "psi", "weight"]
                if model is PhaseModel.SELF_HOMODYNE:
                    cols.append("sumphase")
            header = (",".join(cols) + "\n").encode("ascii")
            fh.write(header)
            digest.update(header)
            for rec in _iter_chunks(p, model, n_records, seed, arity, threads):
                data = _format_chunk(rec)
                fh.write(data)
                digest.update(data)
                written += len(rec)
        if written != n_records:
            raise RuntimeError(f"wrote {written} records, expected {n_records}")
        os.replace(tmp, path)
    except BaseException:
        meta.n_records = written
        _write_meta(meta, path)
        raise
    meta.sha256 = digest.hexdigest()
    meta.complete = True
    _write_meta(meta, path)
    return meta


def _write_meta(meta: DatasetMeta, path: Path) -> None:
    with open(meta_path_for(path), "w") as fh:
        json.dump(meta.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_dataset(path):
    """Load a record CSV and its sidecar. Returns ``(records, meta)``."""
    path = Path(path)
    mpath = meta_path_for(path)
    if not mpath.exists():
        raise FileNotFoundError(f"missing metadata sidecar {mpath}")
    meta = DatasetMeta.from_dict(json.loads(mpath.read_text()))
    if not meta.complete:
        raise ValueError(f"dataset {path} is flagged incomplete")
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if not header or header == [""]:
            raise ValueError(f"dataset {path} is empty")
        data = np.loadtxt(fh, delimiter=",", ndmin=2, dtype=float)
    if data.shape[0] == 0:
        raise ValueError(f"dataset {path} has no records")
    if data.shape[0] != meta.n_records:
        raise ValueError(f"dataset {path} has {data.shape[0]} rows, metadata says {meta.n_records}")
    cols = {name: data[:, i] for i, name in enumerate(header)}
    if header[:3] == ["x", "phi", "weight"]:
        rec = SingleModeRecords(cols["x"], cols["phi"], cols["weight"])
    elif header[:5] == ["x", "xp", "phi", "psi", "weight"]:
        rec = TwoModeRecords(cols["x"], cols["xp"], cols["phi"], cols["psi"], cols["weight"], cols.get("sumphase"))
    else:
        raise ValueError(f"unrecognised record header {header}")
    return rec, meta
