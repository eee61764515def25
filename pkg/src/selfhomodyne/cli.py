"""Command-line runner: simulate, reconstruct, analyze, theory, validate.

Every option can also come from a JSON file given with ``--config``; keys
are the option names with dashes replaced by underscores, and explicit
command-line flags win over the file.

Exit codes: 0 success, 1 validation failure, 2 invalid configuration or
input, 3 physics bound violated (eta <= 1/2 in bare mode).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, estimator, nopa, sampler, validation
from .kernel import EfficiencyBoundError

log = logging.getLogger("selfhomodyne")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CONFIG = 2
EXIT_BOUND = 3


class ConfigError(ValueError):
    pass


# Fallback values for options left unset on both the command line and in the config file.
DEFAULTS = {
    "simulate": {"nbar": None, "tau": None, "eta": 1.0, "samples": None, "seed": None,
                 "phase_model": "ideal", "arity": 2, "out": None},
    "reconstruct": {"data": None, "mode": "bare", "eta": None, "nmax": 20, "elements": "number",
                    "tol": 1e-6, "out": None},
    "analyze": {"estimate": None, "stat": None, "N": None, "n_max": None, "out": None},
    "theory": {"nbar": None, "tau": None, "dist": None, "nmax": 20, "N": None, "out": None},
    "validate": {"kernel_eta": 0.9, "cache_dir": None},
}
REQUIRED = {
    "simulate": ("samples", "seed", "out"),
    "reconstruct": ("data", "out"),
    "analyze": ("estimate", "stat", "out"),
    "theory": ("dist", "out"),
    "validate": (),
}


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path, header: list[str], rows, provenance: dict) -> None:
    with open(path, "w") as fh:
        fh.write("# provenance: " + json.dumps(provenance, sort_keys=True) + "\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(int(v)) if isinstance(v, (int, np.integer)) else repr(float(v)) for v in row))
            fh.write("\n")


def _provenance(cmd: str, cfg: dict, inputs: dict | None = None) -> dict:
    return {"command": cmd, "config": cfg, "code_version": __version__,
            "seed": cfg.get("seed"), "inputs": inputs or {}}


def _params(cfg: dict, eta: float = 1.0) -> nopa.TwinBeamParams:
    if cfg.get("tau") is not None and cfg.get("nbar") is not None:
        raise ConfigError("give either nbar or tau, not both")
    if cfg.get("tau") is not None:
        return nopa.TwinBeamParams(float(cfg["tau"]), eta)
    if cfg.get("nbar") is None:
        raise ConfigError("nbar (or tau) is required")
    return nopa.TwinBeamParams.from_nbar(float(cfg["nbar"]), eta)


# ---------------------------------------------------------------- commands

def cmd_simulate(cfg: dict) -> int:
    p = _params(cfg, float(cfg["eta"]))
    n = int(cfg["samples"])
    if n < 1:
        raise ConfigError("samples must be >= 1")
    arity = int(cfg["arity"])
    if arity not in (1, 2):
        raise ConfigError("arity must be 1 or 2")
    meta = sampler.generate_dataset(p, sampler.PhaseModel(cfg["phase_model"]), n, int(cfg["seed"]), cfg["out"],
                                    arity=arity, threads=cfg["threads"],
                                    extra={"provenance": _provenance("simulate", cfg)})
    log.info("wrote %d records to %s (sha256 %s)", meta.n_records, cfg["out"], meta.sha256)
    return EXIT_OK


def _analysis_mode(cfg: dict, meta: sampler.DatasetMeta) -> estimator.AnalysisMode:
    data_eta = meta.params.eta
    eta = data_eta if cfg.get("eta") is None else float(cfg["eta"])
    if cfg["mode"] == "bare" and abs(eta - data_eta) > 1e-12:
        raise ConfigError(f"bare analysis at eta={eta} of data taken at eta={data_eta}")
    return estimator.AnalysisMode(cfg["mode"], eta)


def cmd_reconstruct(cfg: dict) -> int:
    path = Path(cfg["data"])
    records, meta = sampler.read_dataset(path)
    digest = _sha256(path)
    if meta.sha256 and digest != meta.sha256:
        raise ConfigError(f"{path} does not match the checksum in its metadata")
    mode = _analysis_mode(cfg, meta)
    nmax = int(cfg["nmax"])
    if meta.arity == 1:
        if cfg["elements"] == "full":
            log.info("single-mode data: reconstructing the full matrix")
        est = estimator.reconstruct_single(records, mode, nmax, threads=cfg["threads"], tol=float(cfg["tol"]))
    else:
        est = estimator.reconstruct_joint(records, mode, nmax, elements=cfg["elements"],
                                          threads=cfg["threads"], tol=float(cfg["tol"]))
    est.provenance = _provenance("reconstruct", cfg, {str(path): digest})
    est.provenance["seed"] = meta.seed
    est.provenance["dataset"] = meta.to_dict()
    est.save(cfg["out"])
    return EXIT_OK


def cmd_analyze(cfg: dict) -> int:
    path = Path(cfg["estimate"])
    est = estimator.DensityMatrixEstimate.load(path)
    stat = cfg["stat"]
    if stat == "total":
        res = estimator.total_number_dist(est, None if cfg.get("n_max") is None else int(cfg["n_max"]))
    elif stat == "correlation":
        if cfg.get("N") is None:
            raise ConfigError("correlation needs N")
        res = estimator.number_correlation(est, int(cfg["N"]))
    elif stat == "diag":
        res = estimator.diag_probabilities(est)
    else:
        raise ConfigError(f"unknown statistic {stat!r}")
    prov = _provenance("analyze", cfg, {str(path): _sha256(path)})
    prov["seed"] = est.provenance.get("seed")
    _write_csv(cfg["out"], ["n", "value", "stderr"], zip(res.n, res.value, res.stderr), prov)
    return EXIT_OK


def cmd_theory(cfg: dict) -> int:
    p = _params(cfg)
    nmax = int(cfg["nmax"])
    dist = cfg["dist"]
    idx = np.arange(nmax + 1)
    if dist in ("joint", "diag45"):
        fn = nopa.joint_photon_pdf if dist == "joint" else nopa.diag45_photon_pdf
        n, m = np.meshgrid(idx, idx, indexing="ij")
        vals = fn(p, n, m)
        header, rows = ["n", "m", "value"], zip(n.ravel(), m.ravel(), np.ravel(vals))
    elif dist == "marginal":
        header, rows = ["n", "value"], zip(idx, nopa.marginal_thermal_pdf(p, idx))
    elif dist == "total":
        header, rows = ["n", "value"], zip(idx, nopa.total_photon_pdf_theory(p, idx))
    elif dist == "corr":
        if cfg.get("N") is None:
            raise ConfigError("corr needs N")
        N = int(cfg["N"])
        ns = np.arange(-N, N + 1)
        header, rows = ["n", "value"], zip(ns, np.atleast_1d(nopa.correlation_theory(p, N, ns)))
    else:
        raise ConfigError(f"unknown distribution {dist!r}")
    _write_csv(cfg["out"], header, rows, _provenance("theory", cfg))
    return EXIT_OK


def cmd_validate(cfg: dict) -> int:
    results = validation.run_all(float(cfg["kernel_eta"]), cache_dir=cfg.get("cache_dir"))
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_VALIDATION if failed else EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "analyze": cmd_analyze,
    "theory": cmd_theory,
    "validate": cmd_validate,
}


# ---------------------------------------------------------------- parsing

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with option values")
    common.add_argument("--threads", type=int, default=None, help="worker thread cap (default 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="selfhomodyne", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="Monte-Carlo self-homodyne records")
    s.add_argument("--nbar", type=float)
    s.add_argument("--tau", type=float)
    s.add_argument("--eta", type=float)
    s.add_argument("--samples", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--phase-model", choices=[m.value for m in sampler.PhaseModel])
    s.add_argument("--arity", type=int, choices=[1, 2])
    s.add_argument("--out")

    r = sub.add_parser("reconstruct", parents=[common], help="density-matrix estimate from records")
    r.add_argument("--data")
    r.add_argument("--mode", choices=list(estimator.AnalysisMode.KINDS))
    r.add_argument("--eta", type=float, help="efficiency for the analysis mode (default: dataset eta)")
    r.add_argument("--nmax", type=int)
    r.add_argument("--elements", choices=["number", "full"])
    r.add_argument("--tol", type=float, help="kernel table interpolation tolerance")
    r.add_argument("--out")

    a = sub.add_parser("analyze", parents=[common], help="derived photon-number statistics")
    a.add_argument("--estimate")
    a.add_argument("--stat", choices=["total", "correlation", "diag"])
    a.add_argument("--N", type=int)
    a.add_argument("--n-max", type=int)
    a.add_argument("--out")

    t = sub.add_parser("theory", parents=[common], help="exact curves")
    t.add_argument("--nbar", type=float)
    t.add_argument("--tau", type=float)
    t.add_argument("--dist", choices=["joint", "marginal", "total", "corr", "diag45"])
    t.add_argument("--nmax", type=int)
    t.add_argument("--N", type=int)
    t.add_argument("--out")

    v = sub.add_parser("validate", parents=[common], help="run the built-in oracle checks")
    v.add_argument("--kernel-eta", type=float)
    v.add_argument("--cache-dir")
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and explicit flags into one dict."""
    cmd = args.command
    cfg = dict(DEFAULTS[cmd])
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(data) - set(cfg) - {"threads"}
        if unknown:
            raise ConfigError(f"unknown config keys for {cmd}: {sorted(unknown)}")
        cfg.update(data)
    cfg.setdefault("threads", 1)
    for key, val in vars(args).items():
        if key in ("command", "config", "verbose") or val is None:
            continue
        cfg[key] = val
    threads = int(1 if cfg.get("threads") is None else cfg["threads"])
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    cfg["threads"] = threads
    missing = [k for k in REQUIRED[cmd] if cfg.get(k) is None]
    if missing:
        raise ConfigError(f"{cmd}: missing required option(s) {', '.join('--' + m.replace('_', '-') for m in missing)}")
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except EfficiencyBoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BOUND
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
