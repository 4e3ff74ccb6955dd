"""
Configuration-driven experiments.

A run is described by a TOML document::

    command = "convergence"        # convergence | constants | diagnostics | single_run
    output_dir = "runs/additive"

    [physics]   viscosity, horizon, n_modes, box_length
    [noise]     kind, amplitude, exponent, sigma, modulation
    [initial]   kind, amplitude, decay, seed
    [scheme]    kind, n_steps, solver_tol, solver_max_iter, inner_substeps
    [study]     ladder, reference_n, mc_samples, base_seed, n_fine, batch_size, record_n
    [theory]    k0, k1, l1, q_moment, beta, eps_bar, eta, c_bar, c_tilde, hoelder_p,
                splitting_offset, euler_offset, gn_samples

Every section is optional.  Usage::

    python -m stochns --config run.toml [--output DIR] [--workers N]
                      [--seed-override SEED] [--dry-run]

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 I/O error.
"""

import argparse
import hashlib
import json
import math
import os
import shutil
import sys
import time
import traceback
from dataclasses import asdict, dataclass, field, replace

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .harness import StudyConfig, initial_field, moment_report, strong_error_study
from .noise import sample_wiener_path
from .schemes import SchemeParams, run_trajectory
from .spectral import bilinear_b, norm_bundle, save_snapshot, stokes_apply, trilinear_form
from .theory import (
    AnalysisParams,
    constants_table,
    estimate_gn_constant,
    poincare_constant,
    write_constants_csv,
)

__all__ = ["ConfigError", "RunConfig", "validate_config", "run_experiment", "main"]

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4
COMMANDS = ("convergence", "constants", "diagnostics", "single_run")

_REAL, _INT, _STR, _INTLIST = "real", "integer", "string", "integer list"

SCHEMA = {
    "physics": {"viscosity": (_REAL, 1.0), "horizon": (_REAL, 0.25), "n_modes": (_INT, 32),
                "box_length": (_REAL, 2 * math.pi)},
    "noise": {"kind": (_STR, "additive"), "amplitude": (_REAL, 1.0), "exponent": (_REAL, 3.0),
              "sigma": (_REAL, 1.0), "modulation": (_STR, "sin")},
    "initial": {"kind": (_STR, "random_smooth"), "amplitude": (_REAL, 1.0),
                "decay": (_REAL, 2.0), "seed": (_INT, 0)},
    "scheme": {"kind": (_STR, "fully_implicit"), "n_steps": (_INT, 128),
               "solver_tol": (_REAL, 1e-11), "solver_max_iter": (_INT, 200),
               "inner_substeps": (_INT, 8)},
    "study": {"ladder": (_INTLIST, [8, 16, 32, 64, 128]), "reference_n": (_INT, 2048),
              "mc_samples": (_INT, 64), "base_seed": (_INT, 0), "n_fine": (_INT, None),
              "batch_size": (_INT, 16), "record_n": (_INT, None)},
    "theory": {"k0": (_REAL, None), "k1": (_REAL, None), "l1": (_REAL, None),
               "q_moment": (_REAL, 2.0), "beta": (_REAL, 0.5), "eps_bar": (_REAL, 0.01),
               "eta": (_REAL, 0.49), "c_bar": (_REAL, None), "c_tilde": (_REAL, None),
               "hoelder_p": (_REAL, 1.05), "splitting_offset": (_REAL, 0.0),
               "euler_offset": (_REAL, 0.0), "gn_samples": (_INT, 64)},
}


class ConfigError(ValueError):
    """Configuration rejected; ``errors`` lists every violation found."""

    def __init__(self, errors):
        super().__init__("\n".join(errors))
        self.errors = list(errors)


@dataclass
class RunConfig:
    command: str
    output_dir: str
    sections: dict
    study: StudyConfig
    scheme: SchemeParams
    workers: int = 1
    source: dict = field(default_factory=dict)

    def theory_value(self, key):
        return self.sections["theory"][key]


def _check_type(kind, value):
    if kind == _REAL:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if kind == _INT:
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == _STR:
        return isinstance(value, str)
    return isinstance(value, list) and all(_check_type(_INT, v) for v in value)


def validate_config(text: str) -> RunConfig:
    """Parse and validate a TOML run description, collecting every violation."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"parse error: {exc}"]) from None
    errors = []
    command = raw.get("command")
    if command not in COMMANDS:
        errors.append(f"command: expected one of {', '.join(COMMANDS)}, got {command!r}")
    output_dir = raw.get("output_dir", "")
    if not isinstance(output_dir, str):
        errors.append("output_dir: expected string")
        output_dir = ""
    sections = {}
    for key, value in raw.items():
        if key in ("command", "output_dir"):
            continue
        if key not in SCHEMA:
            errors.append(f"unknown key {key!r}")
        elif not isinstance(value, dict):
            errors.append(f"{key}: expected a table")
    for name, spec in SCHEMA.items():
        given = raw.get(name, {}) if isinstance(raw.get(name, {}), dict) else {}
        sec = {}
        for key, value in given.items():
            if key not in spec:
                errors.append(f"unknown key {name}.{key}")
            elif not _check_type(spec[key][0], value):
                errors.append(f"{name}.{key}: expected {spec[key][0]}, got {value!r}")
        for key, (kind, default) in spec.items():
            value = given.get(key, default)
            sec[key] = value if _check_type(kind, value) or value is None else default
        sections[name] = sec
    if command not in COMMANDS:
        command = COMMANDS[0]

    ph, nz, ic, sc, st, th = (sections[k] for k in SCHEMA)
    study = StudyConfig(
        ladder=tuple(st["ladder"]), reference_n=st["reference_n"], mc_samples=st["mc_samples"],
        base_seed=st["base_seed"], scheme_kind=sc["kind"], viscosity=ph["viscosity"],
        horizon=ph["horizon"], n_modes=ph["n_modes"], box_length=ph["box_length"],
        noise_amplitude=nz["amplitude"], noise_exponent=nz["exponent"], noise_kind=nz["kind"],
        noise_sigma=nz["sigma"], modulation=nz["modulation"], initial=ic["kind"],
        initial_amplitude=ic["amplitude"], initial_decay=ic["decay"],
        initial_seed=ic["seed"], solver_tol=sc["solver_tol"],
        solver_max_iter=sc["solver_max_iter"], inner_substeps=sc["inner_substeps"],
        n_fine=st["n_fine"], batch_size=st["batch_size"], record_n=st["record_n"])
    errors.extend(study.violations())
    if sc["n_steps"] < 1:
        errors.append("scheme.n_steps must be >= 1")
    if th["q_moment"] < 2:
        errors.append("theory.q_moment must be >= 2")
    if not 0 < th["beta"] < 1:
        errors.append(f"theory.beta={th['beta']} outside the open interval (0, 1)")
    if not 0 < th["eta"] < 0.5:
        errors.append(f"theory.eta={th['eta']} outside the open interval (0, 1/2)")
    if not th["eps_bar"] > 0:
        errors.append("theory.eps_bar must be > 0")
    if not th["hoelder_p"] > 1:
        errors.append("theory.hoelder_p must be > 1")
    for key in ("k0", "k1", "l1"):
        if th[key] is not None and th[key] < 0:
            errors.append(f"theory.{key} must be >= 0")
    for key in ("c_bar", "c_tilde"):
        if th[key] is not None and not th[key] > 0:
            errors.append(f"theory.{key} must be > 0")
    if errors:
        raise ConfigError(errors)
    scheme = SchemeParams(ph["viscosity"], ph["horizon"], sc["n_steps"], sc["solver_tol"],
                          sc["solver_max_iter"], sc["inner_substeps"], sc["kind"])
    return RunConfig(command, output_dir, sections, study, scheme, source=raw)


def analysis_params(cfg: RunConfig):
    """AnalysisParams from the theory section; returns (params, notes on estimated values)."""
    th = cfg.sections["theory"]
    model = cfg.study.noise_model()
    grid = cfg.study.grid()
    notes = {}
    k0 = th["k0"] if th["k0"] is not None else model.k0
    k1 = th["k1"] if th["k1"] is not None else model.k1
    l1 = th["l1"] if th["l1"] is not None else model.l1
    c_bar = th["c_bar"]
    if c_bar is None:
        c_bar = estimate_gn_constant(grid, th["gn_samples"], seed=cfg.study.base_seed)
        notes["c_bar"] = "estimate (running maximum over random fields)"
    c_tilde = th["c_tilde"]
    if c_tilde is None:
        c_tilde = poincare_constant(grid)
        notes["c_tilde"] = "spectral Poincare bound"
    p = AnalysisParams(cfg.study.viscosity, cfg.study.horizon, k0, k1, l1, th["q_moment"],
                       th["beta"], th["eps_bar"], th["eta"], c_bar, c_tilde, th["hoelder_p"],
                       th["splitting_offset"], th["euler_offset"])
    return p, notes


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


_ERROR_PLOT = '''\
import csv
import matplotlib.pyplot as plt

rows = list(csv.DictReader(open("errors.csv")))
n = [float(r["N"]) for r in rows]
plt.loglog(n, [float(r["est_max_l2_sq"]) ** 0.5 for r in rows], "o-", label="max_k |e_k| (rms)")
plt.loglog(n, [float(r["est_v_sum"]) ** 0.5 for r in rows], "s-", label="V-sum (rms)")
plt.loglog(n, [float(rows[0]["est_max_l2_sq"]) ** 0.5 * (n[0] / x) ** 0.5 for x in n], "k--",
           label="N^-1/2")
plt.xlabel("N")
plt.ylabel("strong error")
plt.legend()
plt.savefig("errors.png", dpi=150)
'''

_CONSTANTS_PLOT = '''\
import csv

for r in csv.DictReader(open("constants.csv")):
    print(f"{r['regime']:>28}  {r['name']:<24} {float(r['value']):>14.6g}  {r['formula_ref']}")
'''

_TRAJECTORY_PLOT = '''\
import csv
import matplotlib.pyplot as plt

rows = list(csv.DictReader(open("trajectory.csv")))
t = [float(r["t"]) for r in rows]
for key in ("l2", "grad_l2", "stokes_l2"):
    plt.semilogy(t, [max(float(r[key]), 1e-300) for r in rows], label=key)
plt.xlabel("t")
plt.legend()
plt.savefig("trajectory.png", dpi=150)
'''


def _single_trajectory(cfg: RunConfig):
    study = cfg.study
    model = study.noise_model()
    u0 = initial_field(study)
    path = sample_wiener_path(model, study.horizon, cfg.scheme.n_steps, study.base_seed)
    return run_trajectory(u0, cfg.scheme, model, path), u0


def _identities(u):
    """Relative residuals of b(u,u,Au) + b(u,Au,u) = 0, b(u,u,Au) = 0 and div B(u,u) = 0."""
    w = stokes_apply(u)
    nb = norm_bundle(u)
    b_uuw = trilinear_form(u, u, w)
    b_uwu = trilinear_form(u, w, u)
    scale = nb.v**2 * norm_bundle(w).v
    anti = abs(b_uuw + b_uwu) / scale if scale > 0 else 0.0
    orth = abs(b_uuw) / (nb.v**2 * nb.stokes_l2) if nb.stokes_l2 > 0 else 0.0
    return float(anti), float(orth), bilinear_b(u, u).divergence_ratio()


def _command_outputs(cfg: RunConfig, out: str, written: list):
    def target(name):
        written.append(name)
        return os.path.join(out, name)

    if cfg.command == "constants":
        p, notes = analysis_params(cfg)
        write_constants_csv(target("constants.csv"), constants_table(p))
        with open(target("plot_constants.py"), "w") as fh:
            fh.write(_CONSTANTS_PLOT)
        return {"analysis_params": asdict(p), "estimated": notes}
    if cfg.command in ("single_run", "diagnostics"):
        rec, u0 = _single_trajectory(cfg)
        rec.to_csv(target("trajectory.csv"))
        save_snapshot(target("final_state.sns2"), rec.states[-1])
        if cfg.command == "diagnostics":
            with open(target("identities.csv"), "w") as fh:
                fh.write("k,antisymmetry_rel,stokes_orthogonality_rel,divergence_ratio\n")
                for k in range(0, cfg.scheme.n_steps + 1, max(cfg.scheme.n_steps // 8, 1)):
                    fh.write(",".join([str(k)] + [repr(x) for x in _identities(rec.states[k])])
                             + "\n")
        with open(target("plot_trajectory.py"), "w") as fh:
            fh.write(_TRAJECTORY_PLOT)
        return {"path_seed": cfg.study.base_seed}
    report = strong_error_study(replace(cfg.study, workers=cfg.workers,
                                        record_n=cfg.study.record_n or max(cfg.study.ladder)))
    report.write_errors_csv(target("errors.csv"))
    report.write_rates_csv(target("rates.csv"))
    if report.records:
        p, _ = analysis_params(cfg)
        alphas = (0.5 * p.viscosity / (4 * p.k0 * p.c_tilde),) if p.k0 > 0 else (0.01,)
        moment_report(report.records, alpha_ladder=alphas).write_csv(target("moments.csv"))
    with open(target("plot_errors.py"), "w") as fh:
        fh.write(_ERROR_PLOT)
    return {"sample_seeds": [cfg.study.sample_seed(i) for i in range(cfg.study.mc_samples)],
            "excluded": report.excluded}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def run_experiment(cfg: RunConfig) -> int:
    """Execute ``cfg.command`` and write artifacts plus a manifest into ``cfg.output_dir``."""
    out = cfg.output_dir
    written = []
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        print(json.dumps({"status": "error", "kind": "io", "message": str(exc)}), file=sys.stderr)
        return EXIT_IO
    try:
        extra = _command_outputs(cfg, out, written)
    except Exception as exc:  # every failure leaves a machine-readable record
        code = EXIT_IO if isinstance(exc, OSError) else EXIT_SOLVER
        failed = os.path.join(out, "failed")
        os.makedirs(failed, exist_ok=True)
        for name in written:
            src = os.path.join(out, name)
            if os.path.exists(src):
                shutil.move(src, os.path.join(failed, name))
        record = {"status": "error", "command": cfg.command, "kind": type(exc).__name__,
                  "message": str(exc), "step": getattr(exc, "step", None),
                  "partial_outputs": written, "traceback": traceback.format_exc()}
        with open(os.path.join(failed, "error.json"), "w") as fh:
            json.dump(_jsonable(record), fh, indent=2)
        print(json.dumps({k: record[k] for k in ("status", "kind", "message")}), file=sys.stderr)
        return code
    manifest = {
        "software": f"stochns {__version__}",
        "command": cfg.command,
        "started": started,
        "config": cfg.sections,
        "study": asdict(cfg.study),
        "scheme": asdict(cfg.scheme),
        "workers": cfg.workers,
        "run": extra,
        "files": [{"path": name, "sha256": _sha256(os.path.join(out, name))} for name in written],
    }
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(_jsonable(manifest), fh, indent=2)
    return EXIT_OK


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="stochns", description=__doc__.split("\n\n")[0])
    ap.add_argument("--config", required=True, help="TOML run description")
    ap.add_argument("--output", help="output directory (overrides output_dir)")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed-override", type=int, help="replace study.base_seed")
    ap.add_argument("--dry-run", action="store_true", help="validate the configuration only")
    args = ap.parse_args(argv)
    try:
        with open(args.config) as fh:
            text = fh.read()
    except OSError as exc:
        print(json.dumps({"status": "error", "kind": "io", "message": str(exc)}), file=sys.stderr)
        return EXIT_IO
    try:
        if args.seed_override is not None:
            raw = tomllib.loads(text)
            raw.setdefault("study", {})["base_seed"] = args.seed_override
            text = _dump_toml(raw)
        cfg = validate_config(text)
        if args.output:
            cfg.output_dir = args.output
        if not cfg.output_dir:
            raise ConfigError(["output_dir: missing (set it in the file or pass --output)"])
        if args.workers < 1:
            raise ConfigError(["--workers must be >= 1"])
    except (ConfigError, tomllib.TOMLDecodeError) as exc:
        errors = getattr(exc, "errors", [str(exc)])
        print(json.dumps({"status": "error", "kind": "config", "errors": errors}), file=sys.stderr)
        return EXIT_CONFIG
    cfg.workers = args.workers
    if args.dry_run:
        print(json.dumps({"status": "ok", "command": cfg.command, "output_dir": cfg.output_dir}))
        return EXIT_OK
    return run_experiment(cfg)


def _dump_toml(raw: dict) -> str:
    """Minimal TOML writer for the flat two-level documents used here."""
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return json.dumps(v)
        if isinstance(v, list):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        return repr(v)

    lines = [f"{k} = {fmt(v)}" for k, v in raw.items() if not isinstance(v, dict)]
    for k, v in raw.items():
        if isinstance(v, dict):
            lines.append(f"\n[{k}]")
            lines.extend(f"{kk} = {fmt(vv)}" for kk, vv in v.items())
    return "\n".join(lines) + "\n"


if __name__ == "__main__":
    sys.exit(main())
