"""Experiment driver: every module behind a subcommand with a JSON config.

Configs are JSON key-value trees validated against per-subcommand schemas;
unknown keys are rejected so typos fail fast. Outputs are CSV (header row,
'.' decimal, LF endings) and JSON (UTF-8, sorted keys), each embedding the
config hash and grid parameters, and are byte-identical across reruns of
the same config (fixed seeds, row-major reductions).

Exit codes: 0 pass, 1 check failed, 2 invalid config, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from .domain import AnnulusSpec, CartesianGrid
from .energy import lambda_scan, log_hls_deficit
from .flow import (BlowUpDetected, CFLViolation, diagnostics_to_csv, run_flow,
                   virial_rate)
from .geometry import ConformalFactor
from .potential import newtonian_potential
from .profiles import (ScaledCauchyProfile, mu_coulomb_identity,
                       mu_entropy_identity, mu_potential_identity)
from .sphere import nonexistence_certificate
from .stationary import (DensityField, decay_envelope, density_from_profile,
                         membership_check, reduced_residual)
from .virial import StagnationError, assemble_virial, export_virial_csv

OUTPUT_DIR_ENV = "CURVEDKS_OUTPUT_DIR"

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_BAD_CONFIG = 2
EXIT_NUMERICAL = 3


class ConfigError(ValueError):
    pass


# per-subcommand schema: key -> (type, default); nested dicts spell out trees
_GRID_SCHEMA = {"half_width": (float, 60.0), "n": (int, 256),
                "center": (list, [0.0, 0.0])}
_PHI_SCHEMA = {"kind": (str, "zero"), "amplitude": (float, 0.0),
               "support_radius": (float, 2.0), "center": (list, [0.0, 0.0])}
_PROFILE_SCHEMA = {"lam": (float, 1.0), "x_star": (list, [0.0, 0.0]),
                   "m": (float, 8.0 * np.pi)}

SCHEMAS = {
    "identities": {
        "grid": _GRID_SCHEMA,
        "double_grid": {"half_width": (float, 60.0), "n": (int, 512)},
        "lambdas": (list, [0.5, 1.0, 2.0]),
        "tolerance": (float, 1e-2),
        "output_dir": (str, "."),
    },
    "residual": {
        "grid": _GRID_SCHEMA,
        "phi": _PHI_SCHEMA,
        "profile": _PROFILE_SCHEMA,
        "probe_frac": (float, 0.4),
        "output_dir": (str, "."),
    },
    "energy-scan": {
        "grid": _GRID_SCHEMA,
        "phi": _PHI_SCHEMA,
        "m": (float, 8.0 * np.pi),
        "lambdas": (list, [0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0]),
        "output_dir": (str, "."),
    },
    "deficit": {
        "grid": _GRID_SCHEMA,
        "phi": _PHI_SCHEMA,
        "profile": _PROFILE_SCHEMA,
        "reference_lam": (float, 1.0),
        "output_dir": (str, "."),
    },
    "obstruction": {
        "phi": _PHI_SCHEMA,
        "lam": (float, 1.0),
        "n_lat": (int, 128),
        "n_lon": (int, 256),
        "threshold": (float, 1e-3),
        "output_dir": (str, "."),
    },
    "virial": {
        "grid": _GRID_SCHEMA,
        "phi": _PHI_SCHEMA,
        "profile": _PROFILE_SCHEMA,
        "radii": (list, [4.0, 8.0, 12.0, 14.0]),
        "output_dir": (str, "."),
    },
    "flow": {
        "grid": {"half_width": (float, 15.0), "n": (int, 128),
                 "center": (list, [0.0, 0.0])},
        "phi": _PHI_SCHEMA,
        "initial": (str, "gaussian"),      # gaussian | profile
        "profile": _PROFILE_SCHEMA,
        "mass": (float, 4.0 * np.pi),
        "sigma": (float, 1.0),
        "t_end": (float, 0.05),
        "dt": (float, 0.0),                # 0 -> CFL-limited automatic step
        "snapshot_every": (int, 10),
        "output_dir": (str, "."),
    },
    "envelope": {
        "grid": _GRID_SCHEMA,
        "phi": _PHI_SCHEMA,
        "profile": _PROFILE_SCHEMA,
        "annulus_R": (float, 20.0),
        "annulus_ratio": (float, 2.0),
        "output_dir": (str, "."),
    },
}


def _validate(config: dict, schema: dict, path: str = "") -> dict:
    """Fill defaults and reject unknown keys anywhere in the tree."""
    if not isinstance(config, dict):
        raise ConfigError(f"expected an object at {path or 'top level'}")
    out = {}
    for key, spec in schema.items():
        sub = config.get(key)
        if isinstance(spec, dict):
            out[key] = _validate(sub if sub is not None else {}, spec, f"{path}{key}.")
        else:
            typ, default = spec
            if sub is None:
                out[key] = default
            else:
                try:
                    out[key] = typ(sub)
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"bad value for {path}{key}: {exc}") from exc
    unknown = set(config) - set(schema)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(path + k for k in unknown)}")
    return out


def load_config(path: str | None, subcommand: str) -> tuple[dict, str]:
    raw = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from exc
    cfg = _validate(raw, SCHEMAS[subcommand])
    # the hash identifies the experiment; where outputs land is not part of it
    canon = json.dumps({k: v for k, v in cfg.items() if k != "output_dir"},
                       sort_keys=True, separators=(",", ":")).encode()
    return cfg, hashlib.sha256(canon).hexdigest()[:16]


def _outdir(cfg: dict) -> str:
    d = os.environ.get(OUTPUT_DIR_ENV, cfg.get("output_dir", "."))
    os.makedirs(d, exist_ok=True)
    return d


def _grid(cfg: dict) -> CartesianGrid:
    g = cfg["grid"]
    return CartesianGrid(center=tuple(g["center"]), half_width=g["half_width"], n=g["n"])


def _phi(cfg: dict) -> ConformalFactor:
    p = cfg["phi"]
    if p["kind"] == "zero":
        return ConformalFactor.zero()
    if p["kind"] == "radial_bump":
        return ConformalFactor.radial_bump(p["amplitude"], p["support_radius"],
                                           tuple(p["center"]))
    raise ConfigError(f"unsupported phi kind in configs: {p['kind']!r}")


def _density(cfg: dict, grid: CartesianGrid, phi: ConformalFactor) -> DensityField:
    prof = cfg["profile"]
    return density_from_profile(prof["m"], prof["lam"], tuple(prof["x_star"]), phi, grid)


def _write_json(path: str, payload: dict) -> None:
    def _plain(o):
        if isinstance(o, np.generic):
            return o.item()
        raise TypeError(f"not JSON serializable: {type(o).__name__}")

    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2, default=_plain)
        fh.write("\n")


# ---------------------------------------------------------------------------
# subcommands

def cmd_identities(cfg: dict, cfg_hash: str) -> int:
    grid = _grid(cfg)
    dg = cfg["double_grid"]
    tol = cfg["tolerance"]
    results = []
    failed = False
    for lam in cfg["lambdas"]:
        lam = float(lam)
        mu = ScaledCauchyProfile(lam=lam, normalization="mu")
        m = 8.0 * np.pi
        samples = mu.on_grid(grid)

        closed_e = mu_entropy_identity(m, lam)
        vals = m * samples
        live = vals > 0
        numeric_e = float(np.sum(np.where(live, vals * np.log(np.where(live, vals, 1.0)), 0.0))
                          * grid.cell_area)

        cfield = newtonian_potential(samples, ConformalFactor.zero(), grid)
        probes = []
        for rfrac in (1.5, 2.0, 3.0, 5.0, 8.0):
            px = lam * rfrac
            i = int(np.argmin(np.abs(grid.x - px)))
            j = int(np.argmin(np.abs(grid.y - 0.0)))
            closed_p = float(mu_potential_identity(lam, (grid.x[i], grid.y[j])))
            probes.append((closed_p, float(cfield.samples[i, j])))

        dgrid = CartesianGrid(center=grid.center, half_width=dg["half_width"], n=dg["n"])
        dsamples = mu.on_grid(dgrid)
        cD = newtonian_potential(dsamples, ConformalFactor.zero(), dgrid)
        numeric_c = float(np.sum(dsamples * cD.samples) * dgrid.cell_area)
        closed_c = mu_coulomb_identity(lam)

        entry = {
            "lambda": lam,
            "entropy": {"closed_form": closed_e, "numeric": numeric_e,
                        "error": abs(numeric_e - closed_e) / max(abs(closed_e), 1e-30),
                        "tail_bound": cfield.tail.bound},
            "potential_probes": [
                {"closed_form": cp, "numeric": nu,
                 "error": abs(nu - cp) / max(abs(cp), 1e-30)}
                for cp, nu in probes],
            "coulomb": {"closed_form": closed_c, "numeric": numeric_c,
                        "error": abs(numeric_c - closed_c) / max(abs(closed_c), 1e-30)},
        }
        errs = [entry["entropy"]["error"], entry["coulomb"]["error"]] \
            + [p["error"] for p in entry["potential_probes"]]
        entry["pass"] = bool(max(errs) <= tol)
        failed = failed or not entry["pass"]
        results.append(entry)
    payload = {"config_hash": cfg_hash, "grid": cfg["grid"],
               "double_grid": cfg["double_grid"], "tolerance": tol,
               "identities": results}
    _write_json(os.path.join(_outdir(cfg), "identities.json"), payload)
    if failed:
        worst = [r["lambda"] for r in results if not r["pass"]]
        print(f"FAIL identities at lambda {worst}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    print("identities: all within tolerance")
    return EXIT_OK


def cmd_residual(cfg: dict, cfg_hash: str) -> int:
    grid = _grid(cfg)
    phi = _phi(cfg)
    field = _density(cfg, grid, phi)
    rep = reduced_residual(field, probe_frac=cfg["probe_frac"])
    mem = membership_check(field)
    payload = {"config_hash": cfg_hash, "grid": cfg["grid"],
               "reduced_residual_L2": rep.reduced_residual_L2,
               "f_constant": rep.f_constant, "f_variation": rep.f_variation,
               "static_residual_L2": rep.static_residual_L2,
               "n_masked_low": rep.n_masked_low,
               "tail_bound": rep.tail.bound,
               "membership": {"mass": mem.mass, "entropy": mem.entropy,
                              "verdict": mem.verdict}}
    _write_json(os.path.join(_outdir(cfg), "residual.json"), payload)
    print(f"residual: f_constant={rep.f_constant:.6f} "
          f"f_variation={rep.f_variation:.3e}")
    return EXIT_OK


def cmd_energy_scan(cfg: dict, cfg_hash: str) -> int:
    phi = _phi(cfg)
    if phi.kind == "zero":
        # flat factor: lambda-scaled per-row grids give clean slopes
        table = lambda_scan(cfg["m"], phi, cfg["lambdas"],
                            scaled_half_width=cfg["grid"]["half_width"],
                            scaled_n=cfg["grid"]["n"])
    else:
        table = lambda_scan(cfg["m"], phi, cfg["lambdas"], _grid(cfg))
    out = os.path.join(_outdir(cfg), "energy_scan.csv")
    table.to_csv(out, meta=f"config_hash={cfg_hash}")
    _write_json(os.path.join(_outdir(cfg), "energy_scan.json"),
                {"config_hash": cfg_hash, "grid": cfg["grid"], "m": cfg["m"],
                 "slope_fit": table.slope_fit,
                 "predicted_slope": table.predicted_slope,
                 "plateau": table.plateau,
                 "predicted_plateau": table.predicted_plateau})
    print(f"energy-scan: slope={table.slope_fit:.4f} "
          f"(predicted {table.predicted_slope:.4f})")
    return EXIT_OK


def cmd_deficit(cfg: dict, cfg_hash: str) -> int:
    grid = _grid(cfg)
    phi = _phi(cfg)
    field = _density(cfg, grid, phi)
    rep = log_hls_deficit(field, cfg["reference_lam"],
                          tuple(cfg["profile"]["x_star"]))
    payload = {"config_hash": cfg_hash, "grid": cfg["grid"],
               "lhs": rep.lhs, "rhs": rep.rhs, "deficit": rep.deficit,
               "mass": rep.mass}
    _write_json(os.path.join(_outdir(cfg), "deficit.json"), payload)
    print(f"deficit: {rep.deficit:.6e}")
    return EXIT_CHECK_FAILED if rep.deficit < -1e-3 else EXIT_OK


def cmd_obstruction(cfg: dict, cfg_hash: str) -> int:
    phi = _phi(cfg)
    cert = nonexistence_certificate(phi, lam=cfg["lam"], n_lat=cfg["n_lat"],
                                    n_lon=cfg["n_lon"])
    verdict = "REFUSED"
    if cert.eligible:
        verdict = ("NONZERO OBSTRUCTION"
                   if cert.min_magnitude >= cfg["threshold"] else "INCONCLUSIVE")
    payload = {"config_hash": cfg_hash, "phi": cfg["phi"], "lam": cfg["lam"],
               "eligible": cert.eligible, "reason": cert.reason,
               "flank_sign": cert.flank_sign,
               "obstructions": cert.obstructions, "verdict": verdict}
    _write_json(os.path.join(_outdir(cfg), "obstruction.json"), payload)
    print(f"obstruction: {verdict}")
    if not cert.eligible:
        return EXIT_BAD_CONFIG
    return EXIT_OK if verdict == "NONZERO OBSTRUCTION" else EXIT_CHECK_FAILED


def cmd_virial(cfg: dict, cfg_hash: str) -> int:
    grid = _grid(cfg)
    phi = _phi(cfg)
    field = _density(cfg, grid, phi)
    reports = assemble_virial(field, cfg["radii"])
    out = os.path.join(_outdir(cfg), "virial.csv")
    export_virial_csv(reports, out, meta=f"config_hash={cfg_hash}")
    last = reports[-1]
    _write_json(os.path.join(_outdir(cfg), "virial.json"),
                {"config_hash": cfg_hash, "grid": cfg["grid"],
                 "R": last.R_used, "I1": last.I1, "I2": last.I2, "I3": last.I3,
                 "closure": last.closure})
    print(f"virial: closure at R={last.R_used:g} is {last.closure:.4f}")
    return EXIT_OK


def cmd_flow(cfg: dict, cfg_hash: str) -> int:
    grid = _grid(cfg)
    phi = _phi(cfg)
    if cfg["initial"] == "gaussian":
        X, Y = grid.meshes()
        sigma = cfg["sigma"]
        rho = cfg["mass"] / (2.0 * np.pi * sigma**2) * np.exp(
            -(X**2 + Y**2) / (2.0 * sigma**2))
        rho *= cfg["mass"] / (np.sum(rho * np.exp(2.0 * phi(X, Y))) * grid.cell_area)
        field = DensityField(grid=grid, samples=rho, phi=phi)
    elif cfg["initial"] == "profile":
        field = _density(cfg, grid, phi)
    else:
        raise ConfigError(f"unknown initial condition {cfg['initial']!r}")
    dt = cfg["dt"] if cfg["dt"] > 0 else None
    final, diag, snaps = run_flow(field, cfg["t_end"], dt=dt,
                                  snapshot_every=cfg["snapshot_every"],
                                  with_energy=True)
    outdir = _outdir(cfg)
    diagnostics_to_csv(diag, os.path.join(outdir, "flow_diagnostics.csv"),
                       meta=f"config_hash={cfg_hash}")
    for k, s in enumerate(snaps):
        s.field.to_csv(os.path.join(outdir, f"flow_snapshot_{k:04d}.csv"),
                       meta=f"config_hash={cfg_hash} t={s.t:.12g}")
    payload = {"config_hash": cfg_hash, "grid": cfg["grid"],
               "steps": final.step_count, "t_final": final.t,
               "mass_drift": diag.mass_drift}
    if diag.phi_is_flat and len(diag.t) >= 10:
        slope, expected = virial_rate(diag)
        payload["dW_dt"] = slope
        payload["dW_dt_expected"] = expected
    _write_json(os.path.join(outdir, "flow.json"), payload)
    print(f"flow: {final.step_count} steps to t={final.t:.4f}, "
          f"mass drift {diag.mass_drift:.2e}")
    return EXIT_OK


def cmd_envelope(cfg: dict, cfg_hash: str) -> int:
    grid = _grid(cfg)
    phi = _phi(cfg)
    field = _density(cfg, grid, phi)
    ann = AnnulusSpec(R=cfg["annulus_R"], ratio=cfg["annulus_ratio"])
    rep = decay_envelope(field, ann)
    _write_json(os.path.join(_outdir(cfg), "envelope.json"),
                {"config_hash": cfg_hash, "grid": cfg["grid"],
                 "K_best": rep.K_best, "tail_slope": rep.tail_slope,
                 "n_cells": rep.n_cells})
    print(f"envelope: K={rep.K_best:.4f} slope={rep.tail_slope:.4f}")
    return EXIT_OK


COMMANDS = {
    "identities": cmd_identities,
    "residual": cmd_residual,
    "energy-scan": cmd_energy_scan,
    "deficit": cmd_deficit,
    "obstruction": cmd_obstruction,
    "virial": cmd_virial,
    "flow": cmd_flow,
    "envelope": cmd_envelope,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="curvedks",
        description="Keller-Segel numerical laboratory on conformally flat planes")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config file")
    args = parser.parse_args(argv)
    try:
        cfg, cfg_hash = load_config(args.config, args.command)
        return COMMANDS[args.command](cfg, cfg_hash)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except (ValueError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except (CFLViolation, BlowUpDetected, StagnationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
