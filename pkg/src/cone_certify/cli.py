"""Command-line entry point: ``cone-certify <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import os
import sys

import numpy as np

from . import __version__, certify, config, dynamics, verify
from .errors import CertifyError, ConfigError, DomainError, VerificationFailure
from .reports import default_tolerances
from .transfer import GridScheme, TransferModel, phi_n, sigma2_green_kubo, sigma2_spectral

log = logging.getLogger("cone_certify")

NONMARKOV_KEYS = {"gamma": float, "A": float, "Nstar": int, "DR": float, "varf": float, "cardA0": float,
                  "supf": float, "sigma": float}


# --------------------------------------------------------------------------
# argument parsing


def _kv(text: str, types: dict | None = None) -> dict:
    out = {}
    for part in filter(None, text.split(",")):
        if "=" not in part:
            raise ConfigError(f"expected key=value, got {part!r}")
        k, v = (s.strip() for s in part.split("=", 1))
        if types is not None and k not in types:
            raise ConfigError(f"unknown key {k!r}; expected one of {sorted(types)}")
        try:
            out[k] = (types or {}).get(k, float)(v)
        except ValueError:
            raise ConfigError(f"{k}={v!r} is not a number") from None
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file (flags override its fields)")
    common.add_argument("--map", help="doubling | gauss")
    common.add_argument("--obs", help="observable preset: cos1 | sin1 | cocycle | gauss_x | zero")
    common.add_argument("--alpha", type=float, help="Gauss-map metric parameter (default 0.2)")
    common.add_argument("--jmax", type=int, help="explicit Gauss branches before the lumped tail (default 64)")
    common.add_argument("--grid", type=int, metavar="N", help="grid nodes (default 4096)")
    common.add_argument("--samples", type=int, metavar="m", help="Monte Carlo samples")
    common.add_argument("--seed", type=int, metavar="s", help="random seed")
    common.add_argument("--n-list", help="comma-separated n values")
    common.add_argument("--out", metavar="dir", help="output directory (JSON goes to stdout when omitted)")
    common.add_argument("--only", action="append", metavar="id", help="restrict check-lemmas to these ids")
    common.add_argument("--tol", action="append", metavar="key=val", help="abs, rel or power tolerance")
    common.add_argument("--nonmarkov", metavar="k=v,...",
                        help="gamma=..,A=..,Nstar=..,DR=..,varf=..,cardA0=.. (plus supf, sigma)")
    common.add_argument("--dim", type=int, help="cone-lab dimension (default 5)")
    common.add_argument("--matrices", type=int, help="cone-lab random matrices (default 1000)")
    common.add_argument("--z-count", type=int, help="z values in the epsilon sweep (default 100)")
    common.add_argument("--t-max", type=float, help="smoothing-inequality cutoff T (default 200)")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="cone-certify", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--print-schema", action="store_true", help="print the configuration JSON schema and exit")
    sub = p.add_subparsers(dest="command")
    for name, text in (("certify", "explicit Berry-Esseen certificate"),
                       ("spectrum", "pressure table and spectral data"),
                       ("check-lemmas", "operator-level inequality sweeps"),
                       ("cone-lab", "finite-dimensional cone sweeps"),
                       ("experiment", "Monte Carlo Kolmogorov distances against the bounds")):
        sub.add_parser(name, parents=[common], help=text)
    return p


def resolve_config(args) -> config.RunConfig:
    doc = config.load(args.config) if args.config else {}
    flags = {
        "map": args.map, "alpha": args.alpha, "j_max": args.jmax, "grid": args.grid,
        "samples": args.samples, "seed": args.seed, "dim": args.dim, "matrices": args.matrices,
        "z_count": args.z_count, "t_max": args.t_max,
    }
    if args.obs is not None:
        obs = doc.get("observable")
        doc["observable"] = {**obs, "preset": args.obs} if isinstance(obs, dict) and "x" not in obs else args.obs
    if args.n_list:
        try:
            flags["n_list"] = [int(v) for v in args.n_list.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"--n-list must be comma-separated integers, got {args.n_list!r}") from None
    if args.only:
        flags["only"] = [s for o in args.only for s in o.split(",") if s]
    if args.tol:
        tols = dict(doc.get("tolerances", {}))
        for t in args.tol:
            tols.update(_kv(t, {k: float for k in config.TOL_KEYS}))
        flags["tolerances"] = tols
    if args.nonmarkov:
        flags["nonmarkov"] = _kv(args.nonmarkov, NONMARKOV_KEYS)
    if args.out:
        flags["out"] = args.out
    doc.update({k: v for k, v in flags.items() if v is not None})
    return config.validate(doc)


# --------------------------------------------------------------------------
# model construction


def make_map(cfg: config.RunConfig) -> dynamics.MapSpec:
    m = cfg.get("map")
    if m is None:
        raise ConfigError("no map given (use --map doubling|gauss or a config map)")
    if m == "doubling":
        return dynamics.doubling_map()
    if m == "gauss":
        return dynamics.gauss_map(cfg["alpha"], cfg["j_max"])
    metric = dynamics.Metric("gauss_alpha", m["metric_alpha"]) if "metric_alpha" in m else dynamics.Metric()
    return dynamics.piecewise_linear_map(m["branches"], m["gamma"], m["G"], metric, m.get("name", "custom"))


def make_observable(cfg: config.RunConfig, spec: dynamics.MapSpec) -> dynamics.ObservableSpec:
    o = cfg.get("observable")
    if o is None:
        raise ConfigError("no observable given (use --obs or a config observable)")
    if isinstance(o, str):
        return dynamics.observable(o, spec.metric)
    if "x" in o:
        f = dynamics.table_observable(o["x"], o["values"], spec.metric)
    else:
        f = dynamics.observable(o["preset"], spec.metric, **({"c": o["c"]} if "c" in o else {}))
    declared = {k: float(o[k]) for k in ("sup_norm", "lip_seminorm") if k in o}
    if declared:
        f = dataclasses.replace(f, params={**f.params, "declared": declared}, **declared)
    return f


def make_model(cfg: config.RunConfig, spec, f) -> TransferModel:
    tol = cfg["tolerances"].get("power")
    kw = {"tol": tol} if tol is not None else {}
    return TransferModel(spec, f, GridScheme(cfg["grid"]), **kw)


# --------------------------------------------------------------------------
# output


def jsonable(obj):
    """Plain JSON types; non-finite floats become strings so the output stays strict JSON."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": jsonable(obj.real), "im": jsonable(obj.imag)}
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def dumps(payload: dict) -> str:
    return json.dumps(jsonable(payload), sort_keys=True, indent=2, allow_nan=False) + "\n"


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([("%.17g" % v) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


class Emitter:
    """Writes named artifacts to --out, or the JSON ones to stdout."""

    def __init__(self, cfg: config.RunConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.out = cfg.get("out")
        if self.out:
            os.makedirs(self.out, exist_ok=True)

    def envelope(self, body: dict) -> dict:
        return {"tool": "cone-certify", "version": __version__, "command": self.command,
                "config_sha256": self.cfg.sha256, "config": self.cfg.reportable, **body}

    def json(self, name: str, body: dict) -> None:
        text = dumps(self.envelope(body))
        if self.out:
            with open(os.path.join(self.out, name), "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)

    def csv(self, name: str, header, rows) -> None:
        if self.out:
            with open(os.path.join(self.out, name), "w", encoding="utf-8", newline="") as fh:
                fh.write(csv_text(header, rows))


def _report_list(reports) -> dict:
    return {"pass": all(r.ok for r in reports), "checks": [r.to_dict() for r in reports],
            "violations": sum(r.violations for r in reports)}


# --------------------------------------------------------------------------
# commands


def cmd_certify(cfg: config.RunConfig) -> int:
    em = Emitter(cfg, "certify")
    n_list = cfg["n_list"]
    body = {}
    if "nonmarkov" in cfg.data:
        nm = cfg["nonmarkov"]
        missing = [k for k in ("supf", "sigma") if k not in nm]
        if missing:
            raise ConfigError(f"--nonmarkov also needs {', '.join(missing)}")
        rows = []
        for n in n_list:
            rep = certify.nonmarkov_certificate(nm["gamma"], nm["A"], nm["varf"], nm["supf"], nm["cardA0"],
                                                nm["Nstar"], nm["DR"], nm["sigma"], n)
            rows.append(rep.to_dict())
        body["nonmarkov"] = rows
    if cfg.get("map") is not None or "nonmarkov" not in cfg.data:
        spec = make_map(cfg)
        f = make_observable(cfg, spec)
        model = make_model(cfg, spec, f)
        var = verify.variance_estimate(model)
        cert = certify.certificate(spec.gamma, spec.G, f.sup_norm, f.lip_seminorm, var.value)
        cert.provenance["sigma2"] = {"formula": "P''(0) by Richardson-extrapolated differences of the pressure",
                                     "inputs": {"grid": cfg["grid"], "coarse_grid_value": var.coarse,
                                                "grid_error": var.grid_error}}
        body.update(map=spec.describe(), observable=f.describe(), certificate=cert.to_dict(n_list))
    em.json("certificate.json", body)
    return 0


def spectrum_z_grid(delta0: float, radii, angles: int) -> list[complex]:
    """z = 0 followed by conjugate pairs on circles of radius r delta0."""
    zs = [0j]
    for r in radii:
        zs.append(complex(r * delta0))
        for k in range(1, angles):
            z = r * delta0 * complex(math.cos(math.pi * k / angles), math.sin(math.pi * k / angles))
            zs += [z, z.conjugate()]
        zs.append(complex(-r * delta0))
    return zs


def cmd_spectrum(cfg: config.RunConfig) -> int:
    em = Emitter(cfg, "spectrum")
    spec = make_map(cfg)
    f = make_observable(cfg, spec)
    model = make_model(cfg, spec, f)
    base = model.base_triple
    n = cfg["n_list"][0]
    d0 = model.delta0()
    rows = []
    for z in spectrum_z_grid(d0, cfg["z_radii"], cfg["z_angles"]):
        if z == 0:
            lam, P = complex(base.lam), 0j
        else:
            lam = complex(model.triple(z, adjoint=False).lam)
            P = model.pressure(z)
        ph = phi_n(spec, f, z, n, model=model)
        rows.append([z.real, z.imag, P.real, P.imag, lam.real, lam.imag, abs(ph)])
    s2 = sigma2_spectral(spec, f, model=model)
    gk = sigma2_green_kubo(spec, f, model=model)
    body = {
        "map": spec.describe(), "observable": f.describe(), "n": n, "delta0": d0,
        "lambda0": base.lam, "residual": base.residual, "iterations": base.iterations,
        "sigma2_spectral": s2, "sigma2_green_kubo": gk.value, "green_kubo_tail": gk.tail_estimate,
        "green_kubo_warning": gk.warning,
        "sigma2_agreement": None if gk.value is None else abs(s2 - gk.value),
        "provenance": {"sigma2_spectral": "P''(0) from pressure differences",
                       "sigma2_green_kubo": "E f^2 + 2 sum C_k with geometric tail",
                       "pressure": "log lambda(z)/lambda(0) continued along the ray from 0"},
    }
    header = ["z_re", "z_im", "P_re", "P_im", "lambda_re", "lambda_im", "phi_n_abs"]
    if not em.out:
        body["table"] = {"columns": header, "rows": rows}
    em.csv("spectrum.csv", header, rows)
    em.json("spectral.json", body)
    return 0


def cmd_check_lemmas(cfg: config.RunConfig) -> int:
    em = Emitter(cfg, "check-lemmas")
    spec = make_map(cfg)
    f = make_observable(cfg, spec)
    model = make_model(cfg, spec, f)
    tols = cfg["tolerances"]
    validation = dynamics.validate_assumptions(spec)
    with default_tolerances(tols.get("abs"), tols.get("rel")):
        reports = verify.lemma_suite(model, only=cfg.get("only"), seed=cfg["seed"], z_count=cfg["z_count"])
    body = _report_list(reports)
    body.update(map=spec.describe(), observable=f.describe(),
                assumptions={**dataclasses.asdict(validation), "ok": validation.ok},
                provenance={r.check_id: list(r.aliases) for r in reports})
    em.json("checks.json", body)
    return 0 if body["pass"] else 4


def cmd_conelab(cfg: config.RunConfig) -> int:
    em = Emitter(cfg, "cone-lab")
    reports = verify.cone_lab(cfg["dim"], cfg["matrices"], cfg["seed"], cfg["comparisons"])
    body = _report_list(reports)
    body["provenance"] = {r.check_id: list(r.aliases) for r in reports}
    em.json("checks.json", body)
    return 0 if body["pass"] else 4


def cmd_experiment(cfg: config.RunConfig) -> int:
    em = Emitter(cfg, "experiment")
    spec = make_map(cfg)
    f = make_observable(cfg, spec)
    model = make_model(cfg, spec, f)
    try:
        rep = verify.be_experiment(spec, f, cfg["n_list"], cfg["samples"], cfg["seed"], model=model,
                                   T=cfg["t_max"], t_step=cfg["t_step"])
        code = 0
    except VerificationFailure as exc:
        rep, code = exc.report, 4
        if rep is None:
            raise
    body = rep.to_dict()
    body.update(map=spec.describe(), observable=f.describe(),
                provenance={"distance": "sup |ECDF - Phi| over sorted samples",
                            "slack": "DKW sqrt(log(2/delta)/(2m))",
                            "feller": "smoothing inequality with the operator characteristic function",
                            "certificate": "C/sqrt(n) from the certify constant chain"})
    em.csv("curves.csv", ["n", "distance", "slack", "feller", "certificate", "certificate_over_distance"],
           [[r.n, r.distance, r.slack, r.feller, r.certificate, r.slack_ratio] for r in rep.rows])
    em.json("experiment.json", body)
    if code:
        sys.stderr.write("verification failed: " + "; ".join(rep.failures) + "\n")
    return code


COMMANDS = {"certify": cmd_certify, "spectrum": cmd_spectrum, "check-lemmas": cmd_check_lemmas,
            "cone-lab": cmd_conelab, "experiment": cmd_experiment}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_schema:
        sys.stdout.write(json.dumps(config.SCHEMA, indent=2, sort_keys=True) + "\n")
        return 0
    if args.command is None:
        parser.print_help(sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except CertifyError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return exc.exit_code
    except (ValueError, FloatingPointError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return DomainError.exit_code


if __name__ == "__main__":
    sys.exit(main())
