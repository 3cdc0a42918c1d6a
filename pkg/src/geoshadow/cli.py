"""``geoshadow`` command-line entry point.

Exit codes: 0 pass, 1 bound or assertion failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import verify as V
from .config import (EXPERIMENTS, OUTPUT_ENV, build_curve, build_fields, build_params, load_config,
                     parse_override, planner_window)
from .errors import ConfigurationError, GeoShadowError, PreconditionError, ShadowingFailure
from .planner import shadow_curve
from .spanning import check_A3_region
from .symbolic import coupling_for_norm, constants

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Run:
    """Output directory and file writer for one invocation."""

    def __init__(self, command: str, cfg: dict, out: str | None, run_name: str | None):
        base = out or os.environ.get(OUTPUT_ENV) or cfg["output_dir"]
        name = run_name or f"{command}-{time.strftime('%Y%m%dT%H%M%S')}"
        self.dir = Path(base) / name
        self.command = command
        self.cfg = cfg

    def write(self, stem: str, text: str, ext: str) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        path = self.dir / f"{self.command}-{stem}-seed{self.cfg['seed']}.{ext}"
        path.write_text(text)
        return path

    def write_json(self, stem: str, payload: dict) -> Path:
        doc = {"config": self.cfg, **payload}
        return self.write(stem, json.dumps(doc, sort_keys=True, indent=2, default=V._jsonable) + "\n", "json")


def _params_checked(cfg: dict):
    params = build_params(cfg)
    L = float(cfg["planner"]["L"])
    consts = constants(params, L)
    if params.eps > consts.eps_usable:
        raise PreconditionError(
            f"epsilon = {params.eps} exceeds the usable bound {consts.eps_usable:.6g}")
    return params, consts, L


def cmd_check_a3(cfg: dict, run: _Run, args) -> int:
    fields = build_fields(cfg, allow_underdetermined=True)
    res = args.grid or int(cfg["planner"]["a3_grid"])
    report = check_A3_region(fields, res)
    for p, cert in zip(report.points, report.certificates):
        coords = " ".join(f"{x:+.4f}" for x in p)
        print(f"{coords}  {'ok' if cert.satisfied else 'FAIL'}  margin={cert.margin:.3e}")
    verdict = report.all_satisfied
    print(f"spanning condition {'satisfied' if verdict else 'NOT satisfied'} on "
          f"{report.satisfied.sum()}/{len(report.points)} grid points")
    run.write_json("certificates", {"all_satisfied": verdict, "grid": report.to_dict()})
    return EXIT_PASS if verdict else EXIT_FAIL


def cmd_shadow(cfg: dict, run: _Run, args) -> int:
    params, consts, L = _params_checked(cfg)
    curve = build_curve(cfg)
    horizon, t_end = planner_window(cfg)
    p = cfg["planner"]
    try:
        result = shadow_curve(curve, params, L, horizon, t_end, consts, int(p["a3_grid"]),
                              stay_horizon=float(p["stay_horizon"]))
    except ShadowingFailure as exc:
        run.write_json("failure", {"error": str(exc), "diagnostics": exc.diagnostics})
        print(f"shadowing failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    err = V.shadow_error(curve, result, int(p["samples"]))
    bound = consts.C_shadow * params.eps
    run.write("trajectory", result.to_csv(), "csv")
    summary = result.summary()
    summary.update(max_error=err, bound=bound, C_fitted=err / params.eps, within_bound=err <= bound)
    run.write_json("summary", summary)
    print(f"max error {err:.6e}  bound C*eps = {bound:.6e}  (C = {consts.C_shadow:.4f})")
    print(f"outputs in {run.dir}")
    return EXIT_PASS if err <= bound else EXIT_FAIL


def cmd_verify(cfg: dict, run: _Run, args) -> int:
    v = cfg["verify"]
    names = list(v["experiments"])
    unknown = [n for n in names if n not in EXPERIMENTS]
    if unknown:
        raise ConfigurationError(f"unknown experiment(s) {unknown}; choose from {list(EXPERIMENTS)}")
    seed, trials = int(cfg["seed"]), int(v["trials"])
    L = float(cfg["planner"]["L"])
    all_pass = True
    for name in names:
        if name == "uniform_closeness":
            base = build_params(cfg).with_(eps=float(v["closeness_epsilon"]))
            if v.get("closeness_phi_norm"):
                base = coupling_for_norm(base, float(v["closeness_phi_norm"]))
            consts = constants(base, L)
            reports = [V.uniform_closeness_experiment(base, int(N), trials, seed, consts) for N in v["N"]]
        elif name == "same_code_drift":
            K0 = float(v["K0"])
            dcfg = dict(cfg, fields={"preset": v["drift_fields"]}) if v["drift_fields"] != "same" else cfg
            params = build_params(dcfg)
            reports = [V.same_code_drift_experiment(params, K0, trials, seed, constants(params, L, K0))]
        elif name == "endpoint_accuracy":
            params, consts, L = _params_checked(cfg)
            reports = [V.endpoint_accuracy_experiment(params, L, int(v["endpoint_trials"]), seed, consts)]
        else:
            params, consts, L = _params_checked(cfg)
            curve = build_curve(cfg)
            horizon, t_end = planner_window(cfg)
            rep = V.ExperimentReport("shadowing", {"curve": curve.params, "eps": params.eps, "L": L},
                                     consts.to_dict(), seed=seed)
            try:
                res = shadow_curve(curve, params, L, horizon, t_end, consts, int(cfg["planner"]["a3_grid"]))
                rep.add(V.shadow_error(curve, res, int(cfg["planner"]["samples"])),
                        consts.C_shadow * params.eps)
            except ShadowingFailure as exc:
                rep.passed = False
                rep.trials.append({"failure": str(exc)})
            reports = [rep]
        for k, rep in enumerate(reports):
            stem = name if len(reports) == 1 else f"{name}-N{v['N'][k]}"
            run.write_json(stem, {"report": rep.to_dict()})
            run.write(stem, rep.to_csv(), "csv")
            print(f"{stem:28s} {'PASS' if rep.passed else 'FAIL'}  max ratio {rep.max_ratio:.4f}")
            all_pass = all_pass and rep.passed
    print(f"outputs in {run.dir}")
    return EXIT_PASS if all_pass else EXIT_FAIL


def cmd_sweep(cfg: dict, run: _Run, args) -> int:
    s = cfg["sweep"]
    eps_list = [float(e) for e in s["epsilons"]]
    if len(eps_list) < 3:
        raise PreconditionError("an eps sweep needs at least three values")
    params = build_params(cfg).with_(eps=max(eps_list))
    L = float(cfg["planner"]["L"])
    consts = constants(params, L)
    if max(eps_list) > consts.eps_usable:
        raise PreconditionError(f"epsilon = {max(eps_list)} exceeds the usable bound {consts.eps_usable:.6g}")
    horizon, t_end = planner_window(cfg)
    report = V.epsilon_sweep(build_curve(cfg), eps_list, params, L, horizon, t_end,
                             int(cfg["planner"]["samples"]), int(cfg["seed"]))
    ok = report.slope_within(float(s["slope_min"]), float(s["slope_max"]))
    run.write_json("report", {"sweep": json.loads(report.to_json()), "passed": ok})
    run.write("errors", report.to_csv(), "csv")
    for e, err in zip(report.eps, report.errors):
        print(f"eps {e:.3e}  max error {err:.6e}  C estimate {err / e:.4f}")
    for f in report.failures:
        print(f"eps {f['eps']:.3e}  FAILED: {f['message']}")
    print(f"log-log slope {report.slope:.6f}  ({'PASS' if ok else 'FAIL'})")
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_constants(cfg: dict, run: _Run, args) -> int:
    params = build_params(cfg)
    consts = constants(params, float(cfg["planner"]["L"]), float(cfg["verify"]["K0"]))
    record = consts.to_dict()
    print(json.dumps(record, sort_keys=True, indent=2))
    run.write_json("constants", {"constants": record})
    return EXIT_PASS


COMMANDS = {
    "check-a3": (cmd_check_a3, "certify the spanning condition on a domain grid"),
    "shadow": (cmd_shadow, "synthesize a shadowing code for the configured curve"),
    "verify": (cmd_verify, "run the bound experiments"),
    "sweep": (cmd_sweep, "fit the error scaling over several eps values"),
    "constants": (cmd_constants, "print the constants record"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geoshadow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("-c", "--config", help="TOML config file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one config value (repeatable)")
        p.add_argument("--seed", type=int)
        p.add_argument("--epsilon", type=float)
        p.add_argument("--out", help=f"output directory (else ${OUTPUT_ENV}, else config)")
        p.add_argument("--run-name", help="fixed run directory name instead of a timestamp")
        if name == "check-a3":
            p.add_argument("--grid", type=int, help="grid points per axis")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_PASS
    try:
        overrides = dict(parse_override(s) for s in args.set)
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.epsilon is not None:
            overrides["model.epsilon"] = args.epsilon
        cfg = load_config(args.config, overrides)
        run = _Run(args.command, cfg, args.out, args.run_name)
        return COMMANDS[args.command][0](cfg, run, args)
    except (ConfigurationError, PreconditionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except GeoShadowError as exc:
        print(f"failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
