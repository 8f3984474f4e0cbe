"""Command line entry point.

Every run writes its CSV outputs and a ``manifest.json`` into ``--out``. The
manifest stores the full effective config, so ``dnlab rerun MANIFEST``
reproduces the numeric outputs byte for byte.

Exit status: 0 when the run's checks pass, 1 on a failed check or a runtime
error, 2 on usage errors (bad flags, missing or malformed config).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import experiments as ex
from .nonlinear_ops import validate_config

SUBCOMMANDS = ("validate-config", "branch", "simulate", "stability", "contrast", "feller", "kolmogorov")
SECTION = {"validate-config": None, "branch": "branch", "simulate": "simulate", "stability": "stability",
           "contrast": "contrast", "feller": "feller", "kolmogorov": "kolmogorov"}


class UsageError(Exception):
    pass


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _env_int(name):
    val = os.environ.get(name)
    if val is None or val == "":
        return None
    try:
        return int(val)
    except ValueError as exc:
        raise UsageError(f"{name} must be an integer, got {val!r}") from exc


# subcommands ---------------------------------------------------------------------------


def _cmd_validate(cfg, out, seed, workers):
    ok_all = True
    lines = []
    for section in (None, "branch", "contrast"):
        rep = ex.run_validate(cfg, section)
        name = section or "model"
        rows = [(name, c.name, c.passed, c.margin, c.severity, c.detail) for c in rep.checks]
        lines.extend(rows)
        print(f"[{name}]")
        print(rep.table())
        ok_all &= rep.ok
    write_csv(out / "validation.csv", ["section", "check", "passed", "margin", "severity", "detail"], lines)
    return ok_all, "assumptions hold" if ok_all else "assumption violated"


def _cmd_branch(cfg, out, seed, workers):
    r = ex.run_branch(cfg)
    cols = ["t_star", "sign", "I_value", "ode_residual", "elliptic_residual", "pde_residual", "pairwise_distance",
            "M1", "M2", "M"]
    write_csv(out / "branches.csv", cols, [[x[c] for c in cols] for x in r.rows])
    write_csv(out / "separation.csv", ["t_a", "t_b", "closed_form", "trapezoid"], r.separations)
    write_csv(out / "minimizer.csv", ["I_value", "grad_norm", "iterations", "poincare_I"],
              [(r.I_value, r.grad_norm, r.iterations, r.zero_I)])
    worst = max(x["pde_residual"] for x in r.rows)
    return r.passed, f"branches={len(r.rows)} max_pde_residual={worst:.3g} I={r.I_value:.6g}"


def _cmd_simulate(cfg, out, seed, workers):
    ens, energy = ex.run_simulate(cfg, seed, workers)
    d = ens.states.shape[-1]
    write_csv(out / "trajectory.csv", ["t"] + [f"c_{k + 1}" for k in range(d)],
              [(t, *ens.states[0, i]) for i, t in enumerate(ens.times)])
    n2 = np.sum(ens.states**2, axis=-1)
    mean_c = ens.states.mean(axis=0)
    write_csv(out / "ensemble_summary.csv",
              ["t", "mean_norm2", "std_norm2"] + [f"mean_c_{k + 1}" for k in range(d)],
              [(t, n2[:, i].mean(), n2[:, i].std(), *mean_c[i]) for i, t in enumerate(ens.times)])
    se = energy.defect.std(axis=0, ddof=1) / math.sqrt(ens.size) if ens.size > 1 else np.zeros(ens.times.size)
    write_csv(out / "energy.csv", ["t", "mean_defect", "stderr"],
              [(t, energy.defect[:, i].mean(), se[i]) for i, t in enumerate(ens.times)])
    return energy.passes, f"ensemble={ens.size} mean_defect={energy.mean_final:.4g}+-{energy.stderr_final:.2g}"


GNUPLOT = """# ladder plot: consecutive law distances with bootstrap radii
set terminal pngcairo size 800,500
set output 'ladder.png'
set datafile separator ','
set logscale y
set xlabel 'rung i'
set ylabel 'distance(rung i, rung i+1)'
plot 'consecutive.csv' using 1:2:3 skip 1 with yerrorlines title 'catalog distance'
"""


def _cmd_stability(cfg, out, seed, workers):
    rep = ex.run_stability(cfg, seed, workers)
    rows = []
    for i, (li, ni) in enumerate(rep.ladder):
        for j, (lj, nj) in enumerate(rep.ladder):
            rows.append((i, j, li, ni, lj, nj, rep.distance[i, j], rep.radius[i, j], rep.energy[i, j]))
    write_csv(out / "distance.csv", ["i", "j", "lam_i", "n_i", "lam_j", "n_j", "distance", "radius", "energy"], rows)
    write_csv(out / "consecutive.csv", ["i", "distance", "radius"],
              [(i, dd, r) for i, (dd, r) in enumerate(rep.consecutive)])
    write_csv(out / "means.csv", ["rung"] + rep.functional_names + [f"radius_{n}" for n in rep.functional_names],
              [(i, *rep.means[i], *rep.mean_radius[i]) for i in range(len(rep.ladder))])
    t = rep.tightness
    write_csv(out / "tightness.csv", ["rung", "q99", "mean_energy", "bound", "int_V2_q50", "int_V2_q99"],
              [(i, t["q99"][i], t["mean_energy"][i], t["bound"][i], t["int_V2_q50"][i], t["int_V2_q99"][i])
               for i in range(len(rep.ladder))])
    (out / "ladder.gp").write_text(GNUPLOT)
    ok_ = rep.cauchy and t["uniform"]
    return ok_, f"{rep.summary()} tightness={'PASS' if t['uniform'] else 'FAIL'}"


def _cmd_contrast(cfg, out, seed, workers):
    r = ex.run_contrast(cfg, seed, workers)
    write_csv(out / "contrast.csv",
              ["eps", "separation", "terminal_separation", "branch_separation", "deterministic_splits",
               "noisy_distance", "noisy_radius", "noisy_spread", "noisy_overlap"],
              [(r.eps, r.separation, r.terminal_separation, r.branch_separation, r.deterministic_splits,
                r.noisy_distance, r.noisy_radius, r.noisy_spread, r.noisy_overlap)])
    return r.passed, (f"separation={r.separation:.4g} (closed form {r.branch_separation:.4g}) "
                      f"noisy_distance={r.noisy_distance:.3g}+-{r.noisy_radius:.2g}")


def _cmd_feller(cfg, out, seed, workers):
    probe, cc = ex.run_feller(cfg, seed)
    write_csv(out / "feller.csv", ["t", "sup_grad", "bound"],
              [(t, s, b) for t, s, b in zip(probe.times, probe.sup_grad, probe.bound())])
    write_csv(out / "constants.csv", ["slope", "C_R_emp", "alpha_0", "ratio_at_2alpha_0"],
              [(probe.slope, probe.C_R_emp, cc.alpha_0, float(cc.ratio(2 * cc.alpha_0)))])
    passed = abs(probe.slope + probe.exponent) <= cfg["feller"]["tolerance"]
    return passed, f"slope={probe.slope:.4f} target={-probe.exponent:.4f} C_R={probe.C_R_emp:.4g}"


def _cmd_kolmogorov(cfg, out, seed, workers):
    r = ex.run_kolmogorov(cfg, seed, workers)
    trace_rows, sol_rows, id_rows = [], [], []
    bound = float(r.constants.ratio(r.alpha))
    passed = True
    for name, sol in r.solutions.items():
        for k, diff in enumerate(sol.trace):
            ratio = sol.trace[k] / sol.trace[k - 1] if k else float("nan")
            trace_rows.append((name, k + 1, diff, ratio))
        for x, v, g in zip(sol.design, sol.values, sol.gradients):
            sol_rows.append((name, *x, v, *g))
        passed &= sol.ratio_emp <= bound + sol.ratio_margin
    for name, rep in r.identity.items():
        id_rows.append((name, rep.phi_value, rep.phi_se, rep.mc_value, rep.mc_se, rep.tail_bound, rep.overlap))
        passed &= rep.overlap
    d = r.u0.size
    write_csv(out / "trace.csv", ["observable", "iteration", "sup_diff", "ratio"], trace_rows)
    write_csv(out / "solution.csv", ["observable"] + [f"x_{k + 1}" for k in range(d)] + ["value"]
              + [f"grad_{k + 1}" for k in range(d)], sol_rows)
    write_csv(out / "identity.csv", ["observable", "phi", "phi_se", "mc", "mc_se", "tail_bound", "overlap"], id_rows)
    write_csv(out / "constants.csv", ["C_R_emp", "alpha_0", "alpha", "ratio_bound"],
              [(r.probe.C_R_emp, r.constants.alpha_0, r.alpha, bound)])
    return passed, f"alpha={r.alpha:.4g} ratio_bound={bound:.3g} identity={sum(x[-1] for x in id_rows)}/{len(id_rows)}"


COMMANDS = {"validate-config": _cmd_validate, "branch": _cmd_branch, "simulate": _cmd_simulate,
            "stability": _cmd_stability, "contrast": _cmd_contrast, "feller": _cmd_feller,
            "kolmogorov": _cmd_kolmogorov}


# driver --------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dnlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"dnlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON config; defaults are used for missing keys")
        p.add_argument("--seed", type=int, help="64-bit seed (overrides DNL_SEED and the config)")
        p.add_argument("--out", type=Path, default=None, help="output directory (default out/<command>)")
        p.add_argument("--workers", type=int, help="worker threads (overrides DNL_WORKERS)")
        p.add_argument("--force", action="store_true", help="run even if an assumption check fails")
    p = sub.add_parser("rerun", help="repeat the run recorded in a manifest")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--workers", type=int)
    sub.add_parser("default-config", help="print the default config JSON")
    return parser


def execute(command: str, cfg: dict, out: Path, seed: int, workers, force: bool = False,
            config_path=None) -> int:
    section = SECTION[command]
    violations = []
    if command != "validate-config":
        rep = validate_config(ex.model_for(cfg, section))
        violations = [c.name for c in rep.failures()]
        if violations and not force:
            print(f"dnlab {command}: assumption check failed: {', '.join(violations)} (use --force)",
                  file=sys.stderr)
            return 1
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "subcommand": command,
        "config_path": None if config_path is None else str(config_path),
        "seed": int(seed),
        "out": str(out),
        "version": __version__,
        "config_hash": ex.config_hash(cfg),
        "forced_violations": violations,
        "config": cfg,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    try:
        passed, summary = COMMANDS[command](cfg, out, seed, workers)
    except ex.ConfigError as exc:
        print(f"dnlab {command}: config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure, reported with a diagnostic
        print(f"dnlab {command}: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(f"dnlab {command}: {'PASS' if passed else 'FAIL'} {summary}")
    return 0 if passed else 1


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    try:
        if args.command == "default-config":
            print(json.dumps(ex.DEFAULT_CONFIG, indent=2))
            return 0
        env_workers = _env_int("DNL_WORKERS")
        if args.command == "rerun":
            if not args.manifest.is_file():
                raise UsageError(f"manifest not found: {args.manifest}")
            man = json.loads(args.manifest.read_text())
            cfg = ex.merge_config(man["config"])
            out = args.out or Path(man["out"])
            workers = args.workers or env_workers or os.cpu_count()
            return execute(man["subcommand"], cfg, out, man["seed"], workers,
                           force=bool(man.get("forced_violations")), config_path=man.get("config_path"))
        if args.config is not None and not args.config.is_file():
            raise UsageError(f"config not found: {args.config}")
        cfg = ex.load_config(args.config)
        env_seed = _env_int("DNL_SEED")
        seed = args.seed if args.seed is not None else env_seed if env_seed is not None else int(cfg["seed"])
        if not 0 <= seed < 2**64:
            raise UsageError("seed must be an unsigned 64-bit integer")
        workers = args.workers or env_workers or os.cpu_count()
        if workers < 1:
            raise UsageError("workers must be positive")
        out = args.out or Path("out") / args.command
        return execute(args.command, cfg, out, seed, workers, args.force, args.config)
    except (UsageError, ex.ConfigError) as exc:
        print(f"dnlab: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
