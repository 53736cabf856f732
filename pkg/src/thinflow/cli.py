"""Command line front end: subcommand dispatch and CSV artifacts.

Every run is driven by a config file (path as positional argument) and
writes its tabular artifacts under `--out-dir`. Outputs are deterministic:
no timestamps, floats at 17 significant digits, and each file starts with
a comment header replaying the resolved configuration, so a result can be
reproduced from the artifact alone.

Exit codes: 0 success, 1 invalid configuration or inadmissible problem
data, 2 solver failure, 3 rate verdict failure (sweep only).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .cell import build_cell_inputs, make_disk_mesh, solve_cell
from .config import ConfigError, RunConfig, parse_config
from .problem import classify, validate_problem
from .reconstruct import reconstruct_on_mesh
from .reduced1d import Grid1D, solve_limit, solve_with_correctors
from .reference import AxisymMesh, cross_section_mean, solve_reference
from .verify import NORM_IDS, predicted_rate, sweep, write_sweep_artifacts


def _fmt(value) -> str:
    return "%.17g" % float(value)


def _header(cfg: RunConfig, subcommand: str) -> list:
    return ["thinflow %s" % subcommand] + cfg.header_lines()


def _write_csv(path: Path, header_lines, columns, rows) -> None:
    lines = ["# " + line for line in header_lines]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(cell if isinstance(cell, str) else _fmt(cell) for cell in row))
    path.write_text("\n".join(lines) + "\n")


def _load_config(args) -> RunConfig:
    if getattr(args, "config", None) is None:
        return parse_config("")
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        raise ConfigError("cannot read config file %s: %s" % (args.config, exc)) from exc
    return parse_config(text)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_classify(args) -> int:
    cfg = _load_config(args)
    alpha = cfg.regime["alpha"] if args.alpha is None else args.alpha
    beta = cfg.regime["beta"] if args.beta is None else args.beta
    regime = classify(alpha, beta)
    if not regime.supported:
        print("regime = %s (alpha = %s, beta = %s): %s"
              % (regime.tag, _fmt(alpha), _fmt(beta), regime.reason))
        print("no predicted exponents in this regime")
        return 0
    print("regime = %s (alpha = %s, beta = %s)" % (regime.tag, _fmt(alpha), _fmt(beta)))
    print("predicted exponents:")
    for nid in NORM_IDS:
        rate = predicted_rate(regime, nid)
        print("  %s = %s" % (nid, "unavailable" if rate is None else _fmt(rate)))
    return 0


def _cmd_validate(args) -> int:
    cfg = _load_config(args)
    spec = cfg.build_spec()
    report = validate_problem(spec)
    if report.passed:
        print("validation passed: saturation corridor [%s, %s]"
              % (_fmt(report.delta0), _fmt(report.delta1)))
        return 0
    print("validation failed with %d violation(s):" % len(report.violations))
    for violation in report.violations:
        print("  - %s" % violation)
    return 1


def _reduced_grid(cfg: RunConfig) -> Grid1D:
    d, g = cfg.discretization, cfg.geometry
    return Grid1D(n_x=d["n_x"], n_t=d["n_t"], ell=g["ell"], horizon_T=g["horizon"])


def _solve_reduced(cfg: RunConfig, spec):
    grid = _reduced_grid(cfg)
    if spec.regime.tag == "Case2":
        return solve_with_correctors(spec, grid, pressure_method="fv")
    return solve_limit(spec, grid, pressure_method="fv")


def _cmd_solve_limit(args) -> int:
    cfg = _load_config(args)
    spec = cfg.build_spec()
    reduced = _solve_reduced(cfg, spec)
    grid = reduced.grid
    p1 = reduced.p_corr if reduced.p_corr is not None else np.zeros_like(reduced.p0)
    s1 = reduced.s_corr if reduced.s_corr is not None else np.zeros_like(reduced.s0)
    rows = (
        (t, x, reduced.p0[n, i], reduced.s0[n, i], p1[n, i], s1[n, i])
        for n, t in enumerate(grid.times)
        for i, x in enumerate(grid.x)
    )
    path = _out_dir(args) / "limit.csv"
    _write_csv(path, _header(cfg, "solve-limit"), ("t", "x", "p0", "s0", "p1", "s1"), rows)
    print("wrote %s (%d times x %d nodes, regime %s)"
          % (path, grid.times.size, grid.x.size, spec.regime.tag))
    return 0


def _cmd_solve_cell(args) -> int:
    cfg = _load_config(args)
    spec = cfg.build_spec()
    x1 = 0.5 * spec.geometry.length_ell if args.x1 is None else args.x1
    t = spec.geometry.horizon_T if args.t is None else args.t
    s0_value = float(np.asarray(spec.forcing.S0(np.asarray(x1), t), dtype=float))
    source, flux = build_cell_inputs(spec, s0_value, x1, t)
    mesh = make_disk_mesh(cfg.discretization["disk_n_r"], cfg.discretization["disk_n_theta"])
    kperp = float(np.asarray(spec.coefficients.k_perp(np.asarray(x1), np.asarray(0.0))))
    sol = solve_cell(mesh, kperp, source, flux, x1=x1, t=t)
    header = _header(cfg, "solve-cell") + [
        "station: x1 = %s, t = %s, s0 = %s" % (_fmt(x1), _fmt(t), _fmt(s0_value)),
        "disk mean = %s, residual = %s" % (_fmt(sol.mean_value), _fmt(sol.residual)),
    ]
    rows = (
        (mesh.rho[i], mesh.theta[j], sol.values[i, j],
         sol.grad_xi2[i, j], sol.grad_xi3[i, j])
        for i in range(mesh.n_r)
        for j in range(mesh.n_theta)
    )
    path = _out_dir(args) / "cell.csv"
    _write_csv(path, header, ("rho", "theta", "u", "du_dxi2", "du_dxi3"), rows)
    print("wrote %s (%d rings x %d sectors at x1 = %s)"
          % (path, mesh.n_r, mesh.n_theta, _fmt(x1)))
    return 0


def _field_rows(mesh, times, fields):
    """Cross-section means over (t, x) for each named field."""
    means = [cross_section_mean(values, mesh) for _, values in fields]
    for n, t in enumerate(times):
        for i, x in enumerate(mesh.x):
            yield (t, x) + tuple(m[n, i] for m in means)


def _final_rows(mesh, fields):
    for i, x in enumerate(mesh.x):
        for j, rho in enumerate(mesh.rho):
            yield (x, rho) + tuple(values[-1, i, j] for _, values in fields)


def _cmd_solve_reference(args) -> int:
    cfg = _load_config(args)
    spec = cfg.build_spec()
    d, g = cfg.discretization, cfg.geometry
    mesh = AxisymMesh(n_x=d["n_x"], n_r=d["n_r"], ell=g["ell"], epsilon=g["epsilon"])
    dt = g["horizon"] / d["n_t"]
    full = solve_reference(spec, g["epsilon"], mesh, dt=dt)
    out = _out_dir(args)
    header = _header(cfg, "solve-reference")
    fields = [("P", full.P), ("S", full.S)]
    means_path = out / "reference_means.csv"
    _write_csv(means_path, header, ("t", "x", "P_mean", "S_mean"),
               _field_rows(mesh, full.times, fields))
    final_path = out / "reference_final.csv"
    _write_csv(final_path, header, ("x", "rho", "P", "S"), _final_rows(mesh, fields))
    print("wrote %s and %s (epsilon = %s, %d steps)"
          % (means_path, final_path, _fmt(full.epsilon), full.times.size - 1))
    return 0


def _cmd_reconstruct(args) -> int:
    cfg = _load_config(args)
    spec = cfg.build_spec()
    reduced = _solve_reduced(cfg, spec)
    d, g = cfg.discretization, cfg.geometry
    mesh = AxisymMesh(n_x=d["n_x"], n_r=d["n_r"], ell=g["ell"], epsilon=g["epsilon"])
    disk = make_disk_mesh(d["disk_n_r"], d["disk_n_theta"])
    approx = reconstruct_on_mesh(spec, reduced, g["epsilon"], mesh=mesh, disk=disk)
    out = _out_dir(args)
    header = _header(cfg, "reconstruct")
    means_path = out / "approx_means.csv"
    _write_csv(means_path, header, ("t", "x", "P_mean", "S_mean"),
               _field_rows(mesh, approx.times, [("P", approx.P_approx), ("S", approx.S_approx)]))
    final_fields = [
        ("P", approx.P_approx), ("S", approx.S_approx),
        ("vtotal_x", approx.V_total.longitudinal), ("vtotal_rho", approx.V_total.transverse),
        ("vw_x", approx.V_w.longitudinal), ("vw_rho", approx.V_w.transverse),
    ]
    final_path = out / "approx_final.csv"
    _write_csv(final_path, header,
               ("x", "rho", "P", "S", "vtotal_x", "vtotal_rho", "vw_x", "vw_rho"),
               _final_rows(mesh, final_fields))
    print("wrote %s and %s (epsilon = %s, regime %s)"
          % (means_path, final_path, _fmt(g["epsilon"]), spec.regime.tag))
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load_config(args)
    spec = cfg.build_spec()
    report = sweep(spec, eps_ladder=cfg.eps_ladder, grids=cfg.grids(),
                   slack=cfg.slack, tail=cfg.tail)
    paths = write_sweep_artifacts(report, _out_dir(args),
                                  header_lines=_header(cfg, "sweep"))
    for nid in NORM_IDS:
        predicted = report.predicted[nid]
        print("%s: fitted %.3f, predicted %s, %s"
              % (nid, report.fitted_slope[nid],
                 "unavailable" if predicted is None else "%g" % predicted,
                 report.verdict[nid]))
    ladder = " ".join("%g" % e for e in report.eps_ladder)
    print("sweep %s: regime %s, ladder %s, artifacts in %s"
          % ("passed" if report.passed else "FAILED", report.regime.tag,
             ladder, paths["rates"].parent))
    return 0 if report.passed else 3


# ---------------------------------------------------------------------------
# parser and entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thinflow",
        description="Two-phase flow in a thin cylinder: reduced solvers, "
                    "reference solver, and convergence-rate verification.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add(name, handler, help_text, config_optional=False):
        p = sub.add_parser(name, help=help_text)
        if config_optional:
            p.add_argument("config", nargs="?", default=None,
                           help="config file (defaults apply when omitted)")
        else:
            p.add_argument("config", help="config file path")
        p.add_argument("--out-dir", default=".", help="artifact directory")
        p.set_defaults(handler=handler)
        return p

    p = add("classify", _cmd_classify,
            "print the regime and its predicted exponents", config_optional=True)
    p.add_argument("--alpha", type=float, default=None, help="override lateral-inflow exponent")
    p.add_argument("--beta", type=float, default=None, help="override permeability exponent")

    add("validate", _cmd_validate, "check every admissibility assumption")
    add("solve-limit", _cmd_solve_limit, "solve the reduced model, correctors when applicable")
    p = add("solve-cell", _cmd_solve_cell, "solve the transverse Neumann problem at one station")
    p.add_argument("--x1", type=float, default=None, help="axial station (default: midpoint)")
    p.add_argument("--t", type=float, default=None, help="time (default: horizon)")
    add("solve-reference", _cmd_solve_reference, "solve the full axisymmetric model")
    add("reconstruct", _cmd_reconstruct, "assemble the composite approximation")
    add("sweep", _cmd_sweep, "run the epsilon ladder and fit convergence rates")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 1
    except ValueError as exc:
        print("inadmissible problem: %s" % exc, file=sys.stderr)
        return 1
    except RuntimeError as exc:
        print("solver failure: %s" % exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
