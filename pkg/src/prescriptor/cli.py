"""Command-line entry point.

Every subcommand prints a human-readable report. With ``--out DIR`` the
report, any CSV table and a ``manifest.json`` (inputs with sha256, effective
options, seed, version, outputs with sha256) are written to ``DIR``.

Exit codes: 0 success, 1 domain error, 2 usage error, 3 protocol violation.
Options may also come from ``--config FILE.json``; flags on the command
line win over the file.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path
from typing import Callable, Optional

from . import __version__
from . import budget as bud
from . import geometry as geo
from . import lab
from . import mds
from . import microstructure as ms
from . import protocol as proto
from .channels import CHANNELS, check_closure, closure_chain, resolve_channels
from .errors import PrescriptorError, ProtocolViolation
from .units import format_dim, parse_amount

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE, EXIT_PROTOCOL = 0, 1, 2, 3


class Output:
    """Collects report lines, CSV tables and extra files for one run."""

    def __init__(self):
        self.lines: list[str] = []
        self.tables: dict[str, str] = {}
        self.files: dict[str, str] = {}
        self.inputs: list[str] = []
        self.exit_code = EXIT_OK

    def add(self, *lines: str):
        self.lines.extend(lines)


def _floats(text: str) -> list[float]:
    return [float(x) for x in str(text).split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in str(text).split(",") if x.strip()]


# ---------------------------------------------------------------------------
# handlers; each takes the effective options and an Output


def _stats_mu2(o, out: Output):
    out.inputs.append(o["curvature"])
    trace = ms.read_curvature_csv(o["curvature"], o["L"])
    est = ms.mu2_bootstrap(trace, o["resamples"], o["seed"])
    out.add(f"sites = {trace.s.size}, L = {trace.L!r} m",
            f"mu2 = {float(est.value)!r} m^-2",
            f"bootstrap sigma = {est.sigma!r} m^-2 ({est.rel_sigma:.2%}; {o['resamples']} resamples, seed {o['seed']})")
    moments = ms.curvature_moments(trace)
    out.tables["moments.csv"] = "order,value,unit\n,,\n" + "".join(
        f"{n},{float(m.value)!r},{format_dim(m.dim)}\n" for n, m in moments.items())


def _stats_rms(o, out: Output):
    out.inputs.append(o["profile"])
    r = ms.rms_roughness(ms.read_profile_csv(o["profile"]))
    out.add(f"R_RMS = {float(r.value)!r} m")


def _stats_discriminate(o, out: Output):
    out.inputs.append(o["series"])
    rep = ms.discriminate(ms.read_split_series_csv(o["series"]), o["confidence"], o["resamples"], o["seed"])
    out.add(*rep.lines())
    out.tables["discriminate.csv"] = (
        "r2_mu2,r2_rms,delta_r2,ci_low,ci_high,confidence,verdict\n1,1,1,1,1,1,\n"
        f"{rep.r2_mu2!r},{rep.r2_rms!r},{rep.delta_r2!r},{rep.ci[0]!r},{rep.ci[1]!r},{rep.confidence!r},{rep.verdict}\n")


def _geom_gphi(o, out: Output):
    out.inputs += [o["loop"], o["surface"]]
    g = geo.g_phi(geo.read_loop_csv(o["loop"]), geo.read_surface_csv(o["surface"]), o["clearance"])
    out.add(f"G_Phi = {float(g.value)!r} ± {g.sigma:.3g} [{format_dim(g.dim)}]")


def _geom_yseam(o, out: Output):
    out.inputs.append(o["seam"])
    if o["sidecar"]:
        out.inputs.append(o["sidecar"])
    y = geo.y_seam(geo.read_seam_csv(o["seam"], o["omega"], o["energy"], o["sidecar"]))
    out.add(f"Y_seam = {float(y.value)!r} [{format_dim(y.dim)}]")


def _geom_qinv(o, out: Output):
    out.inputs.append(o["field"])
    grid = geo.read_field_grid_csv(o["field"])
    qi = geo.q_inv_dielectric(grid)
    out.add(f"Q^-1 = {float(qi.value)!r}")
    rows = [(r, float(geo.participation(grid, r).value)) for r in grid.regions]
    out.add(*(f"  p[{r}] = {p!r}" for r, p in rows))
    out.tables["participation.csv"] = "region,participation\n,1\n" + "".join(f"{r},{p!r}\n" for r, p in rows)


def _geom_participation(o, out: Output):
    out.inputs.append(o["field"])
    p = geo.participation(geo.read_field_grid_csv(o["field"]), o["region"])
    out.add(f"p[{o['region']}] = {float(p.value)!r}")


def _lab_sweep(o, out: Output):
    shape = tuple(_ints(o["shape"]))
    spacing = tuple(_floats(o["spacing"])) if o["spacing"] else (1.0,) * len(shape)
    if o["kernel"] == "uniform":
        kernel = lab.KernelField.uniform(shape, spacing)
    else:
        kernel = lab.KernelField.edge_exponential(shape, spacing, o["decay"])
    rows = lab.dilution_sweep(_floats(o["densities"]), _floats(o["correlations"]), kernel, _ints(o["seeds"]),
                              estimated_rho=o["estimated_rho"], workers=o["workers"])
    out.add(f"kernel {kernel.family} shape {shape}, <K> = {kernel.mean():.6g}, K_max = {kernel.K.max():.6g}")
    for r in rows:
        out.add(f"  density {r.density:<10g} corr {r.correlation:<5g} seed {r.seed:<4d} "
                f"N = {r.n_defects:<7d} rel_error = {r.rel_error:.4g}")
    out.tables["sweep.csv"] = lab.sweep_csv(rows)


def _protocol_predict(o, out: Output):
    out.inputs.append(o["design"])
    design = proto.load_design(o["design"])
    sealed = proto.predict(design, o["committed_at"])
    o["committed_at"] = sealed.committed_at
    for k in proto.CELLS:
        p = sealed.predictions[k]
        out.add(f"O_pred[{k}] = {float(p.value)!r} ± {p.sigma:.3g} [{format_dim(p.dim)}]")
    out.add(f"sealed at {sealed.committed_at}", f"hash {sealed.seal}")
    text = proto.dump_design(sealed)
    out.files[Path(o["output"] or "sealed.design").name] = text
    if o["output"]:
        Path(o["output"]).write_text(text, encoding="utf-8")


def _protocol_evaluate(o, out: Output):
    out.inputs += [o["design"], o["measurements"]]
    design = proto.load_design(o["design"])
    if design.measurements and not design.sealed:
        raise ProtocolViolation("measurements were entered before predictions were frozen")
    design = proto.attach_measurements(design, proto.read_measurements_csv(o["measurements"]))
    v = proto.verdict(design)
    out.add(*v.lines())
    out.tables["verdict.csv"] = proto.verdict_csv(v)


def _load_budget(o, out: Output) -> bud.BudgetSpec:
    if o["spec"]:
        out.inputs.append(o["spec"])
    if not o["spec"] and not o["preset"]:
        raise ValueError("give a budget file or --preset (allocations are never implied)")
    return bud.load_budget(o["spec"], o["t1"], o["preset"])


def _budget_plan(o, out: Output):
    res = bud.plan(_load_budget(o, out))
    out.add(*res.lines())
    out.tables["budget.csv"] = bud.budget_csv(res)


def _budget_limits(o, out: Output):
    res = bud.plan(_load_budget(o, out))
    for cid, lim in res.rho_limits.items():
        out.add(f"{cid:11s} " + (f"rho <= {float(lim.value)!r} ± {lim.sigma:.3g} {format_dim(lim.dim)}"
                                 if lim is not None else f"n/a ({res.notes.get(cid, '')})"))
    out.tables["budget.csv"] = bud.budget_csv(res)


def _budget_feasibility(o, out: Output):
    res = bud.plan(_load_budget(o, out))
    out.inputs.append(o["measured"])
    rep = bud.feasibility(res, bud.read_measured_csv(o["measured"]), o["confidence"])
    out.add(*rep.lines())
    rows = "".join(f"{r.channel},{r.status},{'' if r.utilization is None else repr(r.utilization)}\n"
                   for r in rep.rows)
    out.tables["feasibility.csv"] = "channel,status,utilization\n,,1\n" + rows


def _budget_sensitivity(o, out: Output):
    out.inputs.append(o["sweeps"])
    results = {k: bud.sensitivity(s) for k, s in bud.read_sweeps_csv(o["sweeps"]).items()}
    for (cid, par), r in results.items():
        m = r.max_abs_slope
        out.add(f"{cid:11s} {par:20s} max |dG/dp| = {abs(float(m.value)):.6g} [{format_dim(m.dim)}] "
                f"at p = {r.argmax:g}")
    out.tables["sensitivity.csv"] = bud.sensitivity_csv(results)


def _budget_conflicts(o, out: Output):
    out.inputs.append(o["sweeps"])
    cm = bud.conflict_matrix(bud.read_sweeps_csv(o["sweeps"]), o["dead_band"])
    out.add(*cm.lines())
    out.tables["conflicts.csv"] = "parameter," + ",".join(cm.channels) + ",net_effect\n" + \
        "," * (len(cm.channels) + 1) + "\n" + "".join(
            f"{p}," + ",".join(cm.signs.get((p, c), "") for c in cm.channels) + f",{cm.labels[p]}\n"
            for p in cm.parameters)


def _read_text(path: str) -> str:
    return Path(path).read_text(encoding="utf-8")


def _mds_parse(o, out: Output):
    out.inputs.append(o["file"])
    doc, errors = mds.parse_lenient(_read_text(o["file"]))
    for e in errors:
        out.add(f"{o['file']}:{e}")
    out.add(f"records: rho {len(doc.rho)}, g {len(doc.g)}, o {len(doc.o)}; {len(errors)} error(s)")
    if errors:
        out.exit_code = EXIT_DOMAIN


def _mds_validate(o, out: Output):
    out.inputs.append(o["file"])
    doc, errors = mds.parse_lenient(_read_text(o["file"]))
    for e in errors:
        out.add(f"{o['file']}:{e}")
    rep = mds.validate(doc, o["strictness"])
    out.add(*rep.lines())
    if errors or not rep.passed:
        out.exit_code = EXIT_DOMAIN


def _mds_fmt(o, out: Output):
    out.inputs.append(o["file"])
    text = _read_text(o["file"])
    canon = mds.serialize(mds.parse(text))
    if o["check"]:
        same = canon == text
        out.add("canonical" if same else f"{o['file']}: not in canonical form")
        out.exit_code = EXIT_OK if same else EXIT_DOMAIN
        return
    if o["in_place"]:
        Path(o["file"]).write_text(canon, encoding="utf-8")
        out.add(f"formatted {o['file']}")
    else:
        out.add(canon.rstrip("\n"))
    out.files[Path(o["file"]).name] = canon


def _units_check(o, out: Output):
    ids = resolve_channels(o["channel"]) if o["channel"] else tuple(CHANNELS)
    ok = True
    for cid in ids:
        out.add(*closure_chain(cid))
        ok &= check_closure(cid).passed
    out.tables["closure.csv"] = "channel,residual,passed\n,,\n" + "".join(
        f"{cid},{format_dim(check_closure(cid).residual)},{str(check_closure(cid).passed).lower()}\n" for cid in ids)
    if not ok:
        out.exit_code = EXIT_DOMAIN


# ---------------------------------------------------------------------------
# parser


# (group, command) -> (handler, defaults for options left unset on the command line)
COMMANDS: dict[tuple, tuple[Callable, dict]] = {
    ("stats", "mu2"): (_stats_mu2, {"L": None, "resamples": 1000, "seed": 0}),
    ("stats", "rms"): (_stats_rms, {}),
    ("stats", "discriminate"): (_stats_discriminate, {"confidence": 0.95, "resamples": 2000, "seed": 0}),
    ("geom", "gphi"): (_geom_gphi, {"clearance": geo.DEFAULT_CLEARANCE}),
    ("geom", "yseam"): (_geom_yseam, {"omega": None, "energy": None, "sidecar": None}),
    ("geom", "qinv"): (_geom_qinv, {}),
    ("geom", "participation"): (_geom_participation, {}),
    ("lab", "sweep"): (_lab_sweep, {"kernel": "edge-exponential", "shape": "32,32", "spacing": None,
                                    "decay": 2.0, "densities": "0.05,0.2,1,5",
                                    "correlations": "0", "seeds": "0,1,2,3,4", "estimated_rho": False,
                                    "workers": None}),
    ("protocol", "predict"): (_protocol_predict, {"committed_at": None, "output": None}),
    ("protocol", "evaluate"): (_protocol_evaluate, {}),
    ("budget", "plan"): (_budget_plan, {"spec": None, "preset": None, "t1": None}),
    ("budget", "limits"): (_budget_limits, {"spec": None, "preset": None, "t1": None}),
    ("budget", "feasibility"): (_budget_feasibility, {"spec": None, "preset": None, "t1": None,
                                                      "confidence": 0.95}),
    ("budget", "sensitivity"): (_budget_sensitivity, {}),
    ("budget", "conflicts"): (_budget_conflicts, {"dead_band": bud.DEAD_BAND}),
    ("mds", "parse"): (_mds_parse, {}),
    ("mds", "validate"): (_mds_validate, {"strictness": "quantitative"}),
    ("mds", "fmt"): (_mds_fmt, {"check": False, "in_place": False}),
    ("units", "check"): (_units_check, {"channel": None}),
}


def _common(p: argparse.ArgumentParser):
    p.add_argument("--out", metavar="DIR", help="write report, CSV and manifest.json to DIR")
    p.add_argument("--config", metavar="FILE", help="JSON file of option defaults (flags win)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prescriptor", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    groups = parser.add_subparsers(dest="group", metavar="GROUP", required=True)
    subs = {}

    def cmd(group: str, name: str, help_: str) -> argparse.ArgumentParser:
        if group not in subs:
            gp = groups.add_parser(group, help=f"{group} commands")
            subs[group] = gp.add_subparsers(dest="command", metavar="COMMAND", required=True)
        p = subs[group].add_parser(name, help=help_)
        _common(p)
        return p

    p = cmd("stats", "mu2", "second curvature moment with bootstrap sigma")
    p.add_argument("curvature", help="CSV s_m,kappa_per_m")
    p.add_argument("--L", type=float, help="perimeter length in m (default: last s)")
    p.add_argument("--resamples", type=int)
    p.add_argument("--seed", type=int)
    p = cmd("stats", "rms", "RMS roughness of a height profile")
    p.add_argument("profile", help="CSV s_m,h_m")
    p = cmd("stats", "discriminate", "R^2 comparison of mu2 against R_RMS")
    p.add_argument("series", help="CSV mu2_per_m2,mu2_sigma,rrms_m,rrms_sigma,T1_s,T1_sigma")
    p.add_argument("--confidence", type=float)
    p.add_argument("--resamples", type=int)
    p.add_argument("--seed", type=int)

    p = cmd("geom", "gphi", "loop-field surface integral")
    p.add_argument("loop", help="CSV x_m,y_m,z_m")
    p.add_argument("surface", help="CSV x_m,y_m,z_m,area_m2")
    p.add_argument("--clearance", type=float)
    p = cmd("geom", "yseam", "seam current participation")
    p.add_argument("seam", help="CSV s_m,Js_A_per_m")
    p.add_argument("--omega", type=float, help="mode angular frequency, rad/s")
    p.add_argument("--energy", type=float, help="stored energy U, J")
    p.add_argument("--sidecar", help="key=value file with omega_rad_s and U_J")
    p = cmd("geom", "qinv", "dielectric Q^-1 and region participations")
    p.add_argument("field", help="CSV eps_F_per_m,e2_V2_per_m2,tan_delta,vol_m3,region")
    p = cmd("geom", "participation", "participation ratio of one region")
    p.add_argument("field")
    p.add_argument("--region", required=True)

    p = cmd("lab", "sweep", "factorization error over density and clustering")
    p.add_argument("--kernel", choices=["uniform", "edge-exponential"])
    p.add_argument("--shape", help="cells per axis, e.g. 32,32")
    p.add_argument("--spacing", help="cell size per axis (default 1)")
    p.add_argument("--decay", type=float, help="edge-exponential decay length")
    p.add_argument("--densities", help="comma-separated defect densities")
    p.add_argument("--correlations", help="comma-separated clustering levels in [0, 1]")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--estimated-rho", action="store_true", default=None)
    p.add_argument("--workers", type=int)

    p = cmd("protocol", "predict", "seal the four predictions of a 2x2 design")
    p.add_argument("design")
    p.add_argument("--committed-at", help="timestamp to record (default: now, UTC)")
    p.add_argument("-o", "--output", help="path of the sealed design file")
    p = cmd("protocol", "evaluate", "row/column ratio tests and verdict")
    p.add_argument("design", help="sealed design file")
    p.add_argument("measurements", help="CSV cell,value,sigma,unit")

    for name, help_ in (("plan", "allowance table"), ("limits", "back-calculated rho limits"),
                        ("feasibility", "go/no-go against measured state variables")):
        p = cmd("budget", name, help_)
        p.add_argument("spec", nargs="?", help="budget file")
        p.add_argument("--preset", choices=sorted(bud.PRESETS))
        p.add_argument("--t1", help="target T1, e.g. 1ms")
        if name == "feasibility":
            p.add_argument("--measured", required=True, help="CSV channel,value,sigma,unit")
            p.add_argument("--confidence", type=float)
    p = cmd("budget", "sensitivity", "dG/dp from parameter sweeps")
    p.add_argument("sweeps", help="CSV channel,parameter,p,g,unit")
    p = cmd("budget", "conflicts", "sign matrix of geometric changes")
    p.add_argument("sweeps")
    p.add_argument("--dead-band", type=float)

    p = cmd("mds", "parse", "report syntax errors")
    p.add_argument("file")
    p = cmd("mds", "validate", "grade a dataset")
    p.add_argument("file")
    p.add_argument("--strictness", choices=["trend", "quantitative"])
    p = cmd("mds", "fmt", "print the canonical form")
    p.add_argument("file")
    p.add_argument("--check", action="store_true", default=None)
    p.add_argument("--in-place", action="store_true", default=None)

    p = cmd("units", "check", "dimensional closure per channel")
    p.add_argument("--channel", help="channel id or alias (default: all)")
    return parser


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _effective(args: argparse.Namespace, defaults: dict) -> dict:
    opts = {**{k: None for k in vars(args)}, **defaults}
    if args.config:
        cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(cfg, dict):
            raise ValueError("config file must hold a JSON object")
        opts.update({k.replace("-", "_"): v for k, v in cfg.items()})
    opts.update({k: v for k, v in vars(args).items() if v is not None})
    return opts


def _write_out(outdir: Path, key: tuple, opts: dict, out: Output, report: str):
    outdir.mkdir(parents=True, exist_ok=True)
    files = {"report.txt": report, **out.tables, **out.files}
    for name, text in files.items():
        (outdir / name).write_text(text, encoding="utf-8")
    config = {k: v for k, v in sorted(opts.items()) if k not in ("group", "command", "out", "config")}
    manifest = {
        "subcommand": " ".join(key),
        "inputs": {p: _sha256(Path(p)) for p in out.inputs},
        "config_file": opts.get("config"),
        "options": config,
        "seed": opts.get("seed"),
        "seeds": opts.get("seeds"),
        "version": __version__,
        "outputs": {n: hashlib.sha256(t.encode()).hexdigest() for n, t in sorted(files.items())},
        "exit_code": out.exit_code,
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    key = (args.group, args.command)
    handler, defaults = COMMANDS[key]
    out = Output()
    try:
        opts = _effective(args, defaults)
        handler(opts, out)
    except ProtocolViolation as exc:
        print(f"protocol violation: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (PrescriptorError, ValueError, KeyError, ZeroDivisionError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_DOMAIN
    report = "\n".join(out.lines) + "\n"
    sys.stdout.write(report)
    if opts.get("out"):
        _write_out(Path(opts["out"]), key, opts, out, report)
    return out.exit_code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
