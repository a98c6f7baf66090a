"""Command-line front end.

Every artifact carries the invocation, the run configuration, the model
hash and the library version.  CSV files have these as ``# `` header lines;
JSON files hold them under ``"provenance"``.  Exit codes: 0 success,
1 computational failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import shlex
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import DEFAULT, load_overrides
from .conicity import is_conical
from .errors import ConictrlError, InvalidInputError, InvalidModelError
from .models import BUILTIN, get_model, model_hash, save_model
from .nonmixing import flow_to_intersection, gap_rate_on_grid
from .paths import Intersection, SynthesisOptions, load_path, save_path, synthesize_path
from .propagation import QuantumState, default_eps_grid, epsilon_sweep, propagate

log = logging.getLogger(__name__)


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    model: str | None = None
    params: dict = field(default_factory=dict)
    out: str | None = None
    seed: int = 0
    tol_overrides: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# --- parsing helpers ---------------------------------------------------------


def _floats(text: str, n: int | None = None, what: str = "value") -> list:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"{what}: expected comma-separated numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise UsageError(f"{what}: expected {n} numbers, got {len(vals)}")
    return vals


def _point(text):
    return np.array(_floats(text, 3, "point"))


def _weights(text: str) -> np.ndarray:
    p = np.array(_floats(text, what="--p"))
    if len(p) < 2 or np.any(p < 0) or not np.any(p > 0):
        raise UsageError("--p needs at least two non-negative weights, not all zero")
    return p / np.linalg.norm(p)


def _grid(text: str) -> np.ndarray:
    """``lo,hi,n`` for a cube, or nine numbers for three axes."""
    vals = _floats(text, what="--grid")
    if len(vals) == 3:
        vals = vals * 3
    if len(vals) != 9:
        raise UsageError("--grid takes lo,hi,n or lo1,hi1,n1,lo2,hi2,n2,lo3,hi3,n3")
    axes = []
    for lo, hi, n in zip(vals[0::3], vals[1::3], vals[2::3]):
        if n < 1 or n != int(n) or hi < lo:
            raise UsageError(f"invalid grid axis {lo},{hi},{n}")
        axes.append(np.linspace(lo, hi, int(n)))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _chain(text: str | None, default_level: int) -> list:
    """``x,y,z[:level];x,y,z[:level]...``; levels default to consecutive."""
    if not text:
        return []
    out = []
    for k, item in enumerate(text.split(";")):
        pt, _, lev = item.partition(":")
        out.append(Intersection(tuple(_point(pt)), int(lev) if lev else default_level + k))
    return out


# --- output ------------------------------------------------------------------


def _provenance(cfg: RunConfig, quad, argv) -> dict:
    return {
        "invocation": "conictrl " + shlex.join(argv),
        "run_config": cfg.to_dict(),
        "model_hash": model_hash(quad) if quad is not None else None,
        "version": __version__,
    }


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_jsonable) + "\n"


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, complex):
        return [x.real, x.imag]
    raise TypeError(f"not serialisable: {type(x)}")


def _csv_text(prov: dict, header, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# invocation: {prov['invocation']}\n")
    buf.write(f"# run_config: {json.dumps(prov['run_config'], sort_keys=True)}\n")
    buf.write(f"# model_hash: {prov['model_hash']}\n")
    buf.write(f"# version: {prov['version']}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) for x in r])
    return buf.getvalue()


def _emit(cfg: RunConfig, prov, summary: dict, table=None, stdout=None):
    """Write ``<out>.json`` (and ``<out>.csv``) or print to stdout."""
    stdout = stdout or sys.stdout
    doc = _dump_json({"provenance": prov, "result": summary})
    csv_text = _csv_text(prov, *table) if table is not None else None
    if cfg.out:
        base = Path(cfg.out)
        base.parent.mkdir(parents=True, exist_ok=True)
        Path(f"{base}.json").write_text(doc)
        if csv_text is not None:
            Path(f"{base}.csv").write_text(csv_text)
    else:
        if csv_text is not None:
            stdout.write(csv_text)
        stdout.write(doc)


# --- commands ----------------------------------------------------------------


def _load(cfg: RunConfig, tol):
    try:
        return get_model(cfg.model, tol)
    except FileNotFoundError as exc:
        raise UsageError(f"model {cfg.model!r} is neither built in nor a readable file") from exc


def cmd_models(args, cfg, tol, argv):
    if args.action == "list":
        for name in sorted(BUILTIN):
            q = BUILTIN[name]()
            print(f"{name}\t{q.dim}")
        return 0
    if not args.name:
        raise UsageError("models emit needs a model name")
    quad = _load(RunConfig("models", args.name), tol)
    if not args.out:
        raise UsageError("models emit needs --out FILE")
    save_model(quad, args.out)
    return 0


def cmd_scan(args, cfg, tol, argv):
    quad = _load(cfg, tol)
    pts = _grid(args.grid)
    j = args.levels
    gap, f = gap_rate_on_grid(quad, pts, j)
    absf = np.where(gap > tol.degeneracy * quad.scale(), np.abs(f), np.nan)
    k = int(np.argmin(gap))
    summary = {"points": len(pts), "min_gap": float(gap[k]), "argmin": pts[k], "level": j}
    table = (["u1", "u2", "u3", f"gap_{j}", "abs_F"], np.column_stack([pts, gap, absf]))
    _emit(cfg, _provenance(cfg, quad, argv), summary, table)
    return 0


def _flow_table(curve):
    return (
        ["t", "u1", "u2", "u3", "gap", "f_over_2i"],
        np.column_stack([curve.times, curve.points, curve.gaps, curve.rates]),
    )


def _flow_common(args, cfg, tol, argv, polish):
    quad = _load(cfg, tol)
    if args.start is not None:
        u0 = _point(args.start)
    else:
        rng = np.random.default_rng(cfg.seed)
        d = rng.normal(size=3)
        u0 = args.radius * d / np.linalg.norm(d)
    curve = flow_to_intersection(quad, u0, args.levels, step=args.step, max_time=args.max_length, polish=polish, tol=tol)
    summary = {
        "start": u0,
        "terminal": curve.terminal,
        "terminal_gap": curve.terminal_gap,
        "iterations": curve.iterations,
        "reached_intersection": curve.reached_intersection,
    }
    return quad, curve, summary


def cmd_flow(args, cfg, tol, argv):
    quad, curve, summary = _flow_common(args, cfg, tol, argv, polish=False)
    _emit(cfg, _provenance(cfg, quad, argv), summary, _flow_table(curve))
    return 0 if curve.reached_intersection else 1


def cmd_locate(args, cfg, tol, argv):
    quad, curve, summary = _flow_common(args, cfg, tol, argv, polish=True)
    if curve.reached_intersection:
        dec = is_conical(quad, curve.terminal, args.levels, tolerances=tol)
        summary["conical"] = dec.conical
        summary["smallest_singular_value"] = dec.smallest_singular_value
        summary["abs_det"] = dec.abs_det
    _emit(cfg, _provenance(cfg, quad, argv), summary, _flow_table(curve))
    return 0 if curve.reached_intersection else 1


def _synth_from_args(args, quad, cfg, tol):
    chain = _chain(args.chain, args.levels)
    if not chain:
        raise UsageError("--chain is required (x,y,z[:level];...)")
    p = _weights(args.p)
    opts = SynthesisOptions(radius=args.radius, theta=args.theta, lead=args.lead, seed=cfg.seed)
    u_f = _point(args.end) if args.end else None
    return synthesize_path(quad, _point(args.start), u_f, chain, p, args.mode, opts, tol), p


def _angles_report(path):
    return [
        {
            "tau": m.tau,
            "level": m.level,
            "point": m.point,
            "inbound": m.inbound,
            "outbound": m.outbound,
            "xi": m.angles.xi,
            "beta": m.angles.beta if m.angles.beta_defined else None,
            "pi1": m.pi1,
        }
        for m in path.marks
    ]


def cmd_synth(args, cfg, tol, argv):
    quad = _load(cfg, tol)
    path, _ = _synth_from_args(args, quad, cfg, tol)
    if not cfg.out:
        raise UsageError("synth needs --out PREFIX (the path is written to PREFIX.path.json)")
    save_path(path, f"{cfg.out}.path.json")
    summary = {"path_file": f"{cfg.out}.path.json", "length": path.total_length, "radius": path.radius, "mode": path.mode}
    if args.report_angles:
        summary["marks"] = _angles_report(path)
    _emit(cfg, _provenance(cfg, quad, argv), summary)
    return 0


def _start_state(quad, path, level):
    return QuantumState.eigenstate(quad, path(0.0), level)


def cmd_propagate(args, cfg, tol, argv):
    quad = _load(cfg, tol)
    path = load_path(args.path)
    first = path.marks[0].level if path.marks else 0
    psi0 = _start_state(quad, path, first if args.start_level is None else args.start_level)
    target = _weights(args.p) if args.p else None
    res = propagate(quad, path, args.eps, psi0, args.steps_per_unit, target=target, tol=tol)
    summary = {"epsilon": res.epsilon, "occupations": res.occupations, "transfer_error": res.transfer_error}
    _emit(cfg, _provenance(cfg, quad, argv), summary)
    return 0


def cmd_sweep(args, cfg, tol, argv):
    quad = _load(cfg, tol)
    p = _weights(args.p)
    if args.path:
        path = load_path(args.path)
    else:
        path, p = _synth_from_args(args, quad, cfg, tol)
    eps = np.array(_floats(args.eps_list, what="--eps-list")) if args.eps_list else default_eps_grid()
    first = path.marks[0].level if path.marks else 0
    psi0 = _start_state(quad, path, first)
    rep = epsilon_sweep(quad, path, psi0, p, eps, steps_per_unit=args.steps_per_unit, workers=args.workers)
    summary = {"slope": rep.slope, "intercept": rep.intercept, "residual": rep.residual, "failures": rep.failures}
    table = (["epsilon", "error"], np.column_stack([rep.epsilons, rep.errors]))
    _emit(cfg, _provenance(cfg, quad, argv), summary, table)
    return 0


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="conictrl", description="Control paths through conical eigenvalue intersections.")
    ap.add_argument("--verbose", "-v", action="store_true")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(p, model=True):
        if model:
            p.add_argument("--model", default="ricci", help="built-in name (pauli, ricci, box) or JSON file")
        p.add_argument("--out", help="output prefix; without it results go to stdout")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--tol-overrides", help="JSON file of tolerance overrides")
        p.add_argument("--levels", type=int, default=0, help="lower level j of the band (j, j+1)")

    m = sub.add_parser("models", help="list or export built-in models")
    m.add_argument("action", choices=["list", "emit"])
    m.add_argument("name", nargs="?")
    m.add_argument("--out")
    m.set_defaults(func=cmd_models)

    s = sub.add_parser("scan", help="gap and |F| on a grid")
    common(s)
    s.add_argument("--grid", required=True, help="lo,hi,n (cube) or nine numbers")
    s.set_defaults(func=cmd_scan)

    for name, func in (("flow", cmd_flow), ("locate", cmd_locate)):
        f = sub.add_parser(name, help="follow the non-mixing flow into an intersection")
        common(f)
        f.add_argument("--start", help="x,y,z; default: random point at --radius from 0")
        f.add_argument("--radius", type=float, default=0.3)
        f.add_argument("--step", type=float, default=1e-3)
        f.add_argument("--max-length", type=float, default=50.0)
        f.set_defaults(func=func)

    def synth_args(p, chain=None):
        p.add_argument("--start", default="0,0,-0.5")
        p.add_argument("--end", help="x,y,z; default: on the last outbound ray")
        p.add_argument("--chain", default=chain, help="x,y,z[:level];... intersections in order")
        p.add_argument("--p", required=True, help="comma-separated target weights (normalised)")
        p.add_argument("--mode", choices=["corner", "nonmixing"], default="corner")
        p.add_argument("--radius", type=float)
        p.add_argument("--theta", type=float)
        p.add_argument("--lead", type=float, default=0.0)

    y = sub.add_parser("synth", help="synthesise a control path")
    common(y)
    synth_args(y)
    y.add_argument("--report-angles", action="store_true")
    y.set_defaults(func=cmd_synth)

    r = sub.add_parser("propagate", help="propagate along a saved path")
    common(r)
    r.add_argument("--path", required=True)
    r.add_argument("--eps", type=float, required=True)
    r.add_argument("--p", help="target weights for the transfer error")
    r.add_argument("--start-level", type=int)
    r.add_argument("--steps-per-unit", type=int, default=4000)
    r.set_defaults(func=cmd_propagate)

    w = sub.add_parser("sweep", help="transfer error against epsilon and fitted slope")
    common(w)
    synth_args(w, chain="0,0,0")
    w.add_argument("--path", help="saved path; otherwise one is synthesised")
    w.add_argument("--eps-list", help="comma-separated epsilons (default 2^-4 .. 2^-10)")
    w.add_argument("--steps-per-unit", type=int, default=4000)
    w.add_argument("--workers", type=int)
    w.set_defaults(func=cmd_sweep)
    return ap


def _config(args) -> RunConfig:
    skip = {"func", "command", "model", "out", "seed", "tol_overrides", "verbose"}
    params = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    return RunConfig(args.command, getattr(args, "model", None), params, args.out, getattr(args, "seed", 0), getattr(args, "tol_overrides", None))


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        cfg = _config(args)
        tol = DEFAULT
        if getattr(args, "tol_overrides", None):
            try:
                tol = load_overrides(args.tol_overrides)
            except (OSError, KeyError, ValueError) as exc:
                raise UsageError(f"bad --tol-overrides: {exc}") from exc
        return args.func(args, cfg, tol, argv)
    except UsageError as exc:
        print(f"conictrl: error: {exc}", file=sys.stderr)
        return 2
    except (InvalidInputError, InvalidModelError) as exc:
        print(f"conictrl: invalid input: {exc}", file=sys.stderr)
        return 2
    except ConictrlError as exc:
        print(f"conictrl: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
