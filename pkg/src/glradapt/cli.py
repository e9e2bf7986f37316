"""Command-line front end.

Subcommands: design, calibrate, oc, compare, diagnose, conduct, serve.
Exit codes: 0 ok, 1 schema violation, 2 infeasible design, 3 numeric
failure; machine-readable error JSON goes to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import re
import sys

from . import comparators as comp
from . import serialize
from .calibration import (
    calibrate_binomial_exact,
    calibrate_four_stage,
    calibrate_monte_carlo,
    calibrate_three_stage,
)
from .design import DesignSpec, TrialState, step
from .errors import GlrAdaptError, InfeasibilityError, NumericError, SchemaError
from .evaluation import OCPoint, OperatingChars, efficiency_diagnostic, exact_oc_binomial, simulate_oc
from .models import NormalKnownVar, StageStat

_EXIT_CODES = {SchemaError: 1, InfeasibilityError: 2, NumericError: 3}


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; route them through the schema path
    def error(self, message):
        raise SchemaError(message)


# ------------------------------------------------------------- grid parsing

_NICE_MANTISSAS = (1.0, 2.0, 2.5, 5.0)
_MAX_GRID_POINTS = 25


def _default_step(span: float) -> float:
    # smallest nice step keeping the axis at <= 25 points
    e = int(math.floor(math.log10(span / _MAX_GRID_POINTS))) - 1
    while True:
        for mant in _NICE_MANTISSAS:
            stp = mant * 10.0 ** e
            if math.floor(span / stp + 1e-9) + 1 <= _MAX_GRID_POINTS:
                return stp
        e += 1


def _parse_axis(expr: str) -> tuple[str, list[float]]:
    if "=" not in expr:
        raise SchemaError(f"grid axis {expr!r} must look like name=start:stop[:step] "
                          "or name=v1,v2,...", field="grid")
    name, _, body = expr.partition("=")
    name = name.strip()
    if not name:
        raise SchemaError(f"grid axis {expr!r} is missing a name", field="grid")
    try:
        if ":" in body:
            parts = [float(p) for p in body.split(":")]
            if len(parts) not in (2, 3):
                raise ValueError("need start:stop or start:stop:step")
            start, stop = parts[0], parts[1]
            if stop < start:
                raise ValueError("stop must not precede start")
            stp = parts[2] if len(parts) == 3 else _default_step(max(stop - start, 1e-12))
            if stp <= 0:
                raise ValueError("step must be positive")
            vals, v, i = [], start, 0
            while v <= stop + 1e-9:
                vals.append(round(v, 10))
                i += 1
                v = start + i * stp
        else:
            vals = [float(p) for p in body.split(",") if p.strip() != ""]
            if not vals:
                raise ValueError("empty value list")
    except ValueError as e:
        raise SchemaError(f"grid axis {expr!r}: {e}", field="grid") from e
    return name, vals


def parse_grid(exprs: list[str]) -> list[dict]:
    """``name=start:stop[:step]`` or ``name=v1,v2,...``; axes cross-multiply."""
    axes = [_parse_axis(e) for e in exprs]
    points = [dict()]
    for name, vals in axes:
        if any(name in pt for pt in points):
            raise SchemaError(f"grid axis {name!r} given twice", field="grid")
        points = [{**pt, name: v} for pt in points for v in vals]
    return points


def _grid_entries(points: list[dict]) -> list:
    # single-axis effect grids pass through as bare values so designs can
    # anchor them by family; multi-key entries stay dicts
    out = []
    for pt in points:
        if len(pt) == 1:
            k, v = next(iter(pt.items()))
            out.append(v if k in ("p", "theta", "u") else dict(pt))
        else:
            out.append(dict(pt))
    return out


# ------------------------------------------------------------ IO helpers


def _load(path: str):
    try:
        return serialize.load_file(path)
    except OSError as e:
        raise SchemaError(f"cannot read spec file {path!r}: {e}") from e


def _write_out(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)


def _emit_json(doc: dict, args) -> None:
    _write_out(json.dumps(doc, indent=2), args.out)


def calibrate_design(spec: DesignSpec):
    kind = spec.calibration.kind
    if kind == "binomial_exact":
        return calibrate_binomial_exact(spec)
    if kind == "monte_carlo":
        return calibrate_monte_carlo(spec)
    if spec.four_stage:
        return calibrate_four_stage(spec)
    return calibrate_three_stage(spec)


# ------------------------------------------------------------ subcommands


def _preview_stat(spec: DesignSpec, u_hat: float) -> StageStat:
    m, fam = spec.m, spec.model.family
    if fam in ("normal_known_var", "bernoulli"):
        return StageStat(n=m, s=(m * u_hat,))
    if fam == "two_arm_bernoulli":
        q0 = spec.model.q0
        return StageStat(n=m, s=(m * min(max(q0 + u_hat, 1e-9), 1 - 1e-9), m * q0))
    if fam == "two_sample_normal":
        return StageStat(n=m, s=(m * u_hat, 0.0))
    sig = spec.model.sigma_ref
    return StageStat(n=m, s=(m * u_hat, 0.0), ss=(m * (sig * sig + u_hat * u_hat), m * sig * sig))


def cmd_design(args) -> int:
    spec = _load(args.spec)
    if not isinstance(spec, DesignSpec):
        raise SchemaError("'design' needs a design document, not a comparator")
    u1 = spec.resolved_u1()
    implied = {"u1": u1, "u1_source": "explicit" if spec.u1 is not None else "implied"}
    if spec.four_stage:
        implied["u2"] = spec.resolved_u2()
        implied["u2_source"] = "explicit" if spec.u2 is not None else "implied"
    preview = []
    if spec.model.family == "bernoulli":
        for s in range(spec.m + 1):
            stat = StageStat(n=spec.m, s=(float(s),))
            preview.append({"s": s, "u_hat": s / spec.m,
                            "n2": spec.next_stage_size(1, stat)})
    else:
        lo, hi = spec.u0, spec.u0 + 1.5 * (u1 - spec.u0)
        for i in range(9):
            u_hat = lo + (hi - lo) * i / 8.0
            stat = _preview_stat(spec, u_hat)
            preview.append({"u_hat": round(u_hat, 10),
                            "n2": spec.next_stage_size(1, stat)})
    _emit_json({
        "schema_version": serialize.SCHEMA_VERSION,
        "design": spec.to_dict(),
        "four_stage": spec.four_stage,
        "max_stages": spec.max_stages(),
        "implied": implied,
        "stage_size_preview": preview,
    }, args)
    return 0


def cmd_calibrate(args) -> int:
    spec = _load(args.spec)
    if not isinstance(spec, DesignSpec):
        raise SchemaError("'calibrate' needs a design document")
    if args.reps is not None or args.seed is not None:
        cal = spec.calibration
        cal = dataclasses.replace(cal,
                                  reps=args.reps if args.reps is not None else cal.reps,
                                  seed=args.seed if args.seed is not None else cal.seed)
        spec = dataclasses.replace(spec, calibration=cal)
    report = calibrate_design(spec)
    _emit_json({"schema_version": serialize.SCHEMA_VERSION, **report.to_dict()}, args)
    return 0


def _cond_power3_ready(c: comp.CondPower3) -> comp.CondPower3:
    if c.thresholds is not None:
        return c
    companion = DesignSpec(model=NormalKnownVar(c.sigma), m=c.m, M=c.M, alpha=c.alpha,
                           alpha_tilde=c.alpha_tilde, u0=c.theta0, u1=c.theta1)
    return dataclasses.replace(c, thresholds=calibrate_three_stage(companion).thresholds)


def _evaluate(obj, grid_points, args):
    """One design/comparator over the grid -> (thresholds|None, OperatingChars)."""
    entries = _grid_entries(grid_points)
    if isinstance(obj, DesignSpec):
        report = calibrate_design(obj)
        if args.exact:
            oc = exact_oc_binomial(obj, report.thresholds, entries)
        else:
            oc = simulate_oc(obj, report.thresholds, entries, args.reps or 100_000,
                             args.seed or 0, delta=args.delta)
        return report.thresholds, oc
    if args.exact:
        if isinstance(obj, comp.Simon2):
            pts = []
            for e in entries:
                p = float(e["p"]) if isinstance(e, dict) else float(e)
                power, ess, est = comp.simon_oc(obj, p)
                pts.append(OCPoint({"p": p}, power, ess, est))
            return None, OperatingChars(pts, design_info=obj.to_dict())
        raise SchemaError(f"--exact not available for {type(obj).__name__}; drop --exact")
    if isinstance(obj, comp.CondPower3):
        obj = _cond_power3_ready(obj)
    oc = simulate_oc(obj, None, entries, args.reps or 100_000, args.seed or 0,
                     delta=args.delta)
    return getattr(obj, "thresholds", None), oc


def cmd_oc(args) -> int:
    if not args.grid:
        raise SchemaError("'oc' needs at least one --grid axis", field="grid")
    obj = _load(args.spec)
    _, oc = _evaluate(obj, parse_grid(args.grid), args)
    if args.format == "csv":
        _write_out(oc.to_csv(), args.out)
    else:
        _write_out(oc.to_json(), args.out)
    return 0


def _label(path: str, used: set) -> str:
    base = re.sub(r"\.json$", "", path.rsplit("/", 1)[-1])
    label, k = base, 1
    while label in used:
        k += 1
        label = f"{base}_{k}"
    used.add(label)
    return label


def cmd_compare(args) -> int:
    if not args.grid:
        raise SchemaError("'compare' needs at least one --grid axis", field="grid")
    if len(args.spec) < 2:
        raise SchemaError("'compare' needs two or more --spec files")
    grid_points = parse_grid(args.grid)
    used: set = set()
    columns = []
    for path in args.spec:
        obj = _load(path)
        thresholds, oc = _evaluate(obj, grid_points, args)
        columns.append({
            "label": _label(path, used),
            "spec": serialize.document_for(obj),
            "thresholds": thresholds.to_dict() if thresholds is not None else None,
            "points": [p.to_dict() for p in oc.points],
        })
    if args.format == "csv":
        keys = list(grid_points[0])
        lines = [",".join(keys + [f"{c['label']}_{f}" for c in columns
                                  for f in ("power", "ess", "stages", "avss")])]
        for i, pt in enumerate(grid_points):
            cells = [repr(pt[k]) for k in keys]
            for c in columns:
                row = c["points"][i]
                for f in ("power", "ess", "e_stages", "avss"):
                    v = row.get(f)
                    cells.append("" if v is None else repr(float(v)))
            lines.append(",".join(cells))
        _write_out("\n".join(lines) + "\n", args.out)
    else:
        _emit_json({"schema_version": serialize.SCHEMA_VERSION,
                    "grid": grid_points, "designs": columns}, args)
    return 0


def cmd_diagnose(args) -> int:
    obj = _load(args.spec)
    if not isinstance(obj, (DesignSpec, comp.CondPower3)):
        raise SchemaError("'diagnose' needs a design or a cond_power3 comparator")
    try:
        alpha_seq = tuple(float(a) for a in args.alpha_seq.split(","))
    except ValueError as e:
        raise SchemaError(f"bad --alpha-seq: {e}", field="alpha_seq") from e
    rows = efficiency_diagnostic(obj, theta=args.theta, alpha_sequence=alpha_seq,
                                 reps=args.reps or 50_000, seed=args.seed or 0)
    _emit_json({"schema_version": serialize.SCHEMA_VERSION,
                "theta": args.theta, "alpha_sequence": list(alpha_seq),
                "points": [r.to_dict() for r in rows]}, args)
    return 0


# ------------------------------------------------------------- conduct

_STAGE_PREFIX = re.compile(r"^\s*stage\s+\d+\s*:\s*", re.IGNORECASE)
_NUMBER = re.compile(r"-?\d+(?:\.\d+)?(?:[eE]-?\d+)?")


def _parse_stage_line(line: str, expected_n: int) -> StageStat:
    line = line.strip()
    if line.startswith("{"):
        try:
            return StageStat.from_dict(json.loads(line))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise ValueError(f"bad stage JSON: {e}") from e
    body = _STAGE_PREFIX.sub("", line)
    nums = [float(t) for t in _NUMBER.findall(body)]
    if len(nums) >= 2 and abs(nums[-1] - expected_n) < 1e-9:
        nums = nums[:-1]  # trailing "/ n" confirmation
    if len(nums) == 1:
        return StageStat(n=expected_n, s=(nums[0],))
    if len(nums) == 2:
        return StageStat(n=expected_n, s=(nums[0], nums[1]))
    if len(nums) == 4:
        return StageStat(n=expected_n, s=(nums[0], nums[1]), ss=(nums[2], nums[3]))
    raise ValueError(f"cannot read a stage statistic from {line!r}")


def _render_decision(record) -> str:
    d = record.decision
    if not d.terminal:
        return f"Continue, n{record.stage + 1} = {record.next_n}"
    rule = {
        "reject_early": "Reject H0 (early rejection rule)",
        "accept_futility": "Accept H0 (futility rule)",
        "reject_boundary": "Reject H0 (boundary rule)",
        "accept_boundary": "Accept H0 (boundary rule)",
    }
    return rule[d.value]


def cmd_conduct(args) -> int:
    spec = _load(args.spec)
    if not isinstance(spec, DesignSpec):
        raise SchemaError("'conduct' needs a design document")
    report = calibrate_design(spec)
    th = report.thresholds
    print(f"thresholds: b={th.b:.4f} b_tilde={th.b_tilde:.4f} c={th.c:.4f}")
    state = TrialState()

    if args.session is not None:
        try:
            with open(args.session, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise SchemaError(f"cannot read session file: {e}") from e
        stats = doc["stages"] if isinstance(doc, dict) else doc
        for item in stats:
            try:
                rec = step(spec, th, state, StageStat.from_dict(item))
            except (KeyError, TypeError, ValueError) as e:
                raise SchemaError(f"stage {state.stage}: {e}") from e
            print(f"stage {rec.stage}: {_render_decision(rec)}")
        print(f"status: {state.status}")
        return 0

    while state.status == "open":
        expected = state.planned_n if state.planned_n is not None else spec.m
        print(f"stage {state.stage} needs cumulative n = {expected}")
        sys.stdout.flush()
        line = sys.stdin.readline()
        if not line:
            print("input closed; trial left open")
            return 0
        if not line.strip():
            continue
        try:
            stat = _parse_stage_line(line, expected)
            rec = step(spec, th, state, stat)
        except ValueError as e:
            print(f"error: {e}")
            continue
        print(_render_decision(rec))
    print(f"status: {state.status}")
    return 0


def cmd_serve(args) -> int:
    try:
        import uvicorn
    except ImportError as e:  # pragma: no cover - environment guard
        raise SchemaError(f"'serve' needs uvicorn installed: {e}") from e
    from .service import create_app

    host, _, port = args.listen.rpartition(":")
    if not host or not port.isdigit():
        raise SchemaError(f"--listen must look like host:port, got {args.listen!r}",
                          field="listen")
    uvicorn.run(create_app(), host=host, port=int(port), log_level="warning")
    return 0


# ------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="glradapt", description=__doc__)
    sub = p.add_subparsers(dest="subcommand", required=True)

    def common(sp, spec_multi=False):
        if spec_multi:
            sp.add_argument("--spec", action="append", required=True,
                            help="design/comparator JSON document (repeatable)")
        else:
            sp.add_argument("--spec", required=True, help="design/comparator JSON document")
        sp.add_argument("--out", default=None, help="output path (default stdout)")
        sp.add_argument("--format", choices=("json", "csv"), default="json")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--reps", type=int, default=None)

    sp = sub.add_parser("design", help="implied alternatives and stage-size rule preview")
    common(sp)
    sp.set_defaults(fn=cmd_design)

    sp = sub.add_parser("calibrate", help="solve the threshold equations")
    common(sp)
    sp.set_defaults(fn=cmd_calibrate)

    sp = sub.add_parser("oc", help="operating characteristics over a grid")
    common(sp)
    sp.add_argument("--exact", action="store_true", help="exact binomial evaluation")
    sp.add_argument("--grid", action="append", default=[],
                    help="axis: name=start:stop[:step] or name=v1,v2,...")
    sp.add_argument("--delta", type=float, default=None,
                    help="pair alternative rows with matched nulls for AvSS")
    sp.set_defaults(fn=cmd_oc)

    sp = sub.add_parser("compare", help="several designs over one grid, merged table")
    common(sp, spec_multi=True)
    sp.add_argument("--exact", action="store_true")
    sp.add_argument("--grid", action="append", default=[])
    sp.add_argument("--delta", type=float, default=None)
    sp.set_defaults(fn=cmd_compare)

    sp = sub.add_parser("diagnose", help="ESS versus first-order bounds along shrinking alpha")
    common(sp)
    sp.add_argument("--theta", type=float, required=True)
    sp.add_argument("--alpha-seq", default="0.05,0.01,0.001")
    sp.set_defaults(fn=cmd_diagnose)

    sp = sub.add_parser("conduct", help="step a trial from stdin or a session file")
    common(sp)
    sp.add_argument("--session", default=None, help="JSON array of stage statistics")
    sp.set_defaults(fn=cmd_conduct)

    sp = sub.add_parser("serve", help="start the trial-conductor HTTP service")
    sp.add_argument("--listen", default="127.0.0.1:8000")
    sp.set_defaults(fn=cmd_serve)

    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except GlrAdaptError as e:
        doc = {"code": e.code, "message": str(e)}
        field = getattr(e, "field", None)
        if field is not None:
            doc["field"] = field
        sys.stderr.write(json.dumps(doc) + "\n")
        for cls in (SchemaError, InfeasibilityError, NumericError):
            if isinstance(e, cls):
                return _EXIT_CODES[cls]
        return 3


def main() -> None:  # console_scripts hook
    raise SystemExit(run())


if __name__ == "__main__":
    main()
