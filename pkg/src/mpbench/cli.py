"""Command-line entry point.

Exit codes: 0 success, 1 validation failure (bad input, failed check,
usage error), 2 I/O error. Machine-readable JSON summaries go to stdout,
or to stderr when stdout carries the primary output (``-o -``).
"""
from __future__ import annotations

import argparse
import hashlib
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from mpbench import kernels
from mpbench.errors import MPBenchError, ValidationError
from mpbench.fusion import (
    FusionConfig,
    TextEmbedding,
    channel_weights_csv,
    forward,
    gates_csv,
    init_params,
)
from mpbench.geo import GeoPoint
from mpbench.gradcheck import MODULES, check_module
from mpbench.grid import GridSpec, ParamVector, china_spec, desk_spec, load_grid4d, write_grid4d
from mpbench.qa import QAPair, QAType, generate_qa, render_nsw
from mpbench.records import (
    align_window,
    corpus_stats,
    parse_warnings,
    read_records,
    sample_normals,
)
from mpbench.scoring import evaluate
from mpbench.synth import load_profiles, synth_fields, synth_warnings

COMMANDS = ("synth", "ingest", "sample-normals", "align", "qagen", "forward",
            "gradcheck", "score", "export-weights")


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- I/O helpers --------------------------------------------------------------

def _read_text(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    return Path(path).read_text(encoding="utf-8")


def _read_lines(path: str) -> list[str]:
    return _read_text(path).splitlines()


def _write_text(path: str, text: str) -> None:
    if path == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_bytes(path: str, blob: bytes) -> None:
    if path == "-":
        raise UsageError("binary output needs a file path, not '-'")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(blob)


def _jsonl(rows) -> str:
    return "".join(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n" for r in rows)


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _emit(summary: dict, primary: str | None) -> None:
    stream = sys.stderr if primary == "-" else sys.stdout
    stream.write(json.dumps(summary, sort_keys=True) + "\n")
    stream.flush()


def _echo_config(args, primary: str | None) -> None:
    """Write ``<primary>.config.json`` with the resolved settings."""
    settings = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    settings["backend"] = kernels.BACKEND
    if primary is None or primary == "-":
        sys.stderr.write("config " + json.dumps(settings, sort_keys=True) + "\n")
        return
    _write_text(primary + ".config.json", _dumps(settings))


def _seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("MPB_SEED")
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"MPB_SEED must be an integer, got {env!r}") from None


def _spec(args) -> GridSpec:
    if getattr(args, "spec", None):
        return GridSpec.from_json(_read_text(args.spec))
    return china_spec() if getattr(args, "scale", "desk") == "china" else desk_spec()


def _points(args) -> list[GeoPoint]:
    pts = []
    for raw in args.point or []:
        parts = [p.strip() for p in raw.split(",")]
        if len(parts) not in (2, 3):
            raise UsageError(f"--point wants 'lat,lon[,name]', got {raw!r}")
        try:
            lat, lon = float(parts[0]), float(parts[1])
        except ValueError:
            raise UsageError(f"--point wants numbers, got {raw!r}") from None
        pts.append(GeoPoint(lat, lon, parts[2] if len(parts) == 3 else None))
    if args.points:
        for d in json.loads(_read_text(args.points)):
            pts.append(GeoPoint(float(d["lat"]), float(d["lon"]), d.get("name")))
    if not pts:
        raise UsageError("give at least one query location via --point or --points")
    return pts


def _regions(path: str) -> list[GeoPoint]:
    doc = json.loads(_read_text(path))
    try:
        return [GeoPoint(float(d["lat"]), float(d["lon"]), d["name"]) for d in doc]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"bad region pool: {exc}") from exc


# -- subcommands --------------------------------------------------------------

def cmd_synth(args) -> int:
    seed = _seed(args)
    args.seed = seed
    spec = _spec(args)
    profiles = load_profiles(_read_text(args.profiles)) if args.profiles else []
    grid = synth_fields(spec, args.hours, seed, profiles, args.base_scale)
    blob = write_grid4d(grid)
    _write_bytes(args.out, blob)
    summary = {"dims": list(grid.dims), "out": args.out, "profiles": len(profiles),
               "sha256": hashlib.sha256(blob).hexdigest()}
    if args.warnings_out:
        recs = synth_warnings(args.n_warnings, seed, days=args.days)
        _write_text(args.warnings_out, _jsonl(r.to_dict() for r in recs))
        summary["warnings"] = len(recs)
    _echo_config(args, args.out)
    _emit(summary, args.out)
    return 0


def cmd_ingest(args) -> int:
    spec = GridSpec.from_json(_read_text(args.spec)) if args.spec else None
    lines = _read_lines(args.input)
    result = parse_warnings(lines, spec)
    _write_text(args.output, _jsonl(r.to_dict() for r in result.records))
    if args.rejects:
        _write_text(args.rejects, _jsonl(r.to_dict() for r in result.rejects))
    stats = corpus_stats(result.records)
    if args.stats:
        _write_text(args.stats, stats.to_json() + "\n")
    reasons: dict[str, int] = {}
    for r in result.rejects:
        reasons[r.reason.value] = reasons.get(r.reason.value, 0) + 1
    _echo_config(args, args.output)
    _emit({"lines": len(lines), "records": len(result.records),
           "rejects": len(result.rejects), "reject_reasons": reasons}, args.output)
    return 0


def cmd_sample_normals(args) -> int:
    seed = _seed(args)
    args.seed = seed
    existing = read_records(_read_lines(args.existing)) if args.existing else []
    if args.regions:
        regions = _regions(args.regions)
    else:
        pool = {}
        for r in existing:
            pool.setdefault(r.region, GeoPoint(r.location.lat, r.location.lon, r.region))
        regions = list(pool.values())
    if args.months:
        months = [m.strip() for m in args.months.split(",") if m.strip()]
    elif args.year:
        months = [f"{args.year}-{m:02d}" for m in range(1, 13)]
    else:
        months = sorted({r.issue_time.strftime("%Y-%m") for r in existing})
    if not regions or not months:
        raise UsageError("need a region pool (--regions or --existing) and months")
    normals = sample_normals(regions, months, args.n, seed, existing)
    rows = [r.to_dict() for r in (existing + normals if args.merge else normals)]
    _write_text(args.output, _jsonl(rows))
    _echo_config(args, args.output)
    _emit({"existing": len(existing), "sampled": len(normals), "written": len(rows)}, args.output)
    return 0


def cmd_align(args) -> int:
    records = read_records(_read_lines(args.input))
    rows = []
    for r in records:
        row = r.to_dict()
        row["window"] = align_window(r).to_dict()
        rows.append(row)
    _write_text(args.output, _jsonl(rows))
    _echo_config(args, args.output)
    _emit({"records": len(rows)}, args.output)
    return 0


def cmd_qagen(args) -> int:
    records = read_records(_read_lines(args.input))
    types = [t.strip().upper() for t in args.types.split(",") if t.strip()]
    for t in types:
        if t not in QAType.__members__:
            raise UsageError(f"unknown QA type {t!r}")
    pool = _regions(args.regions) if args.regions else None
    pairs = generate_qa(records, types, pool)
    for q in pairs:
        q.validate()
    _write_text(args.output, _jsonl(q.to_dict() for q in pairs))
    if args.oracle_pred:
        rows = [{"id": q.id, "text": render_nsw(q.gold) if q.qa_type is QAType.NSW else q.gold}
                for q in pairs]
        _write_text(args.oracle_pred, _jsonl(rows))
    counts: dict[str, int] = {}
    for q in pairs:
        counts[q.qa_type.value] = counts.get(q.qa_type.value, 0) + 1
    _echo_config(args, args.output)
    _emit({"counts": counts, "pairs": len(pairs), "records": len(records)}, args.output)
    return 0


def _run_forward(args):
    grid = load_grid4d(args.field)
    seed = _seed(args)
    args.seed = seed
    text = TextEmbedding.stub(args.text_len, args.text_dim, args.text_seed)
    C = grid.spec.n_channels
    if args.params:
        params = ParamVector.from_json(_read_text(args.params))
    else:
        params = init_params(C, args.text_dim, args.d_model, seed)
    if args.save_params:
        _write_text(args.save_params, params.to_json() + "\n")
    cfg = FusionConfig(sigma_g=args.sigma_g, floor=args.floor, patch=args.patch,
                       raw_l2=args.raw_l2, clamp=not args.literal_sum)
    return grid, forward(grid, _points(args), text, params, cfg)


def _export_weights(args, grid, res) -> None:
    if args.gates_csv:
        _write_text(args.gates_csv, gates_csv(res.gates))
    if args.weights_csv:
        _write_text(args.weights_csv, channel_weights_csv(res.channel_weights, grid.spec))


def cmd_forward(args) -> int:
    if args.out == "-":
        raise UsageError("forward writes tokens to a .npy file; '-' is not allowed")
    grid, res = _run_forward(args)
    buf = io.BytesIO()
    np.save(buf, res.tokens)
    blob = buf.getvalue()
    _write_bytes(args.out, blob)
    _export_weights(args, grid, res)
    _echo_config(args, args.out)
    _emit({
        "channel_weights": [float(w) for w in res.channel_weights],
        "gates": [float(g) for g in res.gates],
        "out": args.out,
        "sha256": hashlib.sha256(blob).hexdigest(),
        "tokens": list(res.tokens.shape),
    }, args.out)
    return 0


def cmd_export_weights(args) -> int:
    if not (args.gates_csv or args.weights_csv):
        raise UsageError("export-weights needs --gates-csv and/or --weights-csv")
    grid, res = _run_forward(args)
    _export_weights(args, grid, res)
    primary = args.gates_csv or args.weights_csv
    _echo_config(args, primary)
    _emit({"channels": len(res.channel_weights), "hours": len(res.gates)},
          "-" if "-" in (args.gates_csv, args.weights_csv) else None)
    return 0


def cmd_gradcheck(args) -> int:
    seed = _seed(args)
    try:
        dims = tuple(int(d) for d in args.dims.split(","))
    except ValueError:
        raise UsageError(f"--dims wants T,C,H,W integers, got {args.dims!r}") from None
    if len(dims) != 4:
        raise UsageError("--dims wants four integers T,C,H,W")
    modules = MODULES if args.module == "all" else (args.module,)
    results = {m: check_module(m, seed=seed, dims=dims, h=args.h) for m in modules}
    worst = max(r["max_rel_err"] for r in results.values())
    ok = worst < args.tol
    args.seed = seed
    _echo_config(args, None)
    _emit({
        "max_rel_err": worst,
        "modules": {m: {"max_rel_err": r["max_rel_err"], "n_params": r["n_params"]}
                    for m, r in results.items()},
        "pass": ok,
        "seed": seed,
        "tol": args.tol,
    }, None)
    if not ok:
        sys.stderr.write(f"gradient check failed: max relative error {worst:.3e} >= {args.tol}\n")
    return 0 if ok else 1


def cmd_score(args) -> int:
    pairs = [QAPair.from_dict(json.loads(line)) for line in _read_lines(args.qa) if line.strip()]
    preds = {}
    for line in _read_lines(args.pred):
        if line.strip():
            row = json.loads(line)
            preds[row["id"]] = row.get("text") or ""
    report, items = evaluate(pairs, preds)
    _write_text(args.output, report.to_json() + "\n")
    if args.scores:
        _write_text(args.scores, _jsonl(i.to_dict() for i in items))
    _echo_config(args, args.output)
    _emit({"items": len(items), "mc_main": report.mc_main, "mc_sub": report.mc_sub,
           "nsw_mean": report.nsw_mean, "rsw": report.rsw, "tf": report.tf}, args.output)
    return 0


# -- parser -------------------------------------------------------------------

def _add_query(p):
    p.add_argument("field", help=".g4d input field")
    p.add_argument("--point", action="append", help="query location 'lat,lon[,name]' (repeatable)")
    p.add_argument("--points", help="JSON list of {lat, lon, name}")
    p.add_argument("--text-len", type=int, default=4)
    p.add_argument("--text-dim", type=int, default=16)
    p.add_argument("--text-seed", type=int, default=0)
    p.add_argument("--params", help="parameter JSON; otherwise seeded initialization")
    p.add_argument("--save-params")
    p.add_argument("--seed", type=int)
    p.add_argument("--patch", type=int, default=4)
    p.add_argument("--d-model", type=int, default=32)
    p.add_argument("--sigma-g", type=float, default=2.0)
    p.add_argument("--floor", type=float, default=0.1)
    p.add_argument("--raw-l2", action="store_true", help="un-normalized L2 hour differences")
    p.add_argument("--literal-sum", action="store_true", help="do not clamp the mask at 1")
    p.add_argument("--gates-csv")
    p.add_argument("--weights-csv")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mpbench", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic .g4d field")
    p.add_argument("--out", required=True)
    p.add_argument("--spec")
    p.add_argument("--scale", choices=("desk", "china"), default="desk")
    p.add_argument("--hours", type=int, default=12)
    p.add_argument("--seed", type=int)
    p.add_argument("--profiles")
    p.add_argument("--base-scale", type=float, default=1.0)
    p.add_argument("--warnings-out", help="also write a seeded warnings JSONL fixture")
    p.add_argument("--n-warnings", type=int, default=10)
    p.add_argument("--days", type=int, default=3)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="validate and clean warnings JSONL")
    p.add_argument("input", nargs="?", default="-")
    p.add_argument("-o", "--output", default="-")
    p.add_argument("--rejects")
    p.add_argument("--stats")
    p.add_argument("--spec")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("sample-normals", help="draw Normal-weather negatives")
    p.add_argument("--existing")
    p.add_argument("--regions")
    p.add_argument("--months")
    p.add_argument("--year", type=int)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--merge", action="store_true", help="emit existing records too")
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_sample_normals)

    p = sub.add_parser("align", help="attach 12-hour windows to records")
    p.add_argument("input", nargs="?", default="-")
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("qagen", help="generate QA pairs")
    p.add_argument("input", nargs="?", default="-")
    p.add_argument("-o", "--output", default="-")
    p.add_argument("--types", default="MC,TF,RSW,NSW")
    p.add_argument("--regions")
    p.add_argument("--oracle-pred", help="also write predictions equal to gold")
    p.set_defaults(func=cmd_qagen)

    p = sub.add_parser("forward", help="run the fusion block on a field")
    _add_query(p)
    p.add_argument("--out", required=True, help="tokens .npy")
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--module", choices=MODULES + ("all",), default="all")
    p.add_argument("--seed", type=int)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--h", type=float, default=1e-3)
    p.add_argument("--dims", default="3,2,4,4")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("score", help="score predictions against QA gold")
    p.add_argument("--qa", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("-o", "--output", default="-")
    p.add_argument("--scores")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("export-weights", help="dump DTGF gates / TGCA channel weights as CSV")
    _add_query(p)
    p.set_defaults(func=cmd_export_weights)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(f"missing subcommand; choose one of {', '.join(COMMANDS)}")
        return args.func(args)
    except (MPBenchError, json.JSONDecodeError, KeyError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except OSError as exc:
        sys.stderr.write(f"I/O error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
