"""Command-line entry point: ``otree fit|score|explain``.

Exit codes: 0 on success (including empty reports), 1 for usage errors and
2 for runtime failures such as unreadable or malformed input.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import fields
from pathlib import Path

from otree.params import Params
from otree.persist import ModelFormatError, deserialize, serialize
from otree.report import render, render_json
from otree.tabular import DEFAULT_NA, ColumnKind, ColumnSpec, DataError, parse_csv, read_schema
from otree.tree import Model, fit, score_rows

EXIT_USAGE = 1
EXIT_RUNTIME = 2

_SWITCHES = ("legacy_transform", "transforms", "follow_all", "root_categ_breaks")
_PARAM_FLAGS = {f.name: "--" + f.name.replace("_", "-") for f in fields(Params)
                if f.name not in _SWITCHES}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_io(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="CSV file with a header row")
    p.add_argument("--output", help="report destination (default: stdout)")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--na-values", default=",".join(DEFAULT_NA),
                   help="comma-separated tokens read as missing")
    p.add_argument("--id-column", help="column holding row labels")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="otree", description="Explainable outliers in tabular data.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fit", help="fit trees and report training outliers")
    _add_io(f)
    f.add_argument("--schema", help="schema file (name:kind[:l1<l2<...] per line)")
    f.add_argument("--save-model", help="write the fitted model as JSON")
    f.add_argument("--threads", type=int, default=1)
    f.add_argument("--timestamp", help="fit timestamp recorded in the model file")
    f.add_argument("--legacy-transform", action="store_true",
                   help="use the quartile-ratio log criterion instead of tail checks")
    f.add_argument("--no-transforms", dest="transforms", action="store_false",
                   help="never log/exp-transform; flag heavy sides as tails instead")
    f.add_argument("--follow-all", action="store_true",
                   help="grow every qualifying split, not only the best one")
    defaults = Params()
    for name, flag in _PARAM_FLAGS.items():
        typ = int if isinstance(getattr(defaults, name), int) else float
        f.add_argument(flag, dest=name, type=typ, default=None)

    s = sub.add_parser("score", help="flag new rows against a saved model")
    _add_io(s)
    s.add_argument("--model", required=True)
    s.add_argument("--include-training-outliers", action="store_true",
                   help="also report values the model flagged during fitting")

    e = sub.add_parser("explain", help="print the conditions and thresholds of a model")
    e.add_argument("--model", required=True)
    e.add_argument("--output")
    return parser


def _params(args) -> Params:
    over = {k: getattr(args, k) for k in _PARAM_FLAGS if getattr(args, k) is not None}
    try:
        return Params(**over, legacy_transform=args.legacy_transform,
                      transforms=args.transforms, follow_all=args.follow_all)
    except (TypeError, ValueError) as e:
        raise UsageError(str(e)) from None


def _write(text: str, dest: str | None) -> None:
    if dest is None:
        sys.stdout.write(text)
    else:
        Path(dest).write_text(text, encoding="utf-8")


def _na(args) -> tuple[str, ...]:
    return tuple(t.strip() for t in args.na_values.split(","))


def _load_model(path: str) -> Model:
    return deserialize(Path(path).read_bytes())


def cmd_fit(args) -> int:
    if args.threads < 1:
        raise UsageError("--threads must be >= 1")
    params = _params(args)
    schema = read_schema(Path(args.schema).read_text(encoding="utf-8")) if args.schema else None
    data = parse_csv(Path(args.input).read_bytes(), schema, _na(args), args.id_column)
    print(f"otree: read {data.n_rows} rows", file=sys.stderr)
    model, flags = fit(data, params, threads=args.threads, timestamp=args.timestamp)
    if args.save_model:
        Path(args.save_model).write_bytes(serialize(model))
    _write(render_json(flags) if args.format == "json" else render(flags), args.output)
    return 0


def cmd_score(args) -> int:
    model = _load_model(args.model)
    schema = {}
    for c in model.schema:
        kind = ColumnKind.NUMERIC if c.kind is ColumnKind.NUMERIC else ColumnKind.CATEGORICAL
        schema[c.name] = ColumnSpec(kind)
    raw = Path(args.input).read_bytes()
    header = set(parse_csv_header(raw))
    missing = [n for n in schema if n not in header]
    if missing:
        raise DataError(f"column {missing[0]!r} from the model is missing in {args.input}")
    data = parse_csv(raw, schema, _na(args), args.id_column)
    print(f"otree: read {data.n_rows} rows", file=sys.stderr)
    flags = score_rows(model, data, include_training=args.include_training_outliers)
    _write(render_json(flags) if args.format == "json" else render(flags), args.output)
    return 0


def parse_csv_header(raw: bytes) -> list[str]:
    text = raw.decode("utf-8-sig")
    row = next(csv.reader(io.StringIO(text)), [])
    return [h.strip() for h in row]


def explain_text(model: Model) -> str:
    lines = []
    for t in model.trees:
        tf = t.transform.kind
        tails = [s for s, on in (("left", t.has_left_tail), ("right", t.has_right_tail)) if on]
        lines.append(f"tree [{t.column}] ({t.kind.value}) - transform: {tf}"
                     f" - tails: {', '.join(tails) or 'none'}")
        levels = model.column(t.column).levels
        for node in t.nodes:
            pad = "  " * (node.depth + 1)
            head = "(all rows)" if node.condition is None else node.condition.text
            desc = f"{pad}#{node.id} {head} - n: {node.n}"
            cl = node.cluster
            if cl is not None and hasattr(cl, "stats"):
                s = cl.stats
                lo = "none" if s.lo_thr is None else f"{s.lo_thr:.3f}"
                hi = "none" if s.hi_thr is None else f"{s.hi_thr:.3f}"
                desc += (f" - range: [{s.min_nonoutlier:.3f}, {s.max_nonoutlier:.3f}]"
                         f" - z thresholds: {lo} / {hi}")
            elif cl is not None:
                flagged = [levels[c] for c in cl.flag_scores]
                desc += f" - flags: [{', '.join(flagged)}]"
                if cl.unseen_score is not None:
                    desc += " + unseen"
            if node.outlier_rows:
                desc += f" - outliers: {len(node.outlier_rows)}"
            lines.append(desc)
    return "\n".join(lines) + "\n" if lines else "Empty model.\n"


def cmd_explain(args) -> int:
    _write(explain_text(_load_model(args.model)), args.output)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return {"fit": cmd_fit, "score": cmd_score, "explain": cmd_explain}[args.command](args)
    except UsageError as e:
        print(f"otree: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, DataError, ModelFormatError, ValueError) as e:
        print(f"otree: error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
