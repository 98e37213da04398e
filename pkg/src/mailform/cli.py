"""``mailform`` command line.

Exit codes: 0 success, 1 fatal ledger error (daemon), 2 usage or config
error, 3 processing or domain error. With ``--json`` the standard output
carries exactly one JSON document; everything human-readable goes to
standard error.
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading
from pathlib import Path
from typing import Any

from .config import load_config
from .errors import ConfigError, LedgerError, MailformError

log = logging.getLogger("mailform")

EXIT_OK, EXIT_FATAL, EXIT_USAGE, EXIT_DOMAIN = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _emit(args: argparse.Namespace, payload: Any, human: str) -> None:
    if args.json:
        sys.stdout.write(json.dumps(payload, ensure_ascii=False, indent=2) + "\n")
    else:
        sys.stdout.write(human.rstrip("\n") + "\n")


def _read(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc


# --------------------------------------------------------------------------- #

def cmd_daemon(args: argparse.Namespace) -> int:
    from .pipeline import run_daemon

    config = load_config(args.config)
    stop = threading.Event()

    def _stop(signum, _frame):
        log.info("signal %d received; finishing the current request", signum)
        stop.set()

    signal.signal(signal.SIGINT, _stop)
    signal.signal(signal.SIGTERM, _stop)
    try:
        run_daemon(config, stop, max_ticks=args.max_ticks)
    except LedgerError as exc:
        print(f"mailform daemon: fatal ledger failure, stopping: {exc}", file=sys.stderr)
        return EXIT_FATAL
    return EXIT_OK


def cmd_process(args: argparse.Namespace) -> int:
    from .ledger import State
    from .pipeline import Pipeline

    raw = _read(args.eml)
    config = load_config(args.config)
    pipeline = Pipeline(config)
    pipeline.recover()
    record = pipeline.handle_raw(raw)
    payload = record.to_dict()
    sys.stdout.write(json.dumps(payload, ensure_ascii=False, indent=2) + "\n")
    if record.state is not State.REPLIED:
        print(f"request ended in state {record.state.value}: {record.failure_reason or record.entry.value}",
              file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


def cmd_fill(args: argparse.Namespace) -> int:
    from .form_model import fill_form

    pdf = _read(args.pdf)
    try:
        plan = json.loads(_read(args.plan))
    except ValueError as exc:
        raise UsageError(f"plan file {args.plan} is not JSON: {exc}") from exc
    if isinstance(plan, dict) and isinstance(plan.get("entries"), dict):
        plan = plan["entries"]
    if not isinstance(plan, dict):
        raise UsageError("plan must be a JSON object of field name to string or null")
    filled = fill_form(pdf, plan)
    Path(args.out).write_bytes(filled.data)
    payload = {"out": args.out, "applied": filled.applied, "skipped": filled.skipped,
               "notes": filled.notes}
    human = f"wrote {args.out}: {len(filled.applied)} applied, {len(filled.skipped)} skipped"
    for k, v in filled.skipped.items():
        human += f"\n  skipped {k}: {v}"
    _emit(args, payload, human)
    return EXIT_OK


def cmd_schema(args: argparse.Namespace) -> int:
    from .form_model import read_back, read_schema

    pdf = _read(args.pdf)
    schema = read_schema(pdf)
    values = read_back(pdf)
    payload = schema.to_dict()
    payload["values"] = values
    lines = [f"{len(schema)} fields (digest {schema.digest[:12]})"]
    for f in schema.fields:
        extra = f" options={list(f.options)}" if f.options else ""
        extra += f" max_len={f.max_len}" if f.max_len else ""
        lines.append(f"  p{f.page} {f.kind.value:<8} {f.name!r}{extra} = {values[f.name]!r}")
    _emit(args, payload, "\n".join(lines))
    return EXIT_OK


def cmd_extract(args: argparse.Namespace) -> int:
    import mimetypes

    from .config import OcrConfig, build_ocr_backend
    from .doc_extract import extract_text, filter_blocks
    from .mail_ingest import Attachment, AttachmentKind, classify_attachment

    data = _read(args.file)
    media = args.media_type or mimetypes.guess_type(args.file)[0] or "application/octet-stream"
    if args.config:
        config = load_config(args.config)
    else:
        from .config import Config

        if args.backend == "stub" and not args.fixtures_dir:
            raise UsageError("extract needs --config, or --fixtures-dir for the stub backend")
        config = Config(inbox_dir=Path("."), outbox_dir=Path("."), ledger_path=Path("ledger.jsonl"),
                        fixtures_dir=Path(args.fixtures_dir) if args.fixtures_dir else None,
                        ocr=OcrConfig(backend=args.backend, base_url=args.base_url or ""))
    kind = classify_attachment(media, data)
    if kind is not AttachmentKind.CONTEXT_DOCUMENT:
        raise MailformError(f"{args.file} is classified {kind.value}; only context documents are extracted")
    doc = extract_text(Attachment(Path(args.file).name, media, data, kind), build_ocr_backend(config))
    threshold = args.min_confidence if args.min_confidence is not None else config.min_confidence
    doc = filter_blocks(doc, threshold)
    _emit(args, doc.to_dict(), doc.text)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    from .benchmark import bundled_dir
    from .eval_harness import GoldKey, load_runs, load_schema, render_table, score_batch

    base = bundled_dir()
    schema_path = Path(args.schema or base / "form.pdf")
    gold_path = Path(args.gold or base / "gold.json")
    runs_dir = Path(args.runs or base / "runs")
    for p in (schema_path, gold_path):
        if not p.is_file():
            raise UsageError(f"{p} does not exist")
    if not runs_dir.is_dir():
        raise UsageError(f"runs directory {runs_dir} does not exist")
    schema = load_schema(schema_path)
    gold = GoldKey.load(gold_path)
    rows = score_batch(load_runs(runs_dir), gold, schema)
    payload = {"fields": len(schema),
               "rows": [{"label": label, **r.to_dict()} for label, r in rows]}
    _emit(args, payload, render_table(rows))
    return EXIT_OK


def cmd_cost(args: argparse.Namespace) -> int:
    from .eval_harness import CostParams, cost_model, render_cost

    params = CostParams(
        annual_salary_eur=args.annual_salary,
        hours_per_week=args.hours_per_week,
        weeks_per_year=args.weeks_per_year,
        manual_minutes=args.manual_minutes,
        supervision_minutes=args.supervision_minutes,
        cloud_cost_eur=args.cloud_cost,
    )
    report = cost_model(params)
    payload = {"params": vars(params), "exact": report.to_dict(),
               "rounded": report.to_dict(rounded=True)}
    _emit(args, payload, render_cost(report, params))
    return EXIT_OK


def _parse_field(text: str) -> tuple:
    name, _, rest = text.partition(":")
    kind, _, opts = rest.partition(":")
    kind = kind or "text"
    options = tuple(o for o in opts.split("|") if o) if opts else ()
    return (name, kind, options)


def cmd_gen_form(args: argparse.Namespace) -> int:
    from .form_model import generate_flat_pdf, generate_test_form, read_schema

    if args.flat is not None:
        pdf = generate_flat_pdf(args.flat)
    elif args.benchmark:
        from .benchmark import form_spec

        pdf = generate_test_form(form_spec())
    else:
        spec: list[tuple] = []
        if args.spec:
            try:
                items = json.loads(_read(args.spec))
            except ValueError as exc:
                raise UsageError(f"spec file is not JSON: {exc}") from exc
            for item in items:
                spec.append((item["name"], item.get("kind", "text"), tuple(item.get("options") or ()),
                             item.get("max_len")))
        spec.extend(_parse_field(f) for f in args.field or [])
        if not spec:
            raise UsageError("gen-form needs --field, --spec, --benchmark or --flat")
        pdf = generate_test_form(spec)
    Path(args.out).write_bytes(pdf)
    schema = read_schema(pdf)
    _emit(args, {"out": args.out, **schema.to_dict()}, f"wrote {args.out} with {len(schema)} fields")
    return EXIT_OK


# --------------------------------------------------------------------------- #

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mailform",
                                     description="Email-driven PDF form completion.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name: str, fn, help_text: str, config: bool = False) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(func=fn)
        p.add_argument("--json", action="store_true", help="machine-readable output on stdout")
        if config:
            p.add_argument("--config", help="config JSON (default: $MAILFORM_CONFIG)")
        return p

    p = add("daemon", cmd_daemon, "poll the inbox and process requests until interrupted", True)
    p.add_argument("--max-ticks", type=int, default=None, help=argparse.SUPPRESS)

    p = add("process", cmd_process, "process one .eml file through the pipeline", True)
    p.add_argument("eml")

    p = add("fill", cmd_fill, "fill a PDF form from a plan JSON")
    p.add_argument("pdf")
    p.add_argument("plan")
    p.add_argument("out")

    p = add("schema", cmd_schema, "print the interactive fields of a PDF")
    p.add_argument("pdf")

    p = add("extract", cmd_extract, "extract text blocks from a context document", True)
    p.add_argument("file")
    p.add_argument("--backend", choices=["stub", "remote"], default="stub")
    p.add_argument("--fixtures-dir")
    p.add_argument("--base-url")
    p.add_argument("--media-type")
    p.add_argument("--min-confidence", type=float)

    p = add("eval", cmd_eval, "score observed plans against a gold key (defaults: bundled benchmark)")
    p.add_argument("schema", nargs="?", help="form PDF or schema JSON")
    p.add_argument("gold", nargs="?", help="gold key JSON")
    p.add_argument("runs", nargs="?", help="directory of <label>.json observed plans")

    p = add("cost", cmd_cost, "per-form cost of manual vs. assisted completion")
    p.add_argument("--annual-salary", type=float, default=40_000.0, help="EUR per year")
    p.add_argument("--hours-per-week", type=float, default=40.0)
    p.add_argument("--weeks-per-year", type=float, default=52.0)
    p.add_argument("--manual-minutes", type=float, default=15.0)
    p.add_argument("--supervision-minutes", type=float, default=5.0)
    p.add_argument("--cloud-cost", type=float, default=0.10, help="EUR per form")

    p = add("gen-form", cmd_gen_form, "generate a synthetic fillable PDF")
    p.add_argument("out")
    p.add_argument("--field", action="append",
                   help="NAME[:text|checkbox|choice[:OPT1|OPT2]] (repeatable)")
    p.add_argument("--spec", help="JSON list of {name, kind, options, max_len}")
    p.add_argument("--benchmark", action="store_true", help="the bundled 29-field form")
    p.add_argument("--flat", metavar="TEXT", help="a field-less PDF containing TEXT")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"mailform {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LedgerError as exc:
        print(f"mailform {args.command}: fatal: {exc}", file=sys.stderr)
        return EXIT_FATAL
    except MailformError as exc:
        print(f"mailform {args.command}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
