"""Command-line entry point: ``rollout-cards <subcommand> ...``.

Exit codes: 0 success, 1 I/O failure, 2 conformance failure or a command
that could not produce its report, 64 usage error. ``RCARD_FORMAT`` sets
the default output format (``text`` or ``json``).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import jsontext
from .bundle import Carrier, convert, open_source, read_bundle, read_manifest, write_bundle
from .discrepancy import compare, decompose_gap
from .errors import (
    ConformanceError,
    DuplicateRule,
    InvalidProfile,
    IoFailure,
    RolloutCardError,
    RulesDifferBeyondDenominator,
    UnknownDefectClass,
    UnknownFixture,
)
from .rules import Registry, parse_rule_spec, score
from .schema import export_row_schemas
from .synth import NAMED_FIXTURES, FixtureProfile, gen_card, gen_named, write_fixture
from .validate import validate_bundle
from .views import BUILTIN_VIEWS, project

EXIT_OK, EXIT_IO, EXIT_FAIL, EXIT_USAGE = 0, 1, 2, 64
FORMAT_ENV = "RCARD_FORMAT"
USAGE_ERRORS = (UnknownFixture, UnknownDefectClass, InvalidProfile, DuplicateRule, ValueError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _default_format() -> str:
    fmt = os.environ.get(FORMAT_ENV, "text")
    if fmt not in ("text", "json"):
        raise UsageError(f"{FORMAT_ENV} must be 'text' or 'json', got {fmt!r}")
    return fmt


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--format", choices=("text", "json"), default=None,
                        help=f"output format (default from ${FORMAT_ENV}, else text)")
    parser = _Parser(prog="rollout-cards", description="Rollout card bundle toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name: str, help: str) -> argparse.ArgumentParser:
        return sub.add_parser(name, help=help, parents=[common])

    p = add("validate", "check a bundle against the conformance contract")
    p.add_argument("bundle")
    p.add_argument("--tolerant", action="store_true", help="downgrade payload-shape mismatches to warnings")
    p.add_argument("--previous", help="earlier snapshot this bundle must extend")

    p = add("pack", "directory bundle -> zip")
    p.add_argument("src")
    p.add_argument("dst")
    p = add("unpack", "zip bundle -> directory")
    p.add_argument("src")
    p.add_argument("dst")

    p = add("inspect", "manifest, stream stats and registered rules")
    p.add_argument("bundle")

    p = add("project", "project a bundle through a view")
    p.add_argument("bundle")
    p.add_argument("--view", required=True, choices=BUILTIN_VIEWS)
    p.add_argument("--out", help="directory for table.jsonl and drops.json")

    p = add("score", "score a batch of bundles under one rule")
    p.add_argument("bundles", nargs="+")
    p.add_argument("--rule", required=True, help="name@version[:key=value,...]")

    p = add("compare", "score systems under several rules and report discrepancies")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--fixture", choices=sorted(NAMED_FIXTURES))
    src.add_argument("--system", action="append", metavar="NAME=PATH[,PATH...]")
    p.add_argument("--rule", action="append", default=[], help="repeatable; defaults to the fixture's rules")
    p.add_argument("--seed", type=int, default=0)

    p = add("gen", "write a named fixture or a profile-driven card")
    what = p.add_mutually_exclusive_group(required=True)
    what.add_argument("--fixture", choices=sorted(NAMED_FIXTURES))
    what.add_argument("--profile", help="JSON file with FixtureProfile fields, or '-' for defaults")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--zip", action="store_true", help="write the profile card as a zip carrier")

    add("schema", "print the row and manifest schemas")
    return parser


def _emit(text: str, out=None) -> None:
    out = out or sys.stdout
    out.write(text if text.endswith("\n") else text + "\n")


def _doc(obj) -> str:
    return jsontext.dumps_document(obj)


def cmd_validate(args, fmt: str) -> int:
    report = validate_bundle(args.bundle, "tolerant" if args.tolerant else "strict", previous=args.previous)
    _emit(report.to_text_document() if fmt == "json" else report.render_text())
    return EXIT_OK if report.ok else EXIT_FAIL


def cmd_convert(args, fmt: str) -> int:
    kind = "zip" if args.command == "pack" else "directory"
    convert(args.src, Carrier(kind, Path(args.dst)))
    msg = {"command": args.command, "src": args.src, "dst": args.dst}
    _emit(_doc(msg) if fmt == "json" else f"{args.command}: {args.src} -> {args.dst}")
    return EXIT_OK


def cmd_inspect(args, fmt: str) -> int:
    source = open_source(Carrier.for_path(args.bundle))
    try:
        manifest = read_manifest(source)
    finally:
        source.close()
    card = read_bundle(args.bundle)
    counts = {s: len(list(card.rows(s))) for s in card.streams}
    registry = Registry.from_manifest(manifest)
    doc = {"manifest": manifest.to_json(), "rows": counts, "rules": [e.label for e in registry]}
    if fmt == "json":
        _emit(_doc(doc))
        return EXIT_OK
    lines = [
        f"run_id: {manifest.run_id}",
        f"format_version: {manifest.format_version}",
        f"created_at: {manifest.created_at}",
        f"release_scope: {manifest.release_scope.to_json()}",
        "rows: " + " ".join(f"{k}={v}" for k, v in counts.items()),
        f"blobs: {len(manifest.blob_index)}",
        "rules: " + (", ".join(doc["rules"]) if doc["rules"] else "(none registered)"),
    ]
    _emit("\n".join(lines))
    return EXIT_OK


def cmd_project(args, fmt: str) -> int:
    table = project(read_bundle(args.bundle), args.view)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "table.jsonl").write_text(table.to_jsonl(), encoding="utf-8")
        (out / "drops.json").write_text(table.drops_document(), encoding="utf-8")
    if fmt == "json":
        _emit(_doc({"view": table.view_name, "columns": list(table.columns), "rows": table.rows,
                    "drops": table.provenance.to_json()}))
    else:
        lines = [f"view {table.view_name}: {len(table.rows)} rows, columns {', '.join(table.columns)}"]
        drops = table.provenance
        lines.append(f"declared losses: {', '.join(l.name for l in drops.declared_losses) or '(none)'}")
        if drops.omissions:
            lines.append(f"omissions: {', '.join(drops.omissions)}")
        if args.out:
            lines.append(f"wrote {Path(args.out) / 'table.jsonl'} and {Path(args.out) / 'drops.json'}")
        _emit("\n".join(lines))
    return EXIT_OK


def cmd_score(args, fmt: str) -> int:
    entry = parse_rule_spec(args.rule)
    report = score([read_bundle(path) for path in args.bundles], entry)
    _emit(report.to_document() if fmt == "json" else report.summary_line())
    return EXIT_OK


def _parse_system(text: str) -> tuple[str, list[str]]:
    name, sep, paths = text.partition("=")
    if not sep or not name or not paths:
        raise UsageError(f"--system expects NAME=PATH[,PATH...], got {text!r}")
    return name, paths.split(",")


def cmd_compare(args, fmt: str) -> int:
    if args.fixture:
        fixture = gen_named(args.fixture, args.seed)
        batches = fixture.batches
        specs = args.rule or fixture.rules
        batch_id = args.fixture
    else:
        systems = dict(_parse_system(s) for s in args.system)
        batches = {name: [read_bundle(p) for p in paths] for name, paths in systems.items()}
        specs = args.rule
        batch_id = "+".join(sorted(batches))
    if len(specs) < 2:
        raise UsageError("compare needs at least two --rule selections")
    rules = [parse_rule_spec(s) for s in specs]
    report = compare(batches, rules, batch_id)
    decomposition = None
    if len(rules) == 2 and len(report.systems) == 2:
        a, b = list(batches)
        try:
            decomposition = decompose_gap(batches[a], batches[b], rules[0], rules[1])
        except RulesDifferBeyondDenominator:
            decomposition = None
    if fmt == "json":
        doc = report.to_json()
        if decomposition is not None:
            doc["decomposition"] = {"system_a": a, "system_b": b, **decomposition.to_json()}
        _emit(_doc(doc))
    else:
        text = report.render_text()
        if decomposition is not None:
            text += f"\ndenominator decomposition ({a} - {b}):\n" + "\n".join(
                "  " + line for line in decomposition.render_text().splitlines()
            )
        _emit(text)
    return EXIT_OK


def _load_profile(args) -> FixtureProfile:
    fields = {}
    if args.profile != "-":
        try:
            fields = json.loads(Path(args.profile).read_text(encoding="utf-8"))
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        except json.JSONDecodeError as exc:
            raise InvalidProfile(f"{args.profile}: {exc}") from exc
        if not isinstance(fields, dict):
            raise InvalidProfile("profile must be a JSON object")
        for key in ("steps_per_run", "worker_count"):
            if isinstance(fields.get(key), list):
                fields[key] = tuple(fields[key])
        if "annotation_namespaces" in fields:
            fields["annotation_namespaces"] = tuple(fields["annotation_namespaces"])
    if args.seed is not None:
        fields["seed"] = args.seed
    if args.runs is not None:
        fields["runs"] = args.runs
    try:
        return FixtureProfile(**fields)
    except TypeError as exc:
        raise InvalidProfile(str(exc)) from exc


def cmd_gen(args, fmt: str) -> int:
    if args.fixture:
        root = write_fixture(gen_named(args.fixture, args.seed or 0), args.out)
        msg = {"fixture": args.fixture, "path": str(root)}
    else:
        card = gen_card(_load_profile(args))
        carrier = Carrier("zip" if args.zip else "directory", Path(args.out))
        write_bundle(card, carrier)
        msg = {"run_id": card.manifest.run_id, "path": str(carrier.path)}
    _emit(_doc(msg) if fmt == "json" else " ".join(f"{k}={v}" for k, v in msg.items()))
    return EXIT_OK


def cmd_schema(args, fmt: str) -> int:
    _emit(_doc(export_row_schemas()))
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "pack": cmd_convert,
    "unpack": cmd_convert,
    "inspect": cmd_inspect,
    "project": cmd_project,
    "score": cmd_score,
    "compare": cmd_compare,
    "gen": cmd_gen,
    "schema": cmd_schema,
}


def run(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        fmt = args.format or _default_format()
        return COMMANDS[args.command](args, fmt)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IoFailure, OSError) as exc:
        print(f"io failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConformanceError as exc:
        print(f"conformance failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except USAGE_ERRORS as exc:
        print(f"usage error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RolloutCardError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
