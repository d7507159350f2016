"""Command-line surface: quickstart, validate, submit, engineer, simulate.

Exit codes: 0 success/accepted, 1 rejected (or scaffold failure), 2
operational error, 64 usage error. The FEATUREGATE_SEED environment
variable overrides every configured seed for reproducible CI runs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .engine import build_pipeline, fit_pipeline, transform
from .errors import FeatureGateError, ProjectError
from .features import parse_feature
from .project import CONTRIB_DIR, Project, load_project, scaffold
from .selection import EstimateCache, SelectionState, AcceptedFeature, evaluate_alternative, prune, run_sfds
from .table import load_table
from .validation import Patch, PatchEntry, validate_feature_api, validate_patch

EXIT_OK = 0
EXIT_REJECTED = 1
EXIT_ERROR = 2
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="featuregate", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("quickstart", help="render a new project directory")
    p.add_argument("--name", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--train", required=True, help="training data CSV")
    p.add_argument("--schema", required=True, help="schema JSON")
    p.add_argument("--dest", required=True, help="destination directory")

    p = sub.add_parser("validate", help="validate one feature document")
    p.add_argument("--feature", required=True)
    scope = p.add_mutually_exclusive_group()
    scope.add_argument("--api-only", action="store_true")
    scope.add_argument("--ml-only", action="store_true")
    p.add_argument("--json", action="store_true", dest="as_json")
    p.add_argument("--project", default=".")

    p = sub.add_parser("submit", help="validate and merge a feature document")
    p.add_argument("--feature", required=True)
    p.add_argument("--project", default=".")

    p = sub.add_parser("engineer", help="apply the fitted pipeline to new data")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--project", default=".")

    p = sub.add_parser("simulate", help="replay a directory of submissions as a stream")
    p.add_argument("--stream", required=True, help="directory of feature documents")
    p.add_argument("--log", required=True, help="JSON-lines decision log to write")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--commit", action="store_true", help="materialize results into the project")
    p.add_argument("--project", default=".")
    return parser


def _load_project(path: str) -> Project:
    project = load_project(path)
    env_seed = os.environ.get("FEATUREGATE_SEED")
    if env_seed is not None:
        try:
            project.config = project.config.with_seed(int(env_seed))
        except ValueError:
            raise ProjectError(f"FEATUREGATE_SEED must be an integer, got {env_seed!r}") from None
    return project


# ---------------------------------------------------------------------------
# validation plumbing shared by validate/submit


def _candidate_values(project: Project, document: str, dev):
    fd = parse_feature(document)
    pipeline = build_pipeline([fd], project.registry(), dev.schema)
    fitted = fit_pipeline(pipeline, dev)
    return fd, transform(fitted, dev).values


def _selection_state(project: Project, dev) -> SelectionState:
    """Rebuild acceptance-order state; per-feature values come from slicing
    the (cached) fitted pipeline's development matrix."""
    state = SelectionState()
    keys = project.state.accepted_keys()
    if not keys:
        return state
    fitted = project.fitted_pipeline()
    matrix = transform(fitted, dev)
    by_key = project.state.by_key()
    start = {}
    names = list(matrix.names)
    col = 0
    for res in fitted.pipeline.features:
        q = fitted.fitted[res.key].q
        start[res.key] = (col, col + q)
        col += q
    for key in keys:
        if key not in by_key or key not in start:
            raise ProjectError(f"decision log references unknown feature {key}")
        lo, hi = start[key]
        state.accepted.append(
            AcceptedFeature(by_key[key][1], np.ascontiguousarray(matrix.values[:, lo:hi]), hi - lo)
        )
    return state


def _run_validation(project: Project, document: str, mode: str) -> dict:
    """mode: full | api-only | ml-only. Returns a result dict with sections
    and enough context for submit to reuse."""
    pair = project.split_pair()
    dev, holdout = pair.development, pair.holdout
    result: dict = {"sections": {}, "context": {}}

    # structure: the implied patch adds the document at its convention path
    try:
        fd_probe = parse_feature(document, validate_params=False)
        implied = f"{CONTRIB_DIR}/user_{fd_probe.author}/feature_{fd_probe.name}.json"
    except FeatureGateError:
        implied = "feature.json"
    structure = validate_patch(Patch((PatchEntry(implied, "add", document),)))
    result["sections"]["structure"] = json.loads(structure.to_json())
    ok = structure.accepted

    if mode != "ml-only":
        report = validate_feature_api(
            document, dev, holdout, project.config.validation, project.registry()
        )
        result["sections"]["api"] = json.loads(report.to_json())
        ok = ok and report.accepted

    decision = None
    state = None
    values = None
    fd = None
    if mode != "api-only" and (ok or mode == "ml-only"):
        try:
            state = _selection_state(project, dev)
            fd, values = _candidate_values(project, document, dev)
            cache = EstimateCache()
            decision = evaluate_alternative(
                project.config.selection.accepter,
                values,
                dev.target_column,
                state,
                project.config.selection,
                cache,
            )
            result["context"] = {
                "state": state,
                "values": values,
                "fd": fd,
                "cache": cache,
                "dev": dev,
            }
            result["sections"]["ml"] = {
                "outcome": decision.outcome,
                "rule": decision.rule,
                "cmi": decision.cmi,
                "threshold": decision.threshold,
                "displaced": decision.displaced,
            }
            ok = ok and decision.accepted
        except FeatureGateError as exc:
            result["sections"]["ml"] = {"outcome": "rejected", "rule": "error", "error": str(exc)}
            ok = False
    result["accepted"] = ok
    return result


def _print_validation(result: dict) -> None:
    sections = result["sections"]
    if "structure" in sections:
        s = sections["structure"]
        print(f"structure: {'accepted' if s['accepted'] else 'rejected'}")
        for reason in s["reasons"]:
            print(f"  reason: {reason}")
    if "api" in sections:
        for check in sections["api"]["checks"]:
            line = f"  {check['outcome'].upper():4} {check['name']}"
            if check["advice"]:
                line += f" -- {check['advice']}"
            print(line)
        print(f"feature API validation: {sections['api']['overall']}")
    if "ml" in sections:
        ml = sections["ml"]
        if "error" in ml:
            print(f"ML performance validation: rejected ({ml['error']})")
        else:
            detail = ""
            if ml.get("cmi") is not None:
                detail = f" (cmi={ml['cmi']:.4f} nats, threshold={ml['threshold']:.4f})"
            print(f"ML performance validation: {ml['outcome']}{detail}")
    print(f"overall: {'accepted' if result['accepted'] else 'rejected'}")


# ---------------------------------------------------------------------------
# commands


def cmd_quickstart(args) -> int:
    try:
        dest = scaffold(args.name, args.target, args.train, args.schema, args.dest)
    except (FeatureGateError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REJECTED
    for rel in ("featuregate.json", "data/train.csv", "data/schema.json", "README.md"):
        print(f"created {dest / rel}")
    return EXIT_OK


def _read_feature_file(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ProjectError(f"cannot read feature file: {exc}") from None


def cmd_validate(args) -> int:
    project = _load_project(args.project)
    document = _read_feature_file(args.feature)
    mode = "api-only" if args.api_only else "ml-only" if args.ml_only else "full"
    result = _run_validation(project, document, mode)
    if args.as_json:
        out = {"sections": result["sections"], "overall": "accepted" if result["accepted"] else "rejected"}
        print(json.dumps(out, indent=2, ensure_ascii=True, allow_nan=False))
    else:
        _print_validation(result)
    return EXIT_OK if result["accepted"] else EXIT_REJECTED


def cmd_submit(args) -> int:
    project = _load_project(args.project)
    document = _read_feature_file(args.feature)
    result = _run_validation(project, document, "full")
    _print_validation(result)
    if not result["accepted"]:
        print("submission rejected; project state unchanged")
        return EXIT_REJECTED
    ctx = result["context"]
    state: SelectionState = ctx["state"]
    fd = ctx["fd"]
    params = project.config.selection
    ml = result["sections"]["ml"]
    with project.lock():
        rel = project.write_feature(fd)
        state.accepted.append(
            AcceptedFeature(fd, np.ascontiguousarray(ctx["values"], dtype=np.float64), ctx["values"].shape[1])
        )
        pruned = []
        if params.accepter["kind"] == "sfds":
            pruned = prune(state, fd.key, ctx["dev"].target_column, params, ctx["cache"])
        event = {
            "seq": len(project.state.log),
            "submission": rel,
            "feature": fd.key,
            "estimator": "cmi/mixed-knn-mi",
            "k": params.k,
            "lambda1": params.lambda1,
            "lambda2": params.lambda2,
            "subsample_seed": params.seed,
            "eval_rows": min(ctx["dev"].row_count, params.eval_rows),
            "outcome": "accepted",
            "rule": ml["rule"],
            "cmi": ml["cmi"],
            "threshold": ml["threshold"],
            "displaced": ml.get("displaced"),
            "q": ctx["values"].shape[1],
            "pruned": pruned,
        }
        project.append_log(event)
        project.reload()
        for removal in pruned:
            attic = project.move_to_attic(removal["feature"])
            print(f"pruned {removal['feature']} -> {attic}")
        project.reload()
    print(f"accepted {fd.key} -> {rel}")
    return EXIT_OK


def cmd_engineer(args) -> int:
    project = _load_project(args.project)
    fitted = project.fitted_pipeline(workers=args.workers)
    schema = project.schema()
    try:
        raw = Path(args.input).read_bytes()
    except OSError as exc:
        print(f"error: cannot read input: {exc}", file=sys.stderr)
        return EXIT_ERROR
    header = raw.split(b"\n", 1)[0].decode("utf-8", errors="replace")
    load_schema = schema
    if schema.target and schema.target not in [h.strip('"') for h in header.split(",")]:
        load_schema = schema.drop(schema.target)
    try:
        table = load_table(raw, load_schema)
        matrix = transform(fitted, table, workers=args.workers)
    except FeatureGateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    Path(args.output).write_text(matrix.to_csv())
    print(f"wrote {matrix.row_count} rows x {len(matrix.names)} columns to {args.output}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    project = _load_project(args.project)
    stream_dir = Path(args.stream)
    if not stream_dir.is_dir():
        print(f"error: stream directory {stream_dir} not found", file=sys.stderr)
        return EXIT_ERROR
    paths = sorted(p for p in stream_dir.iterdir() if p.suffix == ".json")
    pair = project.split_pair()
    dev, holdout = pair.development, pair.holdout
    registry = project.registry()

    documents = {p.name: p.read_text() for p in paths}
    parsed: dict[str, object] = {}
    stream = []
    for name in sorted(documents):
        try:
            parsed[name] = parse_feature(documents[name])
        except FeatureGateError as exc:
            parsed[name] = exc
        stream.append((name, parsed[name] if not isinstance(parsed[name], Exception) else None))

    def gate(label, fd):
        if fd is None:
            return f"document does not parse: {parsed[label]}"
        report = validate_feature_api(
            documents[label], dev, holdout, project.config.validation, registry
        )
        if not report.accepted:
            failures = [c.name for c in report.checks if not c.passed]
            return f"feature API validation failed: {', '.join(failures)}"
        return None

    def fit_values(fd):
        pipeline = build_pipeline([fd], registry, dev.schema)
        return transform(fit_pipeline(pipeline, dev, workers=args.workers), dev, workers=args.workers).values

    state, events = run_sfds(stream, dev, project.config.selection, fit_values=fit_values, gate=gate)

    log_path = Path(args.log)
    log_path.parent.mkdir(parents=True, exist_ok=True)
    with log_path.open("w", encoding="utf-8") as fh:
        for event in events:
            fh.write(json.dumps(event, ensure_ascii=True, allow_nan=False) + "\n")

    pruned_total = sum(len(e.get("pruned", [])) for e in events)
    accepted_total = sum(1 for e in events if e["outcome"] == "accepted")
    if args.commit and events:
        surviving = {f.key for f in state.accepted}
        with project.lock():
            for f in state.accepted:
                project.write_feature(f.definition)
            for event in events:
                project.append_log(event)
            # features accepted but later pruned land in the attic
            for label in sorted(documents):
                fd = parsed[label]
                if isinstance(fd, Exception) or fd is None:
                    continue
                was_accepted = any(
                    e["feature"] == fd.key and e["outcome"] == "accepted" for e in events
                )
                if was_accepted and fd.key not in surviving:
                    attic = project.root / "features/attic" / f"user_{fd.author}"
                    attic.mkdir(parents=True, exist_ok=True)
                    (attic / f"feature_{fd.name}.json").write_text(documents[label])
        project.reload()
    print(
        f"submitted={len(stream)} accepted={accepted_total} "
        f"pruned={pruned_total} final={len(state.accepted)}"
    )
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "quickstart": cmd_quickstart,
        "validate": cmd_validate,
        "submit": cmd_submit,
        "engineer": cmd_engineer,
        "simulate": cmd_simulate,
    }
    try:
        return handlers[args.command](args)
    except FeatureGateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
