"""``sandbox``: one entry point for serving components, moving data, scoring and orchestration.

Exit codes: 0 success, 1 runtime or protocol failure, 2 usage or config error.
Options fall back to ``SANDBOX_<NAME>`` environment variables
(``SANDBOX_ENDPOINT``, ``SANDBOX_DATASET``, ``SANDBOX_TASK``, ...).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
import threading
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .schema import TASKS, AnnotationStoreRef, BundleParseError, BundleValidationError, SchemaError, UnknownTaskError

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad arguments or configuration (exit 2)."""


class CommandFailed(Exception):
    """Runtime or protocol failure (exit 1)."""


def _env(name: str, default: Any = None) -> Any:
    return os.environ.get(f"SANDBOX_{name}", default)


def _dump(value: Any) -> str:
    return json.dumps(value, indent=2, sort_keys=True, ensure_ascii=False)


def _task(name: str | None) -> str:
    if not name:
        raise UsageError("--task is required")
    try:
        return TASKS.get(name.upper()).name
    except UnknownTaskError:
        raise UsageError(f"unknown task {name!r}; known: {', '.join(TASKS.names())}") from None


# --- serve -----------------------------------------------------------

def _run_forever(handle: Any, label: str) -> int:
    def stop(signum: int, frame: Any) -> None:
        raise KeyboardInterrupt

    signal.signal(signal.SIGTERM, stop)
    print(f"{label} listening on {handle.url}", flush=True)
    try:
        handle.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        handle.server.server_close()
    return EXIT_OK


def _bind(app: Any, host: str, port: int) -> Any:
    from .httpserv import ServiceHandle

    try:
        return ServiceHandle(app, host, port)
    except OSError as exc:
        raise CommandFailed(f"cannot listen on {host}:{port}: {exc.strerror or exc}") from None


def cmd_serve_data_node(args: argparse.Namespace) -> int:
    from .datanode.service import DataNodeConfig, create_app
    from .datanode.store import DataNodeStore

    try:
        cfg = DataNodeConfig.load(args.config)
    except (OSError, ValueError) as exc:
        raise UsageError(f"bad data node config: {exc}") from None
    if args.host:
        cfg.host = args.host
    if args.port is not None:
        cfg.port = args.port
    if args.data_dir:
        cfg.data_dir = args.data_dir
    store = DataNodeStore.open(cfg.data_dir, fsync=cfg.fsync) if cfg.data_dir else DataNodeStore()
    try:
        return _run_forever(_bind(create_app(store), cfg.host, cfg.port), "data node")
    finally:
        store.close()


def cmd_serve_annotator(args: argparse.Namespace) -> int:
    from .annotator.service import create_tool_app
    from .annotator.tools import GoldEchoAnnotator, ReferenceAnnotator

    if args.tool == "gold-echo":
        if not (args.endpoint and args.dataset):
            raise UsageError("gold-echo needs --endpoint (data node) and --dataset")
        from .datanode.client import DataNodeError

        try:
            tool = GoldEchoAnnotator.from_data_node(args.endpoint, args.dataset)
        except DataNodeError as exc:
            raise CommandFailed(f"cannot load gold: {exc}") from None
    else:
        tool = ReferenceAnnotator()
    port = args.port if args.port is not None else int(_env("PORT", 8081))
    return _run_forever(_bind(create_tool_app(tool), args.host or _env("HOST", "127.0.0.1"), port), tool.metadata.name)


def cmd_serve_orchestrator(args: argparse.Namespace) -> int:
    from .orchestrator import Orchestrator, create_status_app

    orch = Orchestrator(_orch_config(args))
    orch.recover()
    stop = threading.Event()

    def worker() -> None:
        while not stop.wait(args.poll):
            try:
                orch.run_pending()
            except Exception:  # keep serving status even if one pass blows up
                logging.getLogger(__name__).exception("queue pass failed")

    threading.Thread(target=worker, name="queues", daemon=True).start()
    try:
        return _run_forever(_bind(create_status_app(orch), args.host or "127.0.0.1", args.port or 8090), "orchestrator")
    finally:
        stop.set()


# --- data ------------------------------------------------------------

def cmd_generate(args: argparse.Namespace) -> int:
    from dataclasses import replace

    from .corpus import CorpusConfig, CorpusConfigError, format_category_table, generate_corpus
    from .schema import write_bundle

    out = Path(args.out)
    if out.exists() and (not out.is_dir() or any(out.iterdir())):
        raise UsageError(f"{out} exists and is not an empty directory")
    try:
        cfg = CorpusConfig.load(args.config) if args.config else CorpusConfig()
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.notes is not None:
            cfg = replace(cfg, noteCount=args.notes)
    except (CorpusConfigError, TypeError) as exc:
        raise UsageError(f"bad corpus config: {exc}") from None
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from None
    bundle = generate_corpus(cfg)
    write_bundle(bundle, out)
    print(format_category_table(bundle))
    return EXIT_OK


def cmd_ingest(args: argparse.Namespace) -> int:
    from .datanode.client import DataNodeClient, DataNodeError, ingest_bundle
    from .schema import read_bundle

    endpoint = _need(args.endpoint, "--endpoint")
    try:
        bundle = read_bundle(args.bundle)
    except (BundleParseError, BundleValidationError, SchemaError, OSError) as exc:
        raise CommandFailed(f"bundle rejected, nothing pushed: {exc}") from None
    with DataNodeClient(endpoint) as client:
        try:
            summary = ingest_bundle(client, bundle, args.dataset)
        except DataNodeError as exc:
            if exc.status == 409:
                raise CommandFailed(f"conflict: {exc.detail or exc.title}; nothing changed") from None
            raise CommandFailed(f"ingest failed: {exc}") from None
    print(f"{summary['notes']} notes, {summary['stores']} stores")
    print(_dump(summary))
    return EXIT_OK


def cmd_export(args: argparse.Namespace) -> int:
    from .datanode.client import DataNodeClient, DataNodeError, export_bundle
    from .schema import write_bundle

    endpoint = _need(args.endpoint, "--endpoint")
    dataset = _need(args.dataset, "--dataset")
    out = Path(_need(args.out, "--out"))
    if out.exists() and any(out.iterdir()):
        raise UsageError(f"{out} is not empty")
    with DataNodeClient(endpoint) as client:
        try:
            bundle = export_bundle(client, dataset, args.fhir_store)
        except DataNodeError as exc:
            raise CommandFailed(f"export failed: {exc}") from None
    write_bundle(bundle, out)
    print(f"exported {len(bundle.notes)} notes and {len(bundle.gold)} stores to {out}")
    return EXIT_OK


def _need(value: Any, flag: str) -> Any:
    if not value:
        raise UsageError(f"{flag} is required")
    return value


# --- evaluate ----------------------------------------------------------

def cmd_evaluate(args: argparse.Namespace) -> int:
    """Independent-site flow: notes from the data node, annotations from the tool, scored locally."""
    from .annotator.client import ToolClient, ToolError
    from .datanode.client import NOTE_STORE_ID, DataNodeClient, DataNodeError, gold_store_id
    from .metrics import evaluate_category, format_table
    from .orchestrator import StageFailed, annotate_notes

    endpoint = _need(args.endpoint, "--endpoint")
    annotator = _need(args.annotator, "--annotator")
    dataset = _need(args.dataset, "--dataset")
    task = _task(args.task)
    fhir_store = args.fhir_store or NOTE_STORE_ID
    gold_ref = AnnotationStoreRef(dataset, args.gold_store or gold_store_id(task))

    with DataNodeClient(endpoint) as dn, ToolClient(annotator, timeout=args.timeout) as tool:
        # resolve everything before the first annotation call
        try:
            dn.get_dataset(dataset)
            dn.list_notes(dataset, fhir_store, limit=1)
            dn.get_annotation_store(gold_ref)
        except DataNodeError as exc:
            raise CommandFailed(f"data node: {exc}") from None
        try:
            metadata = tool.metadata()
        except (ToolError, ValueError) as exc:
            raise CommandFailed(f"annotator at {annotator}: {exc}") from None

        try:
            run = annotate_notes(tool, task, dn.iter_notes(dataset, fhir_store),
                                 per_note_timeout=args.timeout, max_violations=1)
        except StageFailed as exc:
            raise CommandFailed(f"annotator: {exc.reason}") from None
        except ToolError as exc:
            raise CommandFailed(f"annotator: {exc}") from None
        except DataNodeError as exc:
            raise CommandFailed(f"data node: {exc}") from None
        if run.violations:
            v = run.violations[0]
            raise CommandFailed(f"protocol violation on note {v.note_id}: {'; '.join(v.problems)}")
        try:
            gold = [a for a in dn.iter_annotations(gold_ref) if a.category == task]
        except DataNodeError as exc:
            raise CommandFailed(f"data node: {exc}") from None

    report = evaluate_category(gold, run.predictions, task)
    doc = {"dataset": dataset, "notes": run.notes, "tool": metadata.to_json(), "report": report.to_json()}
    if args.out:
        Path(args.out).write_text(_dump(doc) + "\n", encoding="utf-8")
    print(format_table([report], title=f"{metadata.name} on {dataset} ({run.notes} notes)"))
    return EXIT_OK


# --- orchestrate -------------------------------------------------------

def _orch_config(args: argparse.Namespace):
    from .orchestrator import ConfigError, OrchestratorConfig

    path = _need(args.config, "--config")
    try:
        return OrchestratorConfig.load(path)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


def _orchestrator(args: argparse.Namespace):
    from .orchestrator import Orchestrator

    return Orchestrator(_orch_config(args))


BUILTIN_TOOLS = {
    "reference": ["{python}", "-m", "fedsandbox.annotator", "--port", "{port}", "--tool", "reference"],
    "gold-echo": ["{python}", "-m", "fedsandbox.annotator", "--port", "{port}", "--tool", "gold-echo",
                  "--endpoint", "{data_node}", "--dataset", "{dataset_id}"],
}


def _tool_ref(args: argparse.Namespace):
    from .orchestrator import ToolRef

    given = [x for x in (args.tool, args.command, args.tool_endpoint) if x]
    if len(given) != 1:
        raise UsageError("give exactly one of --tool, --command, --tool-endpoint")
    if args.tool:
        return ToolRef.command_ref(*BUILTIN_TOOLS[args.tool])
    if args.command:
        import shlex

        return ToolRef.command_ref(*shlex.split(args.command))
    return ToolRef.endpoint_ref(args.tool_endpoint)


def cmd_orch_submit(args: argparse.Namespace) -> int:
    from .orchestrator import SubmissionRejected

    orch = _orchestrator(args)
    ref = _tool_ref(args)
    ids = []
    for queue in args.task or [_env("TASK")]:
        try:
            ids.append(orch.submit(ref, _task(queue)))
        except SubmissionRejected as exc:
            raise UsageError(str(exc)) from None
    print("\n".join(ids))
    return EXIT_OK


def _state_line(sub: Any) -> str:
    line = f"{sub.id}  {sub.queue}  {sub.state.value}"
    if sub.failure:
        line += f"  reason={sub.failure.reason!r} stage={sub.failure.stage}"
    return line


def cmd_orch_run(args: argparse.Namespace) -> int:
    from .orchestrator import RunnerBusy, SubmissionRejected, SubmissionState, UnknownSubmission

    orch = _orchestrator(args)
    try:
        orch.recover()
        if args.submission:
            subs = [orch.run_submission(args.submission)]
        else:
            subs = orch.run_pending()
    except UnknownSubmission as exc:
        raise CommandFailed(f"unknown submission {exc}") from None
    except (RunnerBusy, SubmissionRejected) as exc:
        raise CommandFailed(str(exc)) from None
    for sub in subs:
        print(_state_line(sub))
    return EXIT_OK if all(s.state is SubmissionState.COMPLETE for s in subs) else EXIT_FAILURE


def cmd_orch_status(args: argparse.Namespace) -> int:
    from .orchestrator import SubmissionState, UnknownSubmission

    orch = _orchestrator(args)
    try:
        sub = orch.get(args.submission)
    except UnknownSubmission:
        raise CommandFailed(f"unknown submission {args.submission}") from None
    if args.json:
        print(_dump(sub.public_json()))
        return EXIT_OK
    path = [s for s in SubmissionState if s is not SubmissionState.FAILED]
    reached = sub.failure.stage if sub.failure else sub.state.value
    print(" > ".join(f"[{s.value}]" if s.value == reached else s.value for s in path))
    print(_state_line(sub))
    for detail in sub.failure.details if sub.failure else ():
        print(f"  {detail}")
    return EXIT_OK


def cmd_orch_leaderboard(args: argparse.Namespace) -> int:
    orch = _orchestrator(args)
    queue = _task(args.task) if args.task else None
    page = orch.get_leaderboard(queue, args.offset, args.limit)
    if args.json:
        print(_dump(page.to_json()))
        return EXIT_OK
    rows = [("submission", "queue", "tool", "site", "inst P", "inst R", "inst F1", "tok P", "tok R", "tok F1", "completedAt")]
    for rec in page.items:
        for site, rep in sorted(rec["siteReports"].items()):
            i, t = rep["instance"], rep["token"]
            rows.append((rec["submissionId"], rec["queue"], rec["toolMetadata"].get("name", "?"), site,
                         *(f"{x:.2f}" for x in (i["precision"], i["recall"], i["f1"], t["precision"], t["recall"], t["f1"])),
                         rec["completedAt"]))
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    for r in rows:
        print("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
    return EXIT_OK


def cmd_orch_diagnostics(args: argparse.Namespace) -> int:
    from .orchestrator import PolicyError, UnknownSubmission

    orch = _orchestrator(args)
    try:
        doc = orch.error_spans(args.submission, args.errors_for) if args.errors_for else orch.diagnostics(args.submission)
    except UnknownSubmission as exc:
        raise CommandFailed(f"not found: {exc}") from None
    except PolicyError as exc:
        raise CommandFailed(f"refused: {exc}") from None
    print(_dump(doc))
    return EXIT_OK


# --- parser ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sandbox", description="Federated evaluation sandbox for clinical annotation tools")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run a component as a service")
    comp = serve.add_subparsers(dest="component", required=True)
    dn = comp.add_parser("data-node")
    dn.add_argument("--config", default=_env("CONFIG"))
    dn.add_argument("--host")
    dn.add_argument("--port", type=int)
    dn.add_argument("--data-dir")
    dn.set_defaults(func=cmd_serve_data_node)
    an = comp.add_parser("annotator")
    an.add_argument("--tool", choices=sorted(BUILTIN_TOOLS), default="reference")
    an.add_argument("--endpoint", default=_env("ENDPOINT"), help="data node (gold-echo only)")
    an.add_argument("--dataset", default=_env("DATASET"))
    an.add_argument("--host")
    an.add_argument("--port", type=int)
    an.set_defaults(func=cmd_serve_annotator)
    orch = comp.add_parser("orchestrator")
    orch.add_argument("--config", default=_env("CONFIG"))
    orch.add_argument("--host")
    orch.add_argument("--port", type=int)
    orch.add_argument("--poll", type=float, default=2.0, help="seconds between queue passes")
    orch.set_defaults(func=cmd_serve_orchestrator)

    gen = sub.add_parser("generate", help="write a synthetic bundle")
    gen.add_argument("--config", default=_env("CONFIG"))
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int)
    gen.add_argument("--notes", type=int)
    gen.set_defaults(func=cmd_generate)

    ing = sub.add_parser("ingest", help="push a bundle into a data node")
    ing.add_argument("bundle")
    ing.add_argument("--endpoint", default=_env("ENDPOINT"))
    ing.add_argument("--dataset", default=_env("DATASET"))
    ing.set_defaults(func=cmd_ingest)

    exp = sub.add_parser("export", help="pull a dataset back into a bundle")
    exp.add_argument("--endpoint", default=_env("ENDPOINT"))
    exp.add_argument("--dataset", default=_env("DATASET"))
    exp.add_argument("--fhir-store", default="fhir")
    exp.add_argument("--out", default=_env("OUT"))
    exp.set_defaults(func=cmd_export)

    ev = sub.add_parser("evaluate", help="score an annotator against one data node")
    ev.add_argument("--endpoint", default=_env("ENDPOINT"), help="data node URL")
    ev.add_argument("--annotator", default=_env("ANNOTATOR"), help="annotator URL")
    ev.add_argument("--dataset", default=_env("DATASET"))
    ev.add_argument("--task", default=_env("TASK"))
    ev.add_argument("--fhir-store", default=_env("FHIR_STORE"))
    ev.add_argument("--gold-store", default=_env("GOLD_STORE"))
    ev.add_argument("--timeout", type=float, default=30.0, help="per-note seconds")
    ev.add_argument("--out", default=_env("OUT"))
    ev.set_defaults(func=cmd_evaluate)

    oc = sub.add_parser("orchestrate", help="submission queues and leaderboard")
    ops = oc.add_subparsers(dest="op", required=True)

    def with_config(name: str, **kw: Any) -> argparse.ArgumentParser:
        sp = ops.add_parser(name, **kw)
        sp.add_argument("--config", default=_env("CONFIG"))
        return sp

    s = with_config("submit")
    s.add_argument("--task", action="append", help="queue; repeat for several")
    s.add_argument("--tool", choices=sorted(BUILTIN_TOOLS))
    s.add_argument("--command", help="tool command line with {port} etc. placeholders")
    s.add_argument("--tool-endpoint")
    s.set_defaults(func=cmd_orch_submit)
    r = with_config("run")
    r.add_argument("submission", nargs="?")
    r.set_defaults(func=cmd_orch_run)
    st = with_config("status")
    st.add_argument("submission")
    st.add_argument("--json", action="store_true")
    st.set_defaults(func=cmd_orch_status)
    lb = with_config("leaderboard")
    lb.add_argument("--task")
    lb.add_argument("--offset", type=int, default=0)
    lb.add_argument("--limit", type=int, default=100)
    lb.add_argument("--json", action="store_true")
    lb.set_defaults(func=cmd_orch_leaderboard)
    d = with_config("diagnostics")
    d.add_argument("submission")
    d.add_argument("--errors-for", metavar="SITE")
    d.set_defaults(func=cmd_orch_diagnostics)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CommandFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
