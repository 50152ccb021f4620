"""HTTP surface of an annotator tool."""

from __future__ import annotations

from ..httpserv import App, HTTPError, Request, Response, redirect
from ..schema import TASKS, ClinicalNote, SchemaError
from .tools import Annotator

BASE = "/api/v1"

_DOCS = """<!doctype html>
<html><head><meta charset="utf-8"><title>{name} API</title></head>
<body><h1>{name} {version}</h1><p>{description}</p>
<p>POST a JSON body <code>{{"note": {{...}}}}</code> to any task endpoint:</p>
<ul>{rows}</ul>
<p><a href="{base}/tool">{base}/tool</a> returns the tool metadata.</p>
</body></html>
"""


def create_tool_app(tool: Annotator) -> App:
    app = App(tool.metadata.name)
    tasks = [TASKS.get(t) for t in TASKS.names() if t in tool.tasks]

    @app.route("GET", "/")
    def root(req: Request) -> Response:
        return redirect(f"{BASE}/tool")

    @app.route("GET", "/api")
    def api(req: Request) -> Response:
        return redirect(f"{BASE}/ui")

    @app.route("GET", f"{BASE}/ui")
    def ui(req: Request) -> Response:
        meta = tool.metadata
        rows = "".join(f"<li><code>POST {BASE}/{t.endpoint}</code> ({t.name})</li>" for t in tasks)
        html = _DOCS.format(name=meta.name, version=meta.version, description=meta.description, rows=rows, base=BASE)
        return Response(200, html, content_type="text/html")

    @app.route("GET", f"{BASE}/tool")
    def metadata(req: Request) -> Response:
        return Response(200, tool.metadata.to_json())

    for task in tasks:
        app.route("POST", f"{BASE}/{task.endpoint}")(_task_handler(tool, task.name, task.endpoint))
    return app


def _task_handler(tool: Annotator, task: str, key: str):
    def handle(req: Request) -> Response:
        body = req.json()
        if not isinstance(body, dict) or not isinstance(body.get("note"), dict):
            raise HTTPError(400, "Bad Request", "body must be {\"note\": {...}}")
        try:
            note = ClinicalNote.from_json(body["note"])
        except SchemaError as exc:
            raise HTTPError(400, "Bad Request", str(exc)) from None
        problems = note.violations()
        if problems:
            raise HTTPError(400, "Bad Request", "; ".join(problems))
        anns = tool.annotate(task, note)
        return Response(200, {key: [a.to_json(category=False, note_id=False) for a in anns]})

    return handle
