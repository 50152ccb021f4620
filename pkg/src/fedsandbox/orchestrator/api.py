"""Read-only HTTP status API over an :class:`Orchestrator`."""

from __future__ import annotations

from ..httpserv import App, HTTPError, Request, Response
from ..schema import TASKS
from .engine import Orchestrator, PolicyError, UnknownSubmission


def create_status_app(orch: Orchestrator) -> App:
    app = App("fedsandbox-orchestrator")

    @app.route("GET", "/api/v1/submissions/{submissionId}")
    def status(req: Request) -> Response:
        try:
            return Response(200, orch.get(req.params["submissionId"]).public_json())
        except UnknownSubmission:
            raise HTTPError(404, "Not Found", f"no submission {req.params['submissionId']}") from None

    @app.route("GET", "/api/v1/submissions/{submissionId}/diagnostics")
    def diagnostics(req: Request) -> Response:
        sub_id = req.params["submissionId"]
        site = req.query.get("errorsFor")
        try:
            if site:
                return Response(200, orch.error_spans(sub_id, site))
            return Response(200, orch.diagnostics(sub_id))
        except UnknownSubmission as exc:
            raise HTTPError(404, "Not Found", str(exc)) from None
        except PolicyError as exc:
            raise HTTPError(403, "Forbidden", str(exc)) from None

    @app.route("GET", "/api/v1/leaderboard")
    def leaderboard(req: Request) -> Response:
        queue = req.query.get("queue")
        if queue is not None and queue not in TASKS:
            raise HTTPError(400, "Bad Request", f"unknown queue {queue!r}")
        offset = req.int_param("offset", 0, 0)
        limit = req.int_param("limit", 100, 1, 1000)
        return Response(200, orch.get_leaderboard(queue, offset, limit).to_json())

    return app
