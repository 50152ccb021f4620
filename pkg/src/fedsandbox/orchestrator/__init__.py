"""Submission queues, the two-stage federated evaluation and the leaderboard."""

from .api import create_status_app
from .engine import (
    Orchestrator,
    PolicyError,
    RunnerBusy,
    StageFailed,
    SteppingClock,
    SubmissionRejected,
    UnknownSubmission,
    annotate_notes,
)
from .launcher import EndpointLauncher, LaunchContext, LaunchError, SubprocessLauncher, isolated_env
from .models import (
    Budget,
    ConfigError,
    Failure,
    LauncherConfig,
    LeaderboardRecord,
    OrchestratorConfig,
    SiteConfig,
    SiteRole,
    Submission,
    SubmissionState,
    ToolRef,
    check_transition,
)

__all__ = [
    "Budget", "ConfigError", "EndpointLauncher", "Failure", "LaunchContext", "LaunchError",
    "LauncherConfig", "LeaderboardRecord", "Orchestrator", "OrchestratorConfig", "PolicyError",
    "RunnerBusy", "SiteConfig", "SiteRole", "StageFailed", "SteppingClock", "Submission",
    "SubmissionRejected", "SubmissionState", "SubprocessLauncher", "ToolRef", "UnknownSubmission",
    "annotate_notes", "check_transition", "create_status_app", "isolated_env",
]
