from .export import (
    ReviewDecision,
    append_decision,
    export_dataset,
    latest_decisions,
    load_decision_history,
)
from .runner import RunManifest, RunResult, derive_run_id, run_batch
from .service import create_app, serve

__all__ = [
    "ReviewDecision",
    "RunManifest",
    "RunResult",
    "append_decision",
    "create_app",
    "derive_run_id",
    "export_dataset",
    "latest_decisions",
    "load_decision_history",
    "run_batch",
    "serve",
]
