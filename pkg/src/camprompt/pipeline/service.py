"""HTTP service for the review UI: runs, queues, items, decisions, export.

All endpoints are versioned under /api/v1 and speak JSON; masks travel
run-length encoded exactly as stored in the proposal manifests.
"""
from __future__ import annotations

import json
import threading
from pathlib import Path
from typing import Literal, Optional

from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse
from pydantic import BaseModel, Field

from ..errors import ContractViolation
from .export import (
    ReviewDecision,
    append_decision,
    export_dataset,
    latest_decisions,
    load_decision_history,
    proposal_path,
)

API_PREFIX = "/api/v1"


class DecisionIn(BaseModel):
    run_id: str
    image_id: str
    class_id: int = Field(ge=0)
    decision: Literal["accept", "reject_all"]
    mask_index: Optional[int] = None
    reviewer: str = "anonymous"


class ExportIn(BaseModel):
    out_dir: Optional[str] = None
    split_name: str = "review"


def _load_manifest(runs_root: Path, run_id: str) -> dict:
    manifest_path = runs_root / run_id / "manifest.json"
    if not manifest_path.exists():
        raise HTTPException(status_code=404, detail=f"unknown run: {run_id}")
    return json.loads(manifest_path.read_text())


def _queue_items(runs_root: Path, run_id: str, manifest: dict) -> list[dict]:
    run_dir = runs_root / run_id
    names = {cid: name for cid, name in manifest["catalog"]["classes"]}
    decided = set(latest_decisions(run_dir))
    items = []
    for path in sorted((run_dir / "proposals").glob("*.json")):
        image_id, class_part = path.stem.rsplit(".", 1)
        class_id = int(class_part)
        data = json.loads(path.read_text())
        items.append({
            "image_id": image_id,
            "class_id": class_id,
            "class_name": names.get(class_id, str(class_id)),
            "n_masks": len(data["masks"]),
            "top_score": max(m["score"] for m in data["masks"]),
            "decided": (image_id, class_id) in decided,
            "item_url": f"{API_PREFIX}/items/{image_id}/{class_id}?run={run_id}",
        })
    # most uncertain first: ascending top backend score
    items.sort(key=lambda item: (item["top_score"], item["image_id"], item["class_id"]))
    return items


def create_app(runs_root: Path | str) -> FastAPI:
    runs_root = Path(runs_root)
    app = FastAPI(title="camprompt review service")
    write_lock = threading.Lock()

    @app.get(f"{API_PREFIX}/runs")
    def list_runs() -> list[dict]:
        runs = []
        for manifest_path in sorted(runs_root.glob("*/manifest.json")):
            manifest = json.loads(manifest_path.read_text())
            run_dir = manifest_path.parent
            queue = _queue_items(runs_root, manifest["run_id"], manifest)
            runs.append({
                "run_id": manifest["run_id"],
                "mode": manifest["mode"],
                "split": manifest["split"],
                "flagged": manifest["flagged"],
                "n_items": len(queue),
                "n_undecided": sum(1 for item in queue if not item["decided"]),
            })
        return runs

    @app.get(f"{API_PREFIX}/runs/{{run_id}}/queue")
    def get_queue(run_id: str) -> list[dict]:
        manifest = _load_manifest(runs_root, run_id)
        return [
            item for item in _queue_items(runs_root, run_id, manifest)
            if not item["decided"]
        ]

    @app.get(f"{API_PREFIX}/items/{{image_id}}/{{class_id}}")
    def get_item(image_id: str, class_id: int, run: str) -> dict:
        manifest = _load_manifest(runs_root, run)
        run_dir = runs_root / run
        path = proposal_path(run_dir, image_id, class_id)
        if not path.exists():
            raise HTTPException(
                status_code=404, detail=f"unknown item: {image_id}/{class_id}"
            )
        data = json.loads(path.read_text())
        names = {cid: name for cid, name in manifest["catalog"]["classes"]}
        decision = latest_decisions(run_dir).get((image_id, class_id))
        cam_name = f"{image_id}.{class_id}.cam.png"
        has_cam = (run_dir / "cams" / cam_name).exists()
        return {
            "image_id": image_id,
            "class_id": class_id,
            "class_name": names.get(class_id, str(class_id)),
            "prompt": data["prompt"],
            "size": data["size"],
            "masks": [
                {"rle": m["rle"], "score": m["score"],
                 "n_pixels": sum(m["rle"][1::2])}
                for m in data["masks"]
            ],
            "image_url": f"{API_PREFIX}/runs/{run}/images/{image_id}",
            "cam_url": f"{API_PREFIX}/runs/{run}/cams/{cam_name}" if has_cam else None,
            "decision": None if decision is None else {
                "decision": decision.decision,
                "mask_index": decision.mask_index,
                "reviewer": decision.reviewer,
                "decided_at": decision.decided_at,
            },
        }

    @app.get(f"{API_PREFIX}/runs/{{run_id}}/images/{{image_id}}")
    def get_image(run_id: str, image_id: str) -> FileResponse:
        _load_manifest(runs_root, run_id)
        paths = json.loads((runs_root / run_id / "image_paths.json").read_text())
        source = paths.get(image_id)
        if source is None or not Path(source).exists():
            raise HTTPException(status_code=404, detail=f"unknown image: {image_id}")
        return FileResponse(source)

    @app.get(f"{API_PREFIX}/runs/{{run_id}}/cams/{{cam_name}}")
    def get_cam(run_id: str, cam_name: str) -> FileResponse:
        _load_manifest(runs_root, run_id)
        path = (runs_root / run_id / "cams" / cam_name).resolve()
        if not path.is_file() or path.parent != (runs_root / run_id / "cams").resolve():
            raise HTTPException(status_code=404, detail=f"unknown CAM: {cam_name}")
        return FileResponse(path)

    @app.post(f"{API_PREFIX}/decisions")
    def post_decision(payload: DecisionIn) -> dict:
        _load_manifest(runs_root, payload.run_id)
        run_dir = runs_root / payload.run_id
        try:
            decision = ReviewDecision(
                image_id=payload.image_id,
                class_id=payload.class_id,
                decision=payload.decision,
                mask_index=payload.mask_index,
                reviewer=payload.reviewer,
            )
            with write_lock:
                history_length = append_decision(run_dir, decision)
        except ContractViolation as exc:
            raise HTTPException(
                status_code=422,
                detail=[{"loc": ["body"], "msg": str(exc), "type": "value_error"}],
            ) from exc
        return {
            "status": "recorded",
            "image_id": payload.image_id,
            "class_id": payload.class_id,
            "decision": payload.decision,
            "mask_index": payload.mask_index,
            "history_length": history_length,
            "n_undecided": sum(
                1 for item in _queue_items(runs_root, payload.run_id,
                                           _load_manifest(runs_root, payload.run_id))
                if not item["decided"]
            ),
        }

    @app.post(f"{API_PREFIX}/runs/{{run_id}}/export")
    def post_export(run_id: str, payload: Optional[ExportIn] = None) -> dict:
        _load_manifest(runs_root, run_id)
        payload = payload or ExportIn()
        with write_lock:
            return export_dataset(
                runs_root / run_id,
                out_dir=payload.out_dir,
                split_name=payload.split_name,
            )

    @app.get(f"{API_PREFIX}/runs/{{run_id}}/decisions")
    def get_decisions(run_id: str) -> dict:
        _load_manifest(runs_root, run_id)
        history = load_decision_history(runs_root / run_id)
        return {
            "history": [
                {"image_id": d.image_id, "class_id": d.class_id,
                 "decision": d.decision, "mask_index": d.mask_index,
                 "reviewer": d.reviewer, "decided_at": d.decided_at}
                for d in history
            ]
        }

    return app


def serve(runs_root: Path | str, port: int = 8000, host: str = "127.0.0.1") -> None:
    """Run the review service (blocking)."""
    import uvicorn

    uvicorn.run(create_app(runs_root), host=host, port=port)
