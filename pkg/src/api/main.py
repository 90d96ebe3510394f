"""FastAPI backend exposing checkpoint evaluation."""

from typing import Literal, Optional

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

# We need to import from proto_adapt - adjust path
import sys
import os

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))
from proto_adapt.errors import ProtoAdaptError
from proto_adapt.evaluation import evaluate
from proto_adapt.metrics import format_table

app = FastAPI(
    title="Proto Adapt",
    description="Evaluate source-only and adapted pixel classifiers",
    version="0.1.0",
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


class EvaluateRequest(BaseModel):
    """Request model for checkpoint evaluation."""

    checkpoint: str
    dataset: str
    domain: Literal["source", "target"] = "target"


class EvaluateResponse(BaseModel):
    """Response model for checkpoint evaluation."""

    success: bool
    per_class: Optional[dict[str, Optional[float]]] = None
    overall: Optional[float] = None
    table: Optional[str] = None
    error: Optional[str] = None


@app.post("/api/evaluate", response_model=EvaluateResponse)
def evaluate_checkpoint(request: EvaluateRequest):
    """Per-class and overall IoU of a checkpoint on a dataset file."""
    try:
        report = evaluate(request.checkpoint, request.dataset, request.domain)
    except ProtoAdaptError as e:
        return EvaluateResponse(success=False, error=str(e))
    except Exception as e:
        return EvaluateResponse(success=False, error=f"Unexpected error: {str(e)}")

    summary = report.to_dict()
    return EvaluateResponse(
        success=True,
        per_class=summary["per_class"],
        overall=summary["overall"],
        table=format_table({os.path.basename(request.checkpoint): report}),
    )


if __name__ == "__main__":
    import uvicorn

    uvicorn.run(app, host="0.0.0.0", port=8000)
