"""HTTP service: ``POST /classify`` and ``GET /healthz`` over an immutable
(encoder, index) snapshot."""

from __future__ import annotations

from typing import Optional

from fastapi import FastAPI, HTTPException
from fastapi.concurrency import run_in_threadpool
from pydantic import BaseModel, Field

from . import __version__
from .classifier import Classifier
from .errors import ConfigError, DataError, EmbeddingFailure, OccuAlignError

MAX_K = 100


class ClassifyRequest(BaseModel):
    title: str = Field(..., min_length=1, description="Free-form job title")
    qualification: Optional[str] = Field(None, description="Qualification category, group name or label")
    skills: list[str] = Field(default_factory=list)
    k: Optional[int] = Field(None, ge=1, le=MAX_K)
    managerial: bool = False


class NeighborOut(BaseModel):
    id: int
    key: str
    cosine_similarity: float
    kldb: str
    isced: list[str]
    term: Optional[str] = None


class ClassifyResponse(BaseModel):
    query: str
    kldb: str
    kldb_by_level: dict[str, str]
    kldb_derived_from_type: dict[str, str]
    isced: list[str]
    vote_tallies: dict[str, dict[str, int]]
    tie_broken: dict[str, bool]
    neighbors: list[NeighborOut]


class Health(BaseModel):
    status: str
    version: str
    items: int
    dim: int
    encoder: str
    default_k: int


def create_app(classifier: Classifier) -> FastAPI:
    app = FastAPI(title="occu-align", version=__version__)
    app.state.classifier = classifier

    @app.get("/healthz", response_model=Health)
    def healthz() -> Health:
        return Health(
            status="ok",
            version=__version__,
            items=len(classifier.index),
            dim=classifier.index.dim,
            encoder=classifier.provider.id(),
            default_k=classifier.k,
        )

    @app.post("/classify", response_model=ClassifyResponse)
    async def classify(req: ClassifyRequest) -> dict:
        try:
            res = await run_in_threadpool(
                classifier.classify, req.title, req.qualification, req.skills, req.k, req.managerial
            )
        except EmbeddingFailure as exc:
            raise HTTPException(422, f"{type(exc).__name__}: {exc}") from exc
        except (DataError, ConfigError) as exc:
            raise HTTPException(422, f"{type(exc).__name__}: {exc}") from exc
        except OccuAlignError as exc:
            raise HTTPException(500, f"{type(exc).__name__}: {exc}") from exc
        return res.to_json()

    return app
