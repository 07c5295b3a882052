"""HTTP JSON API over a loaded model bundle.

One immutable bundle serves all requests; reload swaps it atomically. The
response schema is the shared contract consumed by the writing-assistant UI
(schema/generate_response.schema.json).
"""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .group import (GenerateOptions, GenerationError, GenerationGroup, ModelBundle,
                    STRATEGIES, generate_group)

log = logging.getLogger("cqgen.service")


class GenerateRequest(BaseModel):
    context: str
    strategy: str = "beam"
    slots: int = Field(default=3, ge=1)
    candidate_budget: int = 6
    exclude_keywords: list[str] = Field(default_factory=list)
    truth_keywords: Optional[list[str]] = None
    seed: int = 0


class QuestionOut(BaseModel):
    text: str
    keywords: list[str]
    score: float


class KeywordProb(BaseModel):
    keyword: str
    prob: float


class FilteredKeyword(BaseModel):
    keyword: str
    reason: str


class GenerateResponse(BaseModel):
    questions: list[QuestionOut]
    predicted_keywords: list[KeywordProb]
    filtered_keywords: list[FilteredKeyword]
    excluded_keywords: list[str]
    keyword_sets: list[list[str]]
    warnings: list[str]
    strategy: str
    model_version: str


def group_to_response(group: GenerationGroup, bundle: ModelBundle) -> GenerateResponse:
    questions = []
    for h in group.selected:
        questions.append(QuestionOut(
            text=" ".join(h.text_tokens(bundle.token_vocab)),
            keywords=sorted(h.keyword_set),
            score=h.score,
        ))
    return GenerateResponse(
        questions=questions,
        predicted_keywords=[KeywordProb(keyword=k, prob=p) for k, p in group.predicted_keywords],
        filtered_keywords=[FilteredKeyword(keyword=k, reason=f"context matches {r!r}")
                           for k, r in sorted(group.filtered_keywords.items())],
        excluded_keywords=group.excluded_keywords,
        keyword_sets=group.keyword_sets,
        warnings=group.warnings,
        strategy=group.strategy,
        model_version=bundle.version,
    )


def create_app(bundle_dir: str | Path | None = None, bundle: ModelBundle | None = None,
               preload: bool = True) -> FastAPI:
    app = FastAPI(title="cqgen", docs_url=None, redoc_url=None)
    app.state.bundle = bundle
    app.state.bundle_dir = str(bundle_dir) if bundle_dir else None

    def load_bundle() -> None:
        if app.state.bundle is None and app.state.bundle_dir:
            app.state.bundle = ModelBundle.load(app.state.bundle_dir)
            log.info("loaded bundle %s (version %s)", app.state.bundle_dir, app.state.bundle.version)

    if preload:
        load_bundle()
    app.state.reload = load_bundle

    @app.middleware("http")
    async def request_log(request: Request, call_next):
        t0 = time.time()
        response = await call_next(request)
        log.info(json.dumps({
            "path": request.url.path,
            "method": request.method,
            "status": response.status_code,
            "latency_ms": round(1000 * (time.time() - t0), 2),
        }))
        return response

    def require_bundle() -> ModelBundle:
        b = app.state.bundle
        if b is None:
            raise HTTPException(status_code=503, detail="model bundle not loaded")
        return b

    @app.get("/health")
    def health():
        b = app.state.bundle
        if b is None:
            return JSONResponse(status_code=503, content={"status": "loading"})
        return {
            "status": "ok",
            "model_version": b.version,
            "token_vocab_digest": b.token_vocab.digest(),
            "keyword_vocab_digest": b.keyword_vocab.digest(),
        }

    @app.post("/keywords")
    def keywords(payload: dict):
        b = require_bundle()
        context = str(payload.get("context", "")).strip()
        if not context:
            raise HTTPException(status_code=400, detail="empty context")
        from . import textproc
        from .corpus import MAX_CONTEXT_LEN

        tokens = textproc.tokenize(textproc.clean_context(context))[:MAX_CONTEXT_LEN]
        if not tokens:
            raise HTTPException(status_code=400, detail="empty context")
        logits = b.predictor.predict(tokens)
        ranked = logits.ranked()
        return {"keywords": [
            {"keyword": b.keyword_vocab.entries[i], "prob": float(logits.probs[i])}
            for i in ranked
        ]}

    @app.post("/generate", response_model=GenerateResponse)
    def generate(req: GenerateRequest):
        b = require_bundle()
        if req.strategy not in STRATEGIES:
            raise HTTPException(status_code=400,
                                detail=f"unknown strategy {req.strategy!r}; expected one of {list(STRATEGIES)}")
        if not req.context.strip():
            raise HTTPException(status_code=400, detail="empty context")
        if req.strategy == "truth" and not req.truth_keywords:
            raise HTTPException(status_code=422, detail="strategy 'truth' requires truth_keywords")
        try:
            options = GenerateOptions(
                slots=req.slots,
                candidate_budget=req.candidate_budget,
                exclude=frozenset(req.exclude_keywords),
                truth_keywords=req.truth_keywords,
                seed=req.seed,
            )
            group = generate_group(b, req.context, req.strategy, options)
        except GenerationError as e:
            raise HTTPException(status_code=400, detail=str(e))
        except Exception as e:  # wrapped, never a bare crash
            log.exception("generation failed")
            raise HTTPException(status_code=500, detail=f"generation failed: {e}")
        return group_to_response(group, b)

    return app


def serve(bundle_dir: str | Path, host: str = "127.0.0.1", port: int = 8000) -> None:
    import uvicorn

    app = create_app(bundle_dir=bundle_dir)
    uvicorn.run(app, host=host, port=port, log_level="info")
