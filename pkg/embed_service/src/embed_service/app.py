"""FastAPI app implementing ``POST /v1/embed`` and ``GET /healthz``.

Errors carry ``{"error": "..."}`` bodies: 400 for malformed requests,
401 for a bad bearer token, 413 for oversized batches, 503 before the
checkpoint has loaded.
"""

from __future__ import annotations

from contextlib import asynccontextmanager
from typing import Literal, Optional

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .config import ServiceConfig
from .model import EmbeddingModel


class EmbedRequest(BaseModel):
    texts: list[str] = Field(min_length=1)
    pooling: Literal["mean", "none"] = "mean"
    layer: Literal["last", "input"] = "last"


def create_app(config: Optional[ServiceConfig] = None,
               preload: bool = True) -> FastAPI:
    config = config or ServiceConfig()

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        if preload and app.state.model is None:
            app.state.model = EmbeddingModel(config)
        yield

    app = FastAPI(title="embed-service", lifespan=lifespan)
    app.state.model = None
    app.state.config = config

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request: Request,
                                  exc: RequestValidationError):
        return JSONResponse(status_code=400,
                            content={"error": "malformed request"})

    @app.exception_handler(HTTPException)
    async def on_http_error(request: Request, exc: HTTPException):
        return JSONResponse(status_code=exc.status_code,
                            content={"error": str(exc.detail)})

    @app.exception_handler(Exception)
    async def on_internal_error(request: Request, exc: Exception):
        return JSONResponse(status_code=500,
                            content={"error": f"internal error: {exc}"})

    def require_loaded() -> EmbeddingModel:
        model = app.state.model
        if model is None:
            raise HTTPException(status_code=503, detail="model not loaded")
        return model

    def check_auth(request: Request) -> None:
        if not config.token:
            return
        header = request.headers.get("Authorization", "")
        if header != f"Bearer {config.token}":
            raise HTTPException(status_code=401, detail="invalid bearer token")

    @app.get("/healthz")
    async def healthz():
        model = require_loaded()
        return {"status": "ok", "model": config.model_name,
                "dim": model.hidden_size}

    @app.post("/v1/embed")
    async def embed(request: Request, body: EmbedRequest):
        check_auth(request)
        model = require_loaded()
        if len(body.texts) > config.max_batch:
            raise HTTPException(
                status_code=413,
                detail=f"batch of {len(body.texts)} exceeds "
                       f"max_batch={config.max_batch}")
        if any(not t.strip() for t in body.texts):
            raise HTTPException(status_code=400, detail="empty text")
        embeddings, warnings = model.embed(body.texts, body.pooling,
                                           body.layer)
        response = {"model": config.model_name, "dim": model.hidden_size,
                    "embeddings": embeddings}
        if warnings:
            response["warnings"] = warnings
        return response

    return app
