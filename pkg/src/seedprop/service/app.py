"""FastAPI application exposing the grounding pipeline.

The service shares a filesystem with its clients: requests carry paths, large
tensors never travel over the wire.  Error mapping: validation problems are
400 with kind "validation", missing files are 404 with kind "io", anything
else is 500 with kind "internal".
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import ValidationError
from . import handlers, schemas


def create_app() -> FastAPI:
    app = FastAPI(title="seedprop", version=__version__)

    @app.exception_handler(ValidationError)
    async def _validation_error(request: Request, exc: ValidationError):
        return JSONResponse(status_code=400, content={"kind": "validation", "error": str(exc)})

    @app.exception_handler(OSError)
    async def _os_error(request: Request, exc: OSError):
        return JSONResponse(status_code=404, content={"kind": "io", "error": str(exc)})

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/ground", response_model=schemas.GroundResponse)
    def ground(req: schemas.GroundRequest):
        return handlers.ground(req)

    @app.post("/eval", response_model=schemas.EvalResponse)
    def evaluate(req: schemas.EvalRequest):
        return handlers.evaluate(req)

    @app.post("/stats", response_model=schemas.StatsResponse)
    def stats(req: schemas.StatsRequest):
        return handlers.stats(req)

    @app.post("/sweep", response_model=schemas.SweepResponse)
    def sweep(req: schemas.SweepRequest):
        return handlers.sweep(req)

    @app.post("/synth", response_model=schemas.SynthResponse)
    def synth(req: schemas.SynthRequest):
        return handlers.synth(req)

    @app.post("/validate", response_model=schemas.ValidateResponse)
    def validate(req: schemas.ValidateRequest):
        return handlers.validate(req)

    return app


app = create_app()
