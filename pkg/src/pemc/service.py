"""HTTP front end over :mod:`pemc.ops`; models are loaded once and shared read-only."""

from __future__ import annotations

import os
from pathlib import Path

from fastapi import FastAPI, HTTPException

from . import __version__, ops
from .estimators import DomainError, InfeasibleError


def create_app(model_dir=None) -> FastAPI:
    model_dir = Path(model_dir or os.environ.get("PEMC_MODEL_DIR", "models"))
    app = FastAPI(title="pemc", version=__version__)
    cache: dict = {}

    def guarded(fn, *args, **kw):
        try:
            return fn(*args, **kw)
        except FileNotFoundError as exc:
            raise HTTPException(404, str(exc)) from exc
        except (DomainError, InfeasibleError, ValueError) as exc:
            raise HTTPException(422, str(exc)) from exc

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.get("/models")
    def models():
        if not model_dir.is_dir():
            return {"models": []}
        return {"models": sorted(p.name for p in model_dir.glob("*.pemc"))}

    @app.post("/price")
    def price(req: ops.PriceRequest):
        return guarded(ops.price, req, model_dir, cache)

    @app.post("/allocate")
    def allocate(req: ops.AllocateRequest):
        return guarded(ops.allocate, req, model_dir)

    @app.post("/ed-sim")
    def ed_sim(req: ops.EdSimRequest):
        return guarded(ops.ed_sim, req)

    return app
