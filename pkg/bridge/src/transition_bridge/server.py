"""FastAPI app implementing the bridge wire protocol.

Endpoints: GET /info, POST /load, POST /generate, POST /score.  Errors carry
``{"error": text}`` with status 400 (bad request), 409 (no model loaded) or
500.  Requests are served one at a time per session: the protocol promises no
intra-model parallelism, clients apply their own backpressure.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict

from .session import BridgeError, BridgeSession, NoModelLoaded

__all__ = ["create_app"]


class LoadRequest(BaseModel):
    model_config = ConfigDict(extra="ignore")
    model_id: str
    revision: str | None = None


class GenerateRequest(BaseModel):
    model_config = ConfigDict(extra="ignore")
    prompt: str = ""
    temperature: float = 1.0
    n_samples: int = 1
    n_tokens: int = 1
    seed: int = 0
    greedy: bool = False


class ScoreRequest(BaseModel):
    model_config = ConfigDict(extra="ignore")
    prompt: str = ""
    tokens: list[int]
    temperature: float = 1.0


def create_app(session: BridgeSession | None = None) -> FastAPI:
    session = session or BridgeSession()
    app = FastAPI(title="transition-bridge")
    app.state.session = session

    @app.exception_handler(RequestValidationError)
    async def bad_fields(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": str(exc.errors())})

    @app.exception_handler(BridgeError)
    async def bad_request(request: Request, exc: BridgeError):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.exception_handler(NoModelLoaded)
    async def not_loaded(request: Request, exc: NoModelLoaded):
        return JSONResponse(status_code=409, content={"error": str(exc)})

    @app.get("/info")
    def info():
        with session.lock:
            return session.info()

    @app.post("/load")
    def load(req: LoadRequest):
        with session.lock:
            session.load(req.model_id, req.revision)
        return {"ok": True}

    @app.post("/generate")
    def generate(req: GenerateRequest):
        with session.lock:
            samples = session.generate(
                prompt=req.prompt,
                temperature=req.temperature,
                n_samples=req.n_samples,
                n_tokens=req.n_tokens,
                seed=req.seed,
                greedy=req.greedy,
            )
        return {"samples": samples}

    @app.post("/score")
    def score(req: ScoreRequest):
        with session.lock:
            logprobs = session.score(req.prompt, req.tokens, req.temperature)
        return {"logprobs": logprobs}

    return app
