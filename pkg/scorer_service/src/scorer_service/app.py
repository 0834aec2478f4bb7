"""FastAPI app exposing /v1/score and /v1/health.

Responses depend only on the request body. Schema violations come back as
400 with per-field messages; requests that parse but break an invariant
(k < 1, sigma < 0) come back as 422. The `payload` field is reserved for a
future wrapper around a real stochastic verifier and always answers 501 here.
"""
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field

from . import RNG_VERSION
from .rng import normals

U64_MAX = (1 << 64) - 1


class ScoreRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mu: float | None = None
    sigma: float | None = None
    k: int
    seed: int = Field(ge=0, le=U64_MAX)
    stream_id: int = Field(ge=0, le=U64_MAX)
    clamp: bool = False
    payload: str | None = None  # reserved: trace text for a real verifier


def create_app() -> FastAPI:
    app = FastAPI(title="scorer-service", docs_url=None, redoc_url=None)

    @app.exception_handler(RequestValidationError)
    async def invalid_body(request: Request, exc: RequestValidationError):
        fields = [
            {"field": ".".join(str(p) for p in err["loc"] if p != "body"), "message": err["msg"]}
            for err in exc.errors()
        ]
        return JSONResponse(status_code=400, content={"detail": fields})

    @app.post("/v1/score")
    async def score(req: ScoreRequest):
        if req.payload is not None:
            return JSONResponse(
                status_code=501,
                content={"detail": "payload scoring is reserved for a real verifier wrapper"},
            )
        missing = [name for name in ("mu", "sigma") if getattr(req, name) is None]
        if missing:
            return JSONResponse(
                status_code=400,
                content={"detail": [{"field": f, "message": "field required"} for f in missing]},
            )
        problems = []
        if req.k < 1:
            problems.append("k >= 1 violated")
        if req.sigma < 0:
            problems.append("sigma >= 0 violated")
        if problems:
            return JSONResponse(status_code=422, content={"detail": "; ".join(problems)})

        draws = normals(req.seed, req.stream_id, req.k)
        samples = [req.mu + req.sigma * z for z in draws]
        if req.clamp:
            samples = [min(1.0, max(0.0, s)) for s in samples]
        return {"samples": samples, "rng_version": RNG_VERSION}

    @app.get("/v1/health")
    async def health():
        return {"status": "ok", "rng_version": RNG_VERSION}

    return app


app = create_app()
