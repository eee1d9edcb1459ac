"""HTTP service wrapping the core package for multi-client use.

Load trained checkpoints into a registry, then evaluate log densities and
generate synthetic return scenarios over JSON.  A synchronous ``/fit``
endpoint covers small training jobs; batch experiments belong to the CLI.
"""

from __future__ import annotations

import threading

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .data import dataset_from_returns
from .harness import CheckpointError, load_checkpoint, save_checkpoint
from .model import VARIANTS, build_variant
from .train import TrainConfig, fit


class HealthResponse(BaseModel):
    status: str
    version: str


class LoadRequest(BaseModel):
    path: str


class ModelInfo(BaseModel):
    model_id: str
    variant: str
    dim: int
    n_params: int


class ModelList(BaseModel):
    models: list[ModelInfo]


class SampleRequest(BaseModel):
    count: int = Field(ge=0, default=1000)
    seed: int = 0


class SampleResponse(BaseModel):
    samples: list[list[float]]


class LogProbRequest(BaseModel):
    rows: list[list[float]] = Field(min_length=1)


class LogProbResponse(BaseModel):
    log_prob: list[float]
    mean_nll: float


class FitRequest(BaseModel):
    rows: list[list[float]] = Field(min_length=10, description="Log-return rows.")
    variant: str = "exf"
    epochs: int = Field(ge=1, default=50)
    lr: float = Field(gt=0, default=1e-3)
    batch_size: int = Field(ge=1, default=256)
    seed: int = 0
    checkpoint_path: str | None = None


class FitResponse(BaseModel):
    model_id: str
    variant: str
    best_epoch: int
    best_val_nll: float
    test_nll: float
    epochs_run: int


class _Registry:
    def __init__(self):
        self._lock = threading.Lock()
        self._models = {}
        self._counter = 0

    def add(self, model):
        with self._lock:
            self._counter += 1
            mid = f"m{self._counter}"
            self._models[mid] = model
        return mid

    def get(self, mid):
        with self._lock:
            model = self._models.get(mid)
        if model is None:
            raise HTTPException(status_code=404, detail=f"unknown model {mid!r}")
        return model

    def remove(self, mid):
        with self._lock:
            if mid not in self._models:
                raise HTTPException(status_code=404, detail=f"unknown model {mid!r}")
            del self._models[mid]

    def items(self):
        with self._lock:
            return list(self._models.items())


def create_app(preload=()):
    app = FastAPI(title="heavyflow", version=__version__)
    registry = _Registry()
    app.state.registry = registry

    for path in preload:
        model, _ = load_checkpoint(path)
        registry.add(model)

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.post("/checkpoints/load", response_model=ModelInfo)
    def load(req: LoadRequest):
        try:
            model, _ = load_checkpoint(req.path)
        except (CheckpointError, FileNotFoundError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        mid = registry.add(model)
        return ModelInfo(
            model_id=mid, variant=model.variant, dim=model.d, n_params=model.n_params
        )

    @app.get("/models", response_model=ModelList)
    def models():
        return ModelList(
            models=[
                ModelInfo(
                    model_id=mid,
                    variant=m.variant,
                    dim=m.d,
                    n_params=m.n_params,
                )
                for mid, m in registry.items()
            ]
        )

    @app.delete("/models/{model_id}")
    def unload(model_id: str):
        registry.remove(model_id)
        return {"removed": model_id}

    @app.post("/models/{model_id}/sample", response_model=SampleResponse)
    def sample(model_id: str, req: SampleRequest):
        model = registry.get(model_id)
        samples = model.sample(req.count, req.seed)
        return SampleResponse(samples=[[float(v) for v in row] for row in samples])

    @app.post("/models/{model_id}/log_prob", response_model=LogProbResponse)
    def log_prob(model_id: str, req: LogProbRequest):
        model = registry.get(model_id)
        X = np.asarray(req.rows, dtype=float)
        if X.ndim != 2 or X.shape[1] != model.d:
            raise HTTPException(
                status_code=400,
                detail=f"rows must have {model.d} columns for this model",
            )
        lp = np.asarray(model.log_prob(X))
        return LogProbResponse(
            log_prob=[float(v) for v in lp], mean_nll=float(-np.mean(lp))
        )

    @app.post("/fit", response_model=FitResponse)
    def fit_endpoint(req: FitRequest):
        if req.variant.lower() not in VARIANTS:
            raise HTTPException(
                status_code=400, detail=f"variant must be one of {VARIANTS}"
            )
        X = np.asarray(req.rows, dtype=float)
        if X.ndim != 2:
            raise HTTPException(status_code=400, detail="rows must be a matrix")
        dataset = dataset_from_returns(X, seed=req.seed)
        model = build_variant(req.variant.lower(), dataset.d, seed=req.seed)
        cfg = TrainConfig(
            epochs=req.epochs, lr=req.lr, batch_size=req.batch_size, seed=req.seed
        )
        report = fit(model, dataset, cfg)
        if report.failed:
            raise HTTPException(
                status_code=422, detail=f"training failed: {report.fail_reason}"
            )
        if req.checkpoint_path:
            save_checkpoint(model, req.checkpoint_path)
        mid = registry.add(model)
        return FitResponse(
            model_id=mid,
            variant=model.variant,
            best_epoch=report.best_epoch,
            best_val_nll=report.best_val_nll,
            test_nll=report.test_nll,
            epochs_run=len(report.train_nll),
        )

    return app


app = create_app()
