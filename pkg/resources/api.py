from __future__ import annotations

import logging
import socket
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException, Path as PathParam, Query

from framework.errors import SelfTrainError
from models.health import Health, ModelInfo, Prediction, PredictRequest
from services import checkpoint, network
from services.data import featurize

logger = logging.getLogger(__name__)


def create_app(checkpoint_path: str | Path) -> FastAPI:
    """Serve one trained checkpoint. Loading errors surface before the app exists."""
    checkpoint_path = str(checkpoint_path)
    params, label_names = checkpoint.load(checkpoint_path)
    dims = params.dims

    app = FastAPI(
        title="Self-training classifier API",
        description="Predictions from a checkpoint produced by the self-training runner",
        version="0.1.0",
    )

    # -------------------------------------------------------------------------
    # Health endpoints
    # -------------------------------------------------------------------------

    def make_health(echo: Optional[str], path_echo: Optional[str] = None) -> Health:
        return Health(
            status=200,
            status_message="OK",
            timestamp=datetime.now(timezone.utc).isoformat().replace("+00:00", "Z"),
            ip_address=socket.gethostbyname(socket.gethostname()),
            checkpoint=checkpoint_path,
            echo=echo,
            path_echo=path_echo,
        )

    @app.get("/health", response_model=Health)
    def get_health_no_path(echo: str | None = Query(None, description="Optional echo string")):
        return make_health(echo=echo, path_echo=None)

    @app.get("/health/{path_echo}", response_model=Health)
    def get_health_with_path(
        path_echo: str = PathParam(..., description="Required echo in the URL path"),
        echo: str | None = Query(None, description="Optional echo string"),
    ):
        return make_health(echo=echo, path_echo=path_echo)

    @app.get("/")
    def root():
        return {"message": "Self-training classifier API. See /docs for OpenAPI UI."}

    # -------------------------------------------------------------------------
    # Model endpoints
    # -------------------------------------------------------------------------

    @app.get("/model", response_model=ModelInfo)
    def get_model():
        return ModelInfo(
            dims=dims,
            pel=params.pel,
            label_names=label_names,
            trainable_params=network.trainable_param_count(params.pel, dims.features, dims.hidden, dims.classes),
            blocks={name: list(a.shape) for name, a in sorted(params.arrays.items())},
        )

    @app.post("/predict", response_model=Prediction)
    def predict(request: PredictRequest):
        try:
            if request.text is not None:
                x = featurize(request.text, dims.features)
            else:
                x = np.asarray(request.features, dtype=np.float64)
                if x.shape != (dims.features,):
                    raise HTTPException(
                        status_code=422, detail=f"features must have length {dims.features}, got {x.size}"
                    )
            probs = network.predict_proba(params, x)
        except SelfTrainError as exc:
            raise HTTPException(status_code=exc.status_code, detail=exc.to_dict()) from exc
        label = int(np.argmax(probs))
        return Prediction(
            probs=probs.tolist(),
            label=label,
            label_name=label_names[label] if label < len(label_names) else None,
        )

    logger.info("serving checkpoint=%s pel=%s", checkpoint_path, params.pel.label)
    return app
