"""FastAPI application serving a trained argumentation classifier."""

import logging

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from api.models import ExplainRequest, ExplainResponse, PredictRequest, PredictResponse
from api.service import model_service
from deep_arguing import __version__
from deep_arguing.config import settings
from deep_arguing.errors import DeepArguingError, error_record

# Configure logging
logging.basicConfig(level=settings.log_level)
logger = logging.getLogger(__name__)

# Create FastAPI app
app = FastAPI(
    title="Deep Arguing",
    description="Local REST API for argumentation-based classification and explanations",
    version=__version__,
)

# Add CORS middleware
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


@app.get("/health")
async def health_check():
    """Health check endpoint."""
    return {
        "status": "healthy",
        "service": "deep-arguing",
        "version": __version__,
        "model_loaded": model_service.is_loaded(),
    }


@app.get("/config")
async def config_status():
    """Current settings and a summary of the served model."""
    return {
        "api_host": settings.api_host,
        "api_port": settings.api_port,
        "log_level": settings.log_level,
        "model": model_service.summary(),
    }


@app.post("/predict")
async def predict(request: PredictRequest):
    """
    Classify raw feature records.

    Each prediction carries the label, its class index and every target strength.
    """
    try:
        predictions = model_service.predict(request.rows)
        return PredictResponse(predictions=predictions).model_dump()
    except DeepArguingError as e:
        logger.error(f"Error predicting: {e}")
        return error_record(e)


@app.post("/explain")
async def explain(request: ExplainRequest):
    """Explanation subgraph for one of the posted rows."""
    try:
        subgraph = model_service.explain(request.rows, request.row, request.classes, request.threshold)
        return ExplainResponse(explanation=subgraph).model_dump()
    except DeepArguingError as e:
        logger.error(f"Error explaining row {request.row}: {e}")
        return error_record(e)


if __name__ == "__main__":
    import uvicorn

    uvicorn.run(
        "api.main:app",
        host=settings.api_host,
        port=settings.api_port,
        reload=settings.api_debug,
    )
