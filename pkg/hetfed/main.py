"""Read-only HTTP API over runs saved with ``hetfed run --store``."""
import logging

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from . import __version__
from .database import create_tables
from .routes import router

logger = logging.getLogger(__name__)

API_NAME = "hetfed results API"


def create_app() -> FastAPI:
    app = FastAPI(
        title=API_NAME,
        description="Per-round accuracy, traffic and FLOPs of stored federated training runs",
        version=__version__,
    )
    # the API never writes, so any origin may read
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["GET"], allow_headers=["*"])
    app.include_router(router)

    @app.on_event("startup")
    def ensure_tables():
        create_tables()
        logger.info(f"{API_NAME} {__version__} ready")

    @app.get("/")
    def read_root():
        return {"message": API_NAME, "docs": "/docs", "version": __version__}

    @app.get("/health")
    def health_check():
        return {"status": "healthy"}

    return app


app = create_app()
