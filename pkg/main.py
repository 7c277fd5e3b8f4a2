import logging

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from app.core.config import LOG_LEVEL
from app.database import Base, engine

# import models so they are registered on the metadata
import app.models.experiment_runs  # noqa: F401

from app.routes.complexity import router as complexity_router
from app.routes.experiments import router as experiments_router
from app.routes.presets import router as presets_router

logging.basicConfig(level=LOG_LEVEL)

app = FastAPI(title="DGTD policy evaluation")

# Configure CORS
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],  # Allows all methods
    allow_headers=["*"],  # Allows all headers
)

# Create tables (after models are imported)
Base.metadata.create_all(bind=engine)

app.include_router(presets_router, prefix="/api/presets", tags=["presets"])
app.include_router(experiments_router, prefix="/api/experiments", tags=["experiments"])
app.include_router(complexity_router, prefix="/api/complexity", tags=["complexity"])

@app.get("/")
def read_root():
    return {"status": "ok"}
