from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from app import __version__
from app.routers import runs

app = FastAPI(
    title="msfmri results API",
    description="Read-only access to pipeline runs: metrics and top-ROI frequency tables",
    version=__version__,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_methods=["GET"],
    allow_headers=["*"],
)

# Include routers
app.include_router(runs.router)


@app.get("/")
async def root():
    return {"message": "msfmri results API", "version": __version__}


@app.get("/health")
async def health_check():
    return {"status": "healthy"}
