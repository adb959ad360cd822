from fastapi import FastAPI

from . import routes, schemas

# Create FastAPI instance
app = FastAPI(
    title="intsel",
    description="Symbolic integration portfolio with learned sub-algorithm selection",
    version="0.1.0",
)

# Include API routes
app.include_router(routes.integrate_router)
app.include_router(routes.select_router)


# Health check endpoint
@app.get("/health", response_model=schemas.HealthResponse)
def health_check():
    """Simple health check endpoint"""
    return {"status": "healthy"}
