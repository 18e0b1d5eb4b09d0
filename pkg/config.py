"""Configuration settings for the damped-wave laboratory."""
import os
from dotenv import load_dotenv

load_dotenv()


class Config:
    """Base configuration."""

    BASE_DIR = os.path.abspath(os.path.dirname(__file__))
    CODE_VERSION = "0.3.0"

    RESULTS_DIR = os.getenv("RESULTS_DIR", os.path.join(BASE_DIR, "results"))
    LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
    LAB_THREADS = int(os.getenv("LAB_THREADS", os.cpu_count() or 1))

    # Use DATABASE_URL if available, else fallback to a local SQLite ledger
    database_url = os.getenv("DATABASE_URL")
    if database_url and database_url.startswith("postgres://"):
        database_url = database_url.replace("postgres://", "postgresql://", 1)

    DATABASE_URL = database_url or "sqlite:///" + os.path.join(RESULTS_DIR, "runs.db")

    # Numerical defaults shared by the services
    DEFAULT_PERIOD = 2 * 3.141592653589793
    BEAM_FRAME_DT = 1e-3
    QUADRATURE_STEP = 1e-2
