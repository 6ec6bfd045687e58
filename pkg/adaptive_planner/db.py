"""Episode records and database configuration."""
import os
from datetime import datetime
from enum import Enum
from typing import Optional

from dotenv import load_dotenv
from sqlmodel import Field, SQLModel, create_engine

load_dotenv()


class RunStatus(str, Enum):
    SUCCEEDED = "succeeded"
    FAILED = "failed"


class EpisodeRecord(SQLModel, table=True):
    id: Optional[int] = Field(default=None, primary_key=True)
    scenario: str
    generator: Optional[str] = None
    seed: int = 0
    easa_enabled: bool = True
    status: RunStatus
    outcome: str
    flight_time: float
    path_length: float
    min_clearance: float
    max_speed: float
    log_url: Optional[str] = None
    created_at: datetime = Field(default_factory=datetime.utcnow)


DATABASE_URL = os.getenv("PLANNER_DB_URL", "sqlite:///data/planner.db")

connect_args = {"check_same_thread": False} if DATABASE_URL.startswith("sqlite") else {}
engine = create_engine(DATABASE_URL, echo=False, connect_args=connect_args)


def create_db_and_tables(bind=None) -> None:
    SQLModel.metadata.create_all(bind or engine)
