"""Process-wide logging configuration from the environment."""
import logging
import os
from typing import Optional

from dotenv import load_dotenv

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

_configured = False


def configure_logging(level: Optional[str] = None) -> None:
    """Install the root handler once; the level comes from PLANNER_LOG_LEVEL unless given."""
    global _configured
    load_dotenv()
    name = (level or os.getenv("PLANNER_LOG_LEVEL", "WARNING")).upper()
    numeric = logging.getLevelName(name)
    if not isinstance(numeric, int):
        numeric = logging.WARNING
    if _configured:
        logging.getLogger().setLevel(numeric)
        return
    logging.basicConfig(level=numeric, format=LOG_FORMAT)
    _configured = True
