"""Run artifact storage: atomic writes for the CLI, async saves for the service."""
import os
import tempfile
import uuid
from pathlib import Path
from typing import Optional, Tuple, Union

import aiofiles
from dotenv import load_dotenv

load_dotenv()

DATA_DIR = Path(os.getenv("PLANNER_DATA_DIR", "data"))
RUNS_DIR = DATA_DIR / "runs"


def write_text_atomic(path: Union[str, Path], text: str) -> Path:
    """Write ``text`` to a temporary sibling and rename it over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


async def save_artifact(
    content: Union[str, bytes],
    filename: Optional[str] = None,
    extension: str = ".csv",
    runs_dir: Optional[Path] = None,
) -> Tuple[str, str]:
    """Save a run artifact and return its path and URL."""
    runs_dir = runs_dir or RUNS_DIR
    runs_dir.mkdir(parents=True, exist_ok=True)
    if filename is None:
        filename = f"{uuid.uuid4()}{extension}"
    filepath = runs_dir / filename
    if isinstance(content, str):
        content = content.encode()
    async with aiofiles.open(filepath, "wb") as f:
        await f.write(content)
    return str(filepath), f"/runs/{filename}"
