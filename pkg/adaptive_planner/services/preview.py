"""Top-down map preview images."""
import io
from typing import Optional, Sequence

import numpy as np
from PIL import Image, ImageDraw

from .esdf import VoxelGrid

FREE_COLOR = (245, 245, 240)
OCCUPIED_COLOR = (40, 40, 48)
START_COLOR = (30, 140, 60)
GOAL_COLOR = (200, 50, 40)
PATH_COLOR = (40, 90, 200)


def render_preview(
    grid: VoxelGrid,
    start=None,
    goal=None,
    path: Optional[Sequence[Sequence[float]]] = None,
    scale: int = 4,
) -> bytes:
    """PNG of the x-y projection: a column is dark when any of its cells is occupied.

    x runs left to right and y bottom to top.
    """
    column = grid.occupancy.any(axis=2)
    nx, ny = column.shape
    pixels = np.empty((ny, nx, 3), dtype=np.uint8)
    pixels[:] = FREE_COLOR
    pixels[column.T[::-1]] = OCCUPIED_COLOR
    image = Image.fromarray(pixels).resize((nx * scale, ny * scale), Image.Resampling.NEAREST)
    draw = ImageDraw.Draw(image)

    def to_pixel(point) -> tuple:
        i, j = (np.asarray(point[:2], dtype=float) - grid.origin[:2]) / grid.resolution
        return (i + 0.5) * scale, (ny - j - 0.5) * scale

    if path is not None and len(path) > 1:
        draw.line([to_pixel(p) for p in path], fill=PATH_COLOR, width=max(1, scale // 2))
    radius = 1.5 * scale
    for point, color in ((start, START_COLOR), (goal, GOAL_COLOR)):
        if point is not None:
            x, y = to_pixel(point)
            draw.ellipse((x - radius, y - radius, x + radius, y + radius), fill=color)

    buffer = io.BytesIO()
    image.save(buffer, format="PNG")
    return buffer.getvalue()
