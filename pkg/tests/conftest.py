from pathlib import Path

import numpy as np
import pytest

from poisson_safety.model import OccupancyGrid


@pytest.fixture
def data_dir() -> Path:
    """Path to test data directory"""
    return Path(__file__).parent / "map_data"


def room(n: int, resolution: float, blocks=()) -> OccupancyGrid:
    """Square room of n x n cells with rectangular blocks

    Args:
        n: Cells per side, the outer ring being the wall
        resolution: Cell size in meters
        blocks: (ix0, iy0, ix1, iy1) inclusive cell ranges to occupy
    """
    cells = np.zeros((n, n), dtype=bool)
    for ix0, iy0, ix1, iy1 in blocks:
        cells[iy0 : iy1 + 1, ix0 : ix1 + 1] = True
    return OccupancyGrid(cells, resolution)


def disk_room(radius: float, dx: float) -> OccupancyGrid:
    """Disk of free cells centred on the world origin; cells with centre distance >= radius are occupied"""
    half = int(np.ceil(radius / dx)) + 1
    n = 2 * half + 1
    coords = dx * (np.arange(n) - half)
    xs, ys = np.meshgrid(coords, coords)
    return OccupancyGrid(np.hypot(xs, ys) >= radius, dx, (-half * dx, -half * dx))


def shapes_room(n: int, resolution: float, disks=(), rects=()) -> OccupancyGrid:
    """Room with disk and rectangle obstacles given in world coordinates

    Args:
        n: Cells per side
        resolution: Cell size in meters
        disks: (cx, cy, r) disks
        rects: (x0, y0, x1, y1) rectangles
    """
    coords = resolution * np.arange(n)
    xs, ys = np.meshgrid(coords, coords)
    cells = np.zeros((n, n), dtype=bool)
    for cx, cy, r in disks:
        cells |= np.hypot(xs - cx, ys - cy) <= r
    for x0, y0, x1, y1 in rects:
        cells |= (xs >= x0) & (xs <= x1) & (ys >= y0) & (ys <= y1)
    return OccupancyGrid(cells, resolution)


def arena_grid() -> OccupancyGrid:
    """3 m arena at 0.025 m with a disk, a square and a rectangle"""
    return shapes_room(
        120,
        0.025,
        disks=[(1.1, 1.85, 0.25)],
        rects=[(1.65, 0.9, 2.05, 1.3), (2.55, 1.2, 2.75, 1.6)],
    )


def multi_obstacle_grid() -> OccupancyGrid:
    """3 m room at 0.05 m with three obstacles of different shapes"""
    return shapes_room(
        60,
        0.05,
        disks=[(0.9, 2.0, 0.3)],
        rects=[(1.8, 0.6, 2.3, 1.0), (0.5, 0.5, 0.7, 1.2)],
    )


def write_pgm(path: Path, occupied: np.ndarray, binary: bool = False) -> Path:
    """Write an occupancy raster (row 0 = bottom) as a black/white PGM"""
    image = np.where(np.asarray(occupied)[::-1], 0, 255).astype(np.uint8)
    height, width = image.shape
    if binary:
        path.write_bytes(f"P5\n{width} {height}\n255\n".encode() + image.tobytes())
    else:
        rows = "\n".join(" ".join(str(v) for v in row) for row in image)
        path.write_text(f"P2\n# occupancy\n{width} {height}\n255\n{rows}\n")
    return path
