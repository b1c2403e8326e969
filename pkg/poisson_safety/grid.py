"""Occupancy map ingestion, obstacle buffering and domain decomposition

Regions are 4-connected so that every free/occupied interface is a cell face.
"""

from enum import Enum
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import EmptyDomainError
from .model import DomainDecomposition, OccupancyGrid, ScalarField
from .parsers import DEFAULT_THRESHOLD, PGMParser

__all__ = [
    "DistanceMode",
    "load_occupancy",
    "buffer_obstacles",
    "decompose_domain",
    "distance_field",
    "distance_to_occupied",
    "shift",
    "NEIGHBOURS",
]

FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)

# (dy, dx) offsets of the 4-neighbours
NEIGHBOURS = ((0, 1), (0, -1), (1, 0), (-1, 0))


class DistanceMode(str, Enum):
    UNSIGNED = "unsigned"
    SIGNED = "signed"


def shift(array: np.ndarray, dy: int, dx: int, fill=0) -> np.ndarray:
    """Array whose [j, i] entry is array[j + dy, i + dx], fill outside the array"""
    padded = np.pad(array, 1, constant_values=fill)
    ny, nx = array.shape
    return padded[1 + dy : 1 + dy + ny, 1 + dx : 1 + dx + nx]


def load_occupancy(
    path: Path | str,
    resolution: float | None = None,
    threshold: int = DEFAULT_THRESHOLD,
    origin: tuple[float, float] | None = None,
) -> OccupancyGrid:
    """Load a PGM occupancy map

    Args:
        path: Path to a P2 or P5 PGM file
        resolution: Cell size in meters, read from the <map>.json sidecar if None
        threshold: Gray level below which a pixel is occupied
        origin: World coordinates of cell (0, 0), defaults to the sidecar value or (0, 0)

    Returns:
        Occupancy grid with its border ring occupied
    """
    return PGMParser(path, threshold=threshold).parse(resolution=resolution, origin=origin)


def distance_to_occupied(grid: OccupancyGrid) -> ScalarField:
    """Euclidean distance from each cell centre to the nearest occupied cell centre"""
    return ScalarField.on_grid(grid, ndimage.distance_transform_edt(~grid.cells) * grid.resolution)


def buffer_obstacles(grid: OccupancyGrid, radius: float) -> OccupancyGrid:
    """Dilate the occupied set by a Euclidean disk

    A cell becomes occupied when its centre lies within radius of an occupied cell centre.

    Args:
        grid: Occupancy grid
        radius: Buffer radius in meters

    Returns:
        Buffered occupancy grid

    Raises:
        ValueError: If radius is negative
        EmptyDomainError: If no free cell remains
    """
    if radius < 0:
        raise ValueError(f"Buffer radius must be non-negative, got {radius}")
    if radius == 0:
        return grid

    clearance = distance_to_occupied(grid).values
    cells = clearance <= radius + 1e-9 * grid.resolution
    if cells.all():
        raise EmptyDomainError(f"Buffer radius {radius} m leaves no free cell")
    return grid.with_cells(cells)


def decompose_domain(grid: OccupancyGrid) -> DomainDecomposition:
    """Split a grid into the free set, obstacle interiors and their boundary

    The largest 4-connected free component is the free set; smaller free pockets
    join the obstacle that encloses them. Obstacles are the 4-connected components
    of the remaining cells, numbered in raster order, so the map border is obstacle 1.

    Args:
        grid: Occupancy grid

    Returns:
        Domain decomposition

    Raises:
        EmptyDomainError: If the grid has no free cell
    """
    components, n_free = ndimage.label(~grid.cells, structure=FOUR_CONNECTED)
    if n_free == 0:
        raise EmptyDomainError("Occupancy grid has no free cell")
    sizes = np.bincount(components.ravel())[1:]
    free = components == int(np.argmax(sizes)) + 1

    occupied = ~free
    obstacle_index, n_obs = ndimage.label(occupied, structure=FOUR_CONNECTED)

    exposed = sum(shift(free, dy, dx, fill=False).astype(np.int64) for dy, dx in NEIGHBOURS)
    boundary = occupied & (exposed > 0)

    res = grid.resolution
    filled = grid.with_cells(occupied) if n_free > 1 else grid
    return DomainDecomposition(
        grid=filled,
        obstacle_index=obstacle_index,
        boundary=boundary,
        normals=_boundary_normals(filled, free, boundary),
        n_obs=int(n_obs),
        perimeter=float(exposed[occupied].sum()) * res,
        free_area=float(free.sum()) * res**2,
        obstacle_areas=tuple(float(a) * res**2 for a in np.bincount(obstacle_index.ravel(), minlength=n_obs + 1)[1:]),
        _source_file=grid._source_file,
    )


def _boundary_normals(grid: OccupancyGrid, free: np.ndarray, boundary: np.ndarray) -> np.ndarray:
    """Outward unit normals of the free set on boundary cells

    The normal is minus the sum of distance-to-occupied gradients at the free
    4-neighbours, which points from free space into the obstacle. Where that sum
    vanishes or disagrees with the face directions, the sum of face directions is
    used instead.
    """
    d_occ = distance_to_occupied(grid).values
    grad_y, grad_x = np.gradient(d_occ, grid.resolution)

    normal = np.zeros(free.shape + (2,))
    faces = np.zeros(free.shape + (2,))
    for dy, dx in NEIGHBOURS:
        nb_free = shift(free, dy, dx, fill=False)
        normal[..., 0] -= np.where(nb_free, shift(grad_x, dy, dx), 0.0)
        normal[..., 1] -= np.where(nb_free, shift(grad_y, dy, dx), 0.0)
        faces[..., 0] -= dx * nb_free
        faces[..., 1] -= dy * nb_free

    normal_len = np.linalg.norm(normal, axis=-1)
    agrees = np.einsum("...k,...k->...", normal, faces) > 0
    use_faces = boundary & ((normal_len < 1e-12) | ~agrees)
    normal[use_faces] = faces[use_faces]

    # opposite free faces cancel on one-cell-thin walls; take the first free face
    for iy, ix in zip(*np.nonzero(boundary & (np.linalg.norm(normal, axis=-1) < 1e-12)), strict=True):
        for dy, dx in NEIGHBOURS:
            if free[iy + dy, ix + dx]:
                normal[iy, ix] = (-dx, -dy)
                break

    normal[~boundary] = 0.0
    length = np.linalg.norm(normal, axis=-1, keepdims=True)
    return np.divide(normal, length, out=np.zeros_like(normal), where=length > 0)


def distance_field(decomp: DomainDecomposition, mode: DistanceMode | str = DistanceMode.UNSIGNED) -> ScalarField:
    """Exact Euclidean distance from each cell centre to the nearest boundary cell centre

    Args:
        decomp: Domain decomposition
        mode: Unsigned distance, or signed distance negative inside obstacles

    Returns:
        Distance field, 0 on boundary cells
    """
    mode = DistanceMode(mode)
    dist = ndimage.distance_transform_edt(~decomp.boundary) * decomp.grid.resolution
    if mode is DistanceMode.SIGNED:
        dist = np.where(decomp.interior, -dist, dist)
    return ScalarField.on_grid(decomp.grid, dist)
