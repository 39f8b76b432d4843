"""Rasterize decision boundaries and representation scatters to portable
binary image files (PGM P5 for class grids, PPM P6 for colored scatters).

Output bytes are a pure function of the inputs, so images can be compared
for equality across runs.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "DEFAULT_BOUNDS",
    "DEFAULT_RESOLUTION",
    "decision_grid",
    "grid_cell_centers",
    "write_pgm",
    "read_pgm",
    "write_scatter_ppm",
    "write_grid_csv",
]

DEFAULT_BOUNDS = (-5.0, 5.0, -5.0, 5.0)
DEFAULT_RESOLUTION = 256

# class colors for scatters: orange, blue, then fallbacks
_PALETTE = (
    (230, 130, 20),
    (50, 100, 190),
    (60, 160, 70),
    (190, 60, 60),
    (140, 90, 180),
    (120, 120, 120),
)


def grid_cell_centers(bounds, resolution: int):
    """Cell-center coordinates of the lattice: xs (left to right) and ys
    (top to bottom, so row 0 sits at the top of the image)."""
    xmin, xmax, ymin, ymax = bounds
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    if not (xmax > xmin and ymax > ymin):
        raise ValueError(f"degenerate bounds {bounds}")
    step_x = (xmax - xmin) / resolution
    step_y = (ymax - ymin) / resolution
    xs = xmin + (np.arange(resolution) + 0.5) * step_x
    ys = ymax - (np.arange(resolution) + 0.5) * step_y
    return xs, ys


def decision_grid(classifier, bounds=DEFAULT_BOUNDS,
                  resolution: int = DEFAULT_RESOLUTION) -> np.ndarray:
    """Predicted class at every cell center, row-major with row 0 on top.

    `classifier` is either a Classifier over 2-D inputs or any callable
    mapping an (n, 2) array to class indices.
    """
    if hasattr(classifier, "predict"):
        if classifier.spec.input_dim != 2:
            raise ValueError("decision grids need a 2-D input model")
        predict = classifier.predict
    elif callable(classifier):
        predict = classifier
    else:
        raise TypeError("classifier must be a model or a points -> classes callable")
    xs, ys = grid_cell_centers(bounds, resolution)
    grid = np.empty((resolution, resolution), dtype=np.int64)
    for i, y in enumerate(ys):
        row_points = np.column_stack([xs, np.full(resolution, y)])
        grid[i] = predict(row_points)
    return grid


def write_pgm(grid: np.ndarray, path, num_classes: int | None = None) -> None:
    """Binary PGM (P5) with classes mapped to gray floor(255*k/(K-1))."""
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ValueError("grid must be two-dimensional")
    k = num_classes if num_classes is not None else max(int(grid.max()) + 1, 2)
    if int(grid.max()) >= 256 or int(grid.min()) < 0:
        raise ValueError("grid values must fit in a byte")
    gray = (255 * grid) // (k - 1)
    height, width = grid.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(gray.astype(np.uint8).tobytes())
    except OSError as exc:
        raise OSError(f"failed writing PGM to {path}: {exc}") from exc


def read_pgm(path) -> np.ndarray:
    """Read back a binary PGM written by write_pgm; returns gray values."""
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5" or parts[2] != b"255":
        raise ValueError(f"{path} is not an 8-bit binary PGM")
    width, height = (int(v) for v in parts[1].split())
    pixels = np.frombuffer(parts[3], dtype=np.uint8, count=width * height)
    return pixels.reshape(height, width).copy()


def write_scatter_ppm(points, labels, path, bounds=None, size: int = 256,
                      dot_radius: int = 1) -> None:
    """Binary PPM (P6) scatter on white: one colored square per point."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ValueError("scatters need (n, 2) points")
    if bounds is None:
        span = np.abs(points).max() * 1.1 if len(points) else 1.0
        span = max(span, 1e-9)
        bounds = (-span, span, -span, span)
    xmin, xmax, ymin, ymax = bounds

    image = np.full((size, size, 3), 255, dtype=np.uint8)
    cols = ((points[:, 0] - xmin) / (xmax - xmin) * size).astype(np.int64)
    rows = ((ymax - points[:, 1]) / (ymax - ymin) * size).astype(np.int64)
    for row, col, label in zip(rows, cols, labels):
        color = _PALETTE[int(label) % len(_PALETTE)]
        r0, r1 = max(row - dot_radius, 0), min(row + dot_radius + 1, size)
        c0, c1 = max(col - dot_radius, 0), min(col + dot_radius + 1, size)
        if r0 < r1 and c0 < c1:
            image[r0:r1, c0:c1] = color

    header = f"P6\n{size} {size}\n255\n".encode("ascii")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(image.tobytes())
    except OSError as exc:
        raise OSError(f"failed writing PPM to {path}: {exc}") from exc


def write_grid_csv(grid: np.ndarray, bounds, path) -> None:
    """Emit `x,y,class` per cell, in the grid's row-major order."""
    xs, ys = grid_cell_centers(bounds, grid.shape[0])
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("x,y,class\n")
        for i, y in enumerate(ys):
            for j, x in enumerate(xs):
                fh.write(f"{x!r},{y!r},{int(grid[i, j])}\n")
