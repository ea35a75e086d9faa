"""Height-map processing: inpainting, denoising, planning layers, derivatives.

A raw elevation grid (possibly occluded) is turned into three dense layers:

* ``h``    - inpainted and median-denoised map, used for foot placement,
* ``h_s1`` - lightly Gaussian-smoothed ``h``, used for edge gradients,
* ``h_s2`` - the "virtual floor": masked max-dilation of stones/gaps followed
  by heavy Gaussian smoothing, used as base-pose reference.

Derivatives use 1-D 5-point central kernels along one axis (cell-centered,
edge-replicated) and are cached per ``(layer, order, axis, cell)``.  Queries at
arbitrary world coordinates bilinearly interpolate the four neighboring cell
values.  Maps are immutable after construction except the derivative cache,
whose writes are idempotent and therefore safe under concurrent fills.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

# |h - aggressive_median(h)| above this counts as stone/gap (avoids float
# equality on flat ground).
MASK_THRESHOLD = 1e-4

# 5-point central difference kernels, exact for polynomials up to degree 4.
_KERNEL_D1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_KERNEL_D2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0


class TerrainError(ValueError):
    pass


class UnknownLayerError(TerrainError):
    pass


class OutOfBoundsError(TerrainError):
    """Raised for queries outside the cell-center extent; carries the clamped point."""

    def __init__(self, xy, clamped):
        self.xy = tuple(float(v) for v in xy)
        self.clamped = tuple(float(v) for v in clamped)
        super().__init__(f"query {self.xy} outside map bounds, clamped to {self.clamped}")


@dataclass(frozen=True)
class RawHeightMap:
    """Elevation grid in meters; ``cells[row, col]``, x along columns, y along rows.

    ``origin_xy`` is the world position of the center of cell (0, 0).
    Occluded cells carry no height information (NaN allowed there).
    """

    cols: int
    rows: int
    resolution: float
    origin_xy: tuple[float, float]
    cells: np.ndarray
    occluded: np.ndarray

    def __post_init__(self):
        if self.resolution <= 0:
            raise TerrainError("resolution must be positive")
        cells = np.asarray(self.cells, dtype=float)
        occluded = np.asarray(self.occluded, dtype=bool)
        if cells.shape != (self.rows, self.cols) or occluded.shape != cells.shape:
            raise TerrainError("cells/occluded shape mismatch")
        if not np.all(np.isfinite(cells[~occluded])):
            raise TerrainError("non-occluded cells must be finite")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "occluded", occluded)


@dataclass(frozen=True)
class FilterParams:
    """Filter-chain parameters; sigmas in meters, windows in (odd) cells."""

    sigma1: float
    sigma2: float
    median_passes: int = 2
    median_window: int = 3
    dilation_window: int = 5
    aggressive_median_window: int = 9

    def __post_init__(self):
        if not (self.sigma2 > self.sigma1 > 0):
            raise TerrainError("require sigma2 > sigma1 > 0")
        for w in (self.median_window, self.dilation_window, self.aggressive_median_window):
            if w < 3 or w % 2 == 0:
                raise TerrainError("filter windows must be odd and >= 3")

    @classmethod
    def default_for(cls, resolution: float) -> "FilterParams":
        # sigma1 = 2 cells, sigma2 = 6 cells.
        return cls(sigma1=2.0 * resolution, sigma2=6.0 * resolution)


def inpaint(raw: RawHeightMap) -> np.ndarray:
    """Fill occluded cells with the minimum height found across each
    occlusion region's border (non-occluded cells 8-adjacent to the
    4-connected region).

    One labeling pass plus eight shifted-neighbor scans; every visible cell
    that touches a region contributes to that region's running minimum.
    """
    occ = raw.occluded
    if not occ.any():
        return raw.cells.copy()
    if occ.all():
        raise TerrainError("no support data")
    four = ndimage.generate_binary_structure(2, 1)
    labels, count = ndimage.label(occ, structure=four)
    rows, cols = occ.shape
    padded = np.zeros((rows + 2, cols + 2), dtype=labels.dtype)
    padded[1:-1, 1:-1] = labels
    visible = ~occ
    mins = np.full(count + 1, np.inf)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            neighbor = padded[1 + dr : 1 + dr + rows, 1 + dc : 1 + dc + cols]
            sel = visible & (neighbor > 0)
            if sel.any():
                np.minimum.at(mins, neighbor[sel], raw.cells[sel])
    if not np.all(np.isfinite(mins[1:])):
        raise TerrainError("no support data")
    out = raw.cells.copy()
    out[occ] = mins[labels[occ]]
    return out


def denoise(grid: np.ndarray, params: FilterParams) -> np.ndarray:
    """Sequentially repeated square median filter, edge-replicated borders."""
    out = np.asarray(grid, dtype=float)
    for _ in range(params.median_passes):
        out = ndimage.median_filter(out, size=params.median_window, mode="nearest")
    return out


def smooth_s1(h: np.ndarray, sigma1: float, resolution: float) -> np.ndarray:
    """Discrete Gaussian smoothing with sigma in meters, edge replication."""
    return ndimage.gaussian_filter(h, sigma=sigma1 / resolution, mode="nearest")


def stone_gap_mask(h: np.ndarray, params: FilterParams) -> np.ndarray:
    """Cells whose height differs from the aggressive local median (stones/gaps)."""
    med = ndimage.median_filter(h, size=params.aggressive_median_window, mode="nearest")
    return np.abs(h - med) > MASK_THRESHOLD


def build_virtual_floor(h: np.ndarray, params: FilterParams, resolution: float) -> np.ndarray:
    """Masked max-dilation followed by heavy Gaussian smoothing.

    Cells whose dilation window touches a stone/gap cell take the window
    maximum of ``h`` (widening stones, narrowing gaps); all other cells are
    left untouched, so regular terrain such as stairs reduces to plain
    Gaussian smoothing.
    """
    mask = stone_gap_mask(h, params)
    if mask.any():
        dilated_h = ndimage.maximum_filter(h, size=params.dilation_window, mode="nearest")
        near_mask = ndimage.maximum_filter(
            mask.astype(np.uint8), size=params.dilation_window, mode="nearest"
        ).astype(bool)
        h_dilated = np.where(near_mask, dilated_h, h)
    else:
        h_dilated = h
    return ndimage.gaussian_filter(h_dilated, sigma=params.sigma2 / resolution, mode="nearest")


class HeightMapSet:
    """The three planning layers plus geometry and the derivative cache."""

    LAYERS = ("h", "h_s1", "h_s2")

    def __init__(self, raw: RawHeightMap, params: FilterParams | None = None):
        self.params = params or FilterParams.default_for(raw.resolution)
        self.cols = raw.cols
        self.rows = raw.rows
        self.resolution = raw.resolution
        self.origin_xy = tuple(raw.origin_xy)
        self.occluded = raw.occluded.copy()
        h = denoise(inpaint(raw), self.params)
        self.layers = {
            "h": h,
            "h_s1": smooth_s1(h, self.params.sigma1, raw.resolution),
            "h_s2": build_virtual_floor(h, self.params, raw.resolution),
        }
        for name, layer in self.layers.items():
            if not np.all(np.isfinite(layer)):
                raise TerrainError(f"layer {name} contains non-finite cells")
        self._deriv_cache: dict[tuple, float] = {}

    # -- grid geometry -------------------------------------------------

    def grid_coords(self, xy) -> tuple[float, float]:
        """World xy -> fractional (col, row)."""
        gx = (xy[0] - self.origin_xy[0]) / self.resolution
        gy = (xy[1] - self.origin_xy[1]) / self.resolution
        return gx, gy

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        return (
            self.origin_xy[0] + col * self.resolution,
            self.origin_xy[1] + row * self.resolution,
        )

    def contains(self, xy) -> bool:
        gx, gy = self.grid_coords(xy)
        return 0.0 <= gx <= self.cols - 1 and 0.0 <= gy <= self.rows - 1

    def _layer(self, layer_id: str) -> np.ndarray:
        try:
            return self.layers[layer_id]
        except KeyError:
            raise UnknownLayerError(f"unknown layer {layer_id!r}") from None

    # -- derivatives -----------------------------------------------------

    def derivative(self, layer_id: str, axis: str, order: int, cell: tuple[int, int]) -> float:
        """5-point central finite difference at a cell center, cached.

        ``axis`` is 'x' (along columns) or 'y' (along rows); indices outside
        the grid replicate the border cell.
        """
        if order not in (1, 2):
            raise TerrainError("derivative order must be 1 or 2")
        if axis not in ("x", "y"):
            raise TerrainError("axis must be 'x' or 'y'")
        row, col = int(cell[0]), int(cell[1])
        key = (layer_id, order, axis, row, col)
        cached = self._deriv_cache.get(key)
        if cached is not None:
            return cached
        grid = self._layer(layer_id)
        if axis == "x":
            idx = np.clip(np.arange(col - 2, col + 3), 0, self.cols - 1)
            stencil = grid[row, idx]
        else:
            idx = np.clip(np.arange(row - 2, row + 3), 0, self.rows - 1)
            stencil = grid[idx, col]
        kernel = _KERNEL_D1 if order == 1 else _KERNEL_D2
        value = float(stencil @ kernel) / self.resolution**order
        self._deriv_cache[key] = value
        return value

    # -- bilinear sampling -------------------------------------------------

    def _patch(self, xy):
        gx, gy = self.grid_coords(xy)
        cgx = min(max(gx, 0.0), float(self.cols - 1))
        cgy = min(max(gy, 0.0), float(self.rows - 1))
        if abs(cgx - gx) > 1e-12 or abs(cgy - gy) > 1e-12:
            clamped = (
                self.origin_xy[0] + cgx * self.resolution,
                self.origin_xy[1] + cgy * self.resolution,
            )
            raise OutOfBoundsError(xy, clamped)
        col0 = min(int(np.floor(gx)), self.cols - 2) if self.cols > 1 else 0
        row0 = min(int(np.floor(gy)), self.rows - 2) if self.rows > 1 else 0
        u = gx - col0
        v = gy - row0
        return row0, col0, u, v

    def _bilinear(self, values4, u, v):
        f00, f01, f10, f11 = values4
        return (
            f00 * (1 - u) * (1 - v)
            + f01 * u * (1 - v)
            + f10 * (1 - u) * v
            + f11 * u * v
        )

    def _corner_cells(self, row0, col0):
        col1 = min(col0 + 1, self.cols - 1)
        row1 = min(row0 + 1, self.rows - 1)
        return ((row0, col0), (row0, col1), (row1, col0), (row1, col1))

    def sample(self, layer_id: str, xy, quantity: str = "height"):
        """Bilinear interpolation of heights or cached cell-centered derivatives.

        ``quantity``: 'height' -> scalar, 'gradient' -> (d/dx, d/dy),
        'curvature' -> scalar Laplacian.
        """
        row0, col0, u, v = self._patch(xy)
        cells = self._corner_cells(row0, col0)
        if quantity == "height":
            grid = self._layer(layer_id)
            return float(self._bilinear([grid[r, c] for r, c in cells], u, v))
        if quantity == "gradient":
            gx = self._bilinear([self.derivative(layer_id, "x", 1, c) for c in cells], u, v)
            gy = self._bilinear([self.derivative(layer_id, "y", 1, c) for c in cells], u, v)
            return np.array([gx, gy])
        if quantity == "curvature":
            cxx = self._bilinear([self.derivative(layer_id, "x", 2, c) for c in cells], u, v)
            cyy = self._bilinear([self.derivative(layer_id, "y", 2, c) for c in cells], u, v)
            return float(cxx + cyy)
        raise TerrainError(f"unknown quantity {quantity!r}")

    def sample_with_gradient(self, layer_id: str, xy):
        """Height and the exact gradient of the bilinear height patch.

        This is the derivative pair used by optimization residuals: the
        returned gradient is the true derivative of :meth:`sample` heights, so
        task Jacobians built from it satisfy a finite-difference check; the
        kernel-based :meth:`sample` gradient remains the smoothed field for
        direct terrain queries.
        """
        grid = self._layer(layer_id)
        row0, col0, u, v = self._patch(xy)
        (r0, c0), (_, c1), (r1, _), _ = self._corner_cells(row0, col0)
        f00, f01 = grid[r0, c0], grid[r0, c1]
        f10, f11 = grid[r1, c0], grid[r1, c1]
        value = self._bilinear((f00, f01, f10, f11), u, v)
        ddx = ((f01 - f00) * (1 - v) + (f11 - f10) * v) / self.resolution
        ddy = ((f10 - f00) * (1 - u) + (f11 - f01) * u) / self.resolution
        return float(value), np.array([ddx, ddy])

    def sample_gradient_with_jacobian(self, layer_id: str, xy):
        """Kernel-gradient field (bilinear in cached cell derivatives) and the
        exact 2x2 Jacobian of that interpolated field w.r.t. xy."""
        row0, col0, u, v = self._patch(xy)
        cells = self._corner_cells(row0, col0)
        res = self.resolution
        grad = np.empty(2)
        jac = np.empty((2, 2))
        for k, axis in enumerate(("x", "y")):
            g00, g01, g10, g11 = (self.derivative(layer_id, axis, 1, c) for c in cells)
            grad[k] = self._bilinear((g00, g01, g10, g11), u, v)
            jac[k, 0] = ((g01 - g00) * (1 - v) + (g11 - g10) * v) / res
            jac[k, 1] = ((g10 - g00) * (1 - u) + (g11 - g01) * u) / res
        return grad, jac


# -- file format ---------------------------------------------------------
#
# Line-oriented text: header "cols rows resolution origin_x origin_y", then
# row-major heights, occluded cells written as "nan".


def write_height_file(path, grid: np.ndarray, resolution: float, origin_xy,
                      occluded: np.ndarray | None = None) -> None:
    grid = np.asarray(grid, dtype=float)
    rows, cols = grid.shape
    out = grid.copy()
    if occluded is not None:
        out[np.asarray(occluded, dtype=bool)] = np.nan
    with open(path, "w") as f:
        f.write(f"{cols} {rows} {resolution:.10g} {origin_xy[0]:.10g} {origin_xy[1]:.10g}\n")
        for row in out:
            f.write(" ".join(f"{v:.10g}" for v in row) + "\n")


def read_height_file(path) -> RawHeightMap:
    with open(path) as f:
        header = f.readline().split()
        cols, rows = int(header[0]), int(header[1])
        resolution = float(header[2])
        origin = (float(header[3]), float(header[4]))
        values = np.loadtxt(f, dtype=float, ndmin=2)
    if values.shape != (rows, cols):
        raise TerrainError(
            f"height file body {values.shape} does not match header ({rows}, {cols})"
        )
    occluded = ~np.isfinite(values)
    cells = np.where(occluded, 0.0, values)
    return RawHeightMap(
        cols=cols, rows=rows, resolution=resolution, origin_xy=origin,
        cells=cells, occluded=occluded,
    )
