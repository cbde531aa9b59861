"""Canonical cell images: triangle-to-cell affine maps, extraction, smoothing.

The canonical cell is the lower-left half of an S x S raster with corners
``C0 = (0, 0)``, ``C1 = (S-1, 0)``, ``C2 = (0, S-1)``.  Every face texture
observed in any view is resampled into this fixed triangle, so cells from
different views of the same face are directly comparable pixel by pixel.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DegenerateProjection
from .geometry import ImagePatch

MIN_MAP_DET = 1e-9
MIN_CELL_SIZE = 8


@lru_cache(maxsize=None)
def _canonical(size: int):
    if size < MIN_CELL_SIZE:
        raise ValueError(f"cell size must be >= {MIN_CELL_SIZE}")
    corners = np.array([[0.0, 0.0], [size - 1.0, 0.0], [0.0, size - 1.0]])
    ys, xs = np.mgrid[0:size, 0:size]
    mask = (xs + ys) <= size - 1
    for a in (corners, mask):
        a.flags.writeable = False
    return corners, mask


@lru_cache(maxsize=None)
def _cell_pixels(size: int):
    """Row-major (ys, xs) integer coordinates of masked-in cell pixels."""
    _, mask = _canonical(size)
    ys, xs = np.nonzero(mask)
    for a in (ys, xs):
        a.flags.writeable = False
    return ys, xs


@lru_cache(maxsize=None)
def barycentric_weights(size: int) -> np.ndarray:
    """(npix, 3) barycentric coordinates of masked-in pixels w.r.t. C0, C1, C2."""
    ys, xs = _cell_pixels(size)
    leg = size - 1.0
    lam = np.column_stack([1.0 - (xs + ys) / leg, xs / leg, ys / leg])
    lam.flags.writeable = False
    return lam


def canonical_triangle(size: int):
    """Corners and inside-mask of the canonical cell triangle.

    Returns
    -------
    corners : (3, 2) float array, ``(0,0), (S-1,0), (0,S-1)``.
    mask : (S, S) bool array, True where all barycentric coordinates are >= 0.
    """
    corners, mask = _canonical(size)
    return corners.copy(), mask.copy()


@dataclass
class CellImage:
    """One face's texture from one view, resampled on the canonical cell.

    ``data`` is zero outside ``mask``; ``out_of_image`` counts cell pixels
    whose source sample fell outside the image and was edge-clamped.
    """

    size: int
    data: np.ndarray
    mask: np.ndarray
    out_of_image: int = 0

    def masked_values(self) -> np.ndarray:
        """Masked-in intensities as a flat vector (row-major order)."""
        ys, xs = _cell_pixels(self.size)
        return self.data[ys, xs]


@dataclass(frozen=True)
class AffineMap:
    """2x3 affine map from homogeneous image pixels to cell pixels."""

    H: np.ndarray

    @property
    def linear(self) -> np.ndarray:
        return self.H[:, :2]

    @property
    def offset(self) -> np.ndarray:
        return self.H[:, 2]

    def apply(self, pts: np.ndarray) -> np.ndarray:
        """Map (n, 2) image points to cell coordinates."""
        return np.asarray(pts, dtype=float) @ self.linear.T + self.offset

    def invert_points(self, cell_pts: np.ndarray) -> np.ndarray:
        """Map (n, 2) cell coordinates back to image pixels."""
        rhs = (np.asarray(cell_pts, dtype=float) - self.offset).T
        return np.linalg.solve(self.linear, rhs).T


def affine_map(patch: ImagePatch, size: int) -> AffineMap:
    """Affine map taking patch corner ``j`` exactly onto canonical corner ``C_j``.

    The correspondence is fixed by face vertex order, so a given mesh vertex
    lands on the same canonical corner in every view.
    """
    corners, _ = _canonical(size)
    src = np.column_stack([patch.coords, np.ones(3)])
    try:
        hx = np.linalg.solve(src, corners[:, 0])
        hy = np.linalg.solve(src, corners[:, 1])
    except np.linalg.LinAlgError as exc:
        raise DegenerateProjection("patch corners are collinear") from exc
    H = np.vstack([hx, hy])
    det = H[0, 0] * H[1, 1] - H[0, 1] * H[1, 0]
    if abs(det) < MIN_MAP_DET:
        raise DegenerateProjection(f"affine map determinant {det:g} below {MIN_MAP_DET:g}")
    return AffineMap(H)


def bilinear_sample(image: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear interpolation at (x, y) with edge clamping, pixel-center convention."""
    h, w = image.shape
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(x), w - 2).astype(int)
    y0 = np.minimum(np.floor(y), h - 2).astype(int)
    tx = x - x0
    ty = y - y0
    top = (1.0 - tx) * image[y0, x0] + tx * image[y0, x0 + 1]
    bot = (1.0 - tx) * image[y0 + 1, x0] + tx * image[y0 + 1, x0 + 1]
    return (1.0 - ty) * top + ty * bot


def extract_cell(image: np.ndarray, amap: AffineMap, size: int) -> CellImage:
    """Resample a face's image texture into the canonical cell.

    Every masked-in cell pixel is bilinearly sampled at the inverse-mapped
    image position; samples outside the raster clamp to the nearest edge
    pixel and are tallied in ``out_of_image``.
    """
    det = amap.H[0, 0] * amap.H[1, 1] - amap.H[0, 1] * amap.H[1, 0]
    if abs(det) < MIN_MAP_DET:
        raise DegenerateProjection("affine map is not invertible")
    ys, xs = _cell_pixels(size)
    cell_pts = np.column_stack([xs, ys]).astype(float)
    img_pts = amap.invert_points(cell_pts)
    sx, sy = img_pts[:, 0], img_pts[:, 1]
    h, w = image.shape
    outside = (sx < 0) | (sx > w - 1) | (sy < 0) | (sy > h - 1)
    vals = bilinear_sample(image, sx, sy)
    data = np.zeros((size, size))
    data[ys, xs] = vals
    _, mask = _canonical(size)
    return CellImage(size=size, data=data, mask=mask, out_of_image=int(outside.sum()))


@lru_cache(maxsize=None)
def _mask_weight(size: int, sigma: float) -> np.ndarray:
    _, mask = _canonical(size)
    den = gaussian_filter(mask.astype(float), sigma, mode="constant")
    den[~mask] = 1.0
    den.flags.writeable = False
    return den


def smooth_cell(cell: CellImage, sigma_smooth: float) -> CellImage:
    """Mask-normalized Gaussian blur of a cell image.

    Weights of masked-out pixels are zero and the kernel renormalized, so a
    constant cell stays constant and no background bleeds in.  ``sigma_smooth``
    of zero is the identity.
    """
    if sigma_smooth < 0:
        raise ValueError("sigma_smooth must be >= 0")
    if sigma_smooth == 0:
        return cell
    num = gaussian_filter(cell.data, sigma_smooth, mode="constant")
    den = _mask_weight(cell.size, float(sigma_smooth))
    data = np.where(cell.mask, num / den, 0.0)
    return CellImage(size=cell.size, data=data, mask=cell.mask,
                     out_of_image=cell.out_of_image)


def cell_gradient(cell: CellImage) -> np.ndarray:
    """(S, S, 2) per-pixel intensity gradient (d/dx, d/dy) over the mask.

    Central differences where both neighbors are masked-in, one-sided at the
    mask boundary, zero where no masked-in neighbor exists or outside the mask.
    """
    size = cell.size
    m = cell.mask
    mp = np.zeros((size + 2, size + 2), dtype=bool)
    mp[1:-1, 1:-1] = m
    ip = np.zeros((size + 2, size + 2))
    ip[1:-1, 1:-1] = cell.data

    out = np.zeros((size, size, 2))
    for axis, (mlo, ilo, mhi, ihi) in enumerate([
        (mp[1:-1, :-2], ip[1:-1, :-2], mp[1:-1, 2:], ip[1:-1, 2:]),   # x neighbors
        (mp[:-2, 1:-1], ip[:-2, 1:-1], mp[2:, 1:-1], ip[2:, 1:-1]),   # y neighbors
    ]):
        g = np.where(mlo & mhi, 0.5 * (ihi - ilo),
                     np.where(mhi, ihi - cell.data,
                              np.where(mlo, cell.data - ilo, 0.0)))
        g[~m] = 0.0
        out[:, :, axis] = g
    return out


def smoothing_schedule(levels: int, sigma_max: float, sigma_min: float) -> np.ndarray:
    """Coarse-to-fine smoothing sigmas, linear from ``sigma_max`` down to ``sigma_min``."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if levels == 1:
        return np.array([sigma_min])
    return np.linspace(sigma_max, sigma_min, levels)
