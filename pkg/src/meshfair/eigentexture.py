"""Per-face eigenspace texture bases built from stacks of cell images.

The basis for a face is the set of top-k left singular vectors of the matrix
whose columns are the face's cell images (masked pixels flattened, no mean
subtraction by default).  Coefficients are plain dot products with the basis,
and the coherence of a face across views is the distance of its cells from
the spanned subspace.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientViews, KTooLarge, MaskMismatch
from .warp import CellImage, _cell_pixels

# Relative singular-value cutoff below which components are treated as rank
# noise.  The Gram-matrix route squares the conditioning, so components below
# ~sqrt(eps) of the leading value carry no reliable information anyway.
RANK_RTOL = 1e-7


@dataclass
class EigenBasis:
    """Orthonormal texture basis for one face.

    ``vectors`` holds k columns of masked-pixel length; ``singular_values``
    is the full descending spectrum of the cell stack (length n), kept so
    truncation-energy diagnostics need no recomputation.  ``mean`` is the
    stack mean vector when centering was requested, else None.
    """

    face: int
    size: int
    mask: np.ndarray
    vectors: np.ndarray
    singular_values: np.ndarray
    mean: np.ndarray | None = None

    @property
    def k(self) -> int:
        return self.vectors.shape[1]

    def captured_energy(self, k: int | None = None) -> float:
        """Fraction of total squared singular value held by the first k components."""
        s2 = self.singular_values**2
        total = s2.sum()
        if total == 0:
            return 1.0
        kk = self.k if k is None else k
        return float(s2[:kk].sum() / total)


def _stack(cells: list[CellImage]) -> np.ndarray:
    """(npix, n) matrix of masked cell intensities, one column per view."""
    first = cells[0]
    ys, xs = _cell_pixels(first.size)
    cols = np.empty((len(ys), len(cells)))
    for j, c in enumerate(cells):
        if c.size != first.size:
            raise MaskMismatch(f"cell size {c.size} != {first.size}")
        if c.mask is not first.mask and not np.array_equal(c.mask, first.mask):
            raise MaskMismatch("cells do not share the canonical mask")
        cols[:, j] = c.data[ys, xs]
    return cols


def build_basis(cells: list[CellImage], k: int, *, face: int = -1,
                center: bool = False) -> EigenBasis:
    """Top-k orthonormal basis of a face's cell-image stack.

    The decomposition runs on the n x n Gram matrix (n = number of views),
    which is numerically equivalent to an SVD of the full pixel-count matrix
    for the retained components and far cheaper.  Components whose singular
    value falls below ``RANK_RTOL`` of the largest are dropped, so the
    returned basis may have fewer than k columns for rank-deficient stacks.
    Each basis vector is sign-fixed so its largest-magnitude entry is
    positive, making results independent of view order.
    """
    n = len(cells)
    if n < 1:
        raise InsufficientViews("need at least one cell image")
    if not 1 <= k <= n:
        raise KTooLarge(f"k={k} outside [1, {n}]")
    m = _stack(cells)
    mean = None
    if center:
        mean = m.mean(axis=1)
        m = m - mean[:, None]

    gram = m.T @ m
    evals, evecs = np.linalg.eigh(gram)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    svals = np.sqrt(evals)

    rank = int(np.count_nonzero(svals > RANK_RTOL * svals[0])) if svals[0] > 0 else 0
    k_eff = min(k, rank)
    if k_eff > 0:
        u = (m @ evecs[:, :k_eff]) / svals[:k_eff]
        # Re-orthonormalize: the Gram route loses orthogonality near the
        # rank cutoff; QR restores it without leaving the spanned subspace.
        u, r = np.linalg.qr(u)
        u = u * np.sign(np.diag(r))
        flip = np.sign(u[np.abs(u).argmax(axis=0), np.arange(k_eff)])
        u = u * flip
    else:
        u = np.zeros((m.shape[0], 0))

    return EigenBasis(face=face, size=cells[0].size, mask=cells[0].mask,
                      vectors=u, singular_values=svals, mean=mean)


def _check_cell(basis: EigenBasis, cell: CellImage) -> np.ndarray:
    if cell.size != basis.size:
        raise MaskMismatch(f"cell size {cell.size} != basis size {basis.size}")
    if cell.mask is not basis.mask and not np.array_equal(cell.mask, basis.mask):
        raise MaskMismatch("cell mask differs from basis mask")
    return cell.masked_values()


def project_coeffs(basis: EigenBasis, cell: CellImage) -> np.ndarray:
    """Coefficients of a cell in the basis: dot products over masked-in pixels."""
    v = _check_cell(basis, cell)
    if basis.mean is not None:
        v = v - basis.mean
    return basis.vectors.T @ v


def reconstruct(basis: EigenBasis, coeffs: np.ndarray) -> CellImage:
    """Linear combination of basis images; masked-out pixels are zero.

    Values are intentionally not clamped to [0, 1]: residuals need signed
    overshoot.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (basis.k,):
        raise ValueError(f"expected {basis.k} coefficients, got {coeffs.shape}")
    v = basis.vectors @ coeffs
    if basis.mean is not None:
        v = v + basis.mean
    ys, xs = _cell_pixels(basis.size)
    data = np.zeros((basis.size, basis.size))
    data[ys, xs] = v
    return CellImage(size=basis.size, data=data, mask=basis.mask)


def coherence_residuals(basis: EigenBasis, cells: list[CellImage]):
    """Signed residual rasters (cell minus reconstruction) and their total energy.

    Returns
    -------
    residuals : (n, S, S) array, zero outside the mask.
    total_squared : float
        Sum of squared masked-in residuals over all views; the stack's
        distance from the spanned eigenspace.
    """
    ys, xs = _cell_pixels(basis.size)
    out = np.zeros((len(cells), basis.size, basis.size))
    total = 0.0
    for j, cell in enumerate(cells):
        v = _check_cell(basis, cell)
        centered = v - basis.mean if basis.mean is not None else v
        recon = basis.vectors @ (basis.vectors.T @ centered)
        if basis.mean is not None:
            recon = recon + basis.mean
        r = v - recon
        total += float(r @ r)
        out[j, ys, xs] = r
    return out, total
