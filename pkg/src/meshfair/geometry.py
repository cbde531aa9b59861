"""Mesh and camera primitives: pinhole projection and its displacement Jacobian.

Conventions used throughout:

* a pixel coordinate ``u = (x, y)`` addresses ``image[y, x]``; integer
  coordinates are pixel centers,
* a projection matrix ``P`` is 3x4 with rows ``[r_p | t_p]``; the depth of a
  world point ``x`` is ``r_3 . x + t_3`` and must be positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateProjection, DepthNonPositive, PatchOutOfBounds

MIN_DEPTH = 1e-12
MIN_FACE_AREA = 1e-12      # world-units^2
MIN_PATCH_AREA = 1.0       # pixels^2
DEFAULT_BOUNDS_MARGIN = 2.0


@dataclass
class TriMesh:
    """Triangle mesh with shared vertices.

    Parameters
    ----------
    vertices : (n, 3) float array
        Vertex positions in world units.
    faces : (m, 3) int array
        Vertex indices per triangle; every face must reference three
        distinct vertices and span a nonzero 3D area.
    """

    vertices: np.ndarray
    faces: np.ndarray
    _vertex_faces: list[np.ndarray] | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.faces = np.ascontiguousarray(self.faces, dtype=int)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError("vertices must be an (n, 3) array")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValueError("faces must be an (m, 3) array")
        if self.faces.size:
            if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
                raise ValueError("face index out of range")
            f = self.faces
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise ValueError("face repeats a vertex index")
            if np.any(self.face_areas() <= MIN_FACE_AREA):
                raise ValueError(f"face area below {MIN_FACE_AREA} world-units^2")

    def __len__(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def face_points(self, face_index: int) -> np.ndarray:
        """(3, 3) positions of one face's vertices, in face order."""
        return self.vertices[self.faces[face_index]]

    def face_areas(self) -> np.ndarray:
        p = self.vertices[self.faces]
        cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def incident_faces(self, vertex: int) -> np.ndarray:
        """Indices of faces containing ``vertex`` (cached; topology is fixed)."""
        if self._vertex_faces is None:
            table: list[list[int]] = [[] for _ in range(len(self.vertices))]
            for fi, face in enumerate(self.faces):
                for v in face:
                    table[v].append(fi)
            self._vertex_faces = [np.array(t, dtype=int) for t in table]
        return self._vertex_faces[vertex]

    def mean_incident_edge_length(self, vertex: int) -> float:
        """Mean length of mesh edges incident to ``vertex``."""
        others: set[int] = set()
        for fi in self.incident_faces(vertex):
            for v in self.faces[fi]:
                if v != vertex:
                    others.add(int(v))
        if not others:
            return 0.0
        d = self.vertices[sorted(others)] - self.vertices[vertex]
        return float(np.linalg.norm(d, axis=1).mean())

    def copy(self) -> "TriMesh":
        return TriMesh(self.vertices.copy(), self.faces)


@dataclass
class CameraView:
    """One calibrated view: a 3x4 projection matrix and its grayscale raster."""

    P: np.ndarray
    image: np.ndarray

    def __post_init__(self):
        self.P = np.ascontiguousarray(self.P, dtype=float)
        self.image = np.ascontiguousarray(self.image, dtype=float)
        if self.P.shape != (3, 4):
            raise ValueError("P must be 3x4")
        if self.image.ndim != 2 or min(self.image.shape) < 2:
            raise ValueError("image must be a 2D raster of at least 2x2 pixels")

    @property
    def width(self) -> int:
        return self.image.shape[1]

    @property
    def height(self) -> int:
        return self.image.shape[0]

    def depth(self, x) -> float:
        return float(self.P[2, :3] @ np.asarray(x, dtype=float) + self.P[2, 3])


@dataclass(frozen=True)
class ImagePatch:
    """The projection of one mesh face into one image.

    ``coords`` holds the three pixel positions in face vertex order, so
    corner ``j`` of the patch always corresponds to face vertex ``j``.
    """

    face_index: int
    coords: np.ndarray           # (3, 2)
    view_index: int = -1

    @property
    def signed_area(self) -> float:
        d1 = self.coords[1] - self.coords[0]
        d2 = self.coords[2] - self.coords[0]
        return 0.5 * float(d1[0] * d2[1] - d1[1] * d2[0])


def project_point(P: np.ndarray, x) -> np.ndarray:
    """Project a 3D point through a 3x4 matrix, returning (x, y) pixels.

    Raises
    ------
    DepthNonPositive
        If the point's depth ``r_3 . x + t_3`` is not strictly positive.
    """
    P = np.asarray(P, dtype=float)
    x = np.asarray(x, dtype=float)
    depth = P[2, :3] @ x + P[2, 3]
    if depth <= MIN_DEPTH:
        raise DepthNonPositive(f"point depth {depth:g} <= {MIN_DEPTH:g}")
    num = P[:2, :3] @ x + P[:2, 3]
    return num / depth


def project_points(P: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Vectorized :func:`project_point` for an (n, 3) array of points."""
    P = np.asarray(P, dtype=float)
    pts = np.asarray(pts, dtype=float)
    depth = pts @ P[2, :3] + P[2, 3]
    if np.any(depth <= MIN_DEPTH):
        raise DepthNonPositive("at least one point at non-positive depth")
    num = pts @ P[:2, :3].T + P[:2, 3]
    return num / depth[:, None]


def pixel_displacement_jacobian(P: np.ndarray, x) -> np.ndarray:
    """2x3 Jacobian of the projected pixel w.r.t. a 3D displacement of ``x``.

    Row 1 is ``((r3.x + t3) r1 - (r1.x + t1) r3) / (r3.x + t3)^2`` and row 2
    the analogue with ``r2, t2``; multiplying by a small world displacement
    gives the induced pixel displacement exactly to first order.
    """
    P = np.asarray(P, dtype=float)
    x = np.asarray(x, dtype=float)
    depth = P[2, :3] @ x + P[2, 3]
    if depth <= MIN_DEPTH:
        raise DepthNonPositive(f"point depth {depth:g} <= {MIN_DEPTH:g}")
    num = P[:2, :3] @ x + P[:2, 3]
    return (depth * P[:2, :3] - np.outer(num, P[2, :3])) / depth**2


def triangle_patch(points: np.ndarray, view: CameraView, *,
                   margin: float = DEFAULT_BOUNDS_MARGIN,
                   face_index: int = -1, view_index: int = -1) -> ImagePatch:
    """Project three 3D points into a view and validate the resulting patch.

    Raises DepthNonPositive, DegenerateProjection (projected area below
    1 px^2) or PatchOutOfBounds (any corner beyond the image rectangle
    expanded by ``margin`` pixels).
    """
    coords = project_points(view.P, np.asarray(points, dtype=float))
    patch = ImagePatch(face_index=face_index, coords=coords, view_index=view_index)
    if abs(patch.signed_area) < MIN_PATCH_AREA:
        raise DegenerateProjection(
            f"projected area {patch.signed_area:g} px^2 below {MIN_PATCH_AREA} px^2")
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    if (lo[0] < -margin or lo[1] < -margin
            or hi[0] > view.width - 1 + margin or hi[1] > view.height - 1 + margin):
        raise PatchOutOfBounds(
            f"patch [{lo[0]:.1f},{hi[0]:.1f}]x[{lo[1]:.1f},{hi[1]:.1f}] outside "
            f"{view.width}x{view.height} image (+{margin} px margin)")
    return patch


def face_image_triangle(mesh: TriMesh, face_index: int, view: CameraView, *,
                        margin: float = DEFAULT_BOUNDS_MARGIN,
                        view_index: int = -1) -> ImagePatch:
    """Project mesh face ``face_index`` into ``view`` as an :class:`ImagePatch`."""
    return triangle_patch(mesh.face_points(face_index), view,
                          margin=margin, face_index=face_index, view_index=view_index)
