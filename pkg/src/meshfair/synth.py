"""Ground-truth synthetic scene: a textured unit cube seen from a camera arc.

The images always depict the true cube; the working mesh starts as a copy of
the true mesh and can be perturbed, reproducing the setup where a model
vertex sits off the physical corner while the photographs show reality.
Everything is procedural and seeded, so scenes are byte-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import gaussian_filter

from .geometry import CameraView, TriMesh, project_points, triangle_patch
from .warp import bilinear_sample

BACKGROUND = 0.25
VISIBILITY_MARGIN = 2.0


@dataclass(frozen=True)
class FacePlane:
    """One textured cube face: world frame origin/edges and its texture raster."""

    origin: np.ndarray    # (3,)
    e1: np.ndarray        # (3,) first edge, texture s axis
    e2: np.ndarray        # (3,) second edge, texture t axis
    texture: np.ndarray   # (T, T) intensities in [0, 1]


@dataclass
class SyntheticScene:
    """Unit-cube ground truth plus a (possibly perturbed) working mesh."""

    true_mesh: TriMesh
    work_mesh: TriMesh
    views: list[CameraView]
    planes: list[FacePlane]
    tri_plane: np.ndarray      # face index -> plane index
    corner_vertex: int         # index of the corner common to three faces
    seed: int

    @property
    def corner_truth(self) -> np.ndarray:
        return self.true_mesh.vertices[self.corner_vertex]

    def work_scene(self):
        """Fairing scene over a copy of the working mesh."""
        from .fairing import Scene
        return Scene(mesh=self.work_mesh.copy(), views=self.views)


def _face_texture(rng: np.random.Generator, size: int, checker_cells: int,
                  blur: float, noise_amplitude: float) -> np.ndarray:
    """Checkerboard plus seeded band-limited noise, softened by a small blur.

    The sinusoid mix guarantees gradient energy in both directions and at low
    frequencies, which widens the coarse-level convergence basin; the blur
    keeps the raster comfortably below the render Nyquist rate.
    """
    ax = np.linspace(0.0, 1.0, size)
    s, t = np.meshgrid(ax, ax, indexing="xy")
    parity = (np.floor(s * checker_cells).astype(int)
              + np.floor(t * checker_cells).astype(int)) % 2
    tex = 0.5 + 0.18 * (2.0 * parity - 1.0)
    n_waves = 8
    for i in range(n_waves):
        freq = rng.uniform(0.5, 6.0, size=2)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        amp = noise_amplitude * rng.uniform(0.4, 1.0) / n_waves * (1.0 + 2.0 / (1.0 + freq.sum()))
        tex += amp * np.sin(2.0 * math.pi * (freq[0] * s + freq[1] * t) + phase)
    tex = gaussian_filter(tex, blur, mode="reflect")
    return np.clip(tex, 0.02, 0.98)


def _look_at(center: np.ndarray, target: np.ndarray, focal: float,
             image_size: int) -> np.ndarray:
    """3x4 projection of a camera at ``center`` aimed at ``target``."""
    forward = target - center
    forward = forward / np.linalg.norm(forward)
    up = np.array([0.0, 0.0, 1.0])
    if abs(forward @ up) > 0.99:
        up = np.array([0.0, 1.0, 0.0])
    right = np.cross(forward, up)
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.vstack([right, down, forward])
    c = (image_size - 1) / 2.0
    intr = np.array([[focal, 0.0, c], [0.0, focal, c], [0.0, 0.0, 1.0]])
    return intr @ np.column_stack([rot, -rot @ center])


def _rotate(v: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    axis = axis / np.linalg.norm(axis)
    return (v * math.cos(angle) + np.cross(axis, v) * math.sin(angle)
            + axis * (axis @ v) * (1.0 - math.cos(angle)))


def _cube_mesh() -> tuple[TriMesh, np.ndarray, int]:
    """Unit-cube mesh of the three faces meeting at corner (1, 1, 1).

    Each quad face splits into two triangles along the diagonal that avoids
    the corner, so the corner vertex is incident to exactly three triangles.
    """
    verts = np.array([
        [1.0, 1.0, 1.0],   # 0: corner A
        [0.0, 1.0, 1.0],   # 1
        [1.0, 0.0, 1.0],   # 2
        [1.0, 1.0, 0.0],   # 3
        [0.0, 0.0, 1.0],   # 4
        [1.0, 0.0, 0.0],   # 5
        [0.0, 1.0, 0.0],   # 6
    ])
    faces = np.array([
        [0, 1, 2],   # +Z corner triangle
        [1, 4, 2],   # +Z far triangle
        [0, 2, 3],   # +X corner triangle
        [2, 5, 3],   # +X far triangle
        [0, 3, 1],   # +Y corner triangle
        [3, 6, 1],   # +Y far triangle
    ])
    tri_plane = np.array([0, 0, 1, 1, 2, 2])
    return TriMesh(verts, faces), tri_plane, 0


def _render(P: np.ndarray, image_size: int, mesh: TriMesh,
            planes: list[FacePlane], tri_plane: np.ndarray) -> np.ndarray:
    """Perspective-correct render of the true planar textures, one image."""
    img = np.full((image_size, image_size), BACKGROUND)
    for fi in range(mesh.n_faces):
        plane = planes[tri_plane[fi]]
        basis = np.column_stack([plane.e1, plane.e2, plane.origin])
        hom = P[:, :3] @ basis + np.outer(P[:, 3], [0.0, 0.0, 1.0])
        hom_inv = np.linalg.inv(hom)

        tri2d = project_points(P, mesh.face_points(fi))
        lo = np.clip(np.floor(tri2d.min(axis=0)).astype(int), 0, image_size - 1)
        hi = np.clip(np.ceil(tri2d.max(axis=0)).astype(int), 0, image_size - 1)
        xs = np.arange(lo[0], hi[0] + 1)
        ys = np.arange(lo[1], hi[1] + 1)
        gx, gy = np.meshgrid(xs, ys, indexing="xy")
        px = np.column_stack([gx.ravel(), gy.ravel()]).astype(float)

        edge = np.column_stack([tri2d[1] - tri2d[0], tri2d[2] - tri2d[0]])
        ab = np.linalg.solve(edge, (px - tri2d[0]).T)
        eps = 1e-9
        inside = (ab[0] >= -eps) & (ab[1] >= -eps) & (ab.sum(axis=0) <= 1.0 + eps)
        if not inside.any():
            continue
        pin = px[inside]

        stw = hom_inv @ np.column_stack([pin, np.ones(len(pin))]).T
        s = stw[0] / stw[2]
        t = stw[1] / stw[2]
        tsize = plane.texture.shape[0]
        vals = bilinear_sample(plane.texture, s * (tsize - 1), t * (tsize - 1))
        img[pin[:, 1].astype(int), pin[:, 0].astype(int)] = vals
    return img


def make_cube_scene(seed: int = 1234, n_views: int = 12, image_size: int = 512,
                    distance: float = 3.0, arc_degrees: float = 60.0,
                    focal_ratio: float = 0.75, checker_cells: int = 6,
                    texture_size: int = 256, texture_blur: float = 3.0,
                    noise_amplitude: float = 0.3) -> SyntheticScene:
    """Build the standard corner-viewing scene.

    Cameras sit on an arc spanning ``arc_degrees`` at ``distance`` from the
    corner, all aimed at it; every triangle is checked to be front-facing and
    inside every image by the visibility margin.
    """
    if n_views < 2:
        raise ValueError("need at least two views")
    rng = np.random.default_rng(seed)
    mesh, tri_plane, corner = _cube_mesh()

    planes = [
        FacePlane(np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]),
                  np.array([0.0, 1.0, 0.0]),
                  _face_texture(rng, texture_size, checker_cells, texture_blur, noise_amplitude)),
        FacePlane(np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]),
                  np.array([0.0, 0.0, 1.0]),
                  _face_texture(rng, texture_size, checker_cells, texture_blur, noise_amplitude)),
        FacePlane(np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0]),
                  np.array([1.0, 0.0, 0.0]),
                  _face_texture(rng, texture_size, checker_cells, texture_blur, noise_amplitude)),
    ]

    corner_pos = mesh.vertices[corner]
    diag = np.array([1.0, 1.0, 1.0]) / math.sqrt(3.0)
    axis = np.array([1.0, -1.0, 0.0]) / math.sqrt(2.0)
    half = math.radians(arc_degrees) / 2.0
    focal = focal_ratio * image_size

    views = []
    for theta in np.linspace(-half, half, n_views):
        center = corner_pos + distance * _rotate(diag, axis, theta)
        P = _look_at(center, corner_pos, focal, image_size)
        img = _render(P, image_size, mesh, planes, tri_plane)
        views.append(CameraView(P=P, image=img))

    scene = SyntheticScene(true_mesh=mesh, work_mesh=mesh.copy(), views=views,
                           planes=planes, tri_plane=tri_plane,
                           corner_vertex=corner, seed=seed)
    _check_visibility(scene)
    return scene


def _check_visibility(scene: SyntheticScene) -> None:
    for vi, view in enumerate(scene.views):
        for fi in range(scene.true_mesh.n_faces):
            patch = triangle_patch(scene.true_mesh.face_points(fi), view,
                                   margin=-VISIBILITY_MARGIN,
                                   face_index=fi, view_index=vi)
            if abs(patch.signed_area) < 50.0:
                raise ValueError(
                    f"face {fi} nearly edge-on in view {vi}: {patch.signed_area:.1f} px^2")


def render_view(scene: SyntheticScene, view_index: int) -> np.ndarray:
    """Re-render one view from scratch; equals the stored raster exactly."""
    return _render(scene.views[view_index].P, scene.views[view_index].width,
                   scene.true_mesh, scene.planes, scene.tri_plane)


def perturb_vertex(scene: SyntheticScene, vertex_id: int, offset) -> SyntheticScene:
    """New scene whose working mesh has one vertex displaced by ``offset``.

    The true mesh and the rendered views are untouched: the images keep
    showing the real surface, only the model is wrong.
    """
    work = scene.work_mesh.copy()
    work.vertices[vertex_id] = work.vertices[vertex_id] + np.asarray(offset, dtype=float)
    return replace(scene, work_mesh=work)
