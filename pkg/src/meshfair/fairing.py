"""Robust Gauss-Newton vertex refinement driven by eigenspace texture residuals.

For one vertex, each inner iteration (a) re-extracts and smooths the cell
images of the incident faces at the current position, (b) rebuilds each
face's texture basis and coefficients, (c) estimates the robust scale from
the pooled residuals, (d) solves secant-weighted 3x3 normal equations for a
displacement direction, and (e) backtracks along it on the physically
re-warped objective with the scale frozen, accepting only non-increasing
error.  A coarse-to-fine schedule of cell smoothings widens the convergence
basin; whole-mesh runs sweep vertices Gauss-Seidel style in index order.

A practical note on step lengths: the basis rebuilt from the current cells
spans, to first order, exactly the appearance change a small vertex motion
induces, so the fixed-coefficients normal equations place their minimum a
vanishing distance away even when the vertex is far from the optimum.  The
solved displacement is therefore trusted for its direction, while its length
is set by the trust radius and the backtracking search against the objective
in which each face's coefficients (and basis) are re-fitted at the trial
position.  That re-fitted objective decreases smoothly over macroscopic
motions toward the optimum, which is what makes real progress per iteration
possible.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (DegenerateProjection, DepthNonPositive, NoObservations,
                     PatchOutOfBounds, ValidationError)
from .eigentexture import EigenBasis, build_basis
from .geometry import CameraView, TriMesh, pixel_displacement_jacobian, triangle_patch
from .robust import estimate_sigma, rho, rho_dot, secant_weight
from .warp import (AffineMap, affine_map, barycentric_weights, cell_gradient,
                   extract_cell, smooth_cell, smoothing_schedule, _cell_pixels)

log = logging.getLogger(__name__)

DAMPING_SCALE = 1e-9
TRACE_COLUMNS = ("sweep", "vertex", "level", "iter", "x", "y", "z",
                 "step_norm", "E", "sigma", "backtracks")


@dataclass(frozen=True)
class FairingConfig:
    """Tuning knobs of the optimizer; defaults mirror the reference setup."""

    cell_size: int = 128
    basis_size: int = 5
    levels: int = 5
    sigma_smooth_max: float = 6.0
    sigma_smooth_min: float = 1.2
    max_iterations: int = 50
    step_tolerance: float = 1e-4
    trust_ratio: float = 0.1
    max_sweeps: int = 10
    backtrack_factor: float = 0.5
    max_backtracks: int = 8
    bounds_margin: float = 2.0
    min_views_per_face: int = 2
    center_cells: bool = False

    def __post_init__(self):
        if self.cell_size < 8 or self.basis_size < 1 or self.levels < 1:
            raise ValidationError("cell_size, basis_size and levels must be positive")
        for name in ("sigma_smooth_max", "sigma_smooth_min", "step_tolerance",
                     "trust_ratio", "backtrack_factor"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be > 0")
        if self.max_iterations < 1 or self.max_sweeps < 1 or self.max_backtracks < 0:
            raise ValidationError("iteration limits must be positive")

    def schedule(self) -> np.ndarray:
        return smoothing_schedule(self.levels, self.sigma_smooth_max, self.sigma_smooth_min)


@dataclass
class Scene:
    """A mesh plus the calibrated views observing it."""

    mesh: TriMesh
    views: list[CameraView]

    def validate(self) -> None:
        """Check the front-of-camera invariant for every vertex in every view."""
        if not self.views:
            raise ValidationError("scene has no views")
        for i, view in enumerate(self.views):
            depths = self.mesh.vertices @ view.P[2, :3] + view.P[2, 3]
            if np.any(depths <= 0):
                raise ValidationError(f"vertex behind camera in view {i}")


@dataclass(frozen=True)
class TraceRow:
    """One accepted (or rejected) inner iteration of one vertex."""

    sweep: int
    vertex: int
    level: int
    iteration: int
    position: np.ndarray
    step_norm: float
    objective: float            # frozen-basis robust error after the step
    sigma: float
    backtracks: int
    objective_before: float     # same frozen objective before the step

    def csv_values(self):
        return (self.sweep, self.vertex, self.level, self.iteration,
                _fmt(self.position[0]), _fmt(self.position[1]), _fmt(self.position[2]),
                _fmt(self.step_norm), _fmt(self.objective), _fmt(self.sigma),
                self.backtracks)


def _fmt(x: float) -> str:
    return f"{x:.12g}"


@dataclass
class FairingTrace:
    """Full per-iteration record of a fairing run."""

    rows: list[TraceRow] = field(default_factory=list)
    skips: list[tuple[int, int, str]] = field(default_factory=list)
    sweep_summaries: list[tuple[int, float, float]] = field(default_factory=list)
    meta: dict[str, str] = field(default_factory=dict)

    def write_csv(self, path) -> None:
        """Atomic CSV export; meta entries go in ``# key=value`` header lines."""
        tmp = str(path) + ".tmp"
        with open(tmp, "w", newline="") as fh:
            for key in sorted(self.meta):
                fh.write(f"# {key}={self.meta[key]}\n")
            writer = csv.writer(fh)
            writer.writerow(TRACE_COLUMNS)
            for row in self.rows:
                writer.writerow(row.csv_values())
        os.replace(tmp, path)


@dataclass
class FaceObservations:
    """Everything needed to linearize one incident face across its views."""

    face: int
    corner: int                  # local index of the moving vertex in the face
    view_ids: list[int]
    maps: list[AffineMap]
    basis: EigenBasis
    recon: np.ndarray            # (n, npix) frozen reconstructions
    residuals: np.ndarray        # (n, npix)
    gradients: np.ndarray        # (n, npix, 2)
    jacobians: np.ndarray        # (n, 2, 3)


def cell_pixel_displacement(cell_coord, jacobian: np.ndarray, amap: AffineMap,
                            moving_corner: int, eta, size: int) -> np.ndarray:
    """Flow induced at one cell pixel by a 3D displacement of the moving vertex.

    The image-pixel displacement ``J . eta`` transfers to cell coordinates
    through the linear part of the affine map and falls off linearly with the
    barycentric weight of the moving canonical corner, vanishing on the
    opposite edge.
    """
    x, y = float(cell_coord[0]), float(cell_coord[1])
    leg = size - 1.0
    lam = (1.0 - (x + y) / leg, x / leg, y / leg)[moving_corner]
    return lam * (amap.linear @ (np.asarray(jacobian, dtype=float) @ np.asarray(eta, dtype=float)))


def linearized_residual(cell_value: float, recon_value: float,
                        gradient, displacement) -> float:
    """First-order residual: grad . flow plus the raw eigenspace residual."""
    g = np.asarray(gradient, dtype=float)
    d = np.asarray(displacement, dtype=float)
    return float(g @ d + (cell_value - recon_value))


def gather_observations(mesh: TriMesh, views: list[CameraView], vertex: int,
                        config: FairingConfig, sigma_smooth: float) -> list[FaceObservations]:
    """Extract, smooth and linearize the cells of all faces incident to a vertex.

    A (face, view) pair is dropped for this iteration when the projection
    fails (behind camera, degenerate, or outside the margin); a face is
    dropped entirely when fewer than ``min_views_per_face`` views remain.
    """
    size = config.cell_size
    ys, xs = _cell_pixels(size)
    out: list[FaceObservations] = []
    for fi in mesh.incident_faces(vertex):
        corner = int(np.nonzero(mesh.faces[fi] == vertex)[0][0])
        kept_ids: list[int] = []
        maps: list[AffineMap] = []
        cells = []
        jacs = []
        for vi, view in enumerate(views):
            try:
                patch = triangle_patch(mesh.face_points(fi), view,
                                       margin=config.bounds_margin,
                                       face_index=fi, view_index=vi)
                amap = affine_map(patch, size)
                cell = extract_cell(view.image, amap, size)
            except (DepthNonPositive, DegenerateProjection, PatchOutOfBounds):
                continue
            cells.append(smooth_cell(cell, sigma_smooth))
            maps.append(amap)
            kept_ids.append(vi)
            jacs.append(pixel_displacement_jacobian(view.P, mesh.vertices[vertex]))
        if len(cells) < config.min_views_per_face:
            continue

        k = min(config.basis_size, len(cells))
        basis = build_basis(cells, k, face=fi, center=config.center_cells)
        vecs = np.stack([c.data[ys, xs] for c in cells])
        centered = vecs - basis.mean if basis.mean is not None else vecs
        recon = (centered @ basis.vectors) @ basis.vectors.T
        if basis.mean is not None:
            recon = recon + basis.mean
        grads = np.stack([cell_gradient(c)[ys, xs, :] for c in cells])
        out.append(FaceObservations(face=int(fi), corner=corner, view_ids=kept_ids,
                                    maps=maps, basis=basis, recon=recon,
                                    residuals=vecs - recon, gradients=grads,
                                    jacobians=np.stack(jacs)))
    if not out:
        raise NoObservations(f"vertex {vertex}: no incident face retained enough views")
    return out


def assemble_normal_equations(observations: list[FaceObservations],
                              sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Secant-weighted 3x3 system A . delta = b for the vertex displacement.

    A is symmetric positive semi-definite because the secant weight is
    positive for every residual magnitude; b is minus the gradient of the
    linearized robust objective at zero displacement.
    """
    if not observations:
        raise NoObservations("no face observations")
    a = np.zeros((3, 3))
    b = np.zeros(3)
    npix_total = 0
    for fo in observations:
        lam = barycentric_weights(fo.basis.size)[:, fo.corner]
        for j in range(len(fo.view_ids)):
            flow_dirs = fo.gradients[j] @ (fo.maps[j].linear @ fo.jacobians[j])
            rows = lam[:, None] * flow_dirs
            r = fo.residuals[j]
            w = secant_weight(r, sigma)
            a += rows.T @ (w[:, None] * rows)
            b -= rows.T @ rho_dot(r, sigma)
            npix_total += rows.shape[0]
    if npix_total == 0:
        raise NoObservations("no masked-in pixels contribute")
    return a, b


def linearized_objective(observations: list[FaceObservations], sigma: float,
                         eta) -> float:
    """Robust error of the first-order residual model at displacement ``eta``."""
    eta = np.asarray(eta, dtype=float)
    total = 0.0
    for fo in observations:
        lam = barycentric_weights(fo.basis.size)[:, fo.corner]
        for j in range(len(fo.view_ids)):
            du = fo.maps[j].linear @ (fo.jacobians[j] @ eta)
            e = lam * (fo.gradients[j] @ du) + fo.residuals[j]
            total += float(rho(e, sigma).sum())
    return total


def position_objective(mesh: TriMesh, views: list[CameraView], vertex: int,
                       trial_pos: np.ndarray, observations: list[FaceObservations],
                       sigma: float, sigma_smooth: float, config: FairingConfig) -> float:
    """True robust error at a trial vertex position, with sigma frozen.

    Cells of the retained (face, view) pairs are physically re-extracted and
    re-smoothed at the trial geometry, then each face's texture fit
    (basis and coefficients) is re-solved there, exactly as the next
    iteration would see it.  An invalid trial projection returns +inf so the
    line search rejects the step.
    """
    size = config.cell_size
    total = 0.0
    for fo in observations:
        pts = mesh.face_points(fo.face).copy()
        pts[fo.corner] = trial_pos
        cells = []
        for vi in fo.view_ids:
            view = views[vi]
            try:
                patch = triangle_patch(pts, view, margin=config.bounds_margin,
                                       face_index=fo.face, view_index=vi)
                amap = affine_map(patch, size)
                cells.append(smooth_cell(extract_cell(view.image, amap, size), sigma_smooth))
            except (DepthNonPositive, DegenerateProjection, PatchOutOfBounds):
                return math.inf
        ys, xs = _cell_pixels(size)
        basis = build_basis(cells, max(1, fo.basis.k), face=fo.face,
                            center=config.center_cells)
        vecs = np.stack([c.data[ys, xs] for c in cells])
        centered = vecs - basis.mean if basis.mean is not None else vecs
        resid = centered - (centered @ basis.vectors) @ basis.vectors.T
        total += float(rho(resid, sigma).sum())
    return total


def _solve_step(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3x3 symmetric solve with Tikhonov damping when near-singular."""
    trace_a = float(np.trace(a))
    if trace_a <= 0.0:
        return np.zeros(3)
    evals = np.linalg.eigvalsh(a)
    if evals[0] <= DAMPING_SCALE * trace_a:
        a = a + DAMPING_SCALE * trace_a * np.eye(3)
    return np.linalg.solve(a, b)


def _fair_vertex_inplace(mesh: TriMesh, views: list[CameraView], vertex: int,
                         config: FairingConfig, sweep: int) -> list[TraceRow]:
    """Optimize one vertex, updating ``mesh.vertices[vertex]`` in place."""
    if len(mesh.incident_faces(vertex)) == 0:
        raise NoObservations(f"vertex {vertex} has no incident faces")
    trust_radius = config.trust_ratio * mesh.mean_incident_edge_length(vertex)
    rows: list[TraceRow] = []

    for level, sigma_smooth in enumerate(config.schedule()):
        converged = False
        last_step = trust_radius
        for iteration in range(1, config.max_iterations + 1):
            obs = gather_observations(mesh, views, vertex, config, sigma_smooth)
            all_resid = np.concatenate([fo.residuals.ravel() for fo in obs])
            sigma = estimate_sigma(all_resid).sigma
            e_before = float(rho(all_resid, sigma).sum())

            a, b = assemble_normal_equations(obs, sigma)
            delta = _solve_step(a, b)
            norm = float(np.linalg.norm(delta))
            if norm == 0.0:
                rows.append(TraceRow(sweep=sweep, vertex=vertex, level=level,
                                     iteration=iteration,
                                     position=mesh.vertices[vertex].copy(),
                                     step_norm=0.0, objective=e_before,
                                     sigma=sigma, backtracks=0,
                                     objective_before=e_before))
                converged = True
                break
            direction = delta / norm
            # The solved length is useful only when it exceeds the adaptive
            # start (see module docstring); otherwise stretch to it.
            start = min(trust_radius, max(norm, 2.0 * last_step))

            x = mesh.vertices[vertex].copy()
            length = start
            backtracks = 0
            accepted = False
            e_after = e_before
            while backtracks <= config.max_backtracks:
                trial = x + length * direction
                e_trial = position_objective(mesh, views, vertex, trial, obs,
                                             sigma, sigma_smooth, config)
                if e_trial <= e_before:
                    accepted = True
                    e_after = e_trial
                    break
                length *= config.backtrack_factor
                backtracks += 1

            if accepted:
                mesh.vertices[vertex] = x + length * direction
                step_norm = length
                last_step = max(length, config.step_tolerance)
            else:
                step_norm = 0.0
            rows.append(TraceRow(sweep=sweep, vertex=vertex, level=level,
                                 iteration=iteration,
                                 position=mesh.vertices[vertex].copy(),
                                 step_norm=step_norm, objective=e_after,
                                 sigma=sigma, backtracks=backtracks,
                                 objective_before=e_before))
            if not accepted or step_norm < config.step_tolerance:
                converged = True
                break
        if not converged:
            log.debug("vertex %d level %d: iteration cap hit with step above tolerance",
                      vertex, level)
    return rows


def fair_vertex(scene: Scene, vertex: int, config: FairingConfig | None = None,
                *, sweep: int = 0) -> tuple[np.ndarray, list[TraceRow]]:
    """Refine a single vertex; the scene itself is left untouched.

    Returns the faired position and the per-iteration trace rows.  Raises
    NoObservations when no incident face keeps enough views.
    """
    config = config or FairingConfig()
    work = scene.mesh.copy()
    rows = _fair_vertex_inplace(work, scene.views, vertex, config, sweep)
    return work.vertices[vertex].copy(), rows


def fair_mesh(scene: Scene, config: FairingConfig | None = None) -> tuple[TriMesh, FairingTrace]:
    """Gauss-Seidel sweeps of :func:`fair_vertex` over all vertices in index order.

    Stops when the largest vertex motion in a sweep drops below the step
    tolerance or the sweep cap is reached.  Vertices that cannot be observed
    are recorded as skips, not errors.
    """
    config = config or FairingConfig()
    mesh = scene.mesh.copy()
    trace = FairingTrace(meta=config_meta(config))

    for sweep in range(1, config.max_sweeps + 1):
        max_motion = 0.0
        total_error = 0.0
        for vertex in range(len(mesh)):
            old = mesh.vertices[vertex].copy()
            try:
                rows = _fair_vertex_inplace(mesh, scene.views, vertex, config, sweep)
            except NoObservations as exc:
                trace.skips.append((sweep, vertex, str(exc)))
                continue
            trace.rows.extend(rows)
            if rows:
                total_error += rows[-1].objective
            max_motion = max(max_motion, float(np.linalg.norm(mesh.vertices[vertex] - old)))
        trace.sweep_summaries.append((sweep, max_motion, total_error))
        if max_motion < config.step_tolerance:
            break
    return mesh, trace


def config_meta(config: FairingConfig) -> dict[str, str]:
    """Config echo for trace headers."""
    return {
        "cell_size": str(config.cell_size),
        "k": str(config.basis_size),
        "levels": str(config.levels),
        "sigma_smooth_max": _fmt(config.sigma_smooth_max),
        "sigma_smooth_min": _fmt(config.sigma_smooth_min),
        "max_iters": str(config.max_iterations),
        "tol": _fmt(config.step_tolerance),
        "trust": _fmt(config.trust_ratio),
        "sweeps": str(config.max_sweeps),
    }
