"""meshfair: multi-view photo-consistency refinement of textured triangle meshes.

A mesh face observed in several calibrated images yields a stack of cell
images; the stack's distance from its own low-rank eigenspace measures how
well the face approximates the real surface.  This package minimizes that
distance over vertex positions with a robust Gauss-Newton scheme, and ships
a synthetic textured-cube scene as a ground-truth test bed.
"""

from .errors import (DegenerateProjection, DepthNonPositive, EmptyResiduals,
                     FairingError, InsufficientViews, KTooLarge, MaskMismatch,
                     NonPositiveSigma, NoObservations, PatchOutOfBounds,
                     ValidationError)
from .eigentexture import (EigenBasis, build_basis, coherence_residuals,
                           project_coeffs, reconstruct)
from .fairing import (FairingConfig, FairingTrace, Scene, TraceRow,
                      assemble_normal_equations, cell_pixel_displacement,
                      fair_mesh, fair_vertex, gather_observations,
                      linearized_objective, linearized_residual)
from .geometry import (CameraView, ImagePatch, TriMesh, face_image_triangle,
                       pixel_displacement_jacobian, project_point)
from .robust import (RobustScale, estimate_sigma, outlier_mask, rho, rho_dot,
                     rho_ddot, secant_weight)
from .synth import SyntheticScene, make_cube_scene, perturb_vertex, render_view
from .warp import (AffineMap, CellImage, affine_map, canonical_triangle,
                   cell_gradient, extract_cell, smooth_cell, smoothing_schedule)

__version__ = "0.1.0"
