"""Exception types shared across the pipeline."""


class FairingError(Exception):
    """Base class for all meshfair errors."""


class DepthNonPositive(FairingError):
    """A 3D point has non-positive depth in front of a camera."""


class DegenerateProjection(FairingError):
    """A projected triangle or triangle-to-cell map is numerically degenerate."""


class PatchOutOfBounds(FairingError):
    """A projected triangle falls outside the image bounds plus margin."""


class InsufficientViews(FairingError):
    """Too few cell images to build a texture basis."""


class KTooLarge(FairingError):
    """Requested basis dimension exceeds the number of contributing views."""


class MaskMismatch(FairingError):
    """Cell images do not share the same canonical mask."""


class NonPositiveSigma(FairingError):
    """Robust scale parameter must be positive and finite."""


class EmptyResiduals(FairingError):
    """Scale estimation needs at least one residual."""


class NoObservations(FairingError):
    """No (face, view) pair contributes pixels to the vertex update."""


class ValidationError(FairingError):
    """Invalid or mutually inconsistent user-supplied inputs."""
