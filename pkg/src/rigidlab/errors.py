"""Exception hierarchy shared by all rigidlab modules."""


class RigidlabError(Exception):
    """Base class for every error raised by rigidlab."""


class DegenerateProjection(RigidlabError):
    """Point lies on the focal set of the closest-point projection."""


class OutsideInjectivityRadius(RigidlabError):
    """Two points are too far apart for a unique minimizing geodesic."""


class FrameMismatch(RigidlabError):
    """Tangent data is not based at the point it is used with."""


class DegenerateFit(RigidlabError):
    """Weighted correlation data does not determine an isometry."""


class ResolutionTooSmall(RigidlabError):
    """Requested mesh resolution is below the supported minimum."""


class FaceImageTooSpread(RigidlabError):
    """A face image is too large for a well-defined discrete differential."""


class MeshMismatch(RigidlabError):
    """Two discrete maps (or a map file) refer to different meshes."""


class LipschitzBoundViolated(RigidlabError):
    """A face differential exceeds the configured Lipschitz bound."""


class StepRejected(RigidlabError):
    """Heat-flow step increased the Dirichlet energy after all retries."""


class SolverFailure(RigidlabError):
    """An eigen- or linear solver did not converge."""


class DegenerateStar(RigidlabError):
    """Vertex neighbourhood is too degenerate for a gradient fit."""


class ExponentOutOfRange(RigidlabError, ValueError):
    """Integrability exponent outside the supported interval."""


class ConfigError(RigidlabError, ValueError):
    """Experiment configuration failed validation."""
