"""Exception types shared across the package."""


class EstimationError(Exception):
    """Base class for failures raised by the estimation pipeline."""


class UnderdeterminedDeploymentError(EstimationError):
    """Fewer effective anchors than the linear stage needs."""


class SingularSystemError(EstimationError):
    """A least-squares system lost rank.

    Carries the numeric rank that was actually found.
    """

    def __init__(self, message: str, rank: int):
        super().__init__(message)
        self.rank = rank


class DegenerateProjectionError(EstimationError):
    """Rotation projection is undefined (zero or fully collapsed input)."""


class DegenerateGeometryError(EstimationError):
    """Tag or anchor geometry cannot support the requested fit."""


class NearSingularityError(EstimationError):
    """A predicted range or information denominator fell below its floor.

    ``tag_index``/``anchor_index`` identify the offending pair when known.
    """

    def __init__(self, message: str, tag_index: int | None = None, anchor_index: int | None = None):
        super().__init__(message)
        self.tag_index = tag_index
        self.anchor_index = anchor_index


class UnobservableDeploymentError(EstimationError):
    """Deployment fails the anchor/tag observability conditions."""


class UnobservableAtPoseError(EstimationError):
    """Constrained information matrix is singular at the evaluation pose."""


class InsufficientDataError(EstimationError):
    """Not enough usable samples for the requested computation."""


class SchemaError(Exception):
    """Malformed external input: scenario, log, deployment, or model file."""
