"""Exception types shared across the package."""


class DemoskillError(Exception):
    """Base class for all package errors."""


class InvalidPoseError(DemoskillError):
    """Pose constructed from non-finite or otherwise unusable values."""


class EmptyCloudError(DemoskillError):
    """Operation requires a non-empty point cloud."""


class FrameMismatchError(DemoskillError):
    """Two clouds expressed in different frames were combined."""


class GapError(DemoskillError):
    """A trace is missing required data at some frame."""

    def __init__(self, message, frame_index=None):
        super().__init__(message)
        self.frame_index = frame_index


class ValidationError(DemoskillError):
    """Input or reasoner output failed a contract check."""


class AmbiguityError(DemoskillError):
    """Kinematic evidence and reasoner label disagree, or no candidate exists."""

    def __init__(self, message, kinematic_label=None, reasoner_label=None):
        super().__init__(message)
        self.kinematic_label = kinematic_label
        self.reasoner_label = reasoner_label


class ReasonerError(DemoskillError):
    """Reasoner backend failed; carries the raw payload when available."""

    def __init__(self, message, raw=None):
        super().__init__(message)
        self.raw = raw


class SchemaError(ReasonerError):
    """Reasoner response did not parse against the query kind's schema."""


class UnsupportedClassError(DemoskillError):
    """Trajectory class has no matching primitive family."""


class DegenerateFitError(DemoskillError):
    """Fit produced a singular primitive (zero-radius arc, coincident points)."""


class AdaptationError(DemoskillError):
    """Adaptation loop exhausted re-queries without a consistent region."""

    def __init__(self, message, transcripts=None):
        super().__init__(message)
        self.transcripts = transcripts or []


class PlanningError(DemoskillError):
    """No plan retrievable and the reasoner failed."""


class ExecutionError(DemoskillError):
    """No feasible execution plan, or execution failed terminally."""


class StorageError(DemoskillError):
    """Knowledge bank storage is unwritable or corrupt."""


class TraceParseError(DemoskillError):
    """A trace or segments file failed to parse."""

    def __init__(self, message, path=None, record=None):
        super().__init__(message)
        self.path = path
        self.record = record
