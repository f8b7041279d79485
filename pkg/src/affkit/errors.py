"""Domain exceptions shared across the toolkit."""


class AffkitError(Exception):
    """Base class for all domain errors (CLI maps these to exit code 1)."""


# geometry
class DegenerateConfiguration(AffkitError):
    pass


class SingularSystem(AffkitError):
    pass


class NoConsensus(AffkitError):
    pass


class PointAtInfinity(AffkitError):
    pass


class EmptySet(AffkitError):
    pass


class EmptyMask(AffkitError):
    pass


class EmptyIntersection(AffkitError):
    pass


# mining
class NoPrecontactFrame(AffkitError):
    pass


class CorrespondenceFailure(AffkitError):
    pass


class DisjointnessViolation(AffkitError):
    pass


# model / training
class ShapeMismatch(AffkitError):
    pass


class MissingDepth(AffkitError):
    pass


class ManifestError(AffkitError):
    pass


class NonFiniteLoss(AffkitError):
    pass


class VocabularyMismatch(AffkitError):
    pass


class EmptyGroundTruth(AffkitError):
    pass


# grasp orchestration
class NoDetections(AffkitError):
    pass


class NoCapableObject(AffkitError):
    pass


class NoValidGrasp(AffkitError):
    pass


class TaskStageError(AffkitError):
    """Wraps a failure from one stage of the task pipeline with its stage name."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause
