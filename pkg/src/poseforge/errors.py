"""Exception hierarchy shared by every poseforge module."""


class PoseForgeError(Exception):
    """Base class for all expected (domain) errors."""


class PointBehindCamera(PoseForgeError):
    def __init__(self, index):
        super().__init__(f"point {index} is at or behind the near plane")
        self.index = index


class MeshBehindCamera(PoseForgeError):
    pass


class EmptyMesh(PoseForgeError):
    pass


class ParseError(PoseForgeError):
    def __init__(self, line, msg="unparsable line"):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class DegenerateFace(PoseForgeError):
    def __init__(self, index):
        super().__init__(f"face {index} has zero area")
        self.index = index


class IndexOutOfRange(PoseForgeError):
    def __init__(self, index, msg=None):
        super().__init__(msg or f"index out of range in face {index}")
        self.index = index


class TooFewPoints(PoseForgeError):
    pass


class EmptyForeground(PoseForgeError):
    pass


class LengthMismatch(PoseForgeError):
    pass


class DimensionMismatch(PoseForgeError):
    pass


class DegenerateConfiguration(PoseForgeError):
    pass


class NoPositiveDepthSolution(PoseForgeError):
    pass


class NotConverged(PoseForgeError):
    pass


class SingularHessian(PoseForgeError):
    pass


class InvalidBBox(PoseForgeError):
    pass


class InvalidThreshold(PoseForgeError):
    pass


class NoCertainPixels(PoseForgeError):
    pass


class NonInvertibleTransform(PoseForgeError):
    pass


class NonFiniteTerm(PoseForgeError):
    pass


class NoOverlap(PoseForgeError):
    pass


class EmptyModel(PoseForgeError):
    pass


class GenerationFailure(PoseForgeError):
    pass


class ScheduleTooShort(PoseForgeError):
    pass


class ConfigError(PoseForgeError):
    pass


class IoError(PoseForgeError):
    pass


class CheckFailed(PoseForgeError):
    """A run finished but some of its checks did not meet tolerance."""
