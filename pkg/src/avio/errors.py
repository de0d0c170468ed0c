"""Exception types raised across the toolkit."""


class AvioError(Exception):
    """Base class for all toolkit errors."""


# geometry
class AngleNearPi(AvioError):
    pass


# state
class WindowFull(AvioError):
    pass


class UnknownFrame(AvioError):
    pass


class SingularInnovation(AvioError):
    pass


class DimensionMismatch(AvioError):
    pass


# propagation
class NonMonotonicTime(AvioError):
    pass


class ExcessiveDt(AvioError):
    pass


# vision
class BehindCamera(AvioError):
    pass


class InsufficientParallax(AvioError):
    pass


class DivergedRefinement(AvioError):
    pass


class DegenerateLandmark(AvioError):
    pass


class NoValidTracks(AvioError):
    pass


# dvl
class ImplausibleVelocity(AvioError):
    pass


class CoplanarBeams(AvioError):
    pass


class InsufficientBeams(AvioError):
    pass


class RankDeficient(AvioError):
    pass


# fusion
class DynamicStart(AvioError):
    pass


class NonMonotonicEvent(AvioError):
    pass


class FilterDiverged(AvioError):
    pass


# evaluation
class NoOverlap(AvioError):
    pass


class DegenerateGeometry(AvioError):
    pass


# io / cli
class ConfigError(AvioError):
    """Invalid configuration; ``key_path`` names the offending entry."""

    def __init__(self, message: str, key_path: str = ""):
        self.key_path = key_path
        super().__init__(f"{key_path}: {message}" if key_path else message)


class SchemaError(AvioError):
    """Malformed dataset file."""

    def __init__(self, message: str, path: str = "", column: str | None = None):
        self.path = path
        self.column = column
        where = path if column is None else f"{path} [{column}]"
        super().__init__(f"{where}: {message}" if where else message)
