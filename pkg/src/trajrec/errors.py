"""Exception types shared across the package."""


class TrajrecError(Exception):
    """Base class for all package errors."""


class ParseError(TrajrecError, ValueError):
    """Malformed input: GPX, Overpass payloads, encoded polylines."""


class DegenerateBearing(TrajrecError, ValueError):
    """Bearing requested between coincident points."""


class UnsupportedRegion(TrajrecError, ValueError):
    """Bounding box crosses the antimeridian."""


class EmptyTrace(TrajrecError, ValueError):
    pass


class InfeasibleMask(TrajrecError):
    """No contiguous run satisfies the gap and context constraints."""


class FetchError(TrajrecError):
    pass


class NoRoads(TrajrecError):
    pass


class MatchInfeasible(TrajrecError):
    """Every observation lacked a road candidate."""


class ProviderError(TrajrecError):
    pass


class EmptyResponse(ProviderError):
    pass


class PlanParseError(TrajrecError):
    pass


class CoordParseError(TrajrecError):
    pass


class DegenerateTrajectory(TrajrecError, ValueError):
    """Metric normalizer (path length) is zero."""


class DegenerateGroundTruth(DegenerateTrajectory):
    pass
