"""Exception hierarchy shared across the toolkit.

Everything raised on bad input derives from ``TracebindError`` so callers
(the CLI in particular) can separate input problems from genuine bugs.
"""


class TracebindError(Exception):
    """Base class for all toolkit errors."""


class StructuralError(TracebindError, ValueError):
    """A value violates a structural constraint of its type."""


class ParameterError(TracebindError, ValueError):
    """A numeric or configuration parameter is outside its documented range."""


class OutOfRangeError(TracebindError, IndexError):
    """A window or step index does not fit inside the trace."""


class GroundingLookupError(TracebindError, KeyError):
    """An identity statement references an undeclared predicate label."""


class StreamOrderError(TracebindError):
    """Activation sets arrived out of step order."""


class CapacityError(TracebindError):
    """Context cannot hold the requested tokens even after eviction."""


class FeatureError(TracebindError):
    """An action requires a scaffold feature the preset does not provide."""


class ScenarioError(TracebindError):
    """Scenario parameters cannot realize the construction they promise."""


class MetricError(TracebindError):
    """A metric is undefined for the given inputs."""


class FileFormatError(TracebindError, ValueError):
    """A trace or identity-spec file violates its documented format."""
