"""Exception taxonomy shared across the package."""


class MarketLabError(Exception):
    """Base class for package errors."""


class SizeLimitError(MarketLabError):
    """Instance exceeds the exact computation path's size budget."""


class SolverError(MarketLabError):
    """Iterative solver failed to reach its tolerance."""


class InternalCheckError(MarketLabError):
    """A quantity the implementation guarantees came out wrong (a bug)."""


class ScenarioError(MarketLabError):
    """Scenario config violates the schema (CLI exit code 2)."""


class CheckFailure(MarketLabError):
    """A scenario assertion failed (CLI exit code 1)."""
