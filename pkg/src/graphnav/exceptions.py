"""Error types shared across the package."""


class GraphNavError(Exception):
    """Base class for all package errors."""


class MalformedObservationError(GraphNavError):
    """A detection or scan violates its required structure (e.g. empty footprint)."""


class UnknownNodeError(GraphNavError, KeyError):
    """A node id does not resolve in the scene graph or covisibility log."""


class EpisodeFaultError(GraphNavError):
    """The episode loop was driven into an invalid state (pose off-grid, action
    after termination, step budget overrun)."""


class ProviderUnavailableError(GraphNavError):
    """A completion provider failed after exhausting its retry budget."""


class ScriptMismatchError(GraphNavError):
    """A scripted provider received a prompt that does not match the next
    scripted pattern. Raised instead of guessing, so tests fail loudly."""


class ResponseParseError(GraphNavError):
    """No structured value of the expected shape could be extracted."""


class SceneGenerationError(GraphNavError):
    """Procedural scene generation could not satisfy the requested parameters."""


class ExplorationExhausted(GraphNavError):
    """No frontiers remain to explore."""
