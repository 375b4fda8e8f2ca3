"""Exception hierarchy shared across the package."""


class CausaltextError(Exception):
    """Base class for all package-specific errors."""


class InvalidSpec(CausaltextError):
    """A graph-generation control parameter lies outside its admissible domain."""


class ShapeMismatch(CausaltextError):
    """Two adjacency matrices (or a matrix and a node set) disagree in shape."""


class CyclicInput(CausaltextError):
    """An operation defined only for DAGs received a cyclic graph."""


class UnboundPlaceholder(CausaltextError):
    """A prompt template was rendered with a placeholder left unbound."""

    def __init__(self, name: str):
        super().__init__(f"unbound placeholder: [{name}]")
        self.name = name


class TransportError(CausaltextError):
    """A backend request failed after exhausting transport retries."""


class AuthError(CausaltextError):
    """No credential found for a real backend."""


class BudgetExceeded(CausaltextError):
    """A configured token or call budget was exceeded."""


class MalformedOutput(CausaltextError):
    """A model reply could not be parsed as the expected JSON, even after re-asks."""

    def __init__(self, message: str, raw_text: str = ""):
        super().__init__(message)
        self.raw_text = raw_text


class SchemaViolation(CausaltextError):
    """A concept assignment violates the schema (overlap) even after revision."""


class CoverageViolation(CausaltextError):
    """A generated paragraph omits one or more required concepts after a re-ask."""


class ExtractionFailed(CausaltextError):
    """Concept extraction could not produce a valid 3..10 concept list."""


class VerificationError(CausaltextError):
    """Too few verifier completions parsed successfully to form a vote."""


class CacheIoError(CausaltextError):
    """The on-disk response cache could not be read or written."""


class EmptyRatings(CausaltextError):
    """A rating matrix contains no usable items."""


class InsufficientData(CausaltextError):
    """Not enough pairable ratings to compute agreement."""


class IncompleteGrid(CausaltextError):
    """A score table is missing (algorithm, n, corpus) cells required for agreement."""


class TooFewAlgorithms(CausaltextError):
    """Leave-one-out would drop below two algorithms."""


class DegenerateGroups(CausaltextError):
    """A permutation ANOVA factor has fewer than two usable levels."""


class PoolTooSmall(CausaltextError):
    """A stability analysis was asked for more samples than the pool contains."""


class MissingReference(CausaltextError):
    """Evaluation could not find a reference graph for a sample id."""


class InvalidConfig(CausaltextError):
    """A configuration file value is out of range or malformed."""
