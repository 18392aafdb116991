"""Exception types shared across the toolkit."""


class CrystalError(Exception):
    """Base class for all toolkit errors."""


class MissingField(CrystalError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"required field missing or empty: {name}")


class MalformedRecord(CrystalError):
    def __init__(self, position: int, reason: str = ""):
        self.position = position
        self.reason = reason
        super().__init__(f"malformed record at position {position}" + (f": {reason}" if reason else ""))


class DatasetUnreadable(CrystalError):
    pass


class EmptyInput(CrystalError):
    pass


class LengthMismatch(CrystalError):
    pass


class ZeroVector(CrystalError):
    """A degenerate all-zero embedding; callers map this to similarity 0."""


class DimensionMismatch(CrystalError):
    def __init__(self, expected: int, got: int):
        self.expected = expected
        self.got = got
        super().__init__(f"embedding dimension mismatch: expected {expected}, got {got}")


class ProviderUnavailable(CrystalError):
    def __init__(self, endpoint: str, attempts: int = 0):
        self.endpoint = endpoint
        self.attempts = attempts
        super().__init__(f"embedding provider unavailable after {attempts} attempts: {endpoint}")


class AllGeneratorsFailed(CrystalError):
    def __init__(self, example_id: str, failures: list):
        self.example_id = example_id
        self.failures = failures
        super().__init__(f"all generators failed for example {example_id}: {failures}")


class PromptTemplateMissing(CrystalError):
    def __init__(self, source: str):
        self.source = source
        super().__init__(f"no prompt template for source: {source}")


class ValidatorUnavailable(CrystalError):
    pass


class CyclicDependency(CrystalError):
    def __init__(self, pairs: list):
        self.pairs = pairs
        super().__init__(f"precedence constraints contain a cycle: {pairs}")


class UnsortedBreakpoints(CrystalError):
    pass


class UnparseableNumeric(CrystalError):
    pass


class InsufficientPairs(CrystalError):
    def __init__(self, band: str, available: int, requested: int):
        self.band = band
        self.available = available
        self.requested = requested
        super().__init__(f"band {band} has only {available} pairs, {requested} requested")


class PortInUse(CrystalError):
    pass
