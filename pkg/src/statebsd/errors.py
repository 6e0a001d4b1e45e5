"""Exception hierarchy shared by every statebsd module."""


class StateBsdError(Exception):
    """Base class for all statebsd errors."""


# isa
class IsaError(StateBsdError):
    pass


class InvalidOpcode(IsaError):
    pass


class FieldOutOfRange(IsaError):
    pass


class MemOutOfRange(IsaError):
    pass


class PcOutOfRange(IsaError):
    pass


class ProcessorHalted(IsaError):
    pass


class StepLimitExceeded(IsaError):
    """Raised by ``run_single``; the partial run is attached as ``result``."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class AssemblyError(IsaError):
    pass


class CorruptTrace(StateBsdError):
    pass


# bsd
class BsdError(StateBsdError):
    pass


class EmptyExamples(BsdError):
    pass


class WidthMismatch(BsdError):
    pass


class NotALeaf(BsdError):
    pass


class VarAlreadyUsed(BsdError):
    pass


class MalformedArtifact(BsdError):
    pass


class BudgetExhausted(BsdError):
    """Training ran out of node budget; ``best`` holds the best diagram seen."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


# selector
class NoDependencies(StateBsdError):
    pass


class PoolExhausted(StateBsdError):
    pass


# speculator
class LayoutMismatch(StateBsdError):
    pass


class DomainTooLarge(StateBsdError):
    pass


class MissingOracleEntry(StateBsdError):
    pass


# superscalar
class PredictorUnsound(StateBsdError):
    pass


class CycleLimitExceeded(StateBsdError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


# pipeline
class GenerationFailed(StateBsdError):
    pass
