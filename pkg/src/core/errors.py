class BenchError(Exception):
    """Base class for all nfbench failures."""


class IngestError(BenchError, ValueError):
    """Raw dataset cannot be mapped onto the unified schema."""


class ScalerError(BenchError, ValueError):
    pass


class SplitError(BenchError, ValueError):
    pass


class SamplingError(BenchError, ValueError):
    pass


class GraphError(BenchError, ValueError):
    pass


class DetectorError(BenchError, ValueError):
    pass


class AttackError(BenchError, ValueError):
    pass


class PhaseError(BenchError, ValueError):
    """Testbed phases are malformed or overlap in time."""


class AnalystError(BenchError):
    pass


class AnalystTransportError(AnalystError):
    """The analyst endpoint could not be reached after retries."""
