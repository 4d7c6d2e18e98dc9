"""Exception types raised across the package."""


class CausalADError(Exception):
    """Base class for all package-specific errors."""


class SchemaError(CausalADError):
    """Input files disagree on shape (e.g. train/test column counts)."""


class CsvParseError(CausalADError):
    """A CSV cell could not be parsed as a number."""


class LabelError(CausalADError):
    """Label file does not line up with the series it annotates."""


class InsufficientDataError(CausalADError):
    """Series too short for the requested window width."""


class StabilityError(CausalADError):
    """Planted autoregressive process is not stable."""


class DegenerateEmbeddingError(CausalADError):
    """A node embedding has zero norm; cosine similarity is undefined."""


class AttentionNormalizationError(CausalADError):
    """An attention tensor is not row-stochastic."""


class DegenerateGraphError(CausalADError):
    """Graph has no usable neighborhoods (e.g. a single node)."""


class DegenerateWindowError(CausalADError):
    """Window too narrow for temporal attention."""


class ConditioningError(CausalADError):
    """Least-squares design matrix is singular beyond repair."""


class InsufficientCalibrationError(CausalADError):
    """Too few calibration scores to fit a threshold."""


class UndefinedMetricError(CausalADError):
    """Metric is undefined for the given inputs (e.g. empty truth set)."""


class ContractError(CausalADError):
    """Shapes or invariants violated at a stage boundary."""


class DivergenceError(CausalADError):
    """Training loss became non-finite. Carries the last good checkpoint."""

    def __init__(self, message: str, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class MeasurementError(CausalADError):
    """A timing measurement was requested on an empty workload."""
