"""Exception types shared across the package.

The CLI maps these onto stable exit codes, so library code should raise
the most specific type that applies instead of bare ValueError.
"""


class ShapeError(ValueError):
    """Tensor/array dimensions are incompatible with an operation."""


class GraphError(RuntimeError):
    """A computation-graph contract was violated (e.g. non-scalar backward)."""


class ConfigError(ValueError):
    """A configuration value or config file is invalid."""


class DataError(ValueError):
    """A dataset, sample, or manifest violates its contract."""


class DistillationError(ValueError):
    """Teacher/student feature lists are mis-wired for distillation."""


class CheckpointError(ValueError):
    """A checkpoint file is malformed, truncated, or incompatible."""


class MetricError(ValueError):
    """Correlation or fit inputs are degenerate (e.g. constant vectors)."""


class DecodeError(ValueError):
    """An image file could not be decoded."""


class UsageError(ValueError):
    """Command-line arguments are inconsistent with the checkpoint/data."""
