"""Exception hierarchy shared across the package."""

from __future__ import annotations


class FeatureGateError(Exception):
    """Base class for all errors raised by this package."""


class TableError(FeatureGateError):
    """Bad tabular data: schema violations, unparseable cells, bad splits."""


class ExpressionError(FeatureGateError):
    """Expression syntax or name-resolution failure."""

    def __init__(self, message: str, position: int | None = None):
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)
        self.position = position


class FeatureError(FeatureGateError):
    """Invalid feature document or unresolvable reference."""


class CatalogError(FeatureGateError):
    """Unknown primitive or parameter contract violation."""


class FitError(FeatureGateError):
    """A transformer step could not be fitted."""


class TransformError(FeatureGateError):
    """A fitted transformer step could not be applied."""


class ShapeError(TransformError):
    """Input had an unusable runtime form; triggers conversion recovery."""


class PipelineError(FeatureGateError):
    """Pipeline assembly or execution failure, attributed to a feature/step."""

    def __init__(self, message: str, feature: str | None = None, step: str | None = None):
        detail = message
        if feature is not None:
            where = feature if step is None else f"{feature} step {step}"
            detail = f"[{where}] {message}"
        super().__init__(detail)
        self.feature = feature
        self.step = step


class EstimatorError(FeatureGateError):
    """Information-theoretic estimator preconditions violated."""


class ProjectError(FeatureGateError):
    """Project directory missing, malformed, or locked."""
