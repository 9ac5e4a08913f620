"""Exception hierarchy shared by all modules."""


class DPKMError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(DPKMError, ValueError):
    """An argument violates a documented precondition."""


class FitError(DPKMError):
    """A Weibull log-log regression could not be carried out."""


class ReleaseError(DPKMError):
    """A node failed to produce its one-shot private release."""

    def __init__(self, node_id, cause):
        self.node_id = node_id
        self.cause = cause
        super().__init__(f"node {node_id}: release failed: {cause}")


class IngestionError(DPKMError):
    """A survival CSV could not be turned into a dataset."""
