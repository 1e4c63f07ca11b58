"""Custom exception definitions."""

from typing import Any, Dict, Optional


class ShapeMismatchError(ValueError):
    """Error when a tensor does not have the shape an operation requires."""

    def __init__(self, title: str, detail: str) -> None:
        """Initialize ShapeMismatchError.

        Args:
            title: title of the error.
            detail: description of the error, naming expected and actual shapes.
        """
        self.type = "ShapeMismatchError"
        self.title = title
        self.detail = detail
        super().__init__(detail)


class InvalidArgumentError(ValueError):
    """Error in validating an argument of a public operation."""

    def __init__(self, title: str, detail: str) -> None:
        """Initialize InvalidArgumentError.

        Args:
            title: title of the error.
            detail: description of the error.
        """
        self.type = "InvalidArgumentError"
        self.title = title
        self.detail = detail
        super().__init__(detail)


class AnatomyGenerationError(RuntimeError):
    """Error when a synthetic anatomy could not be generated within the allowed attempts."""

    def __init__(self, title: str, detail: str) -> None:
        """Initialize AnatomyGenerationError.

        Args:
            title: title of the error.
            detail: description of the error.
        """
        self.type = "AnatomyGenerationError"
        self.title = title
        self.detail = detail
        super().__init__(detail)


class InvalidBenchmarkConfiguration(ValueError):
    """Error in validating a benchmark configuration."""

    def __init__(self, title: str, detail: str) -> None:
        """Initialize InvalidBenchmarkConfiguration.

        Args:
            title: title of the error.
            detail: description of the error.
        """
        self.type = "InvalidBenchmarkConfiguration"
        self.title = title
        self.detail = detail
        super().__init__(detail)


class MissingSampleError(FileNotFoundError):
    """Error when samples listed in a manifest are not on disk."""

    def __init__(self, title: str, detail: str, sample_ids=()) -> None:
        """Initialize MissingSampleError.

        Args:
            title: title of the error.
            detail: description of the error.
            sample_ids: identifiers of every missing sample.
        """
        self.type = "MissingSampleError"
        self.title = title
        self.detail = detail
        self.sample_ids = list(sample_ids)
        super().__init__(detail)


class NonFiniteLossError(ArithmeticError):
    """Error when a loss or utility term is NaN or infinite."""

    def __init__(
        self,
        title: str,
        detail: str,
        term: Optional[str] = None,
        metrics: Optional[Dict[str, Any]] = None,
    ) -> None:
        """Initialize NonFiniteLossError.

        Args:
            title: title of the error.
            detail: description of the error.
            term: name of the offending term.
            metrics: step metrics recorded when the error occurred.
        """
        self.type = "NonFiniteLossError"
        self.title = title
        self.detail = detail
        self.term = term
        self.metrics = metrics
        super().__init__(detail)


class CheckpointError(OSError):
    """Error in reading or writing checkpoints and run-directory files."""

    def __init__(self, title: str, detail: str) -> None:
        """Initialize CheckpointError.

        Args:
            title: title of the error.
            detail: description of the error.
        """
        self.type = "CheckpointError"
        self.title = title
        self.detail = detail
        super().__init__(detail)


class EmptyHistoryError(ValueError):
    """Error when a training history holds no epoch records."""

    def __init__(self, title: str, detail: str) -> None:
        """Initialize EmptyHistoryError.

        Args:
            title: title of the error.
            detail: description of the error.
        """
        self.type = "EmptyHistoryError"
        self.title = title
        self.detail = detail
        super().__init__(detail)


class DuplicateRegistration(ValueError):
    """Error when identifier for a registration is not unique."""

    def __init__(self, title: str, detail: str) -> None:
        """Initialize DuplicateRegistration.

        Args:
            title: title of the error.
            detail: description of the error.
        """
        self.type = "DuplicateRegistration"
        self.title = title
        self.detail = detail
        super().__init__(detail)


class RunDirectoryLockedError(RuntimeError):
    """Error when another process already writes to a run directory."""

    def __init__(self, title: str, detail: str) -> None:
        """Initialize RunDirectoryLockedError.

        Args:
            title: title of the error.
            detail: description of the error.
        """
        self.type = "RunDirectoryLockedError"
        self.title = title
        self.detail = detail
        super().__init__(detail)
