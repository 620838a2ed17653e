"""Exception types shared across the toolkit."""


class CurationError(Exception):
    """Base class for all toolkit errors."""


class CatalogError(CurationError):
    """Catalog file cannot be parsed.

    Carries the 1-based line number when the failure is tied to one line.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateIdError(CatalogError):
    """Two catalog records share an id."""

    def __init__(self, image_id: str, line: int | None = None):
        self.image_id = image_id
        super().__init__(f"duplicate image id {image_id!r}", line=line)


class FeatureFileError(CurationError):
    """Feature file is corrupt, truncated, or dimensionally inconsistent."""


class RatingsError(CurationError):
    """Rating events file or rating-stage preconditions are violated."""


class ConstantRaterError(RatingsError):
    """A worker's scores have zero range, so they cannot be rescaled."""

    def __init__(self, worker_id: str):
        self.worker_id = worker_id
        super().__init__(f"worker {worker_id!r} used a single score value; range is zero")


class InfiniteLossError(CurationError):
    """Cross-entropy hit a zero predicted probability on supported mass.

    Raised instead of returning float('inf') so the condition cannot be
    silently averaged into a batch.
    """


class StageError(CurationError):
    """A pipeline stage failed; names the stage."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"stage {stage!r}: {message}")
