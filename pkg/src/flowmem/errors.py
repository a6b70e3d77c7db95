"""Exception taxonomy shared across the package."""


class FlowmemError(Exception):
    """Base class for all package-specific failures."""


# --- dataset ingestion ---------------------------------------------------


class EmptyFileError(FlowmemError):
    """The CSV input had no header record."""


class MissingColumnError(FlowmemError):
    def __init__(self, column: str):
        super().__init__(f"mapped column {column!r} absent from header")
        self.column = column


class RaggedRowError(FlowmemError):
    def __init__(self, line_number: int, expected: int, got: int):
        super().__init__(
            f"line {line_number}: expected {expected} fields, got {got}"
        )
        self.line_number = line_number
        self.expected = expected
        self.got = got


class UnparseableIPError(FlowmemError):
    def __init__(self, line_number: int, value: str):
        super().__init__(f"line {line_number}: unparseable IPv4 address {value!r}")
        self.line_number = line_number
        self.value = value


class OutOfRangeError(FlowmemError):
    """A numeric argument fell outside its documented domain."""


class EmptyClassError(FlowmemError):
    def __init__(self, class_name: str):
        super().__init__(f"configured class {class_name!r} has no rows in the input")
        self.class_name = class_name


# --- embeddings ----------------------------------------------------------


class DimensionMismatchError(FlowmemError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"expected dimension {expected}, got {got}")
        self.expected = expected
        self.got = got


class EmptyBatchError(FlowmemError):
    """embed_batch was called with an empty input list."""


class RemoteUnavailableError(FlowmemError):
    """The remote embedding service failed after bounded retries."""


# --- experience library --------------------------------------------------


class ReadOnlyLibraryError(FlowmemError):
    """Insert attempted on a library opened read-only."""


class FormatVersionMismatchError(FlowmemError):
    """The file is not a library file, or its format version is unsupported."""


class ChecksumFailureError(FlowmemError):
    """The library file is truncated or corrupted."""


class DimensionHeaderMismatchError(FlowmemError):
    def __init__(self, expected: int, got: int):
        super().__init__(
            f"library file holds {got}-d vectors, expected {expected}-d"
        )
        self.expected = expected
        self.got = got


# --- agents ----------------------------------------------------------------


class AgentUnavailableError(FlowmemError):
    """The chat agent failed after bounded retries."""


class ResponseTimeoutError(FlowmemError):
    """The chat agent did not answer within the configured timeout."""


# --- metrics -----------------------------------------------------------------


class UnknownTrueLabelError(FlowmemError):
    def __init__(self, label: str):
        super().__init__(f"true label {label!r} is not in the configured class set")
        self.label = label


class EmptyMatrixError(FlowmemError):
    """Metrics requested on a confusion matrix with no scored outcomes."""


# --- configuration / CLI -----------------------------------------------------


class ConfigError(FlowmemError):
    """A run configuration is missing, inconsistent, or violates a mode rule."""
