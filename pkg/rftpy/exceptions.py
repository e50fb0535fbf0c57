from collections.abc import Sequence
from pathlib import Path

from rftpy.enums import FormatViolation, SchemaViolation


class RftError(Exception):
    """Base class of every error raised by rftpy.

    `category` groups errors for the command line exit status.
    """

    category = "usage"


class ConfigurationError(RftError):
    """Will be raised if a configuration value is missing, unknown or out of range."""

    category = "config"

    def __init__(self, key: str, reason: str) -> None:
        self.key = key
        self.reason = reason

    def __str__(self) -> str:
        return f"invalid configuration for {self.key!r}: {self.reason}"


class InputError(RftError):
    """Will be raised if arguments have inconsistent shapes or out-of-range ids."""

    category = "data"

    def __init__(self, reason: str) -> None:
        self.reason = reason

    def __str__(self) -> str:
        return self.reason


class VocabularyError(RftError):
    """Will be raised if a symbol is not present in the vocabulary."""

    category = "data"

    def __init__(self, symbol: str) -> None:
        self.symbol = symbol

    def __str__(self) -> str:
        return f"symbol {self.symbol!r} is not in the vocabulary"


class FormatError(RftError):
    """Will be raised if a response violates the `<think>`/`<answer>` format."""

    category = "data"

    def __init__(self, kind: FormatViolation, tag: str | None = None) -> None:
        self.kind = kind
        self.tag = tag

    def __str__(self) -> str:
        if self.tag is None:
            return f"{self.kind.value}"
        return f"{self.kind.value}: {self.tag}"


class SchemaError(RftError):
    """Will be raised if an auditor payload does not match the verdict schema."""

    category = "data"

    def __init__(self, kind: SchemaViolation, element: str) -> None:
        self.kind = kind
        self.element = element

    def __str__(self) -> str:
        return f"{self.kind.value}: {self.element}"


class TrainingDivergenceError(RftError):
    """Will be raised if a gradient or parameter becomes non-finite."""

    category = "divergence"

    def __init__(self, name: str) -> None:
        self.name = name

    def __str__(self) -> str:
        return f"non-finite values in {self.name}, update rejected"


class DatasetParseError(RftError):
    """Will be raised if a dataset line is not a valid JSON object."""

    category = "data"

    def __init__(self, path: Path, line_number: int, reason: str) -> None:
        self.path = path
        self.line_number = line_number
        self.reason = reason

    def __str__(self) -> str:
        return f"{self.path}:{self.line_number}: {self.reason}"


class DatasetValidationError(RftError):
    """Will be raised if dataset records violate the QA pair invariants."""

    category = "data"

    def __init__(self, ids: Sequence[str], reasons: Sequence[str]) -> None:
        self.ids = list(ids)
        self.reasons = list(reasons)

    def __str__(self) -> str:
        details = "; ".join(f"{i}: {r}" for i, r in zip(self.ids, self.reasons))
        return f"{len(self.ids)} invalid pairs: {details}"


class UsageError(RftError):
    """Will be raised if an operation is called with an unsupported input kind."""

    category = "usage"

    def __init__(self, reason: str) -> None:
        self.reason = reason

    def __str__(self) -> str:
        return self.reason


class AuditorExhaustedError(RftError):
    """Will be raised if the auditor client gives up on a pair after all retries."""

    category = "io"

    def __init__(
        self, qa_id: str, attempts: int, schema_failures: int, cause: Exception
    ) -> None:
        self.qa_id = qa_id
        self.attempts = attempts
        self.schema_failures = schema_failures
        self.cause = cause

    def __str__(self) -> str:
        return f"auditing {self.qa_id!r} failed after {self.attempts} attempts: {self.cause}"
