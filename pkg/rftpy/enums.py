import enum


class TaskType(str, enum.Enum):
    """Question answering task type."""

    CLOSE = "close"
    OPEN = "open"


class Split(str, enum.Enum):
    """Dataset split."""

    TRAIN = "train"
    TEST = "test"


class PromptMode(str, enum.Enum):
    """Prompt rendering mode."""

    SYMBOLIC = "symbolic"
    TEXT = "text"


class Strategy(str, enum.Enum):
    """Training strategy over close- and open-ended data."""

    CLOSE_ONLY = "close_only"
    OPEN_ONLY = "open_only"
    JOINT = "joint"
    CURRICULUM = "curriculum"


class Stage(str, enum.Enum):
    """Training stage a step belongs to."""

    CLOSE = "close"
    OPEN = "open"
    JOINT = "joint"


class AuditStatus(str, enum.Enum):
    """Auditor verdict status."""

    CONSISTENT = "consistent"
    NEEDS_FIX = "needs_fix"
    DROP = "drop"


class DropPolicy(str, enum.Enum):
    """What to do with pairs the auditor marks as `drop`."""

    KEEP = "keep"
    REMOVE = "remove"


class FormatViolation(str, enum.Enum):
    """First violated rule of the `<think>`/`<answer>` response format."""

    MISSING_TAG = "MissingTag"
    DUPLICATE_TAG = "DuplicateTag"
    WRONG_ORDER = "WrongOrder"
    TRAILING_CONTENT = "TrailingContent"


class SchemaViolation(str, enum.Enum):
    """Reason an auditor verdict payload was rejected."""

    MISSING_FIELD = "MissingField"
    UNKNOWN_FIELD = "UnknownField"
    BAD_STATUS = "BadStatus"
    NOT_JSON = "NotJson"
    BAD_VALUE = "BadValue"
