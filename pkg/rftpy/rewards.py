import json
import re
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

from rftpy.enums import FormatViolation, TaskType
from rftpy.exceptions import DatasetParseError, FormatError
from rftpy.metrics import bleu1, rouge1, semantic_score
from rftpy.models import ParsedResponse, RewardBreakdown, RewardConfig

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"
ANSWER_OPEN = "<answer>"
ANSWER_CLOSE = "</answer>"
TAGS = (THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE)

_OPTION_LETTER_RE = re.compile(r"^\(?([a-z])(?:[.:)]|$)")


def parse_response(raw: str) -> ParsedResponse:
    """Extracts the reasoning and answer segments of `raw`.

    Every tag must occur exactly once, in the order
    `<think>`, `</think>`, `<answer>`, `</answer>`, and only whitespace may
    follow `</answer>`. Segments are returned stripped.

    Args:
        raw (str): model response.

    Returns:
        ParsedResponse

    Raises:
        FormatError: names the first violated rule.
    """

    counts = {tag: raw.count(tag) for tag in TAGS}
    for tag in TAGS:
        if counts[tag] == 0:
            raise FormatError(FormatViolation.MISSING_TAG, tag)
    for tag in TAGS:
        if counts[tag] > 1:
            raise FormatError(FormatViolation.DUPLICATE_TAG, tag)

    positions = [raw.index(tag) for tag in TAGS]
    for tag, prev, cur in zip(TAGS[1:], positions, positions[1:]):
        if cur < prev:
            raise FormatError(FormatViolation.WRONG_ORDER, tag)

    think_open, think_close, answer_open, answer_close = positions
    end = answer_close + len(ANSWER_CLOSE)
    if raw[end:].strip():
        raise FormatError(FormatViolation.TRAILING_CONTENT, raw[end:].strip()[:32])

    return ParsedResponse(
        think=raw[think_open + len(THINK_OPEN) : think_close].strip(),
        answer=raw[answer_open + len(ANSWER_OPEN) : answer_close].strip(),
    )


def format_reward(raw: str) -> float:
    """Returns 1 if `raw` follows the tag format, otherwise 0."""

    try:
        parse_response(raw)
    except FormatError:
        return 0.0
    return 1.0


def _normalize(text: str) -> str:
    return text.strip().casefold()


def close_reward(
    predicted: str, gold: str, options: Sequence[tuple[str, str]] = ()
) -> float:
    """Returns 1 if `predicted` matches `gold` after normalization, otherwise 0.

    Both sides are stripped and case-folded. If `gold` is an option letter,
    a leading letter that stands alone or is followed by ")", "." or ":" is
    compared ("(c)", "C." and "c) seminoma" all read as "c", "a mass" does not
    read as "a"). If `options` are given, a predicted option text is first
    mapped to its letter.

    Args:
        predicted (str): extracted answer.
        gold (str): ground truth.
        options: ordered `(letter, text)` pairs. Defaults to no options.

    Returns:
        float: 1.0 or 0.0.
    """

    pred = _normalize(predicted)
    target = _normalize(gold)
    for letter, text in options:
        if pred == _normalize(text):
            pred = _normalize(letter)
            break

    if len(target) == 1 and target.isalpha():
        match = _OPTION_LETTER_RE.match(pred)
        if match is not None:
            pred = match.group(1)

    return 1.0 if pred == target else 0.0


def _open_components(
    predicted: str, gold: str, cfg: RewardConfig
) -> tuple[float, float, float, float]:
    b = bleu1(predicted, gold)
    r = rouge1(predicted, gold)
    s = semantic_score(predicted, gold, cfg.semantic_backend)
    score = 0.5 * cfg.lam * (b + r) + (1 - cfg.lam) * s
    return min(1.0, max(0.0, score)), b, r, s


def open_reward(predicted: str, gold: str, cfg: RewardConfig) -> float:
    """Returns the hybrid lexical and semantic reward of an open-ended answer.

    `lam / 2 * (bleu1 + rouge1) + (1 - lam) * semantic`.

    Args:
        predicted (str): extracted answer.
        gold (str): ground truth.
        cfg (RewardConfig)

    Returns:
        float: score in [0, 1].
    """

    return _open_components(predicted, gold, cfg)[0]


def total_reward(
    task_type: TaskType,
    raw: str,
    gold: str,
    options: Sequence[tuple[str, str]] | None,
    cfg: RewardConfig,
) -> RewardBreakdown:
    """Scores a full response.

    The task reward is computed on the extracted answer and is 0 when the
    response cannot be parsed. A parsing failure is a zero reward, not an error.

    Args:
        task_type (TaskType): close- or open-ended.
        raw (str): full model response.
        gold (str): ground truth answer.
        options: option list of close-ended questions, or None.
        cfg (RewardConfig)

    Returns:
        RewardBreakdown
    """

    try:
        answer: str | None = parse_response(raw).answer
    except FormatError:
        answer = None

    fmt = 0.0 if answer is None else 1.0
    if task_type is TaskType.CLOSE:
        task = 0.0 if answer is None else close_reward(answer, gold, options or ())
        return RewardBreakdown(
            task_reward=task,
            format_reward=fmt,
            total=cfg.gamma * task + (1 - cfg.gamma) * fmt,
        )

    if answer is None:
        task, b, r, s = 0.0, 0.0, 0.0, 0.0
    else:
        task, b, r, s = _open_components(answer, gold, cfg)
    return RewardBreakdown(
        task_reward=task,
        format_reward=fmt,
        total=cfg.gamma * task + (1 - cfg.gamma) * fmt,
        bleu1=b,
        rouge1=r,
        semantic=s,
    )


@dataclass(frozen=True)
class RewardFixtureRecord:
    """One line of a reward fixture file."""

    raw: str
    gold: str
    task_type: TaskType
    expected_total: float
    options: tuple[tuple[str, str], ...] = ()


def load_reward_fixture(path: Path) -> list[RewardFixtureRecord]:
    """Reads a reward fixture file with one JSON object per line.

    Raises:
        DatasetParseError: if a line is not a valid fixture record.
    """

    records = []
    with open(path, encoding="utf-8") as f:
        for line_number, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                records.append(
                    RewardFixtureRecord(
                        raw=obj["raw"],
                        gold=obj["gold"],
                        task_type=TaskType(obj["task_type"]),
                        expected_total=float(obj["expected_total"]),
                        options=tuple(
                            (str(letter), str(text))
                            for letter, text in obj.get("options") or ()
                        ),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise DatasetParseError(Path(path), line_number, repr(e)) from e
    return records


def dump_reward_fixture_line(record: RewardFixtureRecord) -> str:
    obj: dict[str, object] = {
        "raw": record.raw,
        "gold": record.gold,
        "task_type": record.task_type.value,
        "expected_total": record.expected_total,
    }
    if record.options:
        obj["options"] = [list(o) for o in record.options]
    return json.dumps(obj, ensure_ascii=False)


def check_reward_fixture(
    records: Sequence[RewardFixtureRecord], cfg: RewardConfig, tolerance: float = 1e-9
) -> list[tuple[int, float, float]]:
    """Recomputes every record and returns `(index, expected, actual)` mismatches."""

    mismatches = []
    for index, record in enumerate(records):
        actual = total_reward(
            record.task_type, record.raw, record.gold, record.options, cfg
        ).total
        if abs(actual - record.expected_total) > tolerance:
            mismatches.append((index, record.expected_total, actual))
    return mismatches
