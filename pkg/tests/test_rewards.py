import math
from pathlib import Path

import pytest

from rftpy.enums import FormatViolation, TaskType
from rftpy.exceptions import ConfigurationError, DatasetParseError, FormatError
from rftpy.metrics import trigram_cosine
from rftpy.models import ParsedResponse, RewardConfig
from rftpy.rewards import (
    RewardFixtureRecord,
    check_reward_fixture,
    close_reward,
    dump_reward_fixture_line,
    format_reward,
    load_reward_fixture,
    open_reward,
    parse_response,
    total_reward,
)

CFG = RewardConfig()


def test_parse_response() -> None:
    assert parse_response("<think>x</think><answer>y</answer>") == ParsedResponse(
        think="x", answer="y"
    )
    assert parse_response("<think> a b </think> <answer> ct, liver </answer>\n") == (
        ParsedResponse(think="a b", answer="ct, liver")
    )


def test_parse_response_allows_leading_text() -> None:
    parsed = parse_response("Sure. <think>t</think> then <answer>C</answer>")
    assert parsed.answer == "C"


@pytest.mark.parametrize(
    "raw, kind, tag",
    [
        ("<think>t</think>", FormatViolation.MISSING_TAG, "<answer>"),
        ("answer only", FormatViolation.MISSING_TAG, "<think>"),
        (
            "<think>a</think><think>b</think><answer>c</answer>",
            FormatViolation.DUPLICATE_TAG,
            "<think>",
        ),
        ("<answer>y</answer><think>x</think>", FormatViolation.WRONG_ORDER, "<answer>"),
    ],
)
def test_parse_response_violations(raw: str, kind: FormatViolation, tag: str) -> None:
    with pytest.raises(FormatError) as exc_info:
        parse_response(raw)
    assert exc_info.value.kind is kind
    assert exc_info.value.tag == tag


def test_parse_response_trailing_content() -> None:
    with pytest.raises(FormatError) as exc_info:
        parse_response("<think>a</think><answer>b</answer> extra")
    assert exc_info.value.kind is FormatViolation.TRAILING_CONTENT


def test_format_reward() -> None:
    assert format_reward("<think>t</think><answer>a</answer>") == 1.0
    assert format_reward("answer only") == 0.0
    assert format_reward("<think>t</think>") == 0.0
    assert format_reward("<think>t</think><answer>a</answer> more") == 0.0


def test_close_reward() -> None:
    assert close_reward("C", "C") == 1.0
    assert close_reward("B", "C") == 0.0
    assert close_reward(" c ", "C") == 1.0
    assert close_reward("(c)", "C") == 1.0
    assert close_reward("C. seminoma", "C") == 1.0
    assert close_reward("yes", "Yes") == 1.0
    assert close_reward("cyst", "C") == 0.0


@pytest.mark.parametrize("predicted", ["a mass", "A liver", "b-mode", "c seminoma"])
def test_close_reward_ignores_words_starting_with_a_letter(predicted: str) -> None:
    """Free text that merely starts with an option letter is not read as that option."""

    assert close_reward(predicted, predicted[0].upper()) == 0.0


@pytest.mark.parametrize("predicted", ["a", "(A)", "a.", "A:", "a) mass", "(a) mass"])
def test_close_reward_reads_marked_letters(predicted: str) -> None:
    assert close_reward(predicted, "A") == 1.0


def test_close_reward_maps_option_text_to_letter() -> None:
    options = (("A", "kidney"), ("B", "liver"))

    assert close_reward("Liver", "B", options) == 1.0
    assert close_reward("kidney", "B", options) == 0.0
    assert close_reward("Liver", "B") == 0.0


def test_open_reward() -> None:
    assert open_reward("right kidney", "right kidney", CFG) == pytest.approx(1.0)
    assert open_reward("abc", "xyz", CFG) == 0.0

    expected = 0.35 * (math.exp(-1) + 2 / 3) + 0.3 * trigram_cosine("lung", "right lung")
    assert open_reward("lung", "right lung", CFG) == pytest.approx(expected, abs=1e-12)


def test_open_reward_with_other_backend() -> None:
    cfg = RewardConfig(lam=0.0, semantic_backend="token-jaccard")
    assert open_reward("right lung", "left lung", cfg) == pytest.approx(1 / 3)


def test_total_reward_close() -> None:
    result = total_reward(
        TaskType.CLOSE, "<think>looks like C</think><answer>C</answer>", "C", None, CFG
    )
    assert result.total == pytest.approx(1.0)
    assert result.task_reward == 1.0
    assert result.format_reward == 1.0
    assert result.bleu1 is None

    assert total_reward(TaskType.CLOSE, "C", "C", None, CFG).total == 0.0


def test_total_reward_close_wrong_answer_keeps_format_credit() -> None:
    result = total_reward(TaskType.CLOSE, "<think></think><answer>B</answer>", "C", None, CFG)
    assert result.total == pytest.approx(0.2)


def test_total_reward_open() -> None:
    result = total_reward(
        TaskType.OPEN, "<think>t</think><answer>ct, liver</answer>", "ct, liver", None, CFG
    )
    assert result.total == pytest.approx(1.0)
    assert result.bleu1 == 1.0
    assert result.rouge1 == 1.0
    assert result.semantic == 1.0

    failed = total_reward(TaskType.OPEN, "ct, liver", "ct, liver", None, CFG)
    assert failed.total == 0.0
    assert failed.bleu1 == 0.0


def test_total_reward_is_bounded() -> None:
    for raw in ("", "<think></think><answer></answer>", "<think>x</think><answer>lung</answer>"):
        for task_type in TaskType:
            assert 0.0 <= total_reward(task_type, raw, "right lung", None, CFG).total <= 1.0


def test_reward_config_validation() -> None:
    with pytest.raises(ConfigurationError) as exc_info:
        RewardConfig(lam=1.5)
    assert exc_info.value.key == "lambda"

    with pytest.raises(ConfigurationError) as exc_info:
        RewardConfig(gamma=-0.1)
    assert exc_info.value.key == "gamma"


def test_reward_fixture(tmp_path: Path) -> None:
    records = [
        RewardFixtureRecord(
            raw="<think>t</think><answer>C</answer>",
            gold="C",
            task_type=TaskType.CLOSE,
            expected_total=1.0,
        ),
        RewardFixtureRecord(
            raw="<think>t</think><answer>liver</answer>",
            gold="B",
            task_type=TaskType.CLOSE,
            expected_total=1.0,
            options=(("A", "kidney"), ("B", "liver")),
        ),
        RewardFixtureRecord(
            raw="no tags", gold="lung", task_type=TaskType.OPEN, expected_total=0.0
        ),
    ]
    path = tmp_path / "fixture.jsonl"
    path.write_text("".join(dump_reward_fixture_line(r) + "\n" for r in records))

    loaded = load_reward_fixture(path)
    assert loaded == records
    assert check_reward_fixture(loaded, CFG) == []


def test_reward_fixture_reports_mismatch() -> None:
    records = [
        RewardFixtureRecord(
            raw="no tags", gold="lung", task_type=TaskType.OPEN, expected_total=0.0
        ),
        RewardFixtureRecord(
            raw="no tags", gold="lung", task_type=TaskType.OPEN, expected_total=0.5
        ),
    ]
    assert check_reward_fixture(records, CFG) == [(1, 0.5, 0.0)]


def test_reward_fixture_bad_line(tmp_path: Path) -> None:
    path = tmp_path / "fixture.jsonl"
    path.write_text('{"raw": "x", "gold": "y", "task_type": "close", "expected_total": 0}\n{oops\n')

    with pytest.raises(DatasetParseError) as exc_info:
        load_reward_fixture(path)
    assert exc_info.value.line_number == 2
