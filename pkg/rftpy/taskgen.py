"""Synthetic close- and open-ended QA data, prompts and JSONL ingestion.

A symbolic observation `(modality, organ, finding, laterality)` stands in for
the image; every gold answer is a deterministic function of it.
"""

import itertools
import json
import string
from collections.abc import Iterable, Sequence
from pathlib import Path

import numpy as np

from rftpy.enums import PromptMode, Split, TaskType
from rftpy.exceptions import (
    DatasetParseError,
    DatasetValidationError,
    UsageError,
)
from rftpy.metrics import tokenize
from rftpy.models import QAPair, WorldSpec
from rftpy.rewards import ANSWER_CLOSE, ANSWER_OPEN, THINK_CLOSE, THINK_OPEN
from rftpy.runio import atomic_writer
from rftpy.vocab import EOS, PROMPT_END, Vocab, split_symbols

PROMPT_TEMPLATE = (
    "You are a helpful assistant. {Question} Output the thinking process in "
    "<think> </think> and final answer in <answer> </answer> tags. The output "
    "answer format should be as follows: <think> reasoning process here </think>"
    "<answer> answer here (Do not provide any explanation) </answer> Please "
    "strictly follow the format."
)

UNOBSERVED = "unobserved"

ATTRIBUTES = ("modality", "organ", "finding", "laterality")

CLOSE_QUESTIONS = {
    "modality": "Which imaging modality was used?",
    "organ": "Which organ is shown?",
    "finding": "Which finding is present?",
}

# kind -> (question, observation attributes of the answer, separator)
OPEN_KINDS = {
    "organ": ("Identify the organ shown in the image.", ("organ",), ""),
    "laterality_organ": (
        "Identify the laterality and organ shown in the image.",
        ("laterality", "organ"),
        " ",
    ),
    "modality_organ": (
        "Identify the imaging modality and organ shown in the image.",
        ("modality", "organ"),
        ", ",
    ),
    "finding_organ_modality": (
        "Identify the finding, organ and imaging modality shown in the image.",
        ("finding", "organ", "modality"),
        ", ",
    ),
}

NOISY_SINGLE_QUESTION = "Is there an abnormality in the image?"
NOISY_MULTI_QUESTION = "What is shown in the image?"


def _attribute_values(world: WorldSpec, attribute: str) -> tuple[str, ...]:
    return {
        "modality": world.modalities,
        "organ": world.organs,
        "finding": world.findings,
        "laterality": world.lateralities,
    }[attribute]


def close_options(values: Sequence[str], correct: str, n_options: int) -> tuple[str, ...]:
    """Option texts of a close-ended question about `correct`.

    The options are the block of `n_options` consecutive values of `values`
    that holds `correct`, wrapping around at the end, so the correct value
    of a question always sits under the same letter.
    """

    n = min(n_options, len(values))
    start = (values.index(correct) // n) * n
    return tuple(values[(start + j) % len(values)] for j in range(n))


def _close_pair(
    world: WorldSpec,
    pair_id: str,
    observation: tuple[str, ...],
    kind: str,
    split: Split,
) -> QAPair:
    correct = observation[ATTRIBUTES.index(kind)]
    texts = close_options(_attribute_values(world, kind), correct, world.n_options)
    options = tuple(zip(string.ascii_uppercase, texts))
    answer = next(letter for letter, text in options if text == correct)
    return QAPair(
        id=pair_id,
        observation=observation,
        question=CLOSE_QUESTIONS[kind],
        answer=answer,
        task_type=TaskType.CLOSE,
        options=options,
        split=split,
        meta={"kind": kind},
    )


def _open_pair(
    world: WorldSpec,
    rng: np.random.Generator,
    pair_id: str,
    observation: tuple[str, ...],
    kind: str,
    split: Split,
) -> QAPair:
    question, attributes, separator = OPEN_KINDS[kind]
    answer = separator.join(observation[ATTRIBUTES.index(a)] for a in attributes)
    meta = {"kind": kind}
    if rng.random() < world.noise_rate:
        question = NOISY_MULTI_QUESTION if separator == ", " else NOISY_SINGLE_QUESTION
        meta["noisy"] = "true"
    return QAPair(
        id=pair_id,
        observation=observation,
        question=question,
        answer=answer,
        task_type=TaskType.OPEN,
        split=split,
        meta=meta,
    )


def generate_dataset(world: WorldSpec) -> list[QAPair]:
    """Generates `world.n_close` close-ended and `world.n_open` open-ended pairs.

    Distinct observations are split once into train and test pools, so no
    observation appears in both splits. Deterministic for a fixed `world.seed`.

    Args:
        world (WorldSpec)

    Returns:
        list[QAPair]: close-ended pairs first, then open-ended pairs.
    """

    rng = np.random.default_rng(world.seed)
    observations = list(
        itertools.product(world.modalities, world.organs, world.findings, world.lateralities)
    )
    order = rng.permutation(len(observations))
    n_test = min(len(observations) - 1, max(1, round(world.test_fraction * len(observations))))
    pools = {
        Split.TEST: [observations[i] for i in order[:n_test]],
        Split.TRAIN: [observations[i] for i in order[n_test:]],
    }

    def draw() -> tuple[Split, tuple[str, ...]]:
        split = Split.TEST if rng.random() < world.test_fraction else Split.TRAIN
        pool = pools[split]
        return split, tuple(pool[int(rng.integers(len(pool)))])

    close_kinds = sorted(CLOSE_QUESTIONS)
    open_kinds = list(OPEN_KINDS)
    pairs = []
    for i in range(world.n_close):
        split, observation = draw()
        kind = close_kinds[int(rng.integers(len(close_kinds)))]
        pairs.append(_close_pair(world, f"close-{i:05d}", observation, kind, split))
    for i in range(world.n_open):
        split, observation = draw()
        kind = open_kinds[int(rng.integers(len(open_kinds)))]
        pairs.append(_open_pair(world, rng, f"open-{i:05d}", observation, kind, split))
    return pairs


def answer_oracle(qa: QAPair) -> str:
    """Recomputes the gold answer of a generated pair from its observation.

    Raises:
        UsageError: if the pair was not produced by the generator.
    """

    kind = qa.meta.get("kind")
    if qa.task_type is TaskType.CLOSE and kind in CLOSE_QUESTIONS:
        value = qa.observation[ATTRIBUTES.index(kind)]
        return next(letter for letter, text in qa.options if text == value)
    if qa.task_type is TaskType.OPEN and kind in OPEN_KINDS:
        _, attributes, separator = OPEN_KINDS[kind]
        return separator.join(qa.observation[ATTRIBUTES.index(a)] for a in attributes)
    raise UsageError(f"pair {qa.id!r} has no generator kind, its answer is not derivable")


def split_pairs(
    pairs: Iterable[QAPair], split: Split, task_type: TaskType | None = None
) -> list[QAPair]:
    return [
        qa
        for qa in pairs
        if qa.split is split and (task_type is None or qa.task_type is task_type)
    ]


def _question_symbols(qa: QAPair) -> list[str]:
    symbols = list(qa.observation) + tokenize(qa.question)
    for letter, text in qa.options:
        symbols.append(letter)
        symbols.extend(tokenize(text))
    return symbols


def answer_symbols(answer: str) -> list[str]:
    """Symbols a policy emits to reproduce `answer` exactly after detokenization."""

    return split_symbols(answer)


def build_vocab(world: WorldSpec | None, pairs: Iterable[QAPair]) -> Vocab:
    """Collects every symbol needed to prompt with and answer `pairs`."""

    symbols: set[str] = {","}
    if world is not None:
        for attribute in ATTRIBUTES:
            symbols.update(_attribute_values(world, attribute))
    for qa in pairs:
        symbols.update(_question_symbols(qa))
        symbols.update(answer_symbols(qa.answer))
    return Vocab.from_symbols(symbols)


def build_prompt(
    qa: QAPair, mode: PromptMode, vocab: Vocab | None = None
) -> list[int] | str:
    """Builds the prompt of `qa`.

    Text mode substitutes the observation as a bracketed context line, the
    question and the rendered options into the instruction template.
    Symbolic mode emits observation symbols, question tokens, option letters
    and texts, then the prompt end marker.

    Args:
        qa (QAPair)
        mode (PromptMode)
        vocab (Vocab): required in symbolic mode.

    Returns:
        Token ids in symbolic mode, text otherwise.

    Raises:
        VocabularyError: if a symbol is not in `vocab`.
        UsageError: if symbolic mode is requested without a vocabulary.
    """

    if mode is PromptMode.TEXT:
        options = "".join(f" ({letter}) {text}" for letter, text in qa.options)
        question = f"[{' '.join(qa.observation)}]\n{qa.question}{options}"
        return PROMPT_TEMPLATE.replace("{Question}", question)
    if vocab is None:
        raise UsageError("symbolic prompts need a vocabulary")
    return vocab.ids(_question_symbols(qa) + [PROMPT_END])


def canonical_completion(answer: str, vocab: Vocab) -> list[int]:
    """Token ids of `<think> </think> <answer> {answer} </answer>` plus the end token."""

    return vocab.ids(
        [THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, *answer_symbols(answer), ANSWER_CLOSE, EOS]
    )


def pair_problems(qa: QAPair) -> list[str]:
    """Returns every invariant the pair violates."""

    problems = []
    if not qa.observation:
        problems.append("observation is empty")
    if not qa.question.strip():
        problems.append("question is empty")
    if qa.task_type is TaskType.CLOSE and qa.options:
        letters = [letter for letter, _ in qa.options]
        if len(set(letters)) != len(letters):
            problems.append("option letters are not unique")
        if qa.answer.strip() not in letters:
            problems.append(f"answer {qa.answer!r} is not an option letter {letters}")
    if qa.task_type is TaskType.OPEN and qa.options:
        problems.append("open-ended pair has options")
    return problems


def _parse_record(obj: object) -> QAPair:
    if not isinstance(obj, dict):
        raise TypeError("record is not a JSON object")
    options = tuple((str(o[0]), str(o[1])) for o in obj.get("options") or ())
    observation = tuple(str(s) for s in obj.get("observation") or (UNOBSERVED,))
    return QAPair(
        id=str(obj["id"]),
        observation=observation,
        question=str(obj["question"]),
        answer=str(obj["answer"]),
        task_type=TaskType(obj["type"]),
        options=options,
        split=Split(obj.get("split", Split.TRAIN.value)),
        meta={str(k): str(v) for k, v in (obj.get("meta") or {}).items()},
    )


def load_jsonl(path: Path) -> list[QAPair]:
    """Loads QA pairs from a JSONL file.

    Every line holds `id`, `question`, `answer`, `type` and optionally
    `options` (`[[letter, text], ...]`), `observation`, `split` and `meta`.
    A missing observation becomes the single symbol `unobserved`.

    Args:
        path (Path)

    Returns:
        list[QAPair]

    Raises:
        DatasetParseError: if a line is not a valid record, with its line number.
        DatasetValidationError: listing every pair that violates an invariant.
    """

    path = Path(path)
    pairs = []
    with open(path, encoding="utf-8") as f:
        for line_number, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                pairs.append(_parse_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, IndexError) as e:
                raise DatasetParseError(path, line_number, repr(e)) from e

    ids, reasons = [], []
    seen: set[str] = set()
    for qa in pairs:
        problems = pair_problems(qa)
        if qa.id in seen:
            problems.append("duplicate id")
        seen.add(qa.id)
        if problems:
            ids.append(qa.id)
            reasons.append(", ".join(problems))
    if ids:
        raise DatasetValidationError(ids, reasons)
    return pairs


def pair_to_record(qa: QAPair) -> dict[str, object]:
    record: dict[str, object] = {
        "id": qa.id,
        "question": qa.question,
        "answer": qa.answer,
        "type": qa.task_type.value,
        "observation": list(qa.observation),
        "split": qa.split.value,
    }
    if qa.options:
        record["options"] = [list(o) for o in qa.options]
    if qa.meta:
        record["meta"] = dict(qa.meta)
    return record


def dump_jsonl(path: Path, pairs: Sequence[QAPair]) -> None:
    """Writes `pairs` in the ingestion format, one canonical JSON object per line."""

    with atomic_writer(Path(path)) as f:
        for qa in pairs:
            f.write(json.dumps(pair_to_record(qa), sort_keys=True, ensure_ascii=False) + "\n")
