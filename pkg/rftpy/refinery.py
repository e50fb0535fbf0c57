"""Consistency auditing and refinement of open-ended QA pairs.

An auditor decides whether a question requests exactly what its answer
contains and proposes a rewrite when it does not. Auditors are either the
deterministic :class:`RuleMockAuditor` or the HTTP client in
:mod:`rftpy.auditor`; both return an :class:`AuditResult`.
"""

import json
import logging
import re
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import Literal, Protocol

from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator
from pydantic_core import PydanticCustomError

from rftpy.enums import AuditStatus, DropPolicy, SchemaViolation, TaskType
from rftpy.exceptions import AuditorExhaustedError, SchemaError, UsageError
from rftpy.metrics import tokenize
from rftpy.models import AuditResult, AuditVerdict, QAPair, RefineReport

logger = logging.getLogger(__name__)

AUDIT_PROMPT_TEMPLATE = """\
ori_q: {Original Question}
ori_a: {Answer}

Role: QA-Consistency Auditor – an expert data-curator.
Your task is to refine open-ended visual-question-answering (VQA) pairs so that \
the revised question and answer remain logically and granularly consistent. \
These are open-end VQA pairs, not closed-end: do not embed answer choices in the question.

Process:
1. Read the original question (ori_q).
2. Ignore the visual content; focus only on the wording of the question and the \
expected form of the answer.
3. Internally simulate an expert’s likely free-form answer (Expert_Guess).
4. Compare Expert_Guess to the original answer (ori_a) to spot missing components \
or granularity gaps.
5. Decide on a status:
   - consistent – ori_q already elicits exactly the information found in ori_a.
   - needs_fix – ori_q is too broad, ambiguous, or does not explicitly request \
every element found in ori_a.
   - drop – The pair is unusable (contradictory, nonsensical, etc.).
6. If the status is needs_fix, craft new_q that:
   - Starts with a precise action verb ("Identify", "Describe", "Explain", …).
   - Explicitly requests every component required by ori_a.
   - Maintains an open-end format (no yes/no phrasing, no embedded choices).
   - Provides a 1-to-1 mapping: each phrase in ori_a must correspond to a clearly \
stated element in new_q.
   - Matches the granularity of ori_a exactly—no more, no less.
   - Ensures new_a presents components in the same order that new_q requests them.
7. Adjust new_a only if wording changes are necessary for brevity or clarity; \
never change the meaning.

Key Requirements:
- Open-ended: Questions must allow free-form expert responses; never embed answer choices.
- Multi-component precision: If the answer contains multiple elements, the \
question must explicitly ask for each.
- Action-verb prompts: Begin revised questions with verbs like “Identify”, \
“Describe”, “Explain”.
- Granularity match: Question scope must match answer specificity exactly.
- Order consistency: Arrange components in new_a in the same sequence as requested in new_q.
- Answer conciseness: Keep new_a as short as possible while fully capturing the meaning.

Output format:
Return one JSON object—nothing else—using this template:
{
  "status": "consistent | needs_fix | drop",
  "ori_q": "<string>",
  "ori_a": "<string>",
  "new_q": "<string>",
  "new_a": "<string>",
  "notes": "<less than 15 words rationale>"
}
"""

VERDICT_FIELDS = ("status", "ori_q", "ori_a", "new_q", "new_a", "notes")
ACTION_VERBS = ("Identify", "Describe", "Explain")
MAX_NOTE_WORDS = 15


class Auditor(Protocol):
    """Anything that audits one open-ended pair at a time."""

    max_concurrency: int

    def audit(self, qa: QAPair) -> AuditResult:
        ...


def render_audit_prompt(qa: QAPair) -> str:
    """Fills the auditor prompt with the pair's question and answer.

    Raises:
        UsageError: if `qa` is close-ended.
    """

    if qa.task_type is not TaskType.OPEN:
        raise UsageError(f"pair {qa.id!r} is close-ended, only open-ended pairs are audited")
    return AUDIT_PROMPT_TEMPLATE.replace("{Original Question}", qa.question).replace(
        "{Answer}", qa.answer
    )


_FENCE_RE = re.compile(r"^\s*```[a-zA-Z0-9_-]*\s*\n?(.*?)\n?\s*```\s*$", re.DOTALL)


def _first_object(text: str) -> str | None:
    start = text.find("{")
    if start < 0:
        return None
    depth = 0
    in_string = escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
        elif ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[start : i + 1]
    return None


def _extract_payload(raw: str) -> object:
    text = raw.strip()
    fenced = _FENCE_RE.match(text)
    if fenced:
        text = fenced.group(1).strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    candidate = _first_object(text)
    if candidate is None:
        raise SchemaError(SchemaViolation.NOT_JSON, "no JSON object found")
    try:
        return json.loads(candidate)
    except json.JSONDecodeError as e:
        raise SchemaError(SchemaViolation.NOT_JSON, str(e)) from e


class VerdictPayload(BaseModel):
    """JSON schema of an auditor verdict; every field is a string, nothing else is allowed."""

    model_config = ConfigDict(extra="forbid", strict=True, frozen=True)

    status: Literal["consistent", "needs_fix", "drop"]
    ori_q: str
    ori_a: str
    new_q: str
    new_a: str
    notes: str

    @field_validator("status", mode="before")
    @classmethod
    def _strip_status(cls, value: object) -> str:
        if not isinstance(value, str):
            raise PydanticCustomError("string_type", "Input should be a valid string")
        return value.strip()

    @field_validator("notes")
    @classmethod
    def _short_notes(cls, value: str) -> str:
        if len(value.split()) > MAX_NOTE_WORDS:
            raise ValueError(f"notes exceed {MAX_NOTE_WORDS} words")
        return value

    @model_validator(mode="after")
    def _rewrite_present(self) -> "VerdictPayload":
        if self.status == AuditStatus.NEEDS_FIX.value:
            for name in ("new_q", "new_a"):
                if not getattr(self, name).strip():
                    raise ValueError(f"{name} is empty for needs_fix")
        return self


# pydantic error type -> (rank, violation); the lowest rank is reported
_ERROR_VIOLATIONS = {
    "missing": (0, SchemaViolation.MISSING_FIELD),
    "extra_forbidden": (1, SchemaViolation.UNKNOWN_FIELD),
    "literal_error": (3, SchemaViolation.BAD_STATUS),
    "value_error": (4, SchemaViolation.BAD_VALUE),
}


def _schema_error(error: ValidationError) -> SchemaError:
    details = error.errors(include_url=False)
    ranked = [
        (_ERROR_VIOLATIONS.get(d["type"], (2, SchemaViolation.BAD_VALUE)), d) for d in details
    ]
    (_, violation), detail = min(ranked, key=lambda item: item[0][0])
    field = ".".join(str(part) for part in detail["loc"])
    return SchemaError(violation, f"{field}: {detail['msg']}" if field else detail["msg"])


def validate_verdict(raw_json: str) -> AuditVerdict:
    """Parses an auditor response into a verdict.

    Code fences and prose around a single JSON object are tolerated; the
    object itself is validated against :class:`VerdictPayload`.

    Args:
        raw_json (str): auditor response text.

    Returns:
        AuditVerdict

    Raises:
        SchemaError: naming the offending field or value.
    """

    payload = _extract_payload(raw_json)
    if not isinstance(payload, dict):
        kind = type(payload).__name__
        raise SchemaError(SchemaViolation.NOT_JSON, f"expected an object, got {kind}")
    try:
        verdict = VerdictPayload.model_validate(payload)
    except ValidationError as e:
        raise _schema_error(e) from e

    return AuditVerdict(
        status=AuditStatus(verdict.status),
        ori_q=verdict.ori_q,
        ori_a=verdict.ori_a,
        new_q=verdict.new_q,
        new_a=verdict.new_a,
        notes=verdict.notes,
    )


# normalized term -> category of the component it names
COMPONENT_LEXICON: dict[str, str] = {
    **dict.fromkeys(
        ("ct", "ct scan", "mri", "xray", "x ray", "ultrasound", "pet"), "imaging modality"
    ),
    **dict.fromkeys(
        ("diffusion weighted", "dwi", "t1", "t2", "flair"), "sequence type"
    ),
    **{
        term: "organ"
        for organ in (
            "liver", "kidney", "lung", "heart", "spleen",
            "brain", "pancreas", "bladder", "stomach", "colon",
        )
        for term in (organ, organ + "s")
    },
    **dict.fromkeys(
        (
            "mass", "cyst", "fracture", "effusion", "normal",
            "nodule", "tumor", "edema", "hemorrhage", "pneumonia",
        ),
        "finding",
    ),
    **dict.fromkeys(("left", "right", "bilateral"), "laterality"),
}
UNKNOWN_CATEGORY = "element"

_YES_NO_OPENERS = frozenset(
    "is are does do did was were can could has have had will would should shall may might".split()
)
_QUALIFIERS = ("main", "primary")


def _pluralize(phrase: str) -> str:
    head, _, last = phrase.rpartition(" ")
    if last.endswith("y") and last[-2:-1] not in "aeiou":
        last = last[:-1] + "ies"
    else:
        last += "s"
    return f"{head} {last}" if head else last


def _component_categories(component: str) -> list[str]:
    words = tokenize(component)
    phrase = " ".join(words)
    if phrase in COMPONENT_LEXICON:
        return [COMPONENT_LEXICON[phrase]]
    found = [COMPONENT_LEXICON[w] for w in words if w in COMPONENT_LEXICON]
    return found or [UNKNOWN_CATEGORY]


def _requested_categories(answer: str) -> list[str]:
    """Category phrases of the answer components in order, repeats pluralized."""

    flat = [c for part in answer.split(",") if part.strip() for c in _component_categories(part)]
    counts = {c: flat.count(c) for c in flat}
    return [_pluralize(c) if counts[c] > 1 else c for c in dict.fromkeys(flat)]


def _contains_phrase(tokens: Sequence[str], phrase: str) -> bool:
    target = phrase.split()
    return any(
        list(tokens[i : i + len(target)]) == target for i in range(len(tokens) - len(target) + 1)
    )


def _is_closed_phrasing(question: str) -> bool:
    tokens = tokenize(question)
    return bool(tokens) and (tokens[0] in _YES_NO_OPENERS or " or " in f" {question.lower()} ")


def _join_phrases(phrases: Sequence[str]) -> str:
    if len(phrases) == 1:
        return phrases[0]
    return f"{', '.join(phrases[:-1])} and {phrases[-1]}"


def _rewrite_question(question: str, categories: Sequence[str]) -> str:
    tokens = tokenize(question)
    qualifier = next((q for q in _QUALIFIERS if q in tokens), None)
    requested = _join_phrases(categories)
    if qualifier is not None and len(categories) == 1:
        requested = f"{qualifier} {requested}"
    return f"{ACTION_VERBS[0]} the {requested} shown in the image."


def rule_mock_audit(qa: QAPair) -> AuditVerdict:
    """Deterministic stand-in for a model auditor.

    * an empty answer is dropped;
    * a yes/no phrased question, or one with an embedded choice, is rewritten
      into an open request;
    * an answer with several comma-separated components whose categories are
      not all named by the question is rewritten to request each of them;
    * anything else is consistent.

    Rewrites have the form `Identify the <categories> shown in the image.`
    and keep the answer. Applying the audit to its own rewrite yields
    `consistent`.

    Raises:
        UsageError: if `qa` is close-ended.
    """

    if qa.task_type is not TaskType.OPEN:
        raise UsageError(f"pair {qa.id!r} is close-ended, only open-ended pairs are audited")

    answer = qa.answer.strip()
    if not answer:
        return AuditVerdict(
            status=AuditStatus.DROP,
            ori_q=qa.question,
            ori_a=qa.answer,
            new_q="",
            new_a="",
            notes="Answer is empty.",
        )

    categories = _requested_categories(answer)
    components = [c for c in answer.split(",") if c.strip()]
    if _is_closed_phrasing(qa.question):
        notes = "Rephrases a closed question as an open request."
    elif len(components) > 1 and not all(
        _contains_phrase(tokenize(qa.question), c) for c in categories
    ):
        notes = "Requests every answer component explicitly."
    else:
        return AuditVerdict(
            status=AuditStatus.CONSISTENT,
            ori_q=qa.question,
            ori_a=qa.answer,
            new_q=qa.question,
            new_a=qa.answer,
            notes="Question already requests every answer component.",
        )

    return AuditVerdict(
        status=AuditStatus.NEEDS_FIX,
        ori_q=qa.question,
        ori_a=qa.answer,
        new_q=_rewrite_question(qa.question, categories),
        new_a=answer,
        notes=notes,
    )


class RuleMockAuditor:
    """Auditor backed by :func:`rule_mock_audit`."""

    max_concurrency = 1

    def audit(self, qa: QAPair) -> AuditResult:
        return AuditResult(verdict=rule_mock_audit(qa))


def _apply_verdict(qa: QAPair, verdict: AuditVerdict) -> QAPair:
    meta = {**qa.meta, "refine_status": verdict.status.value, "refine_notes": verdict.notes}
    if verdict.status is AuditStatus.NEEDS_FIX:
        return replace(
            qa,
            question=verdict.new_q,
            answer=verdict.new_a,
            meta={**meta, "original_question": qa.question, "original_answer": qa.answer},
        )
    return replace(qa, meta=meta)


def _audit_one(auditor: Auditor, qa: QAPair) -> AuditResult | AuditorExhaustedError:
    try:
        return auditor.audit(qa)
    except AuditorExhaustedError as e:
        return e


def refine_dataset(
    pairs: Sequence[QAPair],
    auditor: Auditor,
    drop_policy: DropPolicy = DropPolicy.REMOVE,
) -> tuple[list[QAPair], RefineReport]:
    """Audits every open-ended pair and applies the verdicts.

    Close-ended pairs pass through untouched. `consistent` keeps a pair,
    `needs_fix` substitutes the rewritten question and answer and `drop`
    removes the pair or, with :attr:`DropPolicy.KEEP`, keeps it marked.
    A pair whose audit fails after every retry is kept and reported.
    Output order follows input order regardless of completion order.

    Args:
        pairs: pairs to refine.
        auditor (Auditor): runs up to `auditor.max_concurrency` audits at a time.
        drop_policy (DropPolicy): Defaults to REMOVE.

    Returns:
        Refined pairs and the tallies of the run.
    """

    open_idx = [i for i, qa in enumerate(pairs) if qa.task_type is TaskType.OPEN]
    with ThreadPoolExecutor(max_workers=max(1, auditor.max_concurrency)) as pool:
        outcomes = dict(
            zip(open_idx, pool.map(lambda i: _audit_one(auditor, pairs[i]), open_idx))
        )

    report = RefineReport(passthrough=len(pairs) - len(open_idx))
    refined = []
    for i, qa in enumerate(pairs):
        outcome = outcomes.get(i)
        if outcome is None:
            refined.append(qa)
            continue
        if isinstance(outcome, AuditorExhaustedError):
            logger.warning("keeping %s unrefined: %s", qa.id, outcome)
            report = report.merge(
                RefineReport(
                    failed=1,
                    schema_failures=outcome.schema_failures,
                    retries=max(0, outcome.attempts - 1),
                    failed_ids=(qa.id,),
                )
            )
            refined.append(qa)
            continue

        status = outcome.verdict.status
        report = report.merge(
            RefineReport(
                consistent=int(status is AuditStatus.CONSISTENT),
                needs_fix=int(status is AuditStatus.NEEDS_FIX),
                drop=int(status is AuditStatus.DROP),
                schema_failures=outcome.schema_failures,
                retries=outcome.retries,
            )
        )
        if status is AuditStatus.CONSISTENT:
            refined.append(qa)
        elif status is AuditStatus.NEEDS_FIX or drop_policy is DropPolicy.KEEP:
            refined.append(_apply_verdict(qa, outcome.verdict))

    logger.info(
        "refined %d open-ended pairs: %d consistent, %d fixed, %d dropped, %d failed",
        report.audited,
        report.consistent,
        report.needs_fix,
        report.drop,
        report.failed,
    )
    return refined, report
