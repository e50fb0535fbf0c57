import json

import httpx
import pytest

from rftpy.auditor import ChatCompletionAuditor, settings_from_env
from rftpy.enums import AuditStatus, SchemaViolation, TaskType
from rftpy.exceptions import AuditorExhaustedError, ConfigurationError, SchemaError, UsageError
from rftpy.models import AuditorSettings, QAPair
from rftpy.refinery import refine_dataset, rule_mock_audit

QA = QAPair(
    id="q1",
    observation=("unobserved",),
    question="What type of imaging is this?",
    answer="MRI, Diffusion Weighted",
    task_type=TaskType.OPEN,
)
VERDICT = rule_mock_audit(QA).to_dict()
SETTINGS = AuditorSettings(
    endpoint="http://auditor.test/v1/",
    model="auditor-model",
    api_key="secret",
    max_attempts=3,
    backoff_initial=0.5,
)


def _completion(content: str):
    return lambda: httpx.Response(200, json={"choices": [{"message": {"content": content}}]})


def _status(code: int, **kwargs: object):
    return lambda: httpx.Response(code, **kwargs)


def _auditor(handler, settings: AuditorSettings = SETTINGS, sleeps: list | None = None):
    client = httpx.Client(transport=httpx.MockTransport(handler))
    sleep = sleeps.append if sleeps is not None else (lambda s: None)
    return ChatCompletionAuditor(settings, client=client, sleep=sleep)


def _scripted(responses: list):
    calls = []

    def handler(request: httpx.Request) -> httpx.Response:
        calls.append(request)
        response = responses[min(len(calls), len(responses)) - 1]
        if isinstance(response, Exception):
            raise response
        return response()

    return handler, calls


def test_settings_from_env() -> None:
    environ = {
        "RFTPY_AUDITOR_ENDPOINT": "http://localhost:8000/v1",
        "RFTPY_AUDITOR_MODEL": "m",
        "RFTPY_AUDITOR_API_KEY": "sk-test-token",
    }

    settings = settings_from_env(environ, max_attempts=5, model=None)

    assert settings.endpoint == "http://localhost:8000/v1"
    assert settings.model == "m"
    assert settings.api_key == "k"
    assert settings.max_attempts == 5
    assert "k" not in repr(settings).replace("max_", "")
    assert settings_from_env(environ, model="other").model == "other"


def test_settings_from_env_requires_endpoint_and_model() -> None:
    with pytest.raises(ConfigurationError) as exc_info:
        settings_from_env({})
    assert exc_info.value.key == "auditor_endpoint"

    with pytest.raises(ConfigurationError) as exc_info:
        settings_from_env({"RFTPY_AUDITOR_ENDPOINT": "http://x"})
    assert exc_info.value.key == "auditor_model"


def test_audit_sends_chat_completion_request() -> None:
    handler, calls = _scripted([_completion(json.dumps(VERDICT))])

    with _auditor(handler) as auditor:
        result = auditor.audit(QA)

    assert result.verdict.status is AuditStatus.NEEDS_FIX
    assert result.retries == 0
    assert result.schema_failures == 0
    [request] = calls
    assert str(request.url) == "http://auditor.test/v1/chat/completions"
    assert request.headers["Authorization"] == "Bearer secret"
    body = json.loads(request.content)
    assert body["model"] == "auditor-model"
    assert body["temperature"] == 0.0
    assert body["messages"][0]["role"] == "user"
    assert body["messages"][0]["content"].startswith("ori_q: What type of imaging is this?")


def test_audit_without_api_key_sends_no_authorization() -> None:
    handler, calls = _scripted([_completion(json.dumps(VERDICT))])
    settings = AuditorSettings(endpoint="http://auditor.test", model="m")

    _auditor(handler, settings).audit(QA)

    assert "Authorization" not in calls[0].headers


def test_audit_retries_server_errors_with_backoff() -> None:
    handler, calls = _scripted(
        [_status(503), _status(429), _completion(json.dumps(VERDICT))]
    )
    sleeps: list[float] = []

    result = _auditor(handler, sleeps=sleeps).audit(QA)

    assert len(calls) == 3
    assert result.retries == 2
    assert sleeps == [0.5, 1.0]


def test_audit_retries_transport_errors() -> None:
    handler, calls = _scripted(
        [httpx.ConnectError("refused"), _completion(f"```json\n{json.dumps(VERDICT)}\n```")]
    )

    result = _auditor(handler).audit(QA)

    assert len(calls) == 2
    assert result.retries == 1


def test_audit_retries_schema_invalid_verdicts() -> None:
    handler, _ = _scripted(
        [_completion("I think it is fine."), _completion(json.dumps(VERDICT))]
    )

    result = _auditor(handler).audit(QA)

    assert result.retries == 1
    assert result.schema_failures == 1


def test_audit_exhaustion() -> None:
    handler, calls = _scripted([_completion(json.dumps({**VERDICT, "status": "fixed"}))])

    with pytest.raises(AuditorExhaustedError) as exc_info:
        _auditor(handler).audit(QA)

    assert len(calls) == 3
    assert exc_info.value.qa_id == "q1"
    assert exc_info.value.attempts == 3
    assert exc_info.value.schema_failures == 3
    assert isinstance(exc_info.value.cause, SchemaError)
    assert exc_info.value.cause.kind is SchemaViolation.BAD_STATUS


def test_audit_does_not_retry_client_errors() -> None:
    handler, calls = _scripted([_status(401)])

    with pytest.raises(AuditorExhaustedError) as exc_info:
        _auditor(handler).audit(QA)

    assert len(calls) == 1
    assert isinstance(exc_info.value.cause, httpx.HTTPStatusError)


def test_audit_rejects_malformed_bodies() -> None:
    handler, calls = _scripted([_status(200, json={"id": "x"})])

    with pytest.raises(AuditorExhaustedError) as exc_info:
        _auditor(handler).audit(QA)

    assert len(calls) == 3
    assert exc_info.value.cause.kind is SchemaViolation.NOT_JSON


def test_audit_rejects_close_pairs() -> None:
    handler, calls = _scripted([_completion(json.dumps(VERDICT))])
    close = QAPair(
        id="c",
        observation=("ct",),
        question="Which organ?",
        answer="A",
        task_type=TaskType.CLOSE,
        options=(("A", "liver"), ("B", "lung")),
    )

    with pytest.raises(UsageError):
        _auditor(handler).audit(close)
    assert not calls


def test_refine_dataset_over_http() -> None:
    """Refinement through the client matches the mock auditor and keeps order."""

    pairs = [
        QA,
        QAPair(
            id="q2",
            observation=("unobserved",),
            question="What is the main organ in the image?",
            answer="Liver, Heart, Spleen, Lung",
            task_type=TaskType.OPEN,
        ),
        QAPair(
            id="q3",
            observation=("unobserved",),
            question="Identify the organ shown in the image.",
            answer="liver",
            task_type=TaskType.OPEN,
        ),
    ]
    by_question = {qa.question: qa for qa in pairs}

    def handler(request: httpx.Request) -> httpx.Response:
        prompt = json.loads(request.content)["messages"][0]["content"]
        question = prompt.splitlines()[0].removeprefix("ori_q: ")
        if question == "What is the main organ in the image?":
            return httpx.Response(500)
        return _completion(json.dumps(rule_mock_audit(by_question[question]).to_dict()))()

    refined, report = refine_dataset(pairs, _auditor(handler))

    assert [qa.id for qa in refined] == ["q1", "q2", "q3"]
    assert refined[0].question == (
        "Identify the imaging modality and sequence type shown in the image."
    )
    assert refined[1] == pairs[1]
    assert refined[2] == pairs[2]
    assert report.needs_fix == 1
    assert report.consistent == 1
    assert report.failed == 1
    assert report.failed_ids == ("q2",)
