import logging
import os
import time
from collections.abc import Callable, Mapping

import httpx
from tenacity import (
    Retrying,
    before_sleep_log,
    retry_if_exception,
    stop_after_attempt,
    wait_exponential,
)

from rftpy.enums import SchemaViolation
from rftpy.exceptions import AuditorExhaustedError, ConfigurationError, SchemaError
from rftpy.models import AuditorSettings, AuditResult, AuditVerdict, QAPair
from rftpy.refinery import render_audit_prompt, validate_verdict

logger = logging.getLogger(__name__)

ENV_ENDPOINT = "RFTPY_AUDITOR_ENDPOINT"
ENV_API_KEY = "RFTPY_AUDITOR_API_KEY"
ENV_MODEL = "RFTPY_AUDITOR_MODEL"


def settings_from_env(
    environ: Mapping[str, str] | None = None, **overrides: object
) -> AuditorSettings:
    """Builds auditor settings from the `RFTPY_AUDITOR_*` environment variables.

    Keyword overrides take precedence over the environment.

    Raises:
        ConfigurationError: if no endpoint or model is configured.
    """

    environ = os.environ if environ is None else environ
    values: dict[str, object] = {
        "endpoint": environ.get(ENV_ENDPOINT, ""),
        "model": environ.get(ENV_MODEL, ""),
        "api_key": environ.get(ENV_API_KEY) or None,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    if not values["endpoint"]:
        raise ConfigurationError("auditor_endpoint", f"set {ENV_ENDPOINT} or auditor_endpoint")
    if not values["model"]:
        raise ConfigurationError("auditor_model", f"set {ENV_MODEL} or auditor_model")
    return AuditorSettings(**values)  # type: ignore[arg-type]


def _is_retryable(exc: BaseException) -> bool:
    if isinstance(exc, httpx.HTTPStatusError):
        status = exc.response.status_code
        return status == 429 or status >= 500
    return isinstance(exc, (httpx.TransportError, SchemaError))


class ChatCompletionAuditor:
    """Auditor that asks a chat-completion model over HTTP.

    Every audit posts `{"model", "messages", "temperature"}` to
    `<endpoint>/chat/completions` and validates `choices[0].message.content`
    as a verdict. Transport errors, 429/5xx responses and schema-invalid
    verdicts are retried with exponential backoff.

    Args:
        settings (AuditorSettings)
        client (httpx.Client): injected client, e.g. with a mock transport.
            The auditor creates and owns one when omitted.
        sleep: wait function used between retries. Defaults to `time.sleep`.
    """

    def __init__(
        self,
        settings: AuditorSettings,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.settings = settings
        self.max_concurrency = settings.max_concurrency
        self._owns_client = client is None
        self._client = client or httpx.Client(
            timeout=settings.timeout,
            limits=httpx.Limits(max_connections=settings.max_concurrency),
        )
        self._sleep = sleep

    def close(self) -> None:
        if self._owns_client:
            self._client.close()

    def __enter__(self) -> "ChatCompletionAuditor":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()

    @property
    def url(self) -> str:
        return self.settings.endpoint.rstrip("/") + "/chat/completions"

    def request_body(self, prompt: str) -> dict[str, object]:
        return {
            "model": self.settings.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.settings.temperature,
        }

    def _complete(self, prompt: str) -> str:
        headers = {}
        if self.settings.api_key:
            headers["Authorization"] = f"Bearer {self.settings.api_key}"
        response = self._client.post(
            self.url,
            json=self.request_body(prompt),
            headers=headers,
            timeout=self.settings.timeout,
        )
        logger.debug("auditor responded %d", response.status_code)
        response.raise_for_status()
        try:
            content = response.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise SchemaError(SchemaViolation.NOT_JSON, "choices[0].message.content") from e
        if not isinstance(content, str):
            raise SchemaError(SchemaViolation.NOT_JSON, "choices[0].message.content")
        return content

    def audit(self, qa: QAPair) -> AuditResult:
        """Audits one open-ended pair.

        Raises:
            UsageError: if `qa` is close-ended.
            AuditorExhaustedError: if every attempt failed.
        """

        prompt = render_audit_prompt(qa)
        attempts = 0
        schema_failures = 0

        def attempt() -> AuditVerdict:
            nonlocal attempts, schema_failures
            attempts += 1
            content = self._complete(prompt)
            try:
                return validate_verdict(content)
            except SchemaError as e:
                schema_failures += 1
                logger.warning("schema-invalid verdict for %s: %s", qa.id, e)
                raise

        retrying = Retrying(
            stop=stop_after_attempt(self.settings.max_attempts),
            wait=wait_exponential(
                multiplier=self.settings.backoff_initial, max=self.settings.backoff_max
            ),
            retry=retry_if_exception(_is_retryable),
            before_sleep=before_sleep_log(logger, logging.DEBUG),
            sleep=self._sleep,
            reraise=True,
        )
        try:
            verdict = retrying(attempt)
        except (httpx.HTTPError, SchemaError) as e:
            raise AuditorExhaustedError(qa.id, attempts, schema_failures, e) from e
        return AuditResult(verdict=verdict, retries=attempts - 1, schema_failures=schema_failures)
