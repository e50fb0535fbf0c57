import csv
import io
import json
import os
import tempfile
import time
from collections.abc import Iterable, Iterator, Sequence
from contextlib import contextmanager
from pathlib import Path
from typing import IO, Any

from rftpy.models import EvalReport, StepStats


@contextmanager
def atomic_writer(path: Path, binary: bool = False) -> Iterator[IO[Any]]:
    """Opens a temp file next to `path` and renames it over `path` on success.

    Nothing is left behind if the body raises.
    """

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb" if binary else "w", encoding=None if binary else "utf-8") as f:
            yield f
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text(path: Path, text: str) -> None:
    with atomic_writer(path) as f:
        f.write(text)


def write_json(path: Path, obj: Any) -> None:
    write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def eval_report_to_dict(report: EvalReport) -> dict[str, Any]:
    return {
        "n_close": report.n_close,
        "n_open": report.n_open,
        "close_accuracy": report.close_accuracy,
        "open_score": report.open_score,
        "format_rate": report.format_rate,
        "open_bleu1": report.open_bleu1,
        "open_rouge1": report.open_rouge1,
        "open_semantic": report.open_semantic,
    }


def step_record(stats: StepStats, timestamp: float | None = None) -> dict[str, Any]:
    """Metrics log record of one step. `time` is the only non-deterministic field."""

    record: dict[str, Any] = {
        "step": stats.step,
        "stage": stats.stage.value,
        "mean_reward": stats.mean_reward,
        "loss": stats.mean_total_loss,
        "kl": stats.mean_kl,
        "clip_fraction": stats.clip_fraction,
        "grad_norm": stats.grad_norm,
        "time": time.time() if timestamp is None else timestamp,
    }
    for task, value in sorted(stats.task_rewards.items()):
        record[f"reward_{task}"] = value
    if stats.evaluation is not None:
        record["eval"] = eval_report_to_dict(stats.evaluation)
    return record


def render_metrics_log(history: Iterable[StepStats]) -> str:
    return "".join(json.dumps(step_record(s), sort_keys=True) + "\n" for s in history)


class MetricsLog:
    """Appends one JSON record per step to `path` and flushes it right away.

    Steps written before a crash stay on disk. The instance is callable so it
    can be passed as `on_step` to :func:`rftpy.curriculum.train`.
    """

    def __init__(self, path: Path) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file: IO[str] | None = self.path.open("w", encoding="utf-8")

    def __call__(self, stats: StepStats) -> None:
        self.write(stats)

    def write(self, stats: StepStats) -> None:
        if self._file is None:
            raise ValueError(f"metrics log {self.path} is closed")
        self._file.write(json.dumps(step_record(stats), sort_keys=True) + "\n")
        self._file.flush()

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None

    def __enter__(self) -> "MetricsLog":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()


def strip_timestamps(log_text: str) -> str:
    """Drops the `time` field of every metrics log line."""

    lines = []
    for line in log_text.splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        record.pop("time", None)
        lines.append(json.dumps(record, sort_keys=True))
    return "\n".join(lines) + ("\n" if lines else "")


CSV_COLUMNS = (
    "step",
    "stage",
    "mean_reward",
    "loss",
    "kl",
    "clip_fraction",
    "grad_norm",
    "eval_close_accuracy",
    "eval_open_score",
    "eval_format_rate",
)


def render_metrics_csv(history: Iterable[StepStats]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for s in history:
        ev = s.evaluation
        writer.writerow(
            [
                s.step,
                s.stage.value,
                s.mean_reward,
                s.mean_total_loss,
                s.mean_kl,
                s.clip_fraction,
                s.grad_norm,
                "" if ev is None or ev.close_accuracy is None else ev.close_accuracy,
                "" if ev is None or ev.open_score is None else ev.open_score,
                "" if ev is None or ev.format_rate is None else ev.format_rate,
            ]
        )
    return buffer.getvalue()


def write_metrics_csv(path: Path, history: Sequence[StepStats]) -> None:
    write_text(path, render_metrics_csv(history))
