from collections.abc import Mapping
from dataclasses import dataclass, field

from rftpy.enums import AuditStatus, Split, Stage, Strategy, TaskType
from rftpy.exceptions import ConfigurationError


@dataclass(frozen=True)
class RewardConfig:
    """Reward composition weights.

    Args:
        lam: weight of the lexical metrics inside the open-ended reward, in [0, 1].
            Defaults to 0.7.
        gamma: weight of the task reward against the format reward, in [0, 1].
            Defaults to 0.8.
        semantic_backend: name of a registered semantic scorer. Defaults to "trigram".
    """

    lam: float = 0.7
    gamma: float = 0.8
    semantic_backend: str = "trigram"

    def __post_init__(self) -> None:
        if not 0 <= self.lam <= 1:
            raise ConfigurationError("lambda", f"{self.lam} is not in [0, 1]")
        if not 0 <= self.gamma <= 1:
            raise ConfigurationError("gamma", f"{self.gamma} is not in [0, 1]")


@dataclass(frozen=True)
class RewardBreakdown:
    """Reward components of one response.

    Args:
        task_reward: close- or open-ended reward of the extracted answer.
        format_reward: 1 if the response follows the tag format, otherwise 0.
        total: `gamma * task_reward + (1 - gamma) * format_reward`.
        bleu1: lexical precision metric, None for close-ended tasks.
        rouge1: lexical F1 metric, None for close-ended tasks.
        semantic: semantic similarity, None for close-ended tasks.
    """

    task_reward: float
    format_reward: float
    total: float
    bleu1: float | None = None
    rouge1: float | None = None
    semantic: float | None = None


@dataclass(frozen=True)
class ParsedResponse:
    """Reasoning and answer segments of a well-formed response."""

    think: str
    answer: str


@dataclass(frozen=True)
class QAPair:
    """One question/answer sample.

    Args:
        id: unique sample id.
        observation: attribute symbols standing in for the image.
        question: question text without the option list.
        answer: gold answer. An option letter for close-ended pairs with options.
        task_type: close- or open-ended.
        options: ordered `(letter, text)` pairs. Empty for open-ended pairs.
        split: train or test.
        meta: provenance metadata (generator kind, refinement notes, ...).
    """

    id: str
    observation: tuple[str, ...]
    question: str
    answer: str
    task_type: TaskType
    options: tuple[tuple[str, str], ...] = ()
    split: Split = Split.TRAIN
    meta: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class WorldSpec:
    """Attribute schema and sizes of a synthetic dataset.

    Args:
        modalities: imaging modality symbols.
        organs: organ symbols.
        findings: finding symbols.
        lateralities: laterality symbols.
        n_close: number of close-ended pairs.
        n_open: number of open-ended pairs.
        n_options: options per close-ended question, capped by the attribute set size.
        test_fraction: share of distinct observations reserved for the test split.
        noise_rate: share of open-ended pairs emitted with an under-specified question.
        seed: generator seed.
    """

    modalities: tuple[str, ...] = ("ct", "mri", "xray", "ultrasound")
    organs: tuple[str, ...] = (
        "liver",
        "kidney",
        "lung",
        "heart",
        "spleen",
        "brain",
        "bladder",
        "colon",
    )
    findings: tuple[str, ...] = ("mass", "cyst", "fracture", "effusion")
    lateralities: tuple[str, ...] = ("left", "right", "bilateral")
    n_close: int = 2500
    n_open: int = 2500
    n_options: int = 4
    test_fraction: float = 0.2
    noise_rate: float = 0.3
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("modalities", "organs", "findings", "lateralities"):
            if not getattr(self, name):
                raise ConfigurationError(name, "attribute set is empty")
        if self.n_close < 1:
            raise ConfigurationError("n_close", "must be at least 1")
        if self.n_open < 1:
            raise ConfigurationError("n_open", "must be at least 1")
        if self.n_options < 2:
            raise ConfigurationError("n_options", "must be at least 2")
        if not 0 < self.test_fraction < 1:
            raise ConfigurationError("test_fraction", "must be in (0, 1)")
        if not 0 <= self.noise_rate <= 1:
            raise ConfigurationError("noise_rate", "must be in [0, 1]")


@dataclass(frozen=True)
class Rollout:
    """One sampled completion.

    Args:
        prompt: prompt token ids.
        completion: sampled token ids, including the end token if it was sampled.
        logprobs_sampling: log-probability of every completion token under the
            sampling policy at temperature 1.
        raw_text: detokenized completion without the end token.
    """

    prompt: tuple[int, ...]
    completion: tuple[int, ...]
    logprobs_sampling: tuple[float, ...]
    raw_text: str


@dataclass(frozen=True)
class GrpoConfig:
    """Group relative policy optimization settings.

    Args:
        group_size: completions sampled per prompt, at least 2.
        clip_eps: ratio clipping range. Defaults to 0.2.
        kl_beta: weight of the reference KL penalty. Defaults to 0.01.
        advantage_eps: std floor below which a group counts as degenerate.
        temperature: sampling temperature.
        max_completion_len: max sampled tokens per completion.
    """

    group_size: int = 8
    clip_eps: float = 0.2
    kl_beta: float = 0.01
    advantage_eps: float = 1e-8
    temperature: float = 1.0
    max_completion_len: int = 12

    def __post_init__(self) -> None:
        if self.group_size < 2:
            raise ConfigurationError("group_size", "must be at least 2")
        if self.clip_eps <= 0:
            raise ConfigurationError("clip_eps", "must be positive")
        if self.kl_beta < 0:
            raise ConfigurationError("kl_beta", "must be non-negative")
        if self.advantage_eps <= 0:
            raise ConfigurationError("advantage_eps", "must be positive")
        if self.temperature <= 0:
            raise ConfigurationError("temperature", "must be positive")
        if self.max_completion_len < 1:
            raise ConfigurationError("max_completion_len", "must be at least 1")


@dataclass(frozen=True)
class Group:
    """Rollouts of one prompt with their rewards and advantages."""

    qa: QAPair
    rollouts: tuple[Rollout, ...]
    rewards: tuple[float, ...]
    advantages: tuple[float, ...]


@dataclass(frozen=True)
class EvalReport:
    """Greedy-decoding evaluation summary.

    Metrics are None when the dataset holds no item of the matching kind.
    """

    n_close: int
    n_open: int
    close_accuracy: float | None
    open_score: float | None
    format_rate: float | None
    open_bleu1: float | None = None
    open_rouge1: float | None = None
    open_semantic: float | None = None


@dataclass(frozen=True)
class StepStats:
    """Summary of one optimization step.

    Args:
        step: global step index.
        stage: stage the step belongs to.
        mean_reward: mean total reward over every rollout of the step.
        mean_total_loss: value of the normalized surrogate-plus-KL loss.
        mean_kl: mean per-token KL estimate.
        clip_fraction: share of tokens where the clipped branch was active.
        grad_norm: L2 norm of the applied gradient.
        task_rewards: mean reward per task type when the batch was mixed.
        evaluation: evaluation report when one was scheduled on this step.
    """

    step: int
    stage: Stage
    mean_reward: float
    mean_total_loss: float
    mean_kl: float
    clip_fraction: float
    grad_norm: float
    task_rewards: Mapping[str, float] = field(default_factory=dict)
    evaluation: EvalReport | None = None


@dataclass(frozen=True)
class MixedBatch:
    """Mini-batch split into close- and open-ended sub-batches."""

    close_items: tuple[QAPair, ...]
    open_items: tuple[QAPair, ...]

    def __post_init__(self) -> None:
        if not self.close_items and not self.open_items:
            raise ConfigurationError("batch", "both sub-batches are empty")


@dataclass(frozen=True)
class Schedule:
    """Training schedule.

    Args:
        strategy: which data the steps train on.
        stage1_steps: close-ended steps of the curriculum, or the step budget
            of single-stage strategies.
        stage2_steps: open-ended steps of the curriculum.
        ref_reset_on_transition: re-snapshot the reference policy when the
            curriculum switches to the open-ended stage. Defaults to True.
        reset_optimizer_on_transition: start the open-ended stage with a fresh
            optimizer state. Defaults to False.
        same_fraction_mixing: weight each task gradient by its own batch share
            instead of the cross-weighting. Defaults to False.
    """

    strategy: Strategy = Strategy.CURRICULUM
    stage1_steps: int = 300
    stage2_steps: int = 300
    ref_reset_on_transition: bool = True
    reset_optimizer_on_transition: bool = False
    same_fraction_mixing: bool = False

    def __post_init__(self) -> None:
        if self.stage1_steps < 0 or self.stage2_steps < 0:
            raise ConfigurationError("steps", "step counts must be non-negative")

    @property
    def total_steps(self) -> int:
        if self.strategy is Strategy.CURRICULUM:
            return self.stage1_steps + self.stage2_steps
        return self.stage1_steps


@dataclass(frozen=True)
class AuditVerdict:
    """Auditor decision for one open-ended pair."""

    status: AuditStatus
    ori_q: str
    ori_a: str
    new_q: str
    new_a: str
    notes: str

    def to_dict(self) -> dict[str, str]:
        return {
            "status": self.status.value,
            "ori_q": self.ori_q,
            "ori_a": self.ori_a,
            "new_q": self.new_q,
            "new_a": self.new_a,
            "notes": self.notes,
        }


@dataclass(frozen=True)
class AuditResult:
    """Verdict with the bookkeeping of how it was obtained."""

    verdict: AuditVerdict
    retries: int = 0
    schema_failures: int = 0


@dataclass(frozen=True)
class RefineReport:
    """Tallies of a refinement run."""

    consistent: int = 0
    needs_fix: int = 0
    drop: int = 0
    failed: int = 0
    passthrough: int = 0
    schema_failures: int = 0
    retries: int = 0
    failed_ids: tuple[str, ...] = ()

    @property
    def audited(self) -> int:
        return self.consistent + self.needs_fix + self.drop + self.failed

    def merge(self, other: "RefineReport") -> "RefineReport":
        return RefineReport(
            consistent=self.consistent + other.consistent,
            needs_fix=self.needs_fix + other.needs_fix,
            drop=self.drop + other.drop,
            failed=self.failed + other.failed,
            passthrough=self.passthrough + other.passthrough,
            schema_failures=self.schema_failures + other.schema_failures,
            retries=self.retries + other.retries,
            failed_ids=tuple(sorted(self.failed_ids + other.failed_ids)),
        )

    def to_dict(self) -> dict[str, object]:
        return {
            "consistent": self.consistent,
            "needs_fix": self.needs_fix,
            "drop": self.drop,
            "failed": self.failed,
            "passthrough": self.passthrough,
            "schema_failures": self.schema_failures,
            "retries": self.retries,
            "failed_ids": list(self.failed_ids),
        }


@dataclass(frozen=True)
class TrainSettings:
    """Optimization settings shared by every training strategy.

    Args:
        grpo: group sampling and loss settings.
        reward: reward composition.
        batch_size: prompts per step.
        lr: Adam learning rate of the reinforcement steps.
        warmup_steps: supervised format warm-up steps before the first stage.
        warmup_lr: Adam learning rate of the warm-up.
        eval_every: evaluate on the held-out pairs every this many steps, 0 disables.
        log_every: log a step summary every this many steps.
    """

    grpo: GrpoConfig = field(default_factory=GrpoConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    batch_size: int = 16
    lr: float = 1e-2
    warmup_steps: int = 150
    warmup_lr: float = 1e-2
    eval_every: int = 0
    log_every: int = 10

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ConfigurationError("batch_size", "must be at least 1")
        if self.lr <= 0:
            raise ConfigurationError("lr", "must be positive")
        if self.warmup_steps < 0:
            raise ConfigurationError("warmup_steps", "must be non-negative")
        if self.warmup_lr <= 0:
            raise ConfigurationError("warmup_lr", "must be positive")
        if self.eval_every < 0:
            raise ConfigurationError("eval_every", "must be non-negative")
        if self.log_every < 1:
            raise ConfigurationError("log_every", "must be at least 1")


@dataclass(frozen=True)
class AuditorSettings:
    """Connection and retry settings of the chat-completion auditor.

    Args:
        endpoint: base URL; requests go to `<endpoint>/chat/completions`.
        model: model identifier sent with every request.
        api_key: bearer token, optional for local servers.
        timeout: per-request timeout in seconds.
        max_concurrency: max in-flight requests, at least 1.
        max_attempts: attempts per pair including the first, at least 1.
        backoff_initial: first retry delay in seconds.
        backoff_max: retry delay cap in seconds.
        temperature: sampling temperature of the auditor model.
    """

    endpoint: str
    model: str
    api_key: str | None = field(default=None, repr=False)
    timeout: float = 60.0
    max_concurrency: int = 4
    max_attempts: int = 3
    backoff_initial: float = 1.0
    backoff_max: float = 30.0
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if not self.endpoint:
            raise ConfigurationError("auditor_endpoint", "is required")
        if not self.model:
            raise ConfigurationError("auditor_model", "is required")
        if self.timeout <= 0:
            raise ConfigurationError("auditor_timeout", "must be positive")
        if self.max_concurrency < 1:
            raise ConfigurationError("auditor_max_concurrency", "must be at least 1")
        if self.max_attempts < 1:
            raise ConfigurationError("auditor_max_attempts", "must be at least 1")
        if self.backoff_initial < 0 or self.backoff_max < 0:
            raise ConfigurationError("auditor_backoff", "must be non-negative")
