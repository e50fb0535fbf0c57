from rftpy.curriculum import (
    curriculum_train,
    format_warmup,
    joint_step,
    mix_gradients,
    train,
)
from rftpy.enums import AuditStatus, DropPolicy, PromptMode, Split, Stage, Strategy, TaskType
from rftpy.exceptions import (
    AuditorExhaustedError,
    ConfigurationError,
    DatasetParseError,
    DatasetValidationError,
    FormatError,
    InputError,
    RftError,
    SchemaError,
    TrainingDivergenceError,
    UsageError,
    VocabularyError,
)
from rftpy.grpo import compute_advantages, evaluate, grpo_step, token_loss_and_weights
from rftpy.metrics import bleu1, register_semantic_backend, rouge1, semantic_score, tokenize
from rftpy.models import (
    AuditVerdict,
    EvalReport,
    GrpoConfig,
    MixedBatch,
    QAPair,
    RefineReport,
    RewardBreakdown,
    RewardConfig,
    Rollout,
    Schedule,
    StepStats,
    TrainSettings,
    WorldSpec,
)
from rftpy.optim import apply_update
from rftpy.policy import (
    PolicyParams,
    init_params,
    logprobs,
    sample_completion,
    snapshot,
    weighted_logprob_grad,
)
from rftpy.refinery import (
    RuleMockAuditor,
    refine_dataset,
    render_audit_prompt,
    rule_mock_audit,
    validate_verdict,
)
from rftpy.rewards import close_reward, format_reward, open_reward, parse_response, total_reward
from rftpy.taskgen import build_prompt, generate_dataset, load_jsonl

__all__ = [
    "bleu1",
    "rouge1",
    "semantic_score",
    "register_semantic_backend",
    "tokenize",
    "parse_response",
    "format_reward",
    "close_reward",
    "open_reward",
    "total_reward",
    "PolicyParams",
    "init_params",
    "logprobs",
    "weighted_logprob_grad",
    "sample_completion",
    "snapshot",
    "apply_update",
    "compute_advantages",
    "token_loss_and_weights",
    "grpo_step",
    "evaluate",
    "mix_gradients",
    "joint_step",
    "curriculum_train",
    "format_warmup",
    "train",
    "generate_dataset",
    "build_prompt",
    "load_jsonl",
    "render_audit_prompt",
    "validate_verdict",
    "rule_mock_audit",
    "refine_dataset",
    "RuleMockAuditor",
    "AuditStatus",
    "DropPolicy",
    "PromptMode",
    "Split",
    "Stage",
    "Strategy",
    "TaskType",
    "AuditVerdict",
    "EvalReport",
    "GrpoConfig",
    "MixedBatch",
    "QAPair",
    "RefineReport",
    "RewardBreakdown",
    "RewardConfig",
    "Rollout",
    "Schedule",
    "StepStats",
    "TrainSettings",
    "WorldSpec",
    "RftError",
    "ConfigurationError",
    "InputError",
    "VocabularyError",
    "FormatError",
    "SchemaError",
    "TrainingDivergenceError",
    "DatasetParseError",
    "DatasetValidationError",
    "UsageError",
    "AuditorExhaustedError",
]
__version__ = "1.0.0"
