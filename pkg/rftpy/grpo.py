"""One step of group relative policy optimization.

Each prompt gets a group of completions sampled from the frozen old policy.
Rewards are normalized within the group into advantages, and the clipped
surrogate with a KL penalty towards the reference policy is reduced to
per-token weights on `grad log pi`, so the policy only has to provide
`weighted_logprob_grad`.
"""

import logging
from collections import defaultdict
from collections.abc import Callable, Sequence

import numpy as np

from rftpy.enums import PromptMode, Stage, TaskType
from rftpy.exceptions import ConfigurationError, InputError
from rftpy.models import (
    EvalReport,
    GrpoConfig,
    Group,
    QAPair,
    RewardBreakdown,
    RewardConfig,
    Rollout,
    StepStats,
)
from rftpy.optim import gradient_norm
from rftpy.policy import (
    Gradient,
    Policy,
    PolicyParams,
    greedy_completion,
    logprobs,
    sample_completion,
    weighted_logprob_grad,
)
from rftpy.rewards import total_reward
from rftpy.taskgen import build_prompt

logger = logging.getLogger(__name__)

RewardFn = Callable[[QAPair, Rollout], RewardBreakdown]


def default_reward_fn(cfg: RewardConfig) -> RewardFn:
    """Scores a rollout with :func:`rftpy.rewards.total_reward` against the pair's gold answer."""

    def reward_fn(qa: QAPair, rollout: Rollout) -> RewardBreakdown:
        return total_reward(qa.task_type, rollout.raw_text, qa.answer, qa.options, cfg)

    return reward_fn


def compute_advantages(rewards: Sequence[float], advantage_eps: float) -> list[float]:
    """Normalizes group rewards by their mean and population std.

    Groups whose std is below `advantage_eps` get all-zero advantages.

    Args:
        rewards: rewards of one group, at least 2.
        advantage_eps (float): degenerate-group threshold.

    Raises:
        ConfigurationError: if the group has fewer than 2 rewards.
    """

    if len(rewards) < 2:
        raise ConfigurationError("group_size", f"need at least 2 rewards, got {len(rewards)}")
    r = np.asarray(rewards, dtype=np.float64)
    std = float(r.std())
    if std < advantage_eps:
        return [0.0] * len(r)
    return ((r - r.mean()) / std).tolist()


def _token_terms(
    new_lp: Sequence[float],
    old_lp: Sequence[float],
    ref_lp: Sequence[float],
    advantage: float,
    cfg: GrpoConfig,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    if not len(new_lp) == len(old_lp) == len(ref_lp):
        raise InputError(
            f"log-prob lengths differ: new {len(new_lp)}, old {len(old_lp)}, ref {len(ref_lp)}"
        )
    new = np.asarray(new_lp, dtype=np.float64)
    old = np.asarray(old_lp, dtype=np.float64)
    ref = np.asarray(ref_lp, dtype=np.float64)

    ratio = np.exp(new - old)
    unclipped = ratio * advantage
    clipped = np.clip(ratio, 1 - cfg.clip_eps, 1 + cfg.clip_eps) * advantage
    surrogate = np.minimum(unclipped, clipped)

    log_ref_ratio = ref - new
    kl = np.maximum(np.expm1(log_ref_ratio) - log_ref_ratio, 0.0)

    losses = -(surrogate - cfg.kl_beta * kl)
    unclipped_active = unclipped <= clipped
    weights = -(
        np.where(unclipped_active, unclipped, 0.0)
        + cfg.kl_beta * np.expm1(log_ref_ratio)
    )
    return losses, weights, kl, ~unclipped_active


def token_loss_and_weights(
    new_lp: Sequence[float],
    old_lp: Sequence[float],
    ref_lp: Sequence[float],
    advantage: float,
    cfg: GrpoConfig,
) -> tuple[list[float], list[float]]:
    """Per-token loss contributions and their gradient weights on `log pi_theta`.

    Per token, with ratio `r = exp(new - old)`:

    * loss `-(min(r * A, clip(r, 1 - eps, 1 + eps) * A) - beta * k)` where
      `k = exp(ref - new) - (ref - new) - 1`;
    * weight `-(r * A * [unclipped branch active] - beta * (1 - exp(ref - new)))`,
      the derivative of the loss with respect to `new`.

    `old_lp` and `ref_lp` are constants.

    Raises:
        InputError: if the three log-prob sequences differ in length.
    """

    losses, weights, _, _ = _token_terms(new_lp, old_lp, ref_lp, advantage, cfg)
    return losses.tolist(), weights.tolist()


def reinforce_weights(advantage: float, length: int) -> list[float]:
    """Loss weights of plain REINFORCE with a baseline: `-A` on every token."""

    return [-advantage] * length


def _stage_of(prompts: Sequence[QAPair]) -> Stage:
    types = {qa.task_type for qa in prompts}
    if types == {TaskType.CLOSE}:
        return Stage.CLOSE
    if types == {TaskType.OPEN}:
        return Stage.OPEN
    return Stage.JOINT


def collect_groups(
    old_snapshot: PolicyParams,
    prompts: Sequence[QAPair],
    reward_fn: RewardFn,
    cfg: GrpoConfig,
    rng_seed: int,
) -> list[Group]:
    """Samples a group per prompt from the old policy and scores it."""

    rng = np.random.default_rng(rng_seed)
    groups = []
    for qa in prompts:
        prompt = build_prompt(qa, PromptMode.SYMBOLIC, old_snapshot.vocab)
        seeds = rng.integers(0, 2**63 - 1, size=cfg.group_size)
        rollouts = tuple(
            sample_completion(
                old_snapshot, prompt, cfg.temperature, cfg.max_completion_len, int(seed)
            )
            for seed in seeds
        )
        rewards = tuple(reward_fn(qa, r).total for r in rollouts)
        advantages = tuple(compute_advantages(rewards, cfg.advantage_eps))
        groups.append(Group(qa=qa, rollouts=rollouts, rewards=rewards, advantages=advantages))
    return groups


def _group_terms(
    live_policy: PolicyParams,
    ref_snapshot: PolicyParams,
    groups: Sequence[Group],
    cfg: GrpoConfig,
) -> tuple[list[tuple[tuple[int, ...], tuple[int, ...], np.ndarray]], float, float, float]:
    """Weighted batch for the gradient plus the loss, mean KL and clip fraction.

    Every prompt's loss is normalized by the total token count of its group and
    prompts are averaged, so the result is the mean of per-sample gradients.
    """

    batch = []
    loss = 0.0
    kl_sum = 0.0
    clipped = 0
    tokens = 0
    for group in groups:
        n_tokens = sum(len(r.completion) for r in group.rollouts)
        scale = 1.0 / (max(n_tokens, 1) * len(groups))
        for rollout, advantage in zip(group.rollouts, group.advantages):
            new_lp = logprobs(live_policy, rollout.prompt, rollout.completion)
            ref_lp = logprobs(ref_snapshot, rollout.prompt, rollout.completion)
            losses, weights, kl, clip_mask = _token_terms(
                new_lp, rollout.logprobs_sampling, ref_lp, advantage, cfg
            )
            batch.append((rollout.prompt, rollout.completion, weights * scale))
            loss += float(losses.sum()) * scale
            kl_sum += float(kl.sum())
            clipped += int(clip_mask.sum())
            tokens += len(rollout.completion)
    tokens = max(tokens, 1)
    return batch, loss, kl_sum / tokens, clipped / tokens


def surrogate_loss(
    live_policy: PolicyParams,
    ref_snapshot: PolicyParams,
    groups: Sequence[Group],
    cfg: GrpoConfig,
) -> float:
    """Value of the normalized clipped-surrogate-plus-KL loss of already sampled groups."""

    return _group_terms(live_policy, ref_snapshot, groups, cfg)[1]


def grpo_step(
    live_policy: PolicyParams,
    old_snapshot: PolicyParams,
    ref_snapshot: PolicyParams,
    prompts: Sequence[QAPair],
    reward_fn: RewardFn,
    cfg: GrpoConfig,
    rng_seed: int,
) -> tuple[Gradient, StepStats, list[Group]]:
    """Computes the loss gradient of one GRPO step without applying it.

    Args:
        live_policy (PolicyParams): policy being optimized.
        old_snapshot (PolicyParams): frozen policy the groups are sampled from.
        ref_snapshot (PolicyParams): frozen KL anchor.
        prompts: non-empty batch of pairs.
        reward_fn (RewardFn): scores one rollout of a pair.
        cfg (GrpoConfig)
        rng_seed (int): seed of the sampling of the whole step.

    Returns:
        Gradient of the loss, step statistics (step index 0) and the groups.

    Raises:
        ConfigurationError: if `prompts` is empty.
    """

    if not prompts:
        raise ConfigurationError("batch", "a step needs at least one prompt")

    groups = collect_groups(old_snapshot, prompts, reward_fn, cfg, rng_seed)
    batch, loss, mean_kl, clip_fraction = _group_terms(live_policy, ref_snapshot, groups, cfg)
    grad = weighted_logprob_grad(live_policy, batch)

    by_task: dict[str, list[float]] = defaultdict(list)
    for group in groups:
        by_task[group.qa.task_type.value].extend(group.rewards)
    all_rewards = [r for group in groups for r in group.rewards]

    stats = StepStats(
        step=0,
        stage=_stage_of(prompts),
        mean_reward=float(np.mean(all_rewards)),
        mean_total_loss=loss,
        mean_kl=mean_kl,
        clip_fraction=clip_fraction,
        grad_norm=gradient_norm(grad),
        task_rewards={task: float(np.mean(v)) for task, v in by_task.items()},
    )
    return grad, stats, groups


def _mean_or_none(values: Sequence[float]) -> float | None:
    return float(np.mean(values)) if values else None


def evaluate(
    policy: Policy,
    dataset: Sequence[QAPair],
    cfg: GrpoConfig,
    reward_cfg: RewardConfig,
) -> EvalReport:
    """Evaluates greedy decoding on `dataset`.

    Close-ended accuracy counts format failures as wrong; the open-ended score
    is the mean open-ended reward of the extracted answers.

    Args:
        policy (Policy)
        dataset: pairs to evaluate.
        cfg (GrpoConfig): supplies `max_completion_len`.
        reward_cfg (RewardConfig)

    Returns:
        EvalReport: metrics are None for absent task types.
    """

    close, open_, fmt = [], [], []
    bleu, rouge, semantic = [], [], []
    for qa in dataset:
        prompt = build_prompt(qa, PromptMode.SYMBOLIC, policy.vocab)
        rollout = greedy_completion(policy, prompt, cfg.max_completion_len)
        breakdown = total_reward(qa.task_type, rollout.raw_text, qa.answer, qa.options, reward_cfg)
        fmt.append(breakdown.format_reward)
        if qa.task_type is TaskType.CLOSE:
            close.append(breakdown.task_reward)
        else:
            open_.append(breakdown.task_reward)
            bleu.append(breakdown.bleu1 or 0.0)
            rouge.append(breakdown.rouge1 or 0.0)
            semantic.append(breakdown.semantic or 0.0)

    return EvalReport(
        n_close=len(close),
        n_open=len(open_),
        close_accuracy=_mean_or_none(close),
        open_score=_mean_or_none(open_),
        format_rate=_mean_or_none(fmt),
        open_bleu1=_mean_or_none(bleu),
        open_rouge1=_mean_or_none(rouge),
        open_semantic=_mean_or_none(semantic),
    )
