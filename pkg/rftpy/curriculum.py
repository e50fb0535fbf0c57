"""Joint and curriculum training on close- and open-ended data.

Joint training runs GRPO on the close and open sub-batches of one mini-batch
separately and re-weights the two mean gradients before a single update.
Curriculum training runs a close-ended stage followed by an open-ended stage.
"""

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, replace

import numpy as np

from rftpy.enums import PromptMode, Stage, Strategy, TaskType
from rftpy.exceptions import ConfigurationError, InputError
from rftpy.grpo import RewardFn, default_reward_fn, evaluate, grpo_step
from rftpy.models import GrpoConfig, MixedBatch, QAPair, Schedule, StepStats, TrainSettings
from rftpy.optim import AdamState, apply_update, gradient_norm, init_adam_state
from rftpy.policy import Gradient, PolicyParams, snapshot, weighted_logprob_grad
from rftpy.taskgen import answer_symbols, build_prompt, canonical_completion

logger = logging.getLogger(__name__)

# independent random streams derived from (seed, stream, step)
_BATCH_STREAM = 0
_SAMPLE_STREAM = 1
_WARMUP_STREAM = 2
_OPEN_SIDE_STREAM = 3


def step_seed(seed: int, step: int, stream: int = _SAMPLE_STREAM) -> int:
    """Derives the sampling seed of global step `step` from the run seed."""

    state = np.random.SeedSequence([seed, stream, step]).generate_state(1, np.uint64)
    return int(state[0]) >> 1


def mixing_coefficient(n_close: int, n_open: int, same_fraction: bool = False) -> float:
    """Weight of the close-ended gradient in the joint update.

    The default is the open-ended share of the batch, `n_open / (n_close + n_open)`.
    With `same_fraction` it is the close-ended share instead.

    Raises:
        ConfigurationError: if both counts are zero or one is negative.
    """

    if n_close < 0 or n_open < 0 or n_close + n_open < 1:
        raise ConfigurationError(
            "batch", f"sub-batch sizes {n_close} and {n_open} do not form a batch"
        )
    if same_fraction:
        return n_close / (n_close + n_open)
    return n_open / (n_close + n_open)


def mix_gradients(
    g_close: Gradient,
    g_open: Gradient,
    n_close: int,
    n_open: int,
    same_fraction: bool = False,
) -> Gradient:
    """Combines task mean gradients as `alpha * g_close + (1 - alpha) * g_open`.

    When one sub-batch is empty the other task's gradient is returned unchanged.

    Args:
        g_close (Gradient): mean gradient of the close-ended sub-batch.
        g_open (Gradient): mean gradient of the open-ended sub-batch.
        n_close (int): close-ended sub-batch size.
        n_open (int): open-ended sub-batch size.
        same_fraction (bool): weight each gradient by its own share. Defaults to False.

    Returns:
        Gradient

    Raises:
        InputError: if the two gradients differ in names or shapes.
        ConfigurationError: if both counts are zero.
    """

    alpha = mixing_coefficient(n_close, n_open, same_fraction)
    if n_open == 0:
        return {name: arr.copy() for name, arr in g_close.items()}
    if n_close == 0:
        return {name: arr.copy() for name, arr in g_open.items()}

    if set(g_close) != set(g_open):
        raise InputError(f"gradient keys {sorted(g_close)} and {sorted(g_open)} differ")
    for name, arr in g_close.items():
        if arr.shape != g_open[name].shape:
            raise InputError(
                f"gradient {name} has shapes {arr.shape} and {g_open[name].shape}"
            )
    return {name: alpha * g_close[name] + (1 - alpha) * g_open[name] for name in g_close}


@dataclass(frozen=True, eq=False)
class JointGradient:
    """Combined gradient of a mixed batch together with its parts."""

    grad: Gradient
    alpha: float
    close_grad: Gradient | None
    open_grad: Gradient | None
    close_stats: StepStats | None
    open_stats: StepStats | None


def joint_seeds(rng_seed: int) -> tuple[int, int]:
    """Sampling seeds of the close and open sub-batches of a joint step.

    The close side reuses `rng_seed`, so a batch without open items samples
    exactly like a close-ended step.
    """

    return rng_seed, step_seed(rng_seed, 0, _OPEN_SIDE_STREAM)


def joint_gradient(
    live: PolicyParams,
    old: PolicyParams,
    ref: PolicyParams,
    batch: MixedBatch,
    cfg: GrpoConfig,
    reward_fn: RewardFn,
    rng_seed: int,
    same_fraction: bool = False,
) -> JointGradient:
    """Runs a GRPO step per sub-batch and mixes the two mean gradients."""

    close_seed, open_seed = joint_seeds(rng_seed)
    close_grad = open_grad = None
    close_stats = open_stats = None
    if batch.close_items:
        close_grad, close_stats, _ = grpo_step(
            live, old, ref, batch.close_items, reward_fn, cfg, close_seed
        )
    if batch.open_items:
        open_grad, open_stats, _ = grpo_step(
            live, old, ref, batch.open_items, reward_fn, cfg, open_seed
        )

    n_close, n_open = len(batch.close_items), len(batch.open_items)
    alpha = mixing_coefficient(n_close, n_open, same_fraction)
    grad = mix_gradients(
        close_grad if close_grad is not None else open_grad,
        open_grad if open_grad is not None else close_grad,
        n_close,
        n_open,
        same_fraction,
    )
    return JointGradient(
        grad=grad,
        alpha=alpha,
        close_grad=close_grad,
        open_grad=open_grad,
        close_stats=close_stats,
        open_stats=open_stats,
    )


def _joint_stats(parts: JointGradient, n_close: int, n_open: int) -> StepStats:
    present = [
        (s, n, w)
        for s, n, w in (
            (parts.close_stats, n_close, parts.alpha),
            (parts.open_stats, n_open, 1 - parts.alpha),
        )
        if s is not None
    ]
    if len(present) == 1:
        only = present[0][0]
        return replace(only, stage=Stage.JOINT, grad_norm=gradient_norm(parts.grad))

    total = n_close + n_open

    def by_count(attr: str) -> float:
        return sum(getattr(s, attr) * n for s, n, _ in present) / total

    task_rewards: dict[str, float] = {}
    for s, _, _ in present:
        task_rewards.update(s.task_rewards)
    return StepStats(
        step=0,
        stage=Stage.JOINT,
        mean_reward=by_count("mean_reward"),
        mean_total_loss=sum(s.mean_total_loss * w for s, _, w in present),
        mean_kl=by_count("mean_kl"),
        clip_fraction=by_count("clip_fraction"),
        grad_norm=gradient_norm(parts.grad),
        task_rewards=task_rewards,
    )


def joint_step(
    live: PolicyParams,
    old: PolicyParams,
    ref: PolicyParams,
    batch: MixedBatch,
    cfg: GrpoConfig,
    reward_fn: RewardFn,
    opt_state: AdamState,
    lr: float,
    rng_seed: int,
    same_fraction: bool = False,
) -> tuple[PolicyParams, AdamState, StepStats]:
    """One joint update on a mixed batch.

    Args:
        live (PolicyParams): policy being optimized.
        old (PolicyParams): frozen sampling snapshot.
        ref (PolicyParams): frozen KL anchor.
        batch (MixedBatch)
        cfg (GrpoConfig)
        reward_fn (RewardFn)
        opt_state (AdamState)
        lr (float)
        rng_seed (int)
        same_fraction (bool): see :func:`mix_gradients`.

    Returns:
        Updated parameters, optimizer state and the step statistics. The loss
        is the alpha-weighted loss of the two sub-batches; the other means are
        weighted by sub-batch size.
    """

    parts = joint_gradient(live, old, ref, batch, cfg, reward_fn, rng_seed, same_fraction)
    new_live, new_state = apply_update(live, parts.grad, opt_state, lr)
    return new_live, new_state, _joint_stats(parts, len(batch.close_items), len(batch.open_items))


def _random_answer(qa: QAPair, open_pool: Sequence[str], rng: np.random.Generator) -> str:
    if qa.task_type is TaskType.CLOSE and qa.options:
        return qa.options[int(rng.integers(len(qa.options)))][0]
    gold = answer_symbols(qa.answer)
    words = [s for s in gold if s != ","]
    if not words or not open_pool:
        return ""
    drawn = [open_pool[int(rng.integers(len(open_pool)))] for _ in words]
    return (", " if "," in gold else " ").join(drawn)


def format_warmup(
    params: PolicyParams,
    pairs: Sequence[QAPair],
    steps: int,
    lr: float,
    seed: int,
    batch_size: int = 16,
) -> PolicyParams:
    """Teaches the tag format by supervised training on random-answer templates.

    Every target is `<think> </think> <answer> X </answer>` where `X` is a
    random option letter for close-ended pairs and random answer symbols of
    the open-ended data, of the gold length, for open-ended pairs. Targets
    carry no information about the gold answer.

    Returns:
        PolicyParams: the warmed-up policy. `params` is returned unchanged when
        `steps` is 0 or there are no pairs.
    """

    if steps <= 0 or not pairs:
        return params
    vocab = params.vocab
    open_pool = sorted(
        {s for qa in pairs if qa.task_type is TaskType.OPEN for s in answer_symbols(qa.answer)}
        - {","}
    )
    rng = np.random.default_rng([seed, _WARMUP_STREAM])
    state = init_adam_state(params)
    for step in range(steps):
        idx = rng.choice(len(pairs), size=min(batch_size, len(pairs)), replace=False)
        targets = []
        for i in idx:
            qa = pairs[int(i)]
            prompt = build_prompt(qa, PromptMode.SYMBOLIC, vocab)
            completion = canonical_completion(_random_answer(qa, open_pool, rng), vocab)
            targets.append((prompt, completion))
        n_tokens = sum(len(c) for _, c in targets)
        # minimizing the mean negative log-likelihood
        batch = [(p, c, [-1.0 / n_tokens] * len(c)) for p, c in targets]
        params, state = apply_update(params, weighted_logprob_grad(params, batch), state, lr)
        if (step + 1) % 50 == 0:
            logger.debug("format warm-up step %d/%d", step + 1, steps)
    logger.info("format warm-up finished after %d steps", steps)
    return params


def split_batch_sizes(batch_size: int, n_close: int, n_open: int) -> tuple[int, int]:
    """Static joint split of `batch_size` proportional to the dataset sizes.

    Each task with data gets at least one item.
    """

    if n_close == 0:
        return 0, batch_size
    if n_open == 0:
        return batch_size, 0
    k_close = round(batch_size * n_close / (n_close + n_open))
    k_close = max(1, min(batch_size - 1, k_close)) if batch_size > 1 else 1
    return k_close, max(1, batch_size - k_close)


def _sample(
    dataset: Sequence[QAPair], size: int, rng: np.random.Generator
) -> tuple[QAPair, ...]:
    if size == 0:
        return ()
    idx = rng.choice(len(dataset), size=min(size, len(dataset)), replace=False)
    return tuple(dataset[int(i)] for i in idx)


def _stage_plan(schedule: Schedule) -> list[Stage]:
    if schedule.strategy is Strategy.CURRICULUM:
        return [Stage.CLOSE] * schedule.stage1_steps + [Stage.OPEN] * schedule.stage2_steps
    stage = {
        Strategy.CLOSE_ONLY: Stage.CLOSE,
        Strategy.OPEN_ONLY: Stage.OPEN,
        Strategy.JOINT: Stage.JOINT,
    }[schedule.strategy]
    return [stage] * schedule.stage1_steps


def _check_datasets(
    plan: Sequence[Stage], close_ds: Sequence[QAPair], open_ds: Sequence[QAPair]
) -> None:
    stages = set(plan)
    if Stage.CLOSE in stages and not close_ds:
        raise ConfigurationError("close_data", "the close-ended stage has no training pairs")
    if Stage.OPEN in stages and not open_ds:
        raise ConfigurationError("open_data", "the open-ended stage has no training pairs")
    if Stage.JOINT in stages and not close_ds and not open_ds:
        raise ConfigurationError("data", "joint training has no training pairs")


@dataclass(frozen=True, eq=False)
class TrainResult:
    params: PolicyParams
    opt_state: AdamState
    history: tuple[StepStats, ...]


def train(
    params: PolicyParams,
    close_ds: Sequence[QAPair],
    open_ds: Sequence[QAPair],
    schedule: Schedule,
    settings: TrainSettings,
    seed: int,
    eval_ds: Sequence[QAPair] = (),
    reward_fn: RewardFn | None = None,
    on_step: Callable[[StepStats], None] | None = None,
) -> TrainResult:
    """Trains `params` with the strategy of `schedule`.

    The format warm-up runs first on the union of both datasets. Batches and
    sampling seeds depend only on `(seed, global step)`, so the close-ended
    stage of a curriculum run reproduces a close-only run of the same length.

    Args:
        params (PolicyParams): initial policy.
        close_ds: close-ended training pairs.
        open_ds: open-ended training pairs.
        schedule (Schedule)
        settings (TrainSettings)
        seed (int): run seed.
        eval_ds: held-out pairs evaluated every `settings.eval_every` steps.
        reward_fn (RewardFn): defaults to :func:`rftpy.grpo.default_reward_fn`.
        on_step: called with every step's statistics.

    Returns:
        TrainResult: final policy, optimizer state and one record per step.

    Raises:
        ConfigurationError: if a stage that runs has no data, or a curriculum
            stage has no steps.
        TrainingDivergenceError: if an update is not finite.
    """

    if schedule.strategy is Strategy.CURRICULUM and schedule.stage1_steps < 1:
        raise ConfigurationError("stage1_steps", "the curriculum needs a close-ended stage")
    plan = _stage_plan(schedule)
    _check_datasets(plan, close_ds, open_ds)
    reward_fn = reward_fn or default_reward_fn(settings.reward)
    cfg = settings.grpo

    live = format_warmup(
        params,
        list(close_ds) + list(open_ds),
        settings.warmup_steps,
        settings.warmup_lr,
        seed,
        settings.batch_size,
    )
    state = init_adam_state(live)
    ref = snapshot(live)
    k_close, k_open = split_batch_sizes(settings.batch_size, len(close_ds), len(open_ds))

    history = []
    for step, stage in enumerate(plan):
        if schedule.strategy is Strategy.CURRICULUM and step == schedule.stage1_steps:
            logger.info("stage transition to open-ended training at step %d", step)
            if schedule.ref_reset_on_transition:
                ref = snapshot(live)
            if schedule.reset_optimizer_on_transition:
                state = init_adam_state(live)

        rng = np.random.default_rng([seed, _BATCH_STREAM, step])
        sample_seed = step_seed(seed, step)
        old = snapshot(live)
        if stage is Stage.JOINT:
            batch = MixedBatch(
                close_items=_sample(close_ds, k_close, rng),
                open_items=_sample(open_ds, k_open, rng),
            )
            live, state, stats = joint_step(
                live,
                old,
                ref,
                batch,
                cfg,
                reward_fn,
                state,
                settings.lr,
                sample_seed,
                schedule.same_fraction_mixing,
            )
        else:
            dataset = close_ds if stage is Stage.CLOSE else open_ds
            prompts = _sample(dataset, settings.batch_size, rng)
            grad, stats, _ = grpo_step(live, old, ref, prompts, reward_fn, cfg, sample_seed)
            live, state = apply_update(live, grad, state, settings.lr)

        stats = replace(stats, step=step, stage=stage)
        last = step == len(plan) - 1
        if eval_ds and settings.eval_every and ((step + 1) % settings.eval_every == 0 or last):
            stats = replace(stats, evaluation=evaluate(live, eval_ds, cfg, settings.reward))
        history.append(stats)
        if on_step is not None:
            on_step(stats)
        if (step + 1) % settings.log_every == 0 or last:
            logger.info(
                "step %d (%s): reward %.4f, loss %.4f, kl %.5f, clip %.3f",
                step,
                stage.value,
                stats.mean_reward,
                stats.mean_total_loss,
                stats.mean_kl,
                stats.clip_fraction,
            )

    return TrainResult(params=live, opt_state=state, history=tuple(history))


def curriculum_train(
    params: PolicyParams,
    close_ds: Sequence[QAPair],
    open_ds: Sequence[QAPair],
    schedule: Schedule,
    settings: TrainSettings,
    seed: int,
    eval_ds: Sequence[QAPair] = (),
) -> tuple[PolicyParams, list[StepStats]]:
    """Close-ended GRPO for `stage1_steps`, then open-ended GRPO for `stage2_steps`.

    Returns:
        The trained policy and the per-step history tagged with the stage.
    """

    result = train(
        params,
        close_ds,
        open_ds,
        replace(schedule, strategy=Strategy.CURRICULUM),
        settings,
        seed,
        eval_ds,
    )
    return result.params, list(result.history)
