import math

import numpy as np
import pytest

from rftpy.config import RunConfig
from rftpy.enums import PromptMode, Stage, TaskType
from rftpy.exceptions import ConfigurationError, InputError
from rftpy.gradcheck import numeric_gradient, relative_error
from rftpy.grpo import (
    collect_groups,
    compute_advantages,
    default_reward_fn,
    evaluate,
    grpo_step,
    reinforce_weights,
    surrogate_loss,
    token_loss_and_weights,
)
from rftpy.models import EvalReport, GrpoConfig, QAPair, RewardBreakdown, RewardConfig, WorldSpec
from rftpy.policy import PARAM_NAMES, PolicyParams, init_params, snapshot
from rftpy.rewards import ANSWER_CLOSE, ANSWER_OPEN, THINK_CLOSE, THINK_OPEN
from rftpy.taskgen import build_prompt, build_vocab, canonical_completion, generate_dataset
from rftpy.vocab import EOS, Vocab

PROMPTS = [
    QAPair(id="p0", observation=("a",), question="b c", answer="a", task_type=TaskType.OPEN),
    QAPair(id="p1", observation=("c",), question="a", answer="b", task_type=TaskType.OPEN),
]


def _first_token_reward(qa: QAPair, rollout) -> RewardBreakdown:
    value = float(rollout.completion[0] % 3)
    return RewardBreakdown(task_reward=value, format_reward=0.0, total=value)


def _constant_reward(qa: QAPair, rollout) -> RewardBreakdown:
    return RewardBreakdown(task_reward=0.5, format_reward=1.0, total=0.6)


def _perturbed(params: PolicyParams, seed: int, scale: float = 0.1) -> PolicyParams:
    rng = np.random.default_rng(seed)
    return params.with_arrays(
        {name: arr + scale * rng.normal(size=arr.shape) for name, arr in params.arrays().items()}
    )


class OraclePolicy:
    """Emits the canonical completion of whichever prompt it is given."""

    def __init__(self, vocab: Vocab, pairs: list[QAPair]) -> None:
        self.vocab = vocab
        self.completions = {
            tuple(build_prompt(qa, PromptMode.SYMBOLIC, vocab)): canonical_completion(
                qa.answer, vocab
            )
            for qa in pairs
        }

    def next_token_logprobs(self, context) -> np.ndarray:
        context = list(context)
        end = len(context) - 1 - context[::-1].index(self.vocab.prompt_end_id)
        completion = self.completions[tuple(context[: end + 1])]
        logp = np.full(self.vocab.size, -50.0)
        logp[completion[len(context) - end - 1]] = 0.0
        return logp


def test_compute_advantages() -> None:
    assert compute_advantages([1, 0, 0, 1], 1e-8) == pytest.approx([1, -1, -1, 1])
    assert compute_advantages([0.3, 0.3, 0.3], 1e-8) == [0.0, 0.0, 0.0]


def test_advantages_are_standardized_and_shift_invariant() -> None:
    rng = np.random.default_rng(0)
    for _ in range(50):
        rewards = rng.random(int(rng.integers(2, 10)))
        adv = np.array(compute_advantages(rewards.tolist(), 1e-8))
        assert adv.mean() == pytest.approx(0.0, abs=1e-9)
        assert adv.std() == pytest.approx(1.0, abs=1e-6)
        shifted = compute_advantages((rewards + 3.7).tolist(), 1e-8)
        np.testing.assert_allclose(shifted, adv, atol=1e-9)


def test_compute_advantages_needs_a_group() -> None:
    with pytest.raises(ConfigurationError) as exc_info:
        compute_advantages([1.0], 1e-8)
    assert exc_info.value.key == "group_size"


def test_identity_policies_give_unit_loss() -> None:
    """Equal log-probs: ratio 1, zero KL, loss -A per token."""

    lp = [-0.5, -1.2, -2.0]
    losses, weights = token_loss_and_weights(lp, lp, lp, 1.0, GrpoConfig(kl_beta=0.01))

    assert losses == pytest.approx([-1.0, -1.0, -1.0])
    assert weights == pytest.approx([-1.0, -1.0, -1.0])


def test_clipped_branch_has_no_surrogate_weight() -> None:
    new = [math.log(1.5)]
    losses, weights = token_loss_and_weights(new, [0.0], new, 1.0, GrpoConfig(clip_eps=0.2))

    assert losses == pytest.approx([-1.2])
    assert weights == [0.0]


def test_reduces_to_reinforce_without_kl() -> None:
    rng = np.random.default_rng(4)
    lp = (-rng.random(6)).tolist()
    ref = (-rng.random(6)).tolist()

    _, weights = token_loss_and_weights(lp, lp, ref, 0.7, GrpoConfig(kl_beta=0.0))

    assert weights == reinforce_weights(0.7, 6)


def test_kl_estimate_is_non_negative() -> None:
    """With zero advantage the loss is the KL penalty alone."""

    rng = np.random.default_rng(5)
    new = rng.normal(size=200).tolist()
    ref = rng.normal(size=200).tolist()

    losses, _ = token_loss_and_weights(new, new, ref, 0.0, GrpoConfig(kl_beta=1.0))

    assert min(losses) >= 0.0


def test_token_loss_length_mismatch() -> None:
    with pytest.raises(InputError):
        token_loss_and_weights([0.0, 0.0], [0.0], [0.0, 0.0], 1.0, GrpoConfig())


def test_grpo_gradient_matches_finite_differences(tiny_params: PolicyParams) -> None:
    cfg = GrpoConfig(group_size=4, kl_beta=0.1, max_completion_len=3)
    old = snapshot(tiny_params)
    live = _perturbed(tiny_params, seed=1)
    ref = snapshot(_perturbed(tiny_params, seed=2))

    grad, _, groups = grpo_step(live, old, ref, PROMPTS, _first_token_reward, cfg, rng_seed=9)
    assert any(any(g.advantages) for g in groups)

    numeric = numeric_gradient(
        lambda arrays: surrogate_loss(live.with_arrays(arrays), ref, groups, cfg),
        live.arrays(),
    )
    assert relative_error(grad, numeric) < 1e-4


def test_degenerate_step_has_zero_gradient(tiny_params: PolicyParams) -> None:
    frozen = snapshot(tiny_params)
    grad, stats, groups = grpo_step(
        frozen, frozen, frozen, PROMPTS, _constant_reward, GrpoConfig(group_size=3), rng_seed=0
    )

    for name in PARAM_NAMES:
        assert not grad[name].any()
    assert all(a == 0.0 for g in groups for a in g.advantages)
    assert stats.mean_kl == pytest.approx(0.0, abs=1e-12)
    assert stats.clip_fraction == 0.0
    assert stats.grad_norm == 0.0
    assert stats.mean_reward == pytest.approx(0.6)
    assert stats.stage is Stage.OPEN
    assert stats.task_rewards == {"open": pytest.approx(0.6)}


def test_grpo_step_is_deterministic(tiny_params: PolicyParams) -> None:
    cfg = GrpoConfig(group_size=4, max_completion_len=4)
    old = snapshot(tiny_params)
    live = _perturbed(tiny_params, seed=3)

    a_grad, a_stats, a_groups = grpo_step(live, old, old, PROMPTS, _first_token_reward, cfg, 21)
    b_grad, b_stats, b_groups = grpo_step(live, old, old, PROMPTS, _first_token_reward, cfg, 21)

    assert a_stats == b_stats
    assert a_groups == b_groups
    for name in PARAM_NAMES:
        np.testing.assert_array_equal(a_grad[name], b_grad[name])
    assert 0.0 <= a_stats.clip_fraction <= 1.0


def test_collect_groups_samples_group_size_rollouts(tiny_params: PolicyParams) -> None:
    cfg = GrpoConfig(group_size=5, max_completion_len=2)
    groups = collect_groups(tiny_params, PROMPTS, _first_token_reward, cfg, rng_seed=1)

    assert [g.qa.id for g in groups] == ["p0", "p1"]
    for group in groups:
        assert len(group.rollouts) == len(group.rewards) == len(group.advantages) == 5
        assert all(1 <= len(r.completion) <= 2 for r in group.rollouts)


def test_grpo_step_needs_prompts(tiny_params: PolicyParams) -> None:
    with pytest.raises(ConfigurationError):
        grpo_step(tiny_params, tiny_params, tiny_params, [], _constant_reward, GrpoConfig(), 0)


def test_reward_failure_aborts_step(tiny_params: PolicyParams) -> None:
    def failing(qa: QAPair, rollout) -> RewardBreakdown:
        raise InputError("scorer failed")

    with pytest.raises(InputError, match="scorer failed"):
        grpo_step(tiny_params, tiny_params, tiny_params, PROMPTS, failing, GrpoConfig(), 0)


def test_evaluate_empty_dataset(tiny_params: PolicyParams) -> None:
    report = evaluate(tiny_params, [], GrpoConfig(), RewardConfig())

    assert report == EvalReport(
        n_close=0, n_open=0, close_accuracy=None, open_score=None, format_rate=None
    )


def test_evaluate_oracle_policy(small_world: WorldSpec) -> None:
    pairs = generate_dataset(small_world)
    vocab = build_vocab(small_world, pairs)
    oracle = OraclePolicy(vocab, pairs)

    report = evaluate(oracle, pairs, GrpoConfig(max_completion_len=12), RewardConfig())

    assert report.n_close == 60
    assert report.n_open == 60
    assert report.close_accuracy == 1.0
    assert report.open_score == pytest.approx(1.0)
    assert report.format_rate == 1.0


def test_default_reward_fn_scores_gold(small_world: WorldSpec) -> None:
    pairs = generate_dataset(small_world)
    vocab = build_vocab(small_world, pairs)
    params = init_params(vocab, context_window=4, hidden_dim=4, seed=0)
    reward_fn = default_reward_fn(RewardConfig())
    qa = pairs[0]

    groups = collect_groups(params, [qa], reward_fn, GrpoConfig(group_size=2), rng_seed=0)

    for rollout, reward in zip(groups[0].rollouts, groups[0].rewards):
        assert reward == reward_fn(qa, rollout).total
        assert 0.0 <= reward <= 1.0


def test_advantages_over_many_groups() -> None:
    """Every non-degenerate group is standardized; degenerate groups are all zero."""

    rng = np.random.default_rng(11)
    for _ in range(1000):
        size = int(rng.integers(2, 17))
        if rng.random() < 0.5:
            rewards = rng.choice([0.0, 0.2, 1.0], size=size)
        else:
            rewards = rng.random(size)
        adv = np.array(compute_advantages(rewards.tolist(), 1e-8))

        assert adv.shape == (size,)
        if np.ptp(rewards) == 0:
            assert not adv.any()
        else:
            assert adv.mean() == pytest.approx(0.0, abs=1e-9)
            assert adv.std() == pytest.approx(1.0, abs=1e-6)
            order = np.argsort(rewards, kind="stable")
            assert np.all(np.diff(adv[order]) >= -1e-12)


def _random_instance(seed: int) -> tuple[PolicyParams, list[QAPair], GrpoConfig]:
    rng = np.random.default_rng(seed)
    symbols = ["a", "b", "c", "d", "e"][: int(rng.integers(1, 6))]
    params = init_params(
        Vocab.from_symbols(symbols),
        context_window=int(rng.integers(1, 5)),
        hidden_dim=int(rng.integers(2, 17)),
        seed=seed,
        embedding_dim=int(rng.integers(2, 5)),
    )
    prompts = [
        QAPair(
            id=f"p{i}",
            observation=(str(rng.choice(symbols)),),
            question=" ".join(str(s) for s in rng.choice(symbols, size=int(rng.integers(1, 4)))),
            answer=symbols[0],
            task_type=TaskType.OPEN,
        )
        for i in range(int(rng.integers(1, 4)))
    ]
    cfg = GrpoConfig(
        group_size=int(rng.integers(2, 6)),
        kl_beta=float(rng.uniform(0.0, 0.5)),
        clip_eps=float(rng.uniform(0.05, 0.4)),
        max_completion_len=int(rng.integers(1, 5)),
    )
    return params, prompts, cfg


@pytest.mark.parametrize("seed", range(24))
def test_grpo_gradient_matches_finite_differences_on_random_models(seed: int) -> None:
    params, prompts, cfg = _random_instance(seed)
    assert params.vocab.size <= 12
    old = snapshot(params)
    live = _perturbed(params, seed=100 + seed)
    ref = snapshot(_perturbed(params, seed=200 + seed))

    grad, _, groups = grpo_step(live, old, ref, prompts, _first_token_reward, cfg, rng_seed=seed)

    numeric = numeric_gradient(
        lambda arrays: surrogate_loss(live.with_arrays(arrays), ref, groups, cfg),
        live.arrays(),
    )
    assert relative_error(grad, numeric) < 1e-4


class LetterChoicePolicy:
    """Forces the tag skeleton and picks the option letter the wrapped policy prefers."""

    def __init__(self, params: PolicyParams, letters: list[str]) -> None:
        self.params = params
        self.vocab = params.vocab
        self.letter_ids = self.vocab.ids(letters)
        self.skeleton = self.vocab.ids([THINK_OPEN, THINK_CLOSE, ANSWER_OPEN])
        self.tail = self.vocab.ids([ANSWER_CLOSE, EOS])

    def next_token_logprobs(self, context) -> np.ndarray:
        context = list(context)
        end = len(context) - 1 - context[::-1].index(self.vocab.prompt_end_id)
        position = len(context) - end - 1
        if position < len(self.skeleton):
            token = self.skeleton[position]
        elif position == len(self.skeleton):
            logp = self.params.next_token_logprobs(context)
            token = self.letter_ids[int(np.argmax(logp[self.letter_ids]))]
        else:
            token = self.tail[position - len(self.skeleton) - 1]
        logp = np.full(self.vocab.size, -np.inf)
        logp[token] = 0.0
        return logp


def test_untrained_policy_answers_at_chance() -> None:
    """Randomly initialized policies pick the right option about a quarter of the time."""

    config = RunConfig()
    world = WorldSpec(n_close=600, n_open=1, seed=4)
    pairs = [qa for qa in generate_dataset(world) if qa.task_type is TaskType.CLOSE]
    vocab = build_vocab(world, pairs)
    letters = sorted({letter for qa in pairs for letter, _ in qa.options})

    accuracies = []
    for seed in range(10):
        params = init_params(
            vocab, config.context_window, config.hidden_dim, seed, config.embedding_dim
        )
        report = evaluate(
            LetterChoicePolicy(params, letters), pairs, config.grpo, config.reward
        )
        assert report.n_close == 600
        assert report.format_rate == 1.0
        accuracies.append(report.close_accuracy)

    assert letters == ["A", "B", "C", "D"]
    assert abs(np.mean(accuracies) - 0.25) <= 0.1
