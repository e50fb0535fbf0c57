import numpy as np
import pytest

from rftpy.exceptions import ConfigurationError, InputError
from rftpy.gradcheck import numeric_gradient, relative_error
from rftpy.policy import (
    PARAM_NAMES,
    PolicyParams,
    greedy_completion,
    init_params,
    logprobs,
    params_equal,
    sample_completion,
    snapshot,
    weighted_logprob_grad,
)
from rftpy.vocab import Vocab

PROMPT = [7, 8, 2]
COMPLETION = [9, 10, 7, 3, 8, 1, 9, 10, 9, 7]


def _weighted_objective(params: PolicyParams, batch) -> float:
    return sum(
        float(np.dot(w, logprobs(params, prompt, completion))) for prompt, completion, w in batch
    )


def test_init_params_deterministic(tiny_vocab: Vocab) -> None:
    a = init_params(tiny_vocab, context_window=3, hidden_dim=5, seed=1)
    b = init_params(tiny_vocab, context_window=3, hidden_dim=5, seed=1)
    c = init_params(tiny_vocab, context_window=3, hidden_dim=5, seed=2)

    assert params_equal(a, b)
    assert not params_equal(a, c)
    assert a.embedding.shape == (tiny_vocab.size, 8)
    assert a.w_hidden.shape == (3 * 8, 5)
    assert a.w_out.shape == (5, tiny_vocab.size)
    assert not a.b_hidden.any()


def test_init_params_rejects_empty_layers(tiny_vocab: Vocab) -> None:
    with pytest.raises(ConfigurationError) as exc_info:
        init_params(tiny_vocab, context_window=3, hidden_dim=0, seed=1)
    assert exc_info.value.key == "hidden_dim"


def test_logprobs_empty_completion(tiny_params: PolicyParams) -> None:
    assert logprobs(tiny_params, PROMPT, []) == []


def test_next_token_distribution_is_normalized(tiny_params: PolicyParams) -> None:
    """Every per-position distribution sums to 1 and agrees with `logprobs`."""

    tokens = PROMPT + COMPLETION
    lps = logprobs(tiny_params, PROMPT, COMPLETION)
    for t, token in enumerate(COMPLETION):
        dist = tiny_params.next_token_logprobs(tokens[: len(PROMPT) + t])
        assert np.exp(dist).sum() == pytest.approx(1.0, abs=1e-9)
        assert dist[token] == pytest.approx(lps[t], abs=1e-12)


def test_logprobs_rejects_unknown_ids(tiny_params: PolicyParams) -> None:
    with pytest.raises(InputError):
        logprobs(tiny_params, PROMPT, [tiny_params.vocab.size])


def test_weighted_logprob_grad_matches_finite_differences(tiny_params: PolicyParams) -> None:
    rng = np.random.default_rng(0)
    batch = [
        (PROMPT, COMPLETION, rng.normal(size=len(COMPLETION)).tolist()),
        ([8], [9, 1], [0.5, -1.5]),
    ]

    analytic = weighted_logprob_grad(tiny_params, batch)
    numeric = numeric_gradient(
        lambda arrays: _weighted_objective(tiny_params.with_arrays(arrays), batch),
        tiny_params.arrays(),
    )
    assert relative_error(analytic, numeric) < 1e-4


def test_weighted_logprob_grad_is_linear_in_weights(tiny_params: PolicyParams) -> None:
    rng = np.random.default_rng(1)
    w1 = rng.normal(size=len(COMPLETION))
    w2 = rng.normal(size=len(COMPLETION))

    g1 = weighted_logprob_grad(tiny_params, [(PROMPT, COMPLETION, w1)])
    g2 = weighted_logprob_grad(tiny_params, [(PROMPT, COMPLETION, w2)])
    g12 = weighted_logprob_grad(tiny_params, [(PROMPT, COMPLETION, w1 + w2)])
    zero = weighted_logprob_grad(tiny_params, [(PROMPT, COMPLETION, np.zeros(len(COMPLETION)))])

    for name in PARAM_NAMES:
        np.testing.assert_allclose(g1[name] + g2[name], g12[name], atol=1e-9)
        assert not zero[name].any()


def test_weighted_logprob_grad_validates_weights(tiny_params: PolicyParams) -> None:
    with pytest.raises(InputError):
        weighted_logprob_grad(tiny_params, [(PROMPT, COMPLETION, [1.0])])
    with pytest.raises(InputError):
        weighted_logprob_grad(tiny_params, [(PROMPT, [9], [float("nan")])])


def test_sample_completion_is_deterministic(tiny_params: PolicyParams) -> None:
    a = sample_completion(tiny_params, PROMPT, temperature=1.0, max_len=6, rng_seed=11)
    b = sample_completion(tiny_params, PROMPT, temperature=1.0, max_len=6, rng_seed=11)

    assert a == b
    assert 1 <= len(a.completion) <= 6
    assert list(a.logprobs_sampling) == pytest.approx(logprobs(tiny_params, PROMPT, a.completion))


def test_sample_completion_max_len_one(tiny_params: PolicyParams) -> None:
    rollout = sample_completion(tiny_params, PROMPT, temperature=1.0, max_len=1, rng_seed=3)
    assert len(rollout.completion) == 1


def test_sample_completion_stops_at_end_token(tiny_params: PolicyParams) -> None:
    """The end token terminates sampling and is excluded from the text."""

    eos = tiny_params.vocab.eos_id
    b_out = np.full(tiny_params.vocab.size, -50.0)
    b_out[eos] = 50.0
    biased = tiny_params.with_arrays({**tiny_params.arrays(), "b_out": b_out})

    rollout = sample_completion(biased, PROMPT, temperature=1.0, max_len=5, rng_seed=0)
    assert rollout.completion == (eos,)
    assert rollout.raw_text == ""


def test_sample_completion_validates_arguments(tiny_params: PolicyParams) -> None:
    with pytest.raises(ConfigurationError):
        sample_completion(tiny_params, PROMPT, temperature=0.0, max_len=3, rng_seed=0)
    with pytest.raises(ConfigurationError):
        sample_completion(tiny_params, PROMPT, temperature=1.0, max_len=0, rng_seed=0)


def test_sampling_frequencies_match_softmax(tiny_params: PolicyParams) -> None:
    """Single-token sample frequencies stay within 4 sigma of the forward softmax."""

    n = 4000
    probs = np.exp(tiny_params.next_token_logprobs(PROMPT))
    counts = np.zeros(tiny_params.vocab.size)
    for seed in range(n):
        rollout = sample_completion(tiny_params, PROMPT, temperature=1.0, max_len=1, rng_seed=seed)
        counts[rollout.completion[0]] += 1

    sigma = np.sqrt(n * probs * (1 - probs))
    assert np.all(np.abs(counts - n * probs) <= 4 * sigma + 1)


def test_greedy_completion_takes_argmax(tiny_params: PolicyParams) -> None:
    rollout = greedy_completion(tiny_params, PROMPT, max_len=4)
    context = list(PROMPT)
    for token in rollout.completion:
        assert token == int(np.argmax(tiny_params.next_token_logprobs(context)))
        context.append(token)


def test_snapshot_is_isolated(tiny_params: PolicyParams) -> None:
    frozen = snapshot(tiny_params)
    before = logprobs(frozen, PROMPT, COMPLETION)

    tiny_params.w_out += 1.0

    assert logprobs(frozen, PROMPT, COMPLETION) == before
    assert params_equal(snapshot(frozen), frozen)
    with pytest.raises(ValueError):
        frozen.w_out[0, 0] = 1.0

