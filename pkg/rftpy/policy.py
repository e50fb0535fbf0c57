"""Tiny fixed-window feed-forward language model with analytic gradients.

The policy reads the last `context_window` tokens of `prompt ++ completion[:t]`
(left padded), concatenates their embeddings, applies one tanh hidden layer
and a softmax over the vocabulary.
"""

from collections.abc import Sequence
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from rftpy.exceptions import ConfigurationError, InputError
from rftpy.models import Rollout
from rftpy.vocab import Vocab

PARAM_NAMES = ("embedding", "w_hidden", "b_hidden", "w_out", "b_out")

Gradient = dict[str, np.ndarray]
TokenIds = Sequence[int]


class Policy(Protocol):
    """Autoregressive policy contract used by sampling and evaluation."""

    vocab: Vocab

    def next_token_logprobs(self, context: TokenIds) -> np.ndarray:
        """Returns log-probabilities over the vocabulary of the token after `context`."""
        ...


@dataclass(frozen=True, eq=False)
class PolicyParams:
    """Trainable parameters of the tiny policy.

    Args:
        vocab: symbol table.
        context_window: number of trailing tokens the model reads.
        embedding: `(vocab_size, embedding_dim)` token embeddings.
        w_hidden: `(context_window * embedding_dim, hidden_dim)` hidden weights.
        b_hidden: `(hidden_dim,)` hidden bias.
        w_out: `(hidden_dim, vocab_size)` output projection.
        b_out: `(vocab_size,)` output bias.
    """

    vocab: Vocab
    context_window: int
    embedding: np.ndarray
    w_hidden: np.ndarray
    b_hidden: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray

    @property
    def embedding_dim(self) -> int:
        return int(self.embedding.shape[1])

    @property
    def hidden_dim(self) -> int:
        return int(self.w_hidden.shape[1])

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def with_arrays(self, arrays: dict[str, np.ndarray]) -> "PolicyParams":
        for name in PARAM_NAMES:
            if arrays[name].shape != getattr(self, name).shape:
                raise InputError(
                    f"{name} has shape {arrays[name].shape}, "
                    f"expected {getattr(self, name).shape}"
                )
        return PolicyParams(
            vocab=self.vocab,
            context_window=self.context_window,
            **{name: arrays[name] for name in PARAM_NAMES},
        )

    def next_token_logprobs(self, context: TokenIds) -> np.ndarray:
        window = _contexts(self, list(context), [0])
        return _forward(self, window)[2][0]


def init_params(
    vocab: Vocab,
    context_window: int,
    hidden_dim: int,
    seed: int,
    embedding_dim: int = 8,
) -> PolicyParams:
    """Initializes policy parameters.

    Weights are drawn from a zero-mean normal with std `1 / sqrt(fan_in)`,
    biases are zero.

    Args:
        vocab (Vocab)
        context_window (int): number of trailing tokens the model reads.
        hidden_dim (int): hidden layer width.
        seed (int): random seed.
        embedding_dim (int): embedding width. Defaults to 8.

    Raises:
        ConfigurationError: if a dimension is less than 1.
    """

    for key, value in (
        ("context_window", context_window),
        ("hidden_dim", hidden_dim),
        ("embedding_dim", embedding_dim),
    ):
        if value < 1:
            raise ConfigurationError(key, f"must be at least 1, got {value}")

    rng = np.random.default_rng(seed)
    v, d, k, h = vocab.size, embedding_dim, context_window, hidden_dim
    return PolicyParams(
        vocab=vocab,
        context_window=k,
        embedding=rng.normal(0.0, 1.0 / np.sqrt(v), size=(v, d)),
        w_hidden=rng.normal(0.0, 1.0 / np.sqrt(k * d), size=(k * d, h)),
        b_hidden=np.zeros(h),
        w_out=rng.normal(0.0, 1.0 / np.sqrt(h), size=(h, v)),
        b_out=np.zeros(v),
    )


def _contexts(params: PolicyParams, tokens: list[int], positions: list[int]) -> np.ndarray:
    """Windows ending right before each `tokens[p]`, `p` counted from the end of `tokens`.

    `positions` are offsets relative to `len(tokens)`: 0 means the window after
    the last token.
    """

    k = params.context_window
    padded = np.array([params.vocab.pad_id] * k + tokens, dtype=np.int64)
    windows = np.lib.stride_tricks.sliding_window_view(padded, k)
    return windows[[len(tokens) + p for p in positions]]


def _completion_contexts(
    params: PolicyParams, prompt: TokenIds, completion: TokenIds
) -> np.ndarray:
    tokens = list(prompt) + list(completion)
    n = len(completion)
    return _contexts(params, tokens, [t - n for t in range(n)])


def _forward(
    params: PolicyParams, contexts: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = contexts.shape[0]
    emb = params.embedding[contexts].reshape(n, -1)
    hidden = np.tanh(emb @ params.w_hidden + params.b_hidden)
    logits = hidden @ params.w_out + params.b_out
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return emb, hidden, logp


def logprobs(params: PolicyParams, prompt: TokenIds, completion: TokenIds) -> list[float]:
    """Returns log-probability of every completion token given its context.

    Args:
        params (PolicyParams)
        prompt: prompt token ids.
        completion: completion token ids.

    Returns:
        list[float]: one entry per completion token.

    Raises:
        InputError: if a token id is out of range.
    """

    params.vocab.check_ids(prompt)
    params.vocab.check_ids(completion)
    if not completion:
        return []
    _, _, logp = _forward(params, _completion_contexts(params, prompt, completion))
    return logp[np.arange(len(completion)), list(completion)].tolist()


def weighted_logprob_grad(
    params: PolicyParams,
    batch: Sequence[tuple[TokenIds, TokenIds, Sequence[float]]],
) -> Gradient:
    """Returns the gradient of `sum_batch sum_t w_t * log p(o_t | ctx)`.

    Args:
        params (PolicyParams)
        batch: `(prompt, completion, weights)` triples with one weight per
            completion token.

    Returns:
        Gradient: arrays shaped like the parameters, keyed by parameter name.

    Raises:
        InputError: if weights and completion lengths differ, a weight is not
            finite or a token id is out of range.
    """

    contexts, targets, weights = [], [], []
    for prompt, completion, w in batch:
        if len(w) != len(completion):
            raise InputError(
                f"{len(w)} weights given for a completion of {len(completion)} tokens"
            )
        if not completion:
            continue
        params.vocab.check_ids(prompt)
        params.vocab.check_ids(completion)
        contexts.append(_completion_contexts(params, prompt, completion))
        targets.extend(completion)
        weights.extend(w)

    grad = zeros_like(params)
    if not targets:
        return grad
    w_arr = np.asarray(weights, dtype=np.float64)
    if not np.all(np.isfinite(w_arr)):
        raise InputError("weights must be finite")

    ctx = np.concatenate(contexts)
    n = ctx.shape[0]
    emb, hidden, logp = _forward(params, ctx)

    # d/dlogits of w * log softmax(logits)[y] = w * (onehot(y) - p)
    delta = -np.exp(logp) * w_arr[:, None]
    delta[np.arange(n), targets] += w_arr

    grad["w_out"] = hidden.T @ delta
    grad["b_out"] = delta.sum(axis=0)
    d_pre = (delta @ params.w_out.T) * (1.0 - hidden**2)
    grad["w_hidden"] = emb.T @ d_pre
    grad["b_hidden"] = d_pre.sum(axis=0)
    d_emb = (d_pre @ params.w_hidden.T).reshape(n, params.context_window, -1)
    np.add.at(grad["embedding"], ctx, d_emb)
    return grad


def zeros_like(params: PolicyParams) -> Gradient:
    return {name: np.zeros_like(arr) for name, arr in params.arrays().items()}


def _decode(
    policy: Policy,
    prompt: TokenIds,
    max_len: int,
    rng: np.random.Generator | None,
    temperature: float,
) -> Rollout:
    vocab = policy.vocab
    completion: list[int] = []
    recorded: list[float] = []
    context = list(prompt)
    for _ in range(max_len):
        logp = np.asarray(policy.next_token_logprobs(context), dtype=np.float64)
        if rng is None:
            token = int(np.argmax(logp))
        else:
            scaled = logp / temperature
            probs = np.exp(scaled - scaled.max())
            probs /= probs.sum()
            token = int(rng.choice(len(probs), p=probs))
        completion.append(token)
        recorded.append(float(logp[token]))
        context.append(token)
        if token == vocab.eos_id:
            break

    text_ids = completion[:-1] if completion and completion[-1] == vocab.eos_id else completion
    return Rollout(
        prompt=tuple(prompt),
        completion=tuple(completion),
        logprobs_sampling=tuple(recorded),
        raw_text=vocab.decode(text_ids),
    )


def sample_completion(
    policy: Policy,
    prompt: TokenIds,
    temperature: float,
    max_len: int,
    rng_seed: int,
) -> Rollout:
    """Samples one completion token by token until the end token or `max_len`.

    Sampling uses the temperature-scaled distribution; the recorded
    log-probabilities are those of the policy itself (temperature 1).

    Args:
        policy (Policy): policy to sample from.
        prompt: prompt token ids.
        temperature (float): sampling temperature, positive.
        max_len (int): max completion tokens, at least 1.
        rng_seed (int): seed of the sampling generator.

    Raises:
        ConfigurationError: if `temperature` or `max_len` is out of range.
    """

    if temperature <= 0:
        raise ConfigurationError("temperature", "must be positive")
    if max_len < 1:
        raise ConfigurationError("max_completion_len", "must be at least 1")
    return _decode(policy, prompt, max_len, np.random.default_rng(rng_seed), temperature)


def greedy_completion(policy: Policy, prompt: TokenIds, max_len: int) -> Rollout:
    """Decodes by taking the most likely token at every position."""

    if max_len < 1:
        raise ConfigurationError("max_completion_len", "must be at least 1")
    return _decode(policy, prompt, max_len, None, 1.0)


def snapshot(params: PolicyParams) -> PolicyParams:
    """Returns a deep copy of `params` with read-only arrays."""

    arrays = {}
    for name, arr in params.arrays().items():
        copy = np.array(arr, dtype=np.float64, copy=True)
        copy.setflags(write=False)
        arrays[name] = copy
    return params.with_arrays(arrays)


def params_equal(a: PolicyParams, b: PolicyParams) -> bool:
    """True if both parameter sets are bit-identical and share the vocabulary."""

    return (
        a.vocab == b.vocab
        and a.context_window == b.context_window
        and all(np.array_equal(a.arrays()[n], b.arrays()[n]) for n in PARAM_NAMES)
    )
