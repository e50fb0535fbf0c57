import math
import re
from collections import Counter
from collections.abc import Callable

from nltk.translate.bleu_score import sentence_bleu
from rouge_score import rouge_scorer, tokenizers

from rftpy.exceptions import ConfigurationError

SemanticScorer = Callable[[str, str], float]

_WORD_RE = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    """Splits `text` into lowercase word tokens.

    Whitespace and punctuation both separate tokens; punctuation is dropped.

    Args:
        text (str)

    Returns:
        list[str]
    """

    return _WORD_RE.findall(text.lower())


class WordTokenizer(tokenizers.Tokenizer):
    """ROUGE tokenizer that splits exactly like :func:`tokenize`."""

    def tokenize(self, text: str) -> list[str]:
        return tokenize(text)


_ROUGE = rouge_scorer.RougeScorer(["rouge1"], tokenizer=WordTokenizer())


def bleu1(candidate: str, reference: str) -> float:
    """Returns clipped unigram precision of `candidate` times the brevity penalty.

    Sentence BLEU with unigram weights only, on :func:`tokenize` tokens.

    Args:
        candidate (str): generated answer.
        reference (str): gold answer.

    Returns:
        float: score in [0, 1]. 0 if `candidate` has no tokens.
    """

    cand = tokenize(candidate)
    if not cand:
        return 0.0
    return float(sentence_bleu([tokenize(reference)], cand, weights=(1.0,)))


def rouge1(candidate: str, reference: str) -> float:
    """Returns unigram F1 between `candidate` and `reference`.

    Args:
        candidate (str): generated answer.
        reference (str): gold answer.

    Returns:
        float: score in [0, 1]. 0 if either side has no tokens.
    """

    return float(_ROUGE.score(reference, candidate)["rouge1"].fmeasure)


def _char_trigrams(text: str) -> Counter[str]:
    text = text.lower()
    if not text:
        return Counter()
    if len(text) < 3:
        return Counter([text])
    return Counter(text[i : i + 3] for i in range(len(text) - 2))


def trigram_cosine(candidate: str, reference: str) -> float:
    """Cosine similarity of character trigram count vectors of the lowercased strings."""

    if candidate and candidate.lower() == reference.lower():
        return 1.0
    a = _char_trigrams(candidate)
    b = _char_trigrams(reference)
    if not a or not b:
        return 0.0
    dot = sum(n * b[g] for g, n in a.items())
    norm = math.sqrt(sum(n * n for n in a.values())) * math.sqrt(
        sum(n * n for n in b.values())
    )
    return min(1.0, dot / norm)


def token_jaccard(candidate: str, reference: str) -> float:
    """Jaccard similarity of token sets."""

    a = set(tokenize(candidate))
    b = set(tokenize(reference))
    if not a or not b:
        return 0.0
    return len(a & b) / len(a | b)


_SEMANTIC_BACKENDS: dict[str, SemanticScorer] = {
    "trigram": trigram_cosine,
    "token-jaccard": token_jaccard,
}


def register_semantic_backend(name: str, scorer: SemanticScorer) -> None:
    """Registers a semantic scorer under `name`.

    Meant to be called once at startup, before any scoring happens.

    Raises:
        ConfigurationError: if `name` is already registered.
    """

    if name in _SEMANTIC_BACKENDS:
        raise ConfigurationError("semantic_backend", f"{name!r} is already registered")
    _SEMANTIC_BACKENDS[name] = scorer


def available_semantic_backends() -> list[str]:
    return sorted(_SEMANTIC_BACKENDS)


def get_semantic_backend(name: str) -> SemanticScorer:
    """Returns the scorer registered under `name`.

    Raises:
        ConfigurationError: if `name` is not registered.
    """

    try:
        return _SEMANTIC_BACKENDS[name]
    except KeyError:
        raise ConfigurationError(
            "semantic_backend",
            f"unknown backend {name!r}, expected one of {available_semantic_backends()}",
        ) from None


def semantic_score(candidate: str, reference: str, backend: str = "trigram") -> float:
    """Returns semantic similarity of `candidate` and `reference` in [0, 1].

    Args:
        candidate (str): generated answer.
        reference (str): gold answer.
        backend (str): registered scorer name. Defaults to "trigram".

    Raises:
        ConfigurationError: if `backend` is not registered.
    """

    score = get_semantic_backend(backend)(candidate, reference)
    return min(1.0, max(0.0, float(score)))
