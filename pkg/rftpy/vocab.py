import re
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

from rftpy.exceptions import InputError, VocabularyError
from rftpy.rewards import ANSWER_CLOSE, ANSWER_OPEN, THINK_CLOSE, THINK_OPEN

PAD = "<pad>"
EOS = "<eos>"
PROMPT_END = "<sep>"
RESERVED = (PAD, EOS, PROMPT_END, THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE)
GLUE_LEFT = frozenset({","})

_SYMBOL_RE = re.compile(r"[^\s,]+|,")


def split_symbols(text: str) -> list[str]:
    return _SYMBOL_RE.findall(text)


@dataclass(frozen=True)
class Vocab:
    """Ordered symbol table of the policy.

    Reserved symbols come first and render as their literal strings, so the
    tags of a detokenized completion are exactly `<think>`, `</think>`,
    `<answer>` and `</answer>`.

    Args:
        tokens: every symbol, reserved ones included, each exactly once.
    """

    tokens: tuple[str, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(set(self.tokens)) != len(self.tokens):
            raise InputError("vocabulary symbols must be unique")
        for symbol in RESERVED:
            if symbol not in self.tokens:
                raise InputError(f"reserved symbol {symbol!r} is missing")
        for symbol in self.tokens:
            if _SYMBOL_RE.fullmatch(symbol) is None:
                raise InputError(f"symbol {symbol!r} is empty or contains a separator")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.tokens)})

    @classmethod
    def from_symbols(cls, symbols: Iterable[str]) -> "Vocab":
        """Builds a vocabulary of the reserved symbols followed by `symbols` sorted."""

        extra = sorted(set(symbols) - set(RESERVED))
        return cls(tokens=RESERVED + tuple(extra))

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return self._index[PAD]

    @property
    def eos_id(self) -> int:
        return self._index[EOS]

    @property
    def prompt_end_id(self) -> int:
        return self._index[PROMPT_END]

    def __contains__(self, symbol: object) -> bool:
        return symbol in self._index

    def id(self, symbol: str) -> int:
        """Returns the id of `symbol`.

        Raises:
            VocabularyError: if `symbol` is unknown.
        """

        try:
            return self._index[symbol]
        except KeyError:
            raise VocabularyError(symbol) from None

    def ids(self, symbols: Iterable[str]) -> list[int]:
        return [self.id(s) for s in symbols]

    def encode(self, text: str) -> list[int]:
        """Maps the symbols of `text` to ids.

        Symbols are separated by whitespace; a comma is always a symbol of its own.
        """

        return self.ids(split_symbols(text))

    def decode(self, ids: Sequence[int]) -> str:
        """Joins the symbols of `ids` with single spaces, commas attach to the left.

        Raises:
            InputError: if an id is out of range.
        """

        self.check_ids(ids)
        text = ""
        for i in ids:
            symbol = self.tokens[i]
            if text and symbol not in GLUE_LEFT:
                text += " "
            text += symbol
        return text

    def check_ids(self, ids: Iterable[int]) -> None:
        for i in ids:
            if not 0 <= i < len(self.tokens):
                raise InputError(f"token id {i} is out of range [0, {len(self.tokens)})")
