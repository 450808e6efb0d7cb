"""Word-level tokenization with target-span alignment.

Tokens are unicode word character runs or single punctuation marks,
case-folded for vocabulary lookup. Character offsets always refer to
the raw (unfolded) text, so span alignment never drifts under folding.
"""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass

from .errors import AlignmentError, ConfigError, DataError

SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[MASK]", "[CLS]", "[SEP]")
PAD_ID, UNK_ID, MASK_ID, CLS_ID, SEP_ID = range(5)

MAX_SEQ_LEN = 50

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")
_WORD_RE = re.compile(r"\w")


def word_tokenize(text: str) -> list[tuple[str, int, int]]:
    """Split into (casefolded token, char start, char end) triples."""
    return [(m.group().casefold(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


class Vocab:
    """Bijective token<->id map; special tokens pinned to the lowest ids."""

    def __init__(self, content_tokens: list[str]):
        self.id_to_token: list[str] = list(SPECIAL_TOKENS) + list(content_tokens)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ConfigError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self.id_to_token[idx]

    def is_special(self, idx: int) -> bool:
        return idx < len(SPECIAL_TOKENS)

    @property
    def content_ids(self) -> range:
        return range(len(SPECIAL_TOKENS), len(self.id_to_token))

    def content_hash(self) -> str:
        h = hashlib.sha256("\n".join(self.id_to_token).encode("utf-8"))
        return h.hexdigest()


def build_vocab(corpus: list[str], max_size: int = 30000, min_freq: int = 1) -> Vocab:
    """Frequency-ranked vocabulary; ties broken lexicographically.

    `max_size` counts the special tokens; specials are never pruned.
    """
    if not corpus:
        raise DataError("empty corpus")
    if max_size < len(SPECIAL_TOKENS):
        raise ConfigError(
            f"max_size={max_size} smaller than the {len(SPECIAL_TOKENS)} special tokens"
        )
    counts: Counter[str] = Counter()
    for sentence in corpus:
        counts.update(tok for tok, _, _ in word_tokenize(sentence))
    ranked = sorted(
        (t for t, c in counts.items() if c >= min_freq),
        key=lambda t: (-counts[t], t),
    )
    return Vocab(ranked[: max_size - len(SPECIAL_TOKENS)])


@dataclass(frozen=True)
class TokenizedInstance:
    """Token ids with an inclusive target token span and text provenance."""

    token_ids: tuple[int, ...]
    span: tuple[int, int]
    text: str
    target_char_span: tuple[int, int]

    def with_ids(self, token_ids: tuple[int, ...]) -> "TokenizedInstance":
        return TokenizedInstance(token_ids, self.span, self.text, self.target_char_span)

    @property
    def target_text(self) -> str:
        return self.text[self.target_char_span[0]: self.target_char_span[1]]


def encode_plain(sentence: str, vocab: Vocab, max_len: int = MAX_SEQ_LEN) -> list[int]:
    """[CLS] tokens [SEP], truncated on the right to max_len total."""
    if not sentence.strip():
        raise DataError("empty sentence")
    ids = [vocab.id(tok) for tok, _, _ in word_tokenize(sentence)]
    return [CLS_ID] + ids[: max_len - 2] + [SEP_ID]


def encode_plain_instance(
    sentence: str, vocab: Vocab, max_len: int = MAX_SEQ_LEN
) -> TokenizedInstance:
    """Whole-sentence instance with a placeholder [CLS] target span."""
    ids = tuple(encode_plain(sentence, vocab, max_len))
    return TokenizedInstance(ids, span=(0, 0), text=sentence, target_char_span=(0, 0))


def encode_with_target(
    sentence: str,
    target_char_span: tuple[int, int],
    vocab: Vocab,
    max_len: int = MAX_SEQ_LEN,
) -> TokenizedInstance:
    """Encode a sentence and align a character span to a token span.

    The char span [start, end) must coincide with token boundaries; the
    aligned token span is returned inclusive and shifted for the [CLS]
    prefix. Right truncation to max_len never cuts through the target.
    """
    if not sentence.strip():
        raise DataError("empty sentence")
    start, end = target_char_span
    if not (0 <= start < end <= len(sentence)):
        raise AlignmentError(f"char span {start}:{end} outside sentence of length {len(sentence)}")
    tokens = word_tokenize(sentence)
    first = next((i for i, (_, s, _) in enumerate(tokens) if s == start), None)
    last = next((i for i, (_, _, e) in enumerate(tokens) if e == end), None)
    if first is None or last is None or last < first:
        raise AlignmentError(
            f"char span {start}:{end} does not align with token boundaries in {sentence!r}"
        )
    if last > max_len - 3:
        raise DataError(
            f"target span ends at token {last}, beyond the truncation window of {max_len - 2} tokens"
        )
    kept = tokens[: max_len - 2]
    ids = [CLS_ID] + [vocab.id(tok) for tok, _, _ in kept] + [SEP_ID]
    return TokenizedInstance(
        token_ids=tuple(ids),
        span=(first + 1, last + 1),
        text=sentence,
        target_char_span=(start, end),
    )


# -- corpus files --------------------------------------------------------------

def read_corpus(path) -> list[str]:
    """One sentence per line, UTF-8; blank lines dropped."""
    try:
        with open(path, encoding="utf-8") as f:
            return [line.rstrip("\n") for line in f if line.strip()]
    except OSError as e:
        raise DataError(f"cannot read corpus file {path}: {e}") from e


def write_corpus(path, sentences: list[str]) -> None:
    for s in sentences:
        if "\n" in s:
            raise DataError("corpus sentences must not contain newlines")
    with open(path, "w", encoding="utf-8") as f:
        for s in sentences:
            f.write(s + "\n")


def read_targeted_tsv(path) -> list[tuple[str, tuple[int, int]]]:
    """Rows of `sentence<TAB>start:end` with character offsets."""
    rows = []
    try:
        with open(path, encoding="utf-8") as f:
            for ln, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise DataError(f"{path}:{ln}: expected 2 tab-separated fields")
                rows.append((parts[0], parse_char_span(parts[1], where=f"{path}:{ln}")))
    except OSError as e:
        raise DataError(f"cannot read targeted corpus {path}: {e}") from e
    return rows


def write_targeted_tsv(path, rows: list[tuple[str, tuple[int, int]]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for sentence, (s, e) in rows:
            if "\t" in sentence or "\n" in sentence:
                raise DataError("sentences must not contain tabs or newlines")
            f.write(f"{sentence}\t{s}:{e}\n")


def parse_char_span(field: str, where: str = "") -> tuple[int, int]:
    try:
        s, e = field.split(":")
        return int(s), int(e)
    except ValueError as exc:
        prefix = f"{where}: " if where else ""
        raise DataError(f"{prefix}malformed char span {field!r}, expected start:end") from exc
