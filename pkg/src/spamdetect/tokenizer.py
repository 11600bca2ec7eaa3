"""Uncased WordPiece tokenization into fixed-length id/mask sequences.

The vocabulary file format is one token per line (LF, UTF-8); a token's id is
its zero-based line index. Words missing from the vocabulary decompose into
greedy longest-prefix subword pieces, continuation pieces prefixed with "##";
words with no decomposition map to [UNK].
"""

from __future__ import annotations

import hashlib
import unicodedata
from dataclasses import dataclass
from pathlib import Path

CLS_TOKEN = "[CLS]"
SEP_TOKEN = "[SEP]"
PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"

_SPECIALS = (CLS_TOKEN, SEP_TOKEN, PAD_TOKEN, UNK_TOKEN)
_MAX_WORD_CHARS = 100


class VocabError(Exception):
    """The vocabulary file is malformed."""


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]
    index: dict[str, int]
    cls_id: int
    sep_id: int
    pad_id: int
    unk_id: int

    def __len__(self) -> int:
        return len(self.tokens)

    def digest(self) -> bytes:
        """SHA-256 of the canonical one-token-per-line serialization."""
        payload = ("\n".join(self.tokens) + "\n").encode("utf-8")
        return hashlib.sha256(payload).digest()

    @classmethod
    def from_tokens(cls, tokens) -> "Vocab":
        tokens = tuple(tokens)
        index: dict[str, int] = {}
        for i, tok in enumerate(tokens):
            if tok in index:
                raise VocabError(f"duplicate token {tok!r} at lines {index[tok]} and {i}")
            index[tok] = i
        missing = [t for t in _SPECIALS if t not in index]
        if missing:
            raise VocabError(f"vocabulary is missing special tokens: {missing}")
        return cls(
            tokens=tokens,
            index=index,
            cls_id=index[CLS_TOKEN],
            sep_id=index[SEP_TOKEN],
            pad_id=index[PAD_TOKEN],
            unk_id=index[UNK_TOKEN],
        )


def load_vocab(path) -> Vocab:
    path = Path(path)
    if not path.is_file():
        raise VocabError(f"no such vocabulary file: {path}")
    return Vocab.from_tokens(path.read_text(encoding="utf-8").splitlines())


def save_vocab(vocab: Vocab, path) -> None:
    Path(path).write_text("\n".join(vocab.tokens) + "\n", encoding="utf-8", newline="\n")


@dataclass(frozen=True)
class TokenizedSample:
    ids: tuple[int, ...]
    mask: tuple[int, ...]
    label: int


def _is_punctuation(ch: str) -> bool:
    cp = ord(ch)
    if 33 <= cp <= 47 or 58 <= cp <= 64 or 91 <= cp <= 96 or 123 <= cp <= 126:
        return True
    return unicodedata.category(ch).startswith("P")


def _clean_chars(text: str) -> str:
    out = []
    for ch in text:
        cp = ord(ch)
        if cp == 0 or cp == 0xFFFD:
            continue
        if ch in ("\t", "\n", "\r"):
            out.append(" ")
            continue
        cat = unicodedata.category(ch)
        if cat.startswith("C"):
            continue
        out.append(" " if cat == "Zs" else ch)
    return "".join(out)


def basic_tokenize(text: str, strip_accents: bool = True) -> list[str]:
    """Lowercase, strip control characters, split whitespace and punctuation."""
    text = _clean_chars(text).lower()
    if strip_accents:
        text = "".join(
            ch for ch in unicodedata.normalize("NFD", text)
            if unicodedata.category(ch) != "Mn"
        )
    out: list[str] = []
    for word in text.split():
        buf: list[str] = []
        for ch in word:
            if _is_punctuation(ch):
                if buf:
                    out.append("".join(buf))
                    buf = []
                out.append(ch)
            else:
                buf.append(ch)
        if buf:
            out.append("".join(buf))
    return out


def wordpiece(word: str, vocab: Vocab) -> list[str]:
    """Greedy longest-prefix-match decomposition of one whitespace-free word."""
    if len(word) > _MAX_WORD_CHARS:
        return [UNK_TOKEN]
    pieces: list[str] = []
    start = 0
    while start < len(word):
        end = len(word)
        match = None
        while start < end:
            piece = word[start:end]
            if start > 0:
                piece = "##" + piece
            if piece in vocab.index:
                match = piece
                break
            end -= 1
        if match is None:
            return [UNK_TOKEN]
        pieces.append(match)
        start = end
    return pieces


def encode(
    text: str,
    vocab: Vocab,
    seq_len: int,
    label: int = 0,
    strip_accents: bool = True,
) -> TokenizedSample:
    """Tokenize to exactly seq_len ids: [CLS] content... [SEP] [PAD]...

    Content is head-truncated to seq_len - 2 pieces; mask[i] = 1 iff ids[i]
    is not padding.
    """
    if seq_len < 3:
        raise ValueError(f"seq_len must be >= 3 (CLS + SEP + content), got {seq_len}")
    pieces: list[str] = []
    for word in basic_tokenize(text, strip_accents=strip_accents):
        pieces.extend(wordpiece(word, vocab))
    pieces = pieces[: seq_len - 2]

    ids = [vocab.cls_id] + [vocab.index[p] for p in pieces] + [vocab.sep_id]
    used = len(ids)
    ids.extend([vocab.pad_id] * (seq_len - used))
    mask = [1] * used + [0] * (seq_len - used)
    return TokenizedSample(ids=tuple(ids), mask=tuple(mask), label=label)
