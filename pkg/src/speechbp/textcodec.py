"""Feature-to-text serialization and a closed-vocabulary tokenizer.

Feature vectors become "name value" word pairs; names tokenize as single
symbols and numbers split into per-character digit tokens, so the whole
vocabulary stays a few dozen entries and needs no external files.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .features import FeatureVector

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
PAD_ID, UNK_ID, CLS_ID, SEP_ID = 0, 1, 2, 3
SPECIALS = (PAD, UNK, CLS, SEP)
CHAR_TOKENS = tuple("0123456789") + (".", "-")
UNK_MARKER = "<unk>"

DEFAULT_MAX_LEN = 512
DEFAULT_DECIMALS = 2


class NonFiniteValue(ValueError):
    pass


class UnknownId(ValueError):
    pass


class InvalidSequence(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    token_to_id: dict
    id_to_token: tuple

    def __len__(self) -> int:
        return len(self.id_to_token)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def token_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.id_to_token):
            raise UnknownId(f"id {token_id} outside vocabulary")
        return self.id_to_token[token_id]

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id


def build_vocabulary(feature_names: Sequence[str]) -> Vocabulary:
    """Specials, then feature names in schema order, then digit characters."""
    tokens = list(SPECIALS)
    seen = set(tokens)
    for token in tuple(feature_names) + CHAR_TOKENS:
        if token not in seen:
            tokens.append(token)
            seen.add(token)
    return Vocabulary(token_to_id={t: i for i, t in enumerate(tokens)},
                      id_to_token=tuple(tokens))


def save_vocabulary(path, vocab: Vocabulary) -> None:
    Path(path).write_text(
        json.dumps(vocab.token_to_id, indent=2, sort_keys=True) + "\n")


def load_vocabulary(path) -> Vocabulary:
    mapping = json.loads(Path(path).read_text())
    ids = sorted(mapping.values())
    if ids != list(range(len(mapping))):
        raise ValueError("vocabulary ids must be dense from 0")
    ordered = sorted(mapping, key=mapping.get)
    for token, want in zip(SPECIALS, range(4)):
        if mapping.get(token) != want:
            raise ValueError(f"special token {token} must have id {want}")
    return Vocabulary(token_to_id=dict(mapping), id_to_token=tuple(ordered))


@dataclass(frozen=True)
class TokenSequence:
    input_ids: np.ndarray
    attention_mask: np.ndarray
    true_length: int


def serialize_features(vector: FeatureVector,
                       decimals: int = DEFAULT_DECIMALS) -> str:
    """Space-joined "name value" pairs, fixed-point, no exponent notation."""
    values = np.asarray(vector.values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise NonFiniteValue("feature vector contains NaN or infinity")
    words = []
    negative_zero = "-" + f"{0.0:.{decimals}f}"
    for name, value in zip(vector.names, values):
        text = f"{value:.{decimals}f}"
        if text == negative_zero:
            text = text[1:]
        words.append(f"{name} {text}")
    return " ".join(words)


def _word_ids(word: str, vocab: Vocabulary) -> list:
    if word in vocab:
        return [vocab.id_of(word)]
    if word and all(c in vocab.token_to_id for c in word):
        return [vocab.token_to_id[c] for c in word]
    return [UNK_ID]


def tokenize(text: str, vocab: Vocabulary,
             max_len: int = DEFAULT_MAX_LEN) -> TokenSequence:
    if max_len < 3:
        raise ValueError("max_len must be at least 3")
    content: list = []
    for word in text.split():
        content.extend(_word_ids(word, vocab))
    content = content[:max_len - 2]

    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    ids[0] = CLS_ID
    ids[1:1 + len(content)] = content
    ids[1 + len(content)] = SEP_ID
    true_length = len(content) + 2
    mask = np.zeros(max_len, dtype=np.int64)
    mask[:true_length] = 1
    return TokenSequence(input_ids=ids, attention_mask=mask,
                         true_length=true_length)


def detokenize(seq: TokenSequence, vocab: Vocabulary) -> str:
    """Inverse of tokenize up to truncation and [UNK] loss.

    Runs of character tokens glue back into one word, which is exact for
    serialized feature text where numbers always sit between names.
    """
    words: list = []
    char_run: list = []
    char_set = set(CHAR_TOKENS)

    def flush():
        if char_run:
            words.append("".join(char_run))
            char_run.clear()

    for token_id in seq.input_ids[1:seq.true_length - 1]:
        token = vocab.token_of(int(token_id))
        if token in char_set:
            char_run.append(token)
            continue
        flush()
        words.append(UNK_MARKER if token == UNK else token)
    flush()
    return " ".join(words)


def validate_sequence(seq: TokenSequence,
                      vocab: Vocabulary | None = None) -> None:
    """Raises InvalidSequence unless the sequence is exactly well formed."""
    ids = np.asarray(seq.input_ids)
    mask = np.asarray(seq.attention_mask)
    n = len(ids)
    if len(mask) != n:
        raise InvalidSequence("ids and mask lengths differ")
    if not 2 <= seq.true_length <= n:
        raise InvalidSequence(f"true_length {seq.true_length} out of range")
    want_mask = np.zeros(n, dtype=np.int64)
    want_mask[:seq.true_length] = 1
    if not np.array_equal(mask, want_mask):
        raise InvalidSequence("mask is not a prefix of ones")
    if ids[0] != CLS_ID:
        raise InvalidSequence("sequence must start with [CLS]")
    if ids[seq.true_length - 1] != SEP_ID:
        raise InvalidSequence("content must end with [SEP]")
    if np.any(ids[seq.true_length:] != PAD_ID):
        raise InvalidSequence("positions past true_length must be [PAD]")
    if np.any(ids < 0):
        raise InvalidSequence("negative token id")
    if vocab is not None and np.any(ids >= len(vocab)):
        raise InvalidSequence("token id outside vocabulary")


def write_sequences_csv(path, sequences: Sequence[TokenSequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for seq in sequences:
            writer.writerow(int(i) for i in seq.input_ids)


def read_sequences_csv(path) -> list:
    sequences = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            ids = np.array([int(c) for c in row], dtype=np.int64)
            sep_pos = np.flatnonzero(ids == SEP_ID)
            if len(sep_pos) != 1:
                raise InvalidSequence("stored row must contain one [SEP]")
            true_length = int(sep_pos[0]) + 1
            mask = np.zeros(len(ids), dtype=np.int64)
            mask[:true_length] = 1
            seq = TokenSequence(input_ids=ids, attention_mask=mask,
                                true_length=true_length)
            validate_sequence(seq)
            sequences.append(seq)
    return sequences
