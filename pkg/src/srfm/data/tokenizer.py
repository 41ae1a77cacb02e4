"""Stateless hashing tokenizer shared by the query and item towers."""

from __future__ import annotations

import hashlib
import re
from functools import lru_cache

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

RESERVED_ROWS = 2


def words(text):
    """Lowercased word pieces; whitespace, punctuation and underscores split."""
    if not text:
        return []
    return _TOKEN_RE.findall(str(text).lower())


def normalize(text):
    return " ".join(words(text))


def _token_hash(token):
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@lru_cache(maxsize=1 << 16)
def _tokenize_cached(text, vocab_size):
    span = vocab_size - RESERVED_ROWS
    return tuple(RESERVED_ROWS + _token_hash(w) % span for w in words(text))


def tokenize(text, vocab_size):
    """Token ids in ``[2, vocab_size)``; rows 0 and 1 stay reserved."""
    if vocab_size <= RESERVED_ROWS:
        raise ValueError("vocab_size must exceed the reserved rows")
    if text is None:
        return []
    return list(_tokenize_cached(str(text), int(vocab_size)))
