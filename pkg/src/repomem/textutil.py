"""Identifier-aware tokenization and token-count estimation."""

from __future__ import annotations

import re

_WORD_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*|[0-9]+")
_CAMEL_RE = re.compile(r"(?<=[a-z0-9])(?=[A-Z])|(?<=[A-Z])(?=[A-Z][a-z])")
_ESTIMATE_RE = re.compile(r"\w+|[^\w\s]")


def split_identifiers(text: str) -> list[str]:
    """Tokenize on identifier boundaries: snake_case and camelCase split, lowercased."""
    tokens: list[str] = []
    for word in _WORD_RE.findall(text):
        if word.isdigit():
            tokens.append(word)
            continue
        for piece in word.split("_"):
            if not piece:
                continue
            for part in _CAMEL_RE.split(piece):
                if part:
                    tokens.append(part.lower())
    return tokens


def estimate_tokens(text: str) -> int:
    """Deterministic token estimate: one token per word or punctuation mark."""
    return len(_ESTIMATE_RE.findall(text))
