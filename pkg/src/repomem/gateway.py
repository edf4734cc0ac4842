"""Uniform completion and embedding handles, prompt templates, decision parsing.

Live backends speak an OpenAI-style HTTP API.  Scripted and hashed-bag mock
implementations make every pipeline path runnable and deterministic offline;
the scripted gateway additionally records the prompts it was shown, which the
test suite uses to assert template wiring.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import httpx

from .errors import DecisionParseError, GatewayError, MissingSlot, ScriptExhausted
from .textutil import estimate_tokens, split_identifiers

logger = logging.getLogger(__name__)

EMPTY_SLOT_MARKER = "(empty)"

DEFAULT_EMBEDDING_MODEL = "text-embedding-3-small"


class TemplateId(str, Enum):
    JUDGE = "judge"
    GENERATE = "generate"
    NOTE = "note"


class UpdateMode(str, Enum):
    ADD = "ADD"
    KEEP = "KEEP"


@dataclass(frozen=True)
class UpdateDecision:
    """Judge verdict on whether the code context memory needs updating."""

    mode: UpdateMode
    action: str = ""
    target_context: tuple[str, ...] = ()

    def __post_init__(self):
        if self.mode is UpdateMode.KEEP and self.target_context:
            raise ValueError("a KEEP decision carries no target context")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "action": self.action,
            "target_context": list(self.target_context),
        }


_JUDGE_TEMPLATE = """\
You are an expert repository memory manager for repository code generation tasks.

Your goal is to decide whether the current repository code context memory needs \
updating based on the user's programming instructions.

Decision Objective

Decide if you need to modify the repository memory (Existing Repository Context) \
based on how well it already covers the entities mentioned in the user instructions.

Modes (Mutually Exclusive)

- KEEP -- Use this mode when the existing repository context already contains all \
relevant classes/functions to understand or execute the instruction.
- ADD -- Use this mode when Existing Repository Context lacks code context related \
to user instructions.

User Instructions:
{instructions}

Existing Repository Context:
{existing_repository_context}

Output Format (strict JSON)

{
  "mode": "<ADD | KEEP>",
  "action": "<short, specific description of what to update or not update>",
  "target_context": "<list of relevant namespaces or []>"
}
"""

_GENERATE_TEMPLATE = """\
You are an expert repository-level code generator.

Your goal is to generate the correct function implementation by leveraging the \
provided repository context and historical memory blocks.

Repo Context

{repo_context}

Memory Blocks

{memory_blocks}

Current Instruction

{instruction}

Output Requirement

Please output the correct function implementation.
"""

_NOTE_TEMPLATE = """\
You are an expert reviewer of iterative code changes.

Write a modification note of 1-3 sentences describing what the change below did, \
whether it satisfied the instruction, and anything the execution feedback shows \
must be corrected or preserved.

Previous Instruction

{previous_instruction}

Function Code

{code}

AST Diff Nodes

{diff_nodes}

Execution Feedback

{feedback}

Current Instruction

{current_instruction}

Output the modification note only.
"""

_TEMPLATES: dict[TemplateId, tuple[str, tuple[str, ...]]] = {
    TemplateId.JUDGE: (_JUDGE_TEMPLATE, ("instructions", "existing_repository_context")),
    TemplateId.GENERATE: (_GENERATE_TEMPLATE, ("repo_context", "memory_blocks", "instruction")),
    TemplateId.NOTE: (
        _NOTE_TEMPLATE,
        ("previous_instruction", "code", "diff_nodes", "feedback", "current_instruction"),
    ),
}


def render_prompt(template_id: TemplateId, slots: Mapping[str, str]) -> str:
    """Instantiate a template; every required slot must be supplied.

    Empty slot values render as an explicit empty marker so the model sees the
    section rather than a blank.
    """
    template, required = _TEMPLATES[template_id]
    for name in required:
        if name not in slots:
            raise MissingSlot(f"template {template_id.value!r} requires slot {name!r}")
    pattern = re.compile("|".join(re.escape("{" + name + "}") for name in required))

    def fill(match: re.Match) -> str:
        value = str(slots[match.group(0)[1:-1]])
        return value if value.strip() else EMPTY_SLOT_MARKER

    # Single-pass substitution: slot values are never re-scanned for markers.
    return pattern.sub(fill, template)


def parse_decision(completion: str) -> UpdateDecision:
    """Extract the first JSON object from a completion and validate it."""
    decoder = json.JSONDecoder()
    payload = None
    for match in re.finditer(r"\{", completion):
        try:
            candidate, _ = decoder.raw_decode(completion, match.start())
        except json.JSONDecodeError:
            continue
        if isinstance(candidate, dict):
            payload = candidate
            break
    if payload is None:
        raise DecisionParseError("no JSON object found in judge output")

    mode_raw = payload.get("mode")
    if mode_raw not in (UpdateMode.ADD.value, UpdateMode.KEEP.value):
        raise DecisionParseError(f"invalid decision mode: {mode_raw!r}")
    mode = UpdateMode(mode_raw)

    action = payload.get("action", "")
    if not isinstance(action, str):
        raise DecisionParseError("decision action must be a string")

    raw_targets = payload.get("target_context", [])
    if isinstance(raw_targets, str):
        raw_targets = [raw_targets] if raw_targets.strip() else []
    if not isinstance(raw_targets, list):
        raise DecisionParseError("target_context must be a list")
    targets = tuple(str(t) for t in raw_targets if str(t).strip())
    if mode is UpdateMode.KEEP:
        targets = ()
    return UpdateDecision(mode=mode, action=action, target_context=targets)


@dataclass
class TokenCounter:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    calls: int = 0

    def snapshot(self) -> tuple[int, int]:
        return self.prompt_tokens, self.completion_tokens


@dataclass(frozen=True)
class GatewayConfig:
    """Endpoint descriptor for live backends.  Decoding is greedy."""

    base_url: str = ""
    model: str = ""
    api_key_env: str = "REPOMEM_API_KEY"
    embedding_base_url: str = ""
    embedding_model: str = DEFAULT_EMBEDDING_MODEL
    temperature: float = 0.0
    timeout: float = 60.0

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


class CompletionGateway:
    """Base completion handle: counts tokens around the backend call."""

    def __init__(self):
        self.counters = TokenCounter()

    def complete(self, prompt: str) -> str:
        if not prompt:
            raise ValueError("prompt must be nonempty")
        text = self._complete(prompt)
        self.counters.prompt_tokens += estimate_tokens(prompt)
        self.counters.completion_tokens += estimate_tokens(text)
        self.counters.calls += 1
        return text

    def _complete(self, prompt: str) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class ScriptEntry:
    response: str
    expect_substring: str | None = None


class ScriptedGateway(CompletionGateway):
    """Deterministic mock: replays queued responses and records every prompt."""

    def __init__(self, script: Sequence[ScriptEntry | str | Mapping]):
        super().__init__()
        self.script = [self._coerce(entry) for entry in script]
        self.recorded_prompts: list[str] = []
        self._cursor = 0

    @staticmethod
    def _coerce(entry) -> ScriptEntry:
        if isinstance(entry, ScriptEntry):
            return entry
        if isinstance(entry, str):
            return ScriptEntry(response=entry)
        return ScriptEntry(response=entry["response"], expect_substring=entry.get("expect_substring"))

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedGateway":
        entries = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(entries, list):
            raise GatewayError(f"mock script {path} must be a JSON list")
        return cls(entries)

    def _complete(self, prompt: str) -> str:
        self.recorded_prompts.append(prompt)
        if self._cursor >= len(self.script):
            raise ScriptExhausted(f"scripted gateway exhausted after {len(self.script)} responses")
        entry = self.script[self._cursor]
        if entry.expect_substring and entry.expect_substring not in prompt:
            raise GatewayError(
                f"script entry {self._cursor} expected {entry.expect_substring!r} in prompt"
            )
        self._cursor += 1
        return entry.response


class HttpCompletionGateway(CompletionGateway):
    """OpenAI-style chat completion client with greedy decoding."""

    def __init__(self, config: GatewayConfig, transport: httpx.BaseTransport | None = None):
        super().__init__()
        self.config = config
        self._client = httpx.Client(
            base_url=config.base_url, timeout=config.timeout, transport=transport
        )

    def _headers(self) -> dict[str, str]:
        key = os.environ.get(self.config.api_key_env, "")
        return {"Authorization": f"Bearer {key}"} if key else {}

    def _complete(self, prompt: str) -> str:
        payload = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        }
        try:
            response = self._client.post("/chat/completions", json=payload, headers=self._headers())
            response.raise_for_status()
            body = response.json()
            return body["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise GatewayError(f"completion backend failure: {exc}") from exc


def _sparse_cosine(a: Mapping, b: Mapping) -> float:
    if not a or not b:
        return 0.0
    dot = sum(value * b.get(key, 0.0) for key, value in a.items())
    norm_a = math.sqrt(sum(v * v for v in a.values()))
    norm_b = math.sqrt(sum(v * v for v in b.values()))
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    return dot / (norm_a * norm_b)


def _dense_cosine(a: Sequence[float], b: Sequence[float]) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    norm_a = math.sqrt(sum(x * x for x in a))
    norm_b = math.sqrt(sum(y * y for y in b))
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    return dot / (norm_a * norm_b)


class EmbeddingGateway:
    def embed(self, text: str):
        raise NotImplementedError

    @staticmethod
    def similarity(a, b) -> float:
        """Cosine similarity over sparse mappings or dense vectors."""
        if isinstance(a, Mapping) and isinstance(b, Mapping):
            return _sparse_cosine(a, b)
        return _dense_cosine(a, b)


class HashedBagEmbedding(EmbeddingGateway):
    """Sparse bag of hashed identifier tokens.

    Equal texts score 1.0 and token-disjoint texts score exactly 0.0; scores in
    between are plain cosine over token counts.  Token keys are hashed with an
    unsalted digest so vectors are stable across processes.
    """

    def embed(self, text: str) -> dict[str, float]:
        counts = Counter(split_identifiers(text))
        return {
            hashlib.blake2b(token.encode("utf-8"), digest_size=16).hexdigest(): float(n)
            for token, n in counts.items()
        }


class PairScoreEmbedding(EmbeddingGateway):
    """Scripted similarity mock: looks up a fixed score per unordered text pair.

    Embeddings are the texts themselves; unknown pairs fall back to ``default``
    and a text always scores 1.0 against itself.
    """

    def __init__(self, scores: Mapping[frozenset, float] | None = None, default: float = 0.0):
        self.scores = {frozenset(k): v for k, v in (scores or {}).items()}
        self.default = default

    def embed(self, text: str) -> str:
        return text

    def similarity(self, a, b) -> float:
        if a == b:
            return 1.0
        return self.scores.get(frozenset((a, b)), self.default)


class HttpEmbeddingGateway(EmbeddingGateway):
    """OpenAI-style embeddings client."""

    def __init__(self, config: GatewayConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        base = config.embedding_base_url or config.base_url
        self._client = httpx.Client(base_url=base, timeout=config.timeout, transport=transport)

    def _headers(self) -> dict[str, str]:
        key = os.environ.get(self.config.api_key_env, "")
        return {"Authorization": f"Bearer {key}"} if key else {}

    def embed(self, text: str) -> list[float]:
        payload = {"model": self.config.embedding_model, "input": text}
        try:
            response = self._client.post("/embeddings", json=payload, headers=self._headers())
            response.raise_for_status()
            return list(response.json()["data"][0]["embedding"])
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise GatewayError(f"embedding backend failure: {exc}") from exc


def extract_code(completion: str) -> str:
    """Strip a markdown code fence when the completion is wrapped in one."""
    text = completion.strip()
    fence = re.match(r"^```[a-zA-Z0-9_-]*\n(.*?)\n?```\s*$", text, re.DOTALL)
    if fence:
        return fence.group(1).strip("\n")
    return text
