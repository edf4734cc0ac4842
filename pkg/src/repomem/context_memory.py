"""Code context memory: update decisions, BM25 retrieval, merge, and pruning.

The memory holds repository blocks keyed by namespace.  An LLM judge decides
per round whether new context is needed; retrieval ranks block keys with BM25;
after generation the selector keeps only blocks whose APIs intersect the
generated code's call targets.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from . import gateway as gw
from .api_analysis import api_match, api_profile, call_targets
from .errors import DecisionParseError, ParseError
from .gateway import UpdateDecision, UpdateMode
from .repo_index import BlockIndex, CodeBlock, render_key
from .textutil import split_identifiers

logger = logging.getLogger(__name__)

DEFAULT_TOP_K = 5
DEFAULT_BM25_K1 = 1.2
DEFAULT_BM25_B = 0.75


@dataclass
class ContextMemory:
    """Retained repository blocks plus the round each one entered memory."""

    blocks: dict[str, CodeBlock] = field(default_factory=dict)
    round_added: dict[str, int] = field(default_factory=dict)

    @classmethod
    def empty(cls) -> "ContextMemory":
        return cls()

    def rendered_keys(self) -> list[str]:
        return [
            f"namespace: {ns}\n{render_key(self.blocks[ns].key)}" for ns in sorted(self.blocks)
        ]

    def namespaces(self) -> list[str]:
        return sorted(self.blocks)


def decide_update(
    instruction_history: Sequence[str],
    memory_keys: Sequence[str],
    gateway,
) -> UpdateDecision:
    """Ask the judge whether memory needs updating for the given instructions.

    An empty memory short-circuits to ADD without a gateway call: there is
    nothing to keep, and round one always needs context.  Malformed judge
    output is re-prompted once with an error note; a second failure falls back
    to ADD targeted at the current instruction, the recoverable direction.
    """
    if not instruction_history:
        raise ValueError("instruction history must be nonempty")
    if not memory_keys:
        return UpdateDecision(mode=UpdateMode.ADD, action="memory empty; retrieve initial context")

    instructions = "\n".join(f"{i + 1}. {text}" for i, text in enumerate(instruction_history))
    prompt = gw.render_prompt(
        gw.TemplateId.JUDGE,
        {
            "instructions": instructions,
            "existing_repository_context": "\n\n".join(memory_keys),
        },
    )
    completion = gateway.complete(prompt)
    try:
        return gw.parse_decision(completion)
    except DecisionParseError as exc:
        retry_prompt = (
            f"{prompt}\n\nYour previous reply could not be parsed ({exc}). "
            "Reply with the strict JSON object only."
        )
        try:
            return gw.parse_decision(gateway.complete(retry_prompt))
        except DecisionParseError:
            logger.warning("judge output unparseable twice; falling back to ADD")
            return UpdateDecision(
                mode=UpdateMode.ADD,
                action="fallback: judge output unparseable",
                target_context=(instruction_history[-1],),
            )


class _Bm25:
    """BM25 over identifier-tokenized documents (k1=1.2, b=0.75 defaults)."""

    def __init__(self, documents: Sequence[str], k1: float = DEFAULT_BM25_K1, b: float = DEFAULT_BM25_B):
        self.k1 = k1
        self.b = b
        self.term_freqs = [Counter(split_identifiers(doc)) for doc in documents]
        self.doc_lens = [sum(tf.values()) for tf in self.term_freqs]
        self.n_docs = len(documents)
        self.avgdl = (sum(self.doc_lens) / self.n_docs) if self.n_docs else 0.0
        df: Counter = Counter()
        for tf in self.term_freqs:
            df.update(tf.keys())
        self.idf = {
            term: math.log(1.0 + (self.n_docs - n + 0.5) / (n + 0.5)) for term, n in df.items()
        }

    def scores(self, query: str) -> list[float]:
        terms = split_identifiers(query)
        out = []
        for tf, dl in zip(self.term_freqs, self.doc_lens):
            denom_norm = self.k1 * (1.0 - self.b + self.b * dl / self.avgdl) if self.avgdl else 0.0
            score = 0.0
            for term in terms:
                freq = tf.get(term, 0)
                if not freq:
                    continue
                score += self.idf[term] * freq * (self.k1 + 1.0) / (freq + denom_norm)
            out.append(score)
        return out


def retrieve_merged(
    queries: Sequence[str],
    index: BlockIndex,
    k: int = DEFAULT_TOP_K,
    k1: float = DEFAULT_BM25_K1,
    b: float = DEFAULT_BM25_B,
) -> list[CodeBlock]:
    """Run each query through BM25 over rendered keys and score-merge the
    results before truncating to the top k.  Ties break on namespace order."""
    if k < 1:
        raise ValueError("k must be at least 1")
    namespaces = sorted(index.blocks)
    if not namespaces or not queries:
        return []
    ranker = _Bm25([render_key(index.blocks[ns].key) for ns in namespaces], k1=k1, b=b)
    totals = [0.0] * len(namespaces)
    for query in queries:
        for i, score in enumerate(ranker.scores(query)):
            totals[i] += score
    ranked = sorted(zip(namespaces, totals), key=lambda pair: (-pair[1], pair[0]))
    return [index.blocks[ns] for ns, _ in ranked[:k]]


def retrieve_relevant(query: str, index: BlockIndex, k: int = DEFAULT_TOP_K, **kwargs) -> list[CodeBlock]:
    """Top-k blocks for a single query."""
    return retrieve_merged([query], index, k=k, **kwargs)


def merge(memory: ContextMemory, new_blocks: Iterable[CodeBlock], round_index: int) -> ContextMemory:
    """Set-union on namespace; existing entries keep their original round."""
    blocks = dict(memory.blocks)
    rounds = dict(memory.round_added)
    for block in new_blocks:
        if block.namespace not in blocks:
            blocks[block.namespace] = block
            rounds[block.namespace] = round_index
    return ContextMemory(blocks=blocks, round_added=rounds)


def select(memory: ContextMemory, generated_code: str) -> ContextMemory:
    """Keep only blocks whose APIs intersect the generated code's call targets.

    Unparseable generated code disables pruning for the round: the predicate
    is undefined without an AST, and dropping everything on a syntax error
    would be destructive.
    """
    try:
        external = call_targets(generated_code)
    except ParseError:
        logger.warning("generated code does not parse; context pruning skipped this round")
        return memory
    retained = {
        ns: block
        for ns, block in memory.blocks.items()
        if api_match(api_profile(block).all_names(), external)
    }
    return ContextMemory(
        blocks=retained,
        round_added={ns: memory.round_added[ns] for ns in retained},
    )
