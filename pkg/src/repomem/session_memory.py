"""Code-centric session memory: per-round blocks, AST diffs, and forgetting detection.

Every interaction round for a target function is recorded as a block holding
the instruction, the full generated code, the AST-level diff against the
previous round, and an LLM-written note.  Blocks for one function form an
ordered sequence; a reverting edit is caught by intersecting the new round's
diff with the recorded diffs of blocks whose instructions are dissimilar.
"""

from __future__ import annotations

import ast
import logging
import re
from dataclasses import dataclass, field
from typing import Mapping

from .errors import EmptySequence, ParseError, TargetMismatch, require_field
from . import gateway as gw

logger = logging.getLogger(__name__)

DEFAULT_TAU = 0.95

_WS_RE = re.compile(r"\s+")


@dataclass(frozen=True)
class DiffNode:
    """One canonicalized statement; identity is the canonical text alone."""

    canonical_text: str
    node_type: str = field(compare=False, default="")


@dataclass(frozen=True)
class AstDiff:
    added: frozenset[DiffNode] = frozenset()
    removed: frozenset[DiffNode] = frozenset()

    def __post_init__(self):
        if self.added & self.removed:
            raise ValueError("added and removed diff sets must be disjoint")

    def is_empty(self) -> bool:
        return not self.added and not self.removed


@dataclass
class SessionBlock:
    """One round's record inside a memory sequence."""

    id: int
    instruction: str
    code: str
    diff: AstDiff
    note: str = ""
    links: list[int] = field(default_factory=list)
    embedding: object = field(default=None, repr=False, compare=False)


@dataclass
class MemorySequence:
    """All session blocks for one target function, in modification order."""

    namespace: str
    blocks: list[SessionBlock] = field(default_factory=list)

    @property
    def latest(self) -> SessionBlock:
        if not self.blocks:
            raise EmptySequence(f"sequence {self.namespace!r} has no blocks")
        return self.blocks[-1]


@dataclass(frozen=True)
class ConflictEntry:
    block_id: int
    block: SessionBlock
    nodes: frozenset[DiffNode]


@dataclass
class ConflictReport:
    conflicts: list[ConflictEntry] = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.conflicts)

    def to_dicts(self) -> list[dict]:
        return [
            {
                "block_id": entry.block_id,
                "nodes": [
                    {"type": n.node_type, "block": n.canonical_text}
                    for n in sorted(entry.nodes, key=lambda n: n.canonical_text)
                ],
            }
            for entry in self.conflicts
        ]


def _function_node(source: str) -> ast.FunctionDef | ast.AsyncFunctionDef:
    try:
        tree = ast.parse(source)
    except SyntaxError as exc:
        raise ParseError(f"cannot parse function source: {exc}") from exc
    defs = [n for n in tree.body if isinstance(n, (ast.FunctionDef, ast.AsyncFunctionDef))]
    if len(defs) != 1:
        raise ParseError(f"expected exactly one function definition, found {len(defs)}")
    return defs[0]


def _node_label(stmt: ast.stmt) -> str:
    """Statement kind, with the kinds of a compound's immediate body appended,
    e.g. an ``if`` guarding a ``raise`` labels as ``If+Raise``."""
    parts = [type(stmt).__name__]
    body = getattr(stmt, "body", None)
    if isinstance(body, list):
        parts.extend(type(child).__name__ for child in body if isinstance(child, ast.stmt))
    return "+".join(parts)


def _canonical_text(stmt: ast.stmt) -> str:
    return _WS_RE.sub(" ", ast.unparse(stmt)).strip()


def canonical_statements(code: str) -> frozenset[DiffNode]:
    """Canonical statement set of a function body.

    Each immediate body statement is one node; a compound statement (if, for,
    while, try, with, nested def, ...) is a single node comprising its header
    and entire body.  Canonical text is comment-free and whitespace-normalized,
    so formatting-only edits produce no diff.
    """
    fn = _function_node(code)
    return frozenset(
        DiffNode(canonical_text=_canonical_text(stmt), node_type=_node_label(stmt))
        for stmt in fn.body
    )


def ast_diff(prev_code: str, new_code: str) -> AstDiff:
    """Set difference of canonical statements between two versions of a function."""
    prev = canonical_statements(prev_code)
    new = canonical_statements(new_code)
    return AstDiff(added=new - prev, removed=prev - new)


def record_round(
    store: dict[str, MemorySequence],
    target: str,
    instruction: str,
    code: str,
    strict_name: bool = False,
) -> SessionBlock:
    """Append one round to the target's sequence, creating it on first use.

    The first block of a sequence carries an empty diff; later blocks diff
    against the sequence's latest code.
    """
    fn = _function_node(code)
    expected = target.rsplit(".", 1)[-1]
    if fn.name != expected:
        if strict_name:
            raise TargetMismatch(f"generated function {fn.name!r} does not match target {target!r}")
        logger.warning("function %r recorded under target %r (rename kept in sequence)", fn.name, target)

    sequence = store.get(target)
    if sequence is None:
        sequence = MemorySequence(namespace=target)
        store[target] = sequence

    if not sequence.blocks:
        diff = AstDiff()
    else:
        try:
            diff = ast_diff(sequence.latest.code, code)
        except ParseError:
            logger.warning("previous code for %s does not parse; recording empty diff", target)
            diff = AstDiff()
    block = SessionBlock(id=len(sequence.blocks), instruction=instruction, code=code, diff=diff)
    sequence.blocks.append(block)
    return block


def record_round_raw(
    store: dict[str, MemorySequence], target: str, instruction: str, code: str
) -> SessionBlock:
    """Record a round whose code does not parse: empty diff, code kept verbatim."""
    sequence = store.setdefault(target, MemorySequence(namespace=target))
    block = SessionBlock(id=len(sequence.blocks), instruction=instruction, code=code, diff=AstDiff())
    sequence.blocks.append(block)
    return block


def _block_embedding(block: SessionBlock, embedder) -> object:
    if block.embedding is None:
        block.embedding = embedder.embed(block.instruction)
    return block.embedding


def link_block(
    block: SessionBlock, sequence: MemorySequence, embedder, tau: float = DEFAULT_TAU
) -> list[int]:
    """Link a block to earlier blocks of its sequence whose instruction
    similarity reaches ``tau``; stores and returns the link id list."""
    if not any(existing is block for existing in sequence.blocks):
        raise ValueError("block does not belong to the given sequence")
    current = _block_embedding(block, embedder)
    links = [
        prior.id
        for prior in sequence.blocks[: block.id]
        if embedder.similarity(current, _block_embedding(prior, embedder)) >= tau
    ]
    block.links = links
    return links


def working_set(sequence: MemorySequence) -> list[SessionBlock]:
    """Latest block first, then its linked neighbours in id order."""
    latest = sequence.latest
    by_id = {b.id: b for b in sequence.blocks}
    return [latest] + [by_id[i] for i in sorted(latest.links) if i in by_id]


def format_diff_nodes(diff: AstDiff) -> str:
    """Readable one-statement-per-line rendering of a diff for prompts."""
    lines = []
    for label, nodes in (("added", diff.added), ("removed", diff.removed)):
        for node in sorted(nodes, key=lambda n: n.canonical_text):
            lines.append(f"{label}: [{node.node_type}] {node.canonical_text}")
    return "\n".join(lines)


def refresh_note(block: SessionBlock, current_instruction: str, feedback: str | None, gateway) -> str:
    """Regenerate the latest block's modification note via the gateway.

    On gateway failure the previous note is left untouched and the error
    propagates.
    """
    prompt = gw.render_prompt(
        gw.TemplateId.NOTE,
        {
            "previous_instruction": block.instruction,
            "code": block.code,
            "diff_nodes": format_diff_nodes(block.diff),
            "feedback": feedback or "",
            "current_instruction": current_instruction,
        },
    )
    completion = gateway.complete(prompt)
    block.note = completion.strip()
    return block.note


def _candidates(instruction: str, sequence: MemorySequence, embedder, tau: float) -> list[SessionBlock]:
    current = embedder.embed(instruction)
    return [
        block
        for block in sequence.blocks
        if embedder.similarity(current, _block_embedding(block, embedder)) < tau
    ]


def candidate_blocks(
    current_instruction: str,
    store: Mapping[str, MemorySequence],
    target: str,
    embedder,
    tau: float = DEFAULT_TAU,
) -> list[SessionBlock]:
    """Blocks of the target's sequence eligible for conflict detection:
    those whose instructions are dissimilar (similarity strictly below tau).

    Near-identical instructions are excluded — an edit requested again under
    the same intent is a refinement, not forgetting.
    """
    sequence = store.get(target)
    if sequence is None:
        return []
    return _candidates(current_instruction, sequence, embedder, tau)


def conflicts(diff_t: AstDiff, diff_i: AstDiff) -> frozenset[DiffNode]:
    """Nodes with contradictory add/delete operations between two diffs."""
    return (diff_t.removed & diff_i.added) | (diff_t.added & diff_i.removed)


def detect(
    current_instruction: str,
    new_code: str,
    sequence: MemorySequence | None,
    embedder,
    tau: float = DEFAULT_TAU,
) -> ConflictReport:
    """Flag session blocks whose recorded changes the new code contradicts."""
    report = ConflictReport()
    if sequence is None or not sequence.blocks:
        return report
    new_canon = canonical_statements(new_code)  # ParseError if the new code is invalid
    try:
        prev_canon = canonical_statements(sequence.latest.code)
    except ParseError:
        logger.warning("latest code for %s does not parse; skipping detection", sequence.namespace)
        return report
    delta = AstDiff(added=new_canon - prev_canon, removed=prev_canon - new_canon)
    if delta.is_empty():
        return report
    for block in _candidates(current_instruction, sequence, embedder, tau):
        nodes = conflicts(delta, block.diff)
        if nodes:
            report.conflicts.append(ConflictEntry(block_id=block.id, block=block, nodes=nodes))
    return report


def parses_as_function(code: str) -> bool:
    try:
        _function_node(code)
    except ParseError:
        return False
    return True


def function_name(code: str) -> str:
    """Name of the single function definition in ``code``."""
    return _function_node(code).name


def sequence_to_record(sequence: MemorySequence) -> list[dict]:
    """Serialize a sequence as a list of block records.

    Field names (id / instruction / code / note / diff_nodes / state_links)
    are the store's wire format and must stay stable.
    """

    def node_dicts(nodes: frozenset[DiffNode]) -> list[dict]:
        ordered = sorted(nodes, key=lambda n: (n.node_type, n.canonical_text))
        return [{"type": n.node_type, "block": n.canonical_text} for n in ordered]

    return [
        {
            "id": block.id,
            "instruction": block.instruction,
            "code": block.code,
            "note": block.note,
            "diff_nodes": {
                "added": node_dicts(block.diff.added),
                "removed": node_dicts(block.diff.removed),
            },
            "state_links": list(block.links),
        }
        for block in sequence.blocks
    ]


def sequence_from_record(namespace: str, records: list[dict]) -> MemorySequence:
    sequence = MemorySequence(namespace=namespace)
    for i, record in enumerate(records):
        path = f"{namespace}[{i}]"
        diff_nodes = require_field(record, "diff_nodes", path)
        added = frozenset(
            DiffNode(canonical_text=require_field(n, "block", f"{path}.diff_nodes.added"),
                     node_type=n.get("type", ""))
            for n in require_field(diff_nodes, "added", f"{path}.diff_nodes")
        )
        removed = frozenset(
            DiffNode(canonical_text=require_field(n, "block", f"{path}.diff_nodes.removed"),
                     node_type=n.get("type", ""))
            for n in require_field(diff_nodes, "removed", f"{path}.diff_nodes")
        )
        block = SessionBlock(
            id=require_field(record, "id", path),
            instruction=require_field(record, "instruction", path),
            code=require_field(record, "code", path),
            diff=AstDiff(added=added, removed=removed),
            note=require_field(record, "note", path),
            links=list(require_field(record, "state_links", path)),
        )
        sequence.blocks.append(block)
    return sequence
