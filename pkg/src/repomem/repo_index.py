"""Decompose a Python repository into addressable function and class blocks.

Each block is a key/value pair: the key is a compact, LLM-facing description
(signature with docstring, plus attribute and method lists for classes) and the
value is the complete source of the definition.
"""

from __future__ import annotations

import ast
import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .errors import ParseError

logger = logging.getLogger(__name__)

DEFAULT_INCLUDE_GLOBS = ("**/*.py",)


class BlockKind(str, Enum):
    FUNCTION = "function"
    CLASS = "class"


@dataclass(frozen=True)
class FunctionKey:
    """Signature line(s) of a function, docstring included when present."""

    signature: str


@dataclass(frozen=True)
class ClassKey:
    """Class signature plus sorted attribute and method name lists."""

    signature: str
    attributes: tuple[str, ...]
    methods: tuple[str, ...]


BlockKey = FunctionKey | ClassKey


@dataclass(frozen=True)
class CodeBlock:
    """One top-level function or class, addressed by dotted namespace.

    ``file_path`` is carried for provenance but excluded from equality so that
    re-deriving a block from its own value compares equal to the indexed one.
    """

    namespace: str
    kind: BlockKind
    key: BlockKey
    value: str
    file_path: str = field(default="", compare=False)


@dataclass(frozen=True)
class SkippedFile:
    path: str
    reason: str


@dataclass
class BlockIndex:
    """All blocks of one repository, keyed by namespace."""

    root: str
    blocks: dict[str, CodeBlock] = field(default_factory=dict)
    skipped: list[SkippedFile] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.blocks)


def _is_docstring_stmt(stmt: ast.stmt) -> bool:
    return (
        isinstance(stmt, ast.Expr)
        and isinstance(stmt.value, ast.Constant)
        and isinstance(stmt.value.value, str)
    )


def _leading_comment_start(lines: Sequence[str], def_lineno: int) -> int:
    """1-based line where the run of comment lines directly above a def starts."""
    start = def_lineno
    i = def_lineno - 2
    while i >= 0 and lines[i].strip().startswith("#"):
        start = i + 1
        i -= 1
    return start


def _definition_span(lines: Sequence[str], node: ast.stmt) -> tuple[int, int]:
    """Inclusive 1-based line span of a definition with comments and decorators."""
    first = node.decorator_list[0].lineno if getattr(node, "decorator_list", None) else node.lineno
    return _leading_comment_start(lines, first), node.end_lineno or node.lineno


def _signature_text(lines: Sequence[str], node: ast.FunctionDef | ast.AsyncFunctionDef | ast.ClassDef) -> str:
    """Header of a definition: preceding comments, decorators, def/class line(s),
    and the docstring when present.  Never includes body statements."""
    start = _definition_span(lines, node)[0]
    first_stmt = node.body[0]
    if _is_docstring_stmt(first_stmt):
        segment = list(lines[start - 1 : first_stmt.end_lineno])
    else:
        # Cut at the first body statement; for one-line defs keep the header
        # portion of the shared line.
        segment = list(lines[start - 1 : first_stmt.lineno])
        tail = segment[-1][: first_stmt.col_offset].rstrip()
        segment = segment[:-1] + ([tail] if tail else [])
    return "\n".join(line.rstrip() for line in segment).strip("\n")


def _class_attributes(node: ast.ClassDef) -> tuple[str, ...]:
    """Class-level assignment targets plus ``self.<name>`` assignments in __init__."""
    names: set[str] = set()
    for stmt in node.body:
        if isinstance(stmt, ast.Assign):
            for target in stmt.targets:
                if isinstance(target, ast.Name):
                    names.add(target.id)
        elif isinstance(stmt, ast.AnnAssign) and isinstance(stmt.target, ast.Name):
            names.add(stmt.target.id)
    for stmt in node.body:
        if isinstance(stmt, (ast.FunctionDef, ast.AsyncFunctionDef)) and stmt.name == "__init__":
            for sub in ast.walk(stmt):
                if isinstance(sub, ast.Assign):
                    targets = sub.targets
                elif isinstance(sub, ast.AnnAssign):
                    targets = [sub.target]
                else:
                    continue
                for target in targets:
                    if (
                        isinstance(target, ast.Attribute)
                        and isinstance(target.value, ast.Name)
                        and target.value.id == "self"
                    ):
                        names.add(target.attr)
    return tuple(sorted(names))


def _class_methods(node: ast.ClassDef) -> tuple[str, ...]:
    return tuple(
        sorted({s.name for s in node.body if isinstance(s, (ast.FunctionDef, ast.AsyncFunctionDef))})
    )


def _derive_key(lines: Sequence[str], node: ast.stmt) -> tuple[BlockKind, BlockKey]:
    if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
        return BlockKind.FUNCTION, FunctionKey(signature=_signature_text(lines, node))
    if isinstance(node, ast.ClassDef):
        return BlockKind.CLASS, ClassKey(
            signature=_signature_text(lines, node),
            attributes=_class_attributes(node),
            methods=_class_methods(node),
        )
    raise ParseError(f"not a function or class definition: {type(node).__name__}")


def parse_block(source: str, namespace: str) -> CodeBlock:
    """Build a CodeBlock from the source of a single definition.

    The key is derived from the source itself, so parsing a block's value
    reproduces its key exactly.
    """
    value = source.strip("\n")
    try:
        module = ast.parse(value)
    except SyntaxError as exc:
        raise ParseError(f"cannot parse block source: {exc}") from exc
    definitions = [
        n for n in module.body if isinstance(n, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef))
    ]
    if len(definitions) != 1 or len(module.body) != 1:
        raise ParseError(
            f"expected exactly one top-level definition, found {len(module.body)} statements"
        )
    lines = value.splitlines()
    kind, key = _derive_key(lines, definitions[0])
    return CodeBlock(namespace=namespace, kind=kind, key=key, value=value)


def _module_namespace(rel_path: Path) -> str:
    parts = list(rel_path.with_suffix("").parts)
    if parts and parts[-1] == "__init__":
        parts = parts[:-1]
    return ".".join(parts)


def index_file(path: Path, root: Path) -> list[CodeBlock]:
    """Extract the top-level definitions of one source file."""
    text = path.read_text(encoding="utf-8")
    tree = ast.parse(text)
    lines = text.splitlines()
    rel = path.relative_to(root)
    module_ns = _module_namespace(rel)
    blocks: list[CodeBlock] = []
    for node in tree.body:
        if not isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)):
            continue
        start, end = _definition_span(lines, node)
        segment = "\n".join(lines[start - 1 : end])
        namespace = f"{module_ns}.{node.name}" if module_ns else node.name
        block = parse_block(segment, namespace)
        blocks.append(replace(block, file_path=rel.as_posix()))
    return blocks


def index_repository(root: str | Path, include_globs: Iterable[str] = DEFAULT_INCLUDE_GLOBS) -> BlockIndex:
    """Index every matched source file under ``root``.

    Files that fail to read or parse are skipped and reported on the returned
    index; indexing itself never aborts on a bad file.
    """
    root = Path(root)
    if not root.is_dir():
        raise OSError(f"repository root is not a readable directory: {root}")
    paths = sorted({p for pattern in include_globs for p in root.glob(pattern) if p.is_file()})
    index = BlockIndex(root=str(root))
    for path in paths:
        try:
            blocks = index_file(path, root)
        except (OSError, SyntaxError, ValueError) as exc:
            rel = path.relative_to(root).as_posix()
            index.skipped.append(SkippedFile(path=rel, reason=f"{type(exc).__name__}: {exc}"))
            logger.warning("skipping unparseable file %s: %s", rel, exc)
            continue
        for block in blocks:
            index.blocks[block.namespace] = block
    return index


def render_key(key: BlockKey) -> str:
    """Compact LLM-facing rendering of a block key; never includes the body."""
    if isinstance(key, FunctionKey):
        return key.signature
    return "\n".join(
        [
            key.signature,
            "Attributes: " + ", ".join(key.attributes),
            "Methods: " + ", ".join(key.methods),
        ]
    )


def key_to_dict(key: BlockKey) -> dict:
    if isinstance(key, FunctionKey):
        return {"function_signature": key.signature}
    return {
        "class_signature": key.signature,
        "class_attributes": list(key.attributes),
        "class_methods": list(key.methods),
    }


def manifest_lines(index: BlockIndex) -> Iterator[str]:
    """One JSON record per block: namespace, file_path, kind, key."""
    for namespace in sorted(index.blocks):
        block = index.blocks[namespace]
        record = {
            "namespace": block.namespace,
            "file_path": block.file_path,
            "kind": block.kind.value,
            "key": key_to_dict(block.key),
        }
        yield json.dumps(record, ensure_ascii=False, sort_keys=True)
