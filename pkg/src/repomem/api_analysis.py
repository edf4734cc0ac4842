"""Extract called (external) and defined (internal) API names from code.

These name sets drive the context-memory selector: a repository block stays in
memory only while its APIs intersect the generated code's call targets.
Matching is deliberately loose — full dotted paths or bare terminals — because
no whole-program resolution is attempted; over-matching only retains extra
blocks, which the selector can live with.
"""

from __future__ import annotations

import ast
import builtins
from dataclasses import dataclass
from typing import Iterable, Iterator

from .errors import ParseError
from .repo_index import BlockKind, CodeBlock

# Language builtins (len, print, open, ValueError, ...) are not behavioural
# dependencies between repository blocks; counting them would make every block
# intersect every other.
BUILTIN_DENYLIST = frozenset(name for name in dir(builtins) if not name.startswith("__"))

# Declaration-only positions: decorators and annotations are not call sites.
_SKIP_FIELDS: dict[type, frozenset[str]] = {
    ast.FunctionDef: frozenset({"decorator_list", "returns"}),
    ast.AsyncFunctionDef: frozenset({"decorator_list", "returns"}),
    ast.ClassDef: frozenset({"decorator_list"}),
    ast.AnnAssign: frozenset({"annotation"}),
    ast.arg: frozenset({"annotation"}),
}


@dataclass(frozen=True)
class ApiName:
    """A dotted call path as written, e.g. ``self._calc_msgsize_maxsize``."""

    full_path: str

    def __post_init__(self):
        if not self.full_path:
            raise ValueError("ApiName requires a nonempty path")

    @property
    def terminal(self) -> str:
        return self.full_path.rsplit(".", 1)[-1]


@dataclass(frozen=True)
class ApiProfile:
    """External = names this code calls; internal = names it defines."""

    external: frozenset[ApiName]
    internal: frozenset[ApiName]

    def all_names(self) -> frozenset[ApiName]:
        return self.external | self.internal


def _callee_path(expr: ast.expr) -> str:
    """Dotted path of a call's callee; falls back to the terminal attribute
    when the base is not a plain name chain (e.g. ``foo().bar`` -> ``bar``)."""
    if isinstance(expr, ast.Name):
        return expr.id
    if isinstance(expr, ast.Attribute):
        base = _callee_path(expr.value)
        return f"{base}.{expr.attr}" if base else expr.attr
    return ""


def _walk_behavioral(node: ast.AST) -> Iterator[ast.AST]:
    stack: list[ast.AST] = [node]
    while stack:
        current = stack.pop()
        yield current
        skipped = _SKIP_FIELDS.get(type(current), frozenset())
        for name, value in ast.iter_fields(current):
            if name in skipped:
                continue
            if isinstance(value, ast.AST):
                stack.append(value)
            elif isinstance(value, list):
                stack.extend(v for v in value if isinstance(v, ast.AST))


def call_targets(source: str) -> frozenset[ApiName]:
    """All callee names in ``source``, deduplicated, builtins excluded."""
    try:
        tree = ast.parse(source)
    except SyntaxError as exc:
        raise ParseError(f"cannot parse source for call extraction: {exc}") from exc
    names: set[ApiName] = set()
    for node in _walk_behavioral(tree):
        if not isinstance(node, ast.Call):
            continue
        path = _callee_path(node.func)
        if not path:
            continue
        if "." not in path and path in BUILTIN_DENYLIST:
            continue
        names.add(ApiName(path))
    return frozenset(names)


def defined_names(block: CodeBlock) -> frozenset[ApiName]:
    """Names a block offers to callers: the function name, or the class name
    plus each method qualified ``Class.method``."""
    tree = ast.parse(block.value)
    definition = next(
        n for n in tree.body if isinstance(n, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef))
    )
    if block.kind is BlockKind.FUNCTION:
        return frozenset({ApiName(definition.name)})
    names = {ApiName(definition.name)}
    for stmt in definition.body:
        if isinstance(stmt, (ast.FunctionDef, ast.AsyncFunctionDef)):
            names.add(ApiName(f"{definition.name}.{stmt.name}"))
    return frozenset(names)


def api_profile(block: CodeBlock) -> ApiProfile:
    return ApiProfile(external=call_targets(block.value), internal=defined_names(block))


def api_match(a: Iterable[ApiName], b: Iterable[ApiName]) -> bool:
    """True when some pair matches by full path or by terminal segment.

    Full-path equality implies terminal equality, so one terminal-set
    intersection covers both branches of the rule.
    """
    terminals_a = {name.terminal for name in a}
    return any(name.terminal in terminals_a for name in b)
