"""Per-round pipeline and whole-session loop.

One round runs, in order: the context-memory update decision, retrieval and
merge on ADD, note refresh and working-set construction, code generation,
conflict detection with a bounded regeneration, post-round selector pruning,
and finally session recording and linking.  A gateway failure rolls the whole
round back so memory never desynchronizes from the sequence history.
"""

from __future__ import annotations

import ast
import copy
import json
import logging
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import context_memory as cm
from . import gateway as gw
from . import session_memory as sm
from .config import EngineConfig, build_completion_gateway, build_embedding_gateway
from .errors import GatewayError, ParseError, RunnerError
from .evaluation import Task
from .repo_index import BlockIndex, index_repository
from .runner import TestOutcome, failure_summary

logger = logging.getLogger(__name__)

UNRESOLVED_TARGET = "__unresolved__"


@dataclass
class SessionState:
    """Everything one session owns: index, both memories, history, config."""

    index: BlockIndex
    config: EngineConfig
    gateway: gw.CompletionGateway
    embedder: gw.EmbeddingGateway
    memory: cm.ContextMemory = field(default_factory=cm.ContextMemory)
    sessions: dict[str, sm.MemorySequence] = field(default_factory=dict)
    round: int = 0
    instructions: list[str] = field(default_factory=list)
    last_feedback: str | None = None
    target: str | None = None
    last_target: str | None = None


@dataclass
class RoundRecord:
    round: int
    instruction: str
    decision: gw.UpdateDecision
    retrieved: list[str]
    generated_code: str
    conflicts: list[dict]
    final_code: str
    retained: list[str]
    prompt_tokens: int
    completion_tokens: int
    wall_time: float
    tests: dict | None = None
    truncated_context: bool = False
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "instruction": self.instruction,
            "decision": self.decision.to_dict(),
            "retrieved": list(self.retrieved),
            "generated_code": self.generated_code,
            "conflicts": self.conflicts,
            "final_code": self.final_code,
            "retained": list(self.retained),
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "wall_time": self.wall_time,
            "tests": self.tests,
            "truncated_context": self.truncated_context,
            "notes": list(self.notes),
        }


@dataclass
class Transcript:
    task_id: str
    namespace: str
    rounds: list[RoundRecord] = field(default_factory=list)
    gold_context: list[str] = field(default_factory=list)
    solved_at: int | None = None

    @property
    def totals(self) -> dict:
        return {
            "prompt_tokens": sum(r.prompt_tokens for r in self.rounds),
            "completion_tokens": sum(r.completion_tokens for r in self.rounds),
            "wall_time": sum(r.wall_time for r in self.rounds),
        }

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "namespace": self.namespace,
            "gold_context": list(self.gold_context),
            "solved_at": self.solved_at,
            "rounds": [r.to_dict() for r in self.rounds],
            "totals": self.totals,
        }


def new_session(
    repo_root: str | Path,
    config: EngineConfig | None = None,
    gateway: gw.CompletionGateway | None = None,
    embedder: gw.EmbeddingGateway | None = None,
    target: str | None = None,
) -> SessionState:
    """Index the repository once and return a fresh session."""
    config = config or EngineConfig()
    return SessionState(
        index=index_repository(repo_root, config.include_globs),
        config=config,
        gateway=gateway or build_completion_gateway(config),
        embedder=embedder or build_embedding_gateway(config),
        target=target,
    )


def _repo_context_text(memory: cm.ContextMemory, char_budget: int) -> tuple[str, bool]:
    """Full block values under a character budget; reports truncation."""
    parts = []
    used = 0
    truncated = False
    for ns in memory.namespaces():
        section = f"# {ns}\n{memory.blocks[ns].value}"
        if char_budget and used + len(section) > char_budget:
            truncated = True
            logger.warning("context budget reached; omitting %s and later blocks", ns)
            break
        parts.append(section)
        used += len(section)
    return "\n\n".join(parts), truncated


def _memory_blocks_text(blocks: list[sm.SessionBlock]) -> str:
    """Working-set blocks serialized as JSON objects for the generation prompt."""
    rendered = []
    for block in blocks:
        rendered.append(
            json.dumps(
                {
                    "instruction": block.instruction,
                    "code": block.code,
                    "diff_nodes": {
                        "added": [
                            {"type": n.node_type, "block": n.canonical_text}
                            for n in sorted(block.diff.added, key=lambda n: n.canonical_text)
                        ],
                        "removed": [
                            {"type": n.node_type, "block": n.canonical_text}
                            for n in sorted(block.diff.removed, key=lambda n: n.canonical_text)
                        ],
                    },
                    "note": block.note,
                },
                ensure_ascii=False,
                indent=2,
            )
        )
    return "\n".join(rendered)


def _conflict_section(report: sm.ConflictReport) -> str:
    lines = [
        "",
        "Conflict Report",
        "",
        "The candidate implementation contradicts previously validated changes. "
        "Regenerate the function, preserving the changes below unless the current "
        "instruction explicitly overrides them.",
        "",
    ]
    for entry in report.conflicts:
        lines.append(f"- block {entry.block_id} (instruction: {entry.block.instruction})")
        for node in sorted(entry.nodes, key=lambda n: n.canonical_text):
            lines.append(f"  [{node.node_type}] {node.canonical_text}")
    return "\n".join(lines)


def run_round(state: SessionState, instruction: str) -> RoundRecord:
    """Execute one interaction round; rolls back the session on gateway failure."""
    snapshot = (
        copy.deepcopy(state.memory),
        copy.deepcopy(state.sessions),
        state.round,
        list(state.instructions),
        state.last_feedback,
        state.last_target,
    )
    try:
        return _run_round_inner(state, instruction)
    except GatewayError:
        state.memory, state.sessions, state.round, state.instructions, state.last_feedback, state.last_target = snapshot
        raise


def _run_round_inner(state: SessionState, instruction: str) -> RoundRecord:
    config = state.config
    started = time.perf_counter()
    tokens_before = state.gateway.counters.snapshot()
    round_index = state.round + 1
    history = [*state.instructions, instruction]
    notes: list[str] = []

    # Static-context ablation freezes memory management after round one.
    static_context = "ctxmem" in config.ablations and round_index > 1

    retrieved: list[str] = []
    if static_context:
        decision = gw.UpdateDecision(mode=gw.UpdateMode.KEEP, action="static context (ablated)")
    else:
        decision = cm.decide_update(history, state.memory.rendered_keys(), state.gateway)
        if decision.mode is gw.UpdateMode.ADD:
            queries = list(decision.target_context) or [instruction]
            blocks = cm.retrieve_merged(
                queries, state.index, k=config.top_k, k1=config.bm25_k1, b=config.bm25_b
            )
            before = set(state.memory.blocks)
            state.memory = cm.merge(state.memory, blocks, round_index)
            retrieved = [b.namespace for b in blocks if b.namespace not in before]

    # Note refresh on the previous round's block, then the working set.
    effective_target = state.target or state.last_target
    sequence = state.sessions.get(effective_target) if effective_target else None
    working: list[sm.SessionBlock] = []
    if sequence and sequence.blocks:
        sm.refresh_note(sequence.latest, instruction, state.last_feedback, state.gateway)
        notes.append(sequence.latest.note)
        working = sm.working_set(sequence)

    repo_context, truncated = _repo_context_text(state.memory, config.context_char_budget)
    prompt = gw.render_prompt(
        gw.TemplateId.GENERATE,
        {
            "repo_context": repo_context,
            "memory_blocks": _memory_blocks_text(working),
            "instruction": instruction,
        },
    )
    candidate = gw.extract_code(state.gateway.complete(prompt))

    final = candidate
    report = sm.ConflictReport()
    if "sessast" not in config.ablations and sequence and sequence.blocks and sm.parses_as_function(candidate):
        report = sm.detect(instruction, candidate, sequence, state.embedder, config.tau)
        regenerations = 0
        current_report = report
        while current_report and regenerations < config.regeneration_limit:
            regen_prompt = prompt + _conflict_section(current_report)
            final = gw.extract_code(state.gateway.complete(regen_prompt))
            regenerations += 1
            if not config.rerun_detector or not sm.parses_as_function(final):
                break
            current_report = sm.detect(instruction, final, sequence, state.embedder, config.tau)

    final_parses = sm.parses_as_function(final)

    # Post-round selector pruning (skipped for unparseable code and ablations).
    if not static_context and "ctxast" not in config.ablations and final_parses:
        state.memory = cm.select(state.memory, final)

    record_target = state.target
    if record_target is None:
        if final_parses:
            record_target = sm.function_name(final)
        else:
            record_target = state.last_target or UNRESOLVED_TARGET
    if final_parses:
        block = sm.record_round(state.sessions, record_target, instruction, final)
    else:
        logger.warning("final code does not parse; recording round with empty diff")
        block = sm.record_round_raw(state.sessions, record_target, instruction, final)
    sm.link_block(block, state.sessions[record_target], state.embedder, config.tau)

    state.round = round_index
    state.instructions.append(instruction)
    state.last_target = record_target

    tokens_after = state.gateway.counters.snapshot()
    return RoundRecord(
        round=round_index,
        instruction=instruction,
        decision=decision,
        retrieved=retrieved,
        generated_code=candidate,
        conflicts=report.to_dicts(),
        final_code=final,
        retained=state.memory.namespaces(),
        prompt_tokens=tokens_after[0] - tokens_before[0],
        completion_tokens=tokens_after[1] - tokens_before[1],
        wall_time=time.perf_counter() - started,
        truncated_context=truncated,
        notes=notes,
    )


def _qualname_parts(namespace: str, file_rel: str) -> list[str]:
    module_parts = list(Path(file_rel).with_suffix("").parts)
    if module_parts and module_parts[-1] == "__init__":
        module_parts = module_parts[:-1]
    ns_parts = namespace.split(".") if namespace else []
    if ns_parts[: len(module_parts)] == module_parts:
        qual = ns_parts[len(module_parts) :]
        if qual:
            return qual
    return ns_parts[-1:] if ns_parts else []


def _locate(tree: ast.Module, qualname: list[str]):
    """Find (definition node, enclosing class node) for a qualified name."""
    scope = tree.body
    parent = None
    node = None
    for i, name in enumerate(qualname):
        node = next(
            (
                n
                for n in scope
                if isinstance(n, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef))
                and n.name == name
            ),
            None,
        )
        if node is None:
            return None, parent
        if i < len(qualname) - 1:
            parent = node
            scope = node.body
    return node, parent


def apply_target_code(repo_root: str | Path, file_rel: str, namespace: str, code: str) -> None:
    """Replace (or insert) the target definition in its repository file."""
    path = Path(repo_root) / file_rel
    text = path.read_text(encoding="utf-8")
    tree = ast.parse(text)
    lines = text.splitlines()
    qualname = _qualname_parts(namespace, file_rel)
    if not qualname:
        raise ParseError(f"cannot derive a target name from namespace {namespace!r}")
    node, parent = _locate(tree, qualname)

    if node is not None:
        indent = " " * node.col_offset
        start = node.decorator_list[0].lineno if node.decorator_list else node.lineno
        new_lines = [indent + line if line.strip() else line for line in code.splitlines()]
        lines[start - 1 : node.end_lineno] = new_lines
    elif parent is not None:
        indent = " " * (parent.col_offset + 4)
        new_lines = [indent + line if line.strip() else line for line in code.splitlines()]
        lines[parent.end_lineno : parent.end_lineno] = [""] + new_lines
    else:
        lines.extend(["", ""] + code.splitlines())
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _round_instructions(task: Task) -> list[str]:
    if task.round_budget is None:
        return list(task.instructions)
    feedback = task.feedback_prompt or "The previous answer failed its tests. Please regenerate."
    return [task.instructions[0]] + [feedback] * (task.round_budget - 1)


def run_session(
    config: EngineConfig,
    repo_root: str | Path,
    task: Task,
    runner=None,
    gateway: gw.CompletionGateway | None = None,
    embedder: gw.EmbeddingGateway | None = None,
) -> Transcript:
    """Replay one task: index once, iterate rounds, test after each round.

    The feedback carried into the next round is the runner's failure summary,
    or the task's fixed feedback string when it defines one.  Runner failures
    are recorded and the session continues.
    """
    state = new_session(repo_root, config, gateway, embedder, target=task.namespace or None)
    transcript = Transcript(
        task_id=task.id, namespace=task.namespace, gold_context=list(task.gold_context)
    )
    instructions = _round_instructions(task)
    cumulative: dict[str, None] = {}

    for i, instruction in enumerate(instructions):
        record = run_round(state, instruction)
        round_tests = task.round_tests[i] if i < len(task.round_tests) else task.round_tests[-1]
        for test_id in round_tests:
            cumulative.setdefault(test_id, None)

        if sm.parses_as_function(record.final_code) and task.completion_path:
            apply_target_code(repo_root, task.completion_path, task.namespace, record.final_code)

        if runner is not None and cumulative:
            try:
                outcomes = [runner.run(test_id) for test_id in cumulative]
            except RunnerError as exc:
                logger.warning("test runner failed for task %s round %d: %s", task.id, record.round, exc)
                record.tests = None
                record.notes.append(f"runner error: {exc}")
                state.last_feedback = None
                transcript.rounds.append(record)
                continue
            by_id = {o.test_id: o for o in outcomes}
            record.tests = {
                "round": {t: by_id[t].passed for t in round_tests},
                "cumulative": {t: by_id[t].passed for t in cumulative},
            }
            round_passed = all(record.tests["round"].values()) if round_tests else False
            if round_passed and transcript.solved_at is None:
                transcript.solved_at = record.round
            if all(by_id[t].passed for t in cumulative):
                state.last_feedback = None
            elif task.feedback_prompt:
                state.last_feedback = task.feedback_prompt
            else:
                state.last_feedback = failure_summary(outcomes)
        transcript.rounds.append(record)

        if task.round_budget is not None and transcript.solved_at is not None:
            break
    return transcript


def replay_benchmark(
    tasks: list[Task],
    out_dir: str | Path,
    config: EngineConfig,
    repo_base: str | Path | None = None,
    runner_factory=None,
    copy_repos: bool = True,
) -> list[Transcript]:
    """Run every task against a scratch copy of its repository and write one
    transcript file per task into ``out_dir``.

    The mock script (when configured) restarts per task, so replays are
    deterministic task by task.
    """
    from .runner import CommandRunner

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    transcripts = []
    for task in tasks:
        repo = Path(repo_base) / task.repo_path if repo_base else Path(task.repo_path)
        if copy_repos:
            work = out_dir / "repos" / task.id
            if work.exists():
                shutil.rmtree(work)
            shutil.copytree(repo, work)
        else:
            work = repo
        if runner_factory is not None:
            runner = runner_factory(work, task)
        elif config.runner_template:
            runner = CommandRunner(config.runner_template, cwd=work, timeout=config.runner_timeout)
        else:
            runner = None
        gateway = build_completion_gateway(config)
        embedder = build_embedding_gateway(config)
        transcript = run_session(config, work, task, runner, gateway, embedder)
        transcripts.append(transcript)
        out_path = out_dir / f"{task.id}.json"
        out_path.write_text(
            json.dumps(transcript.to_dict(), indent=2, ensure_ascii=False, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    return transcripts
