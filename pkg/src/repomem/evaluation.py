"""Per-round and aggregate metrics over session transcripts, plus benchmark loaders.

Metrics follow the usual multi-turn conventions: instruction accuracy (IA) is
the 0/1 outcome of the current round's tests; conversation accuracy (CA) is
the fraction of all cumulative tests the current code passes; the instruction
forgetting ratio (IFR) is the share of previously passed tests that now fail;
pass@k is the unbiased estimator 1 - C(n-c, k)/C(n, k).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import DomainError, EmptyTestSet, SchemaError, require_field


@dataclass
class Task:
    """One benchmark dialogue: ordered instructions with per-round tests."""

    id: str
    namespace: str
    repo_path: str
    completion_path: str
    instructions: list[str]
    round_tests: list[list[str]]
    gold_context: list[str] = field(default_factory=list)
    feedback_prompt: str | None = None
    round_budget: int | None = None
    prompt: str = ""

    def __post_init__(self):
        if self.round_budget is None and len(self.round_tests) != len(self.instructions):
            raise ValueError("one test list per instruction is required")


def ia(round_tests_passed: bool) -> int:
    """1 when the current round's tests pass, else 0."""
    return 1 if round_tests_passed else 0


def ca(cumulative_results: Sequence[bool]) -> float:
    """Fraction of all cumulative tests passed by the current code."""
    if not cumulative_results:
        raise EmptyTestSet("conversation accuracy requires at least one test")
    return sum(1 for passed in cumulative_results if passed) / len(cumulative_results)


def ifr(previously_passed: set[str] | frozenset[str], current_failures: set[str] | frozenset[str]) -> float:
    """Share of previously passed tests failing now; 0 when nothing was passed."""
    if not previously_passed:
        return 0.0
    return len(set(previously_passed) & set(current_failures)) / len(previously_passed)


def pass_at_k_exact(n: int, c: int, k: int) -> Fraction:
    """Exact rational pass@k = 1 - C(n-c, k)/C(n, k)."""
    if n < 0 or not (0 <= c <= n) or not (1 <= k <= n):
        raise DomainError(f"invalid pass@k arguments: n={n}, c={c}, k={k}")
    if k > n - c:
        return Fraction(1)
    return Fraction(1) - Fraction(math.comb(n - c, k), math.comb(n, k))


def pass_at_k(n: int, c: int, k: int) -> float:
    return float(pass_at_k_exact(n, c, k))


def context_scores(memory_namespaces: set[str], gold_namespaces: set[str]) -> tuple[float, float]:
    """(recall, precision) of memory against gold context namespaces."""
    if not gold_namespaces:
        raise DomainError("recall needs a nonempty gold namespace set")
    hits = len(set(memory_namespaces) & set(gold_namespaces))
    recall = hits / len(gold_namespaces)
    precision = hits / len(memory_namespaces) if memory_namespaces else 0.0
    return recall, precision


def _strip_prefix(path: str, prefix: str) -> str:
    if prefix and path.startswith(prefix.rstrip("/") + "/"):
        return path[len(prefix.rstrip("/")) + 1 :]
    return path


def load_codeif(record: Mapping) -> Task:
    """Build a task from a dialogue record: prompt plus ordered requirement
    categories, each carrying one test identifier."""
    namespace = require_field(record, "namespace")
    project_path = require_field(record, "project_path")
    completion_path = require_field(record, "completion_path")
    prompt = require_field(record, "prompt")
    requirement = require_field(record, "requirement")
    if not isinstance(requirement, Mapping) or not requirement:
        raise SchemaError("requirement must be a nonempty object", field_path="requirement")

    instructions: list[str] = []
    round_tests: list[list[str]] = []
    for category, entry in requirement.items():
        instructions.append(require_field(entry, "requirement", f"requirement.{category}"))
        test = require_field(entry, "test", f"requirement.{category}")
        round_tests.append([test] if isinstance(test, str) else [str(t) for t in test])

    return Task(
        id=str(record.get("_id", namespace)),
        namespace=namespace,
        repo_path=project_path,
        completion_path=_strip_prefix(completion_path, project_path),
        instructions=instructions,
        round_tests=round_tests,
        gold_context=[str(ns) for ns in record.get("gold_context", [])],
        prompt=prompt,
    )


def load_codereval(record: Mapping, round_budget: int = 5) -> Task:
    """Build a repeat-until-pass task: one prompt, a fixed feedback string,
    and a round budget (default 5)."""
    task_id = require_field(record, "_id")
    file_path = require_field(record, "file_path")
    project = require_field(record, "project")
    prompt = require_field(record, "prompt")
    feedback = require_field(record, "feedback_prompt")
    tests = [str(t) for t in record.get("tests", [])]
    return Task(
        id=str(task_id),
        namespace=str(record.get("namespace", "")),
        repo_path=project,
        completion_path=_strip_prefix(file_path, project),
        instructions=[prompt],
        round_tests=[tests],
        feedback_prompt=feedback,
        round_budget=round_budget,
        prompt=prompt,
    )


def load_tasks(path: str | Path, bench: str) -> list[Task]:
    """Read a line-delimited JSON benchmark file."""
    loader = {"codeif": load_codeif, "codereval": load_codereval}.get(bench)
    if loader is None:
        raise ValueError(f"unknown benchmark kind: {bench!r}")
    tasks = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            tasks.append(loader(json.loads(line)))
    return tasks


@dataclass
class TurnMetrics:
    turn: int
    n_tasks: int
    ia: float | None = None
    ca: float | None = None
    ifr: float | None = None
    solved: float | None = None
    recall: float | None = None
    precision: float | None = None

    def to_dict(self) -> dict:
        return {
            "turn": self.turn,
            "n_tasks": self.n_tasks,
            "ia": self.ia,
            "ca": self.ca,
            "ifr": self.ifr,
            "solved": self.solved,
            "recall": self.recall,
            "precision": self.precision,
        }


@dataclass
class MetricsReport:
    turns: list[TurnMetrics] = field(default_factory=list)
    ia_avg: float | None = None
    ca_avg: float | None = None
    ifr_avg: float | None = None
    prompt_tokens: int = 0
    completion_tokens: int = 0
    wall_time: float = 0.0
    n_transcripts: int = 0

    def to_dict(self) -> dict:
        return {
            "turns": [t.to_dict() for t in self.turns],
            "ia_avg": self.ia_avg,
            "ca_avg": self.ca_avg,
            "ifr_avg": self.ifr_avg,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "wall_time": self.wall_time,
            "n_transcripts": self.n_transcripts,
        }

    def format_table(self) -> str:
        """Aligned per-turn columns, one metric per row."""
        if not self.turns:
            return "(no transcripts)"
        headers = ["Metric"] + [f"Turn-{t.turn}" for t in self.turns] + ["Avg."]
        rows = []
        for name, attr, avg in (
            ("IA", "ia", self.ia_avg),
            ("CA", "ca", self.ca_avg),
            ("IFR", "ifr", self.ifr_avg),
            ("Solved", "solved", None),
            ("Recall", "recall", None),
            ("Precision", "precision", None),
        ):
            values = [getattr(t, attr) for t in self.turns]
            if all(v is None for v in values):
                continue
            cells = [name] + [_fmt(v) for v in values] + [_fmt(avg)]
            rows.append(cells)
        widths = [max(len(row[i]) for row in [headers] + rows) for i in range(len(headers))]
        lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)) for row in [headers] + rows]
        return "\n".join(lines)


def _fmt(value: float | None) -> str:
    return "-" if value is None else f"{value:.3f}"


def round_outcome_metrics(rounds: Sequence[Mapping]) -> list[dict]:
    """Per-round IA/CA/IFR derived from a transcript's recorded test outcomes."""
    metrics = []
    passed_before: set[str] = set()
    for record in rounds:
        tests = record.get("tests") or {}
        round_tests: Mapping[str, bool] = tests.get("round") or {}
        cumulative: Mapping[str, bool] = tests.get("cumulative") or {}
        entry: dict = {"ia": None, "ca": None, "ifr": None}
        if round_tests:
            entry["ia"] = ia(all(round_tests.values()))
        if cumulative:
            entry["ca"] = ca(list(cumulative.values()))
            failures = {t for t, ok in cumulative.items() if not ok}
            entry["ifr"] = ifr(passed_before, failures)
            passed_before |= {t for t, ok in cumulative.items() if ok}
        metrics.append(entry)
    return metrics


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def aggregate(transcripts: Iterable[Mapping]) -> MetricsReport:
    """Per-turn means across tasks; tasks contribute only to turns they reached."""
    transcripts = list(transcripts)
    report = MetricsReport(n_transcripts=len(transcripts))
    if not transcripts:
        return report

    per_task: list[dict] = []
    for transcript in transcripts:
        rounds = transcript.get("rounds", [])
        gold = set(transcript.get("gold_context", []))
        entry = {
            "metrics": round_outcome_metrics(rounds),
            "rounds": rounds,
            "gold": gold,
            "solved_at": None,
        }
        for i, metric in enumerate(entry["metrics"]):
            if metric["ia"] == 1:
                entry["solved_at"] = i + 1
                break
        per_task.append(entry)
        totals = transcript.get("totals", {})
        report.prompt_tokens += int(totals.get("prompt_tokens", 0))
        report.completion_tokens += int(totals.get("completion_tokens", 0))
        report.wall_time += float(totals.get("wall_time", 0.0))

    max_rounds = max((len(t["rounds"]) for t in per_task), default=0)
    for turn in range(1, max_rounds + 1):
        present = [t for t in per_task if len(t["rounds"]) >= turn]
        tm = TurnMetrics(turn=turn, n_tasks=len(present))
        tm.ia = _mean([t["metrics"][turn - 1]["ia"] for t in present if t["metrics"][turn - 1]["ia"] is not None])
        tm.ca = _mean([t["metrics"][turn - 1]["ca"] for t in present if t["metrics"][turn - 1]["ca"] is not None])
        tm.ifr = _mean([t["metrics"][turn - 1]["ifr"] for t in present if t["metrics"][turn - 1]["ifr"] is not None])
        solved = [
            1.0 if (t["solved_at"] is not None and t["solved_at"] <= turn) else 0.0
            for t in per_task
            if t["metrics"] and any(m["ia"] is not None for m in t["metrics"])
        ]
        tm.solved = _mean(solved)
        recalls, precisions = [], []
        for t in present:
            if not t["gold"]:
                continue
            retained = set(t["rounds"][turn - 1].get("retained", []))
            r, p = context_scores(retained, t["gold"])
            recalls.append(r)
            precisions.append(p)
        tm.recall = _mean(recalls)
        tm.precision = _mean(precisions)
        report.turns.append(tm)

    report.ia_avg = _mean([t.ia for t in report.turns if t.ia is not None])
    report.ca_avg = _mean([t.ca for t in report.turns if t.ca is not None])
    report.ifr_avg = _mean([t.ifr for t in report.turns if t.ifr is not None])
    return report
