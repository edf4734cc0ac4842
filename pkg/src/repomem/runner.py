"""External test runner handles: exit status 0 means pass."""

from __future__ import annotations

import shlex
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

from .errors import RunnerError


@dataclass(frozen=True)
class TestOutcome:
    __test__ = False  # not a pytest collectable

    test_id: str
    passed: bool
    summary: str = ""


class TestRunner(Protocol):
    __test__ = False

    def run(self, test_id: str) -> TestOutcome: ...


class CommandRunner:
    """Run each test identifier through a shell command template.

    The template must contain ``{test}``; the command runs in the repository
    root with a per-test timeout.
    """

    def __init__(self, template: str, cwd: str | Path, timeout: float = 60.0):
        if "{test}" not in template:
            raise ValueError("command template must contain {test}")
        self.template = template
        self.cwd = str(cwd)
        self.timeout = timeout

    def run(self, test_id: str) -> TestOutcome:
        argv = [part.replace("{test}", test_id) for part in shlex.split(self.template)]
        try:
            proc = subprocess.run(
                argv, cwd=self.cwd, capture_output=True, text=True, timeout=self.timeout
            )
        except subprocess.TimeoutExpired:
            return TestOutcome(test_id=test_id, passed=False, summary="timeout")
        except OSError as exc:
            raise RunnerError(f"cannot invoke test runner: {exc}") from exc
        summary = ""
        if proc.returncode != 0:
            tail = (proc.stderr or proc.stdout or "").strip().splitlines()
            summary = "\n".join(tail[-5:])
        return TestOutcome(test_id=test_id, passed=proc.returncode == 0, summary=summary)


def failure_summary(outcomes: Sequence[TestOutcome]) -> str:
    """Compact feedback string listing the failing tests."""
    failed = [o for o in outcomes if not o.passed]
    if not failed:
        return ""
    lines = [f"{len(failed)} of {len(outcomes)} tests failed:"]
    for outcome in failed:
        detail = f" ({outcome.summary.splitlines()[-1]})" if outcome.summary else ""
        lines.append(f"- {outcome.test_id}{detail}")
    return "\n".join(lines)
