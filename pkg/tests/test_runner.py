import sys

import pytest

from repomem.errors import RunnerError
from repomem.runner import CommandRunner, TestOutcome, failure_summary

from conftest import clamp_runner


def test_command_runner_pass_and_fail(clamp_repo):
    runner = clamp_runner(clamp_repo)
    # The stub clamp returns its input unchanged: t1 passes, t3 fails.
    assert runner.run("t1_min").passed
    outcome = runner.run("t3_floor")
    assert not outcome.passed
    assert "AssertionError" in outcome.summary or outcome.summary


def test_command_runner_timeout(tmp_path):
    runner = CommandRunner(
        f"{sys.executable} -c \"import time; time.sleep(5)\" {{test}}", cwd=tmp_path, timeout=0.5
    )
    outcome = runner.run("t")
    assert not outcome.passed
    assert outcome.summary == "timeout"


def test_command_runner_missing_binary(tmp_path):
    runner = CommandRunner("definitely-not-a-binary {test}", cwd=tmp_path)
    with pytest.raises(RunnerError):
        runner.run("t")


def test_command_runner_requires_placeholder(tmp_path):
    with pytest.raises(ValueError):
        CommandRunner("pytest", cwd=tmp_path)


def test_failure_summary_lists_failures():
    outcomes = [
        TestOutcome("t1", True),
        TestOutcome("t2", False, summary="AssertionError: expected ValueError"),
        TestOutcome("t3", False),
    ]
    text = failure_summary(outcomes)
    assert text.startswith("2 of 3 tests failed:")
    assert "- t2 (AssertionError: expected ValueError)" in text
    assert "- t3" in text
    assert failure_summary([TestOutcome("t1", True)]) == ""
