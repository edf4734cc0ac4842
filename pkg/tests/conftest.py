import json
import sys
import textwrap
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"

SETMAXSIZE_BASE = """\
def setmaxsize(self, maxsize):
    self.maxsize = maxsize
    self._msgsize_maxsize = self._calc_msgsize_maxsize(maxsize)
"""

SETMAXSIZE_PRINT = """\
def setmaxsize(self, maxsize):
    self.maxsize = maxsize
    self._msgsize_maxsize = self._calc_msgsize_maxsize(maxsize)
    print(f'Maxsize set to {maxsize}')
"""

SETMAXSIZE_GUARDED = """\
def setmaxsize(self, maxsize):
    if not isinstance(maxsize, int) or maxsize < 0:
        raise ValueError('maxsize must be a non-negative integer')
    self.maxsize = maxsize
    self._msgsize_maxsize = self._calc_msgsize_maxsize(maxsize)
    print(f'Maxsize set to {maxsize}')
"""

# Hand-normalized form of the guard statement (single spaces, no comments).
GUARD_CANONICAL = (
    "if not isinstance(maxsize, int) or maxsize < 0: "
    "raise ValueError('maxsize must be a non-negative integer')"
)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


def load_fixture(name: str):
    return json.loads((FIXTURES / name).read_text(encoding="utf-8"))


def write_repo(root: Path, files: dict[str, str]) -> Path:
    for rel, content in files.items():
        path = root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(textwrap.dedent(content), encoding="utf-8")
    return root


@pytest.fixture
def tiny_repo(tmp_path: Path) -> Path:
    """Three-block repository used by retrieval and selector tests."""
    return write_repo(
        tmp_path / "tinyrepo",
        {
            "helpers.py": '''\
                def scale(x):
                    """Multiply by the configured factor."""
                    return x * 2


                def shift(x):
                    """Add the configured offset."""
                    return x + 1
                ''',
            "lib.py": '''\
                class Formatter:
                    """Render values for display."""

                    unit = "px"

                    def fmt(self, value):
                        return f"{value}{self.unit}"
                ''',
        },
    )


CLAMP_ROUND_1 = """\
def clamp(value, limit):
    return min(value, limit)
"""

CLAMP_ROUND_2 = """\
def clamp(value, limit):
    if limit < 0:
        raise ValueError('limit must be non-negative')
    return min(value, limit)
"""

CLAMP_ROUND_3_REVERT = """\
def clamp(value, limit):
    return int(min(value, limit))
"""

CLAMP_ROUND_3_FIXED = """\
def clamp(value, limit):
    if limit < 0:
        raise ValueError('limit must be non-negative')
    return int(min(value, limit))
"""

CLAMP_ROUND_4 = '''\
def clamp(value, limit):
    """Clamp value to the limit, flooring to an integer."""
    if limit < 0:
        raise ValueError('limit must be non-negative')
    return int(min(value, limit))
'''

CLAMP_ROUND_4_ABLATED = '''\
def clamp(value, limit):
    """Clamp value to the limit, flooring to an integer."""
    return int(min(value, limit))
'''

CLAMP_GUARD_CANONICAL = "if limit < 0: raise ValueError('limit must be non-negative')"

CLAMP_INSTRUCTIONS = [
    "Implement clamp returning value bounded above by limit.",
    "Add a guard: raise ValueError when limit is negative.",
    "Return an integer result by flooring the output.",
    "Document clamp with a short docstring.",
]

CHECKS_PY = """\
import sys

import widget


def t1_min():
    assert widget.clamp(5, 10) == 5


def t2_guard():
    try:
        widget.clamp(1, -1)
    except ValueError:
        return
    raise AssertionError("expected ValueError for negative limit")


def t3_floor():
    assert widget.clamp(3.7, 10) == 3


def t4_doc():
    assert widget.clamp.__doc__


if __name__ == "__main__":
    globals()[sys.argv[1]]()
"""


@pytest.fixture
def clamp_repo(tmp_path: Path) -> Path:
    """Repository for the forgetting scenario: a stub target plus check script."""
    return write_repo(
        tmp_path / "clamprepo",
        {
            "widget.py": """\
                def clamp(value, limit):
                    return value
                """,
            "checks.py": CHECKS_PY,
        },
    )


def clamp_script(ablate_detector: bool) -> list[dict]:
    """Scripted gateway for the four-round forgetting scenario.

    The judge is never called (memory prunes to empty each round, which
    short-circuits the decision to ADD), so the script is: one generation for
    round 1, then note + generation per later round, plus one regeneration at
    round 3 when the detector is enabled.
    """
    gen = {"expect_substring": "repository-level code generator"}
    note = {"expect_substring": "modification note"}
    script = [
        gen | {"response": CLAMP_ROUND_1},
        note | {"response": "Implemented clamp with an upper bound."},
        gen | {"response": CLAMP_ROUND_2},
        note | {"response": "Added a negative-limit guard raising ValueError."},
        gen | {"response": CLAMP_ROUND_3_REVERT},
    ]
    if not ablate_detector:
        script.append(gen | {"response": CLAMP_ROUND_3_FIXED})
    script += [
        note | {"response": "Floored the result to an integer."},
        gen | {"response": CLAMP_ROUND_4 if not ablate_detector else CLAMP_ROUND_4_ABLATED},
    ]
    return script


def clamp_task(repo: Path):
    from repomem.evaluation import Task

    return Task(
        id="forgetting-demo",
        namespace="widget.clamp",
        repo_path=str(repo),
        completion_path="widget.py",
        instructions=list(CLAMP_INSTRUCTIONS),
        round_tests=[["t1_min"], ["t2_guard"], ["t3_floor"], ["t4_doc"]],
    )


def clamp_runner(repo: Path):
    from repomem.runner import CommandRunner

    return CommandRunner(f"{sys.executable} checks.py {{test}}", cwd=repo, timeout=30.0)
