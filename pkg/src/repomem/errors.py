"""Exception types shared across the package."""


class RepoMemError(Exception):
    """Base class for all repomem errors."""


class ParseError(RepoMemError, ValueError):
    """Source text could not be parsed as the expected construct."""


class TargetMismatch(RepoMemError, ValueError):
    """Generated code does not resolve to the expected target."""


class GatewayError(RepoMemError, RuntimeError):
    """Completion or embedding backend failure."""


class ScriptExhausted(GatewayError):
    """A scripted gateway ran out of queued responses."""


class DecisionParseError(RepoMemError, ValueError):
    """Judge output could not be parsed into an update decision."""


class MissingSlot(RepoMemError, KeyError):
    """A prompt template slot was not supplied."""


class SchemaError(RepoMemError, ValueError):
    """A record or store file does not match its schema.

    ``field_path`` names the offending field, dotted from the record root.
    """

    def __init__(self, message: str, field_path: str = ""):
        super().__init__(message)
        self.field_path = field_path


def require_field(record, name: str, parent: str = ""):
    """Fetch ``record[name]`` or raise a SchemaError naming the dotted path."""
    path = f"{parent}.{name}" if parent else name
    try:
        if name in record:
            return record[name]
    except TypeError:
        pass
    raise SchemaError(f"missing required field: {path}", field_path=path)


class VersionError(RepoMemError, ValueError):
    """A store file carries an unsupported schema version."""


class DomainError(RepoMemError, ValueError):
    """A numeric argument violates an operation's preconditions."""


class EmptyTestSet(RepoMemError, ValueError):
    """A metric over tests was given no tests."""


class EmptySequence(RepoMemError, ValueError):
    """An operation requiring session history was given an empty sequence."""


class RunnerError(RepoMemError, RuntimeError):
    """The external test runner could not be invoked."""
