from typing import Optional


class RemedBenchError(Exception):
    """Base class for every error raised by remedbench."""


class ConfigError(RemedBenchError):
    pass


class TopologyError(RemedBenchError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class QuantityError(RemedBenchError):
    pass


class LookupFailure(RemedBenchError):
    """Unknown service, deployment or pod."""


class CommandParseError(RemedBenchError):
    def __init__(self, message: str, offset: int = 0):
        self.offset = offset
        super().__init__(f"{message} (at offset {offset})")


class UnsupportedCommand(RemedBenchError):
    def __init__(self, word: str):
        self.word = word
        super().__init__(f"unsupported in simulator: {word}")


class JsonPathError(RemedBenchError):
    pass


class ChaosError(RemedBenchError):
    pass


class PlaybookError(RemedBenchError):
    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        self.line = line
        self.path = path
        where = []
        if line is not None:
            where.append(f"line {line}")
        if path:
            where.append(path)
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class ExprError(RemedBenchError):
    pass


class VerifyError(RemedBenchError):
    pass


class BackendError(RemedBenchError):
    pass


class BackendTimeout(BackendError):
    pass


class ScenarioError(RemedBenchError):
    pass


class ReplayError(RemedBenchError):
    pass


class ReportError(RemedBenchError):
    def __init__(self, message: str, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path is not None else message)
