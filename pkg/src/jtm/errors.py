"""Exception hierarchy shared across the package.

The CLI maps each class to an exit code: config errors exit 2, data
errors exit 3, numeric divergence exits 4.
"""


class JTMError(Exception):
    """Base class for all package errors."""


class ConfigError(JTMError, ValueError):
    pass


class DataError(JTMError, ValueError):
    pass


class EmptyCorpusError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, path, lineno, message):
        self.path = path
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


class DivergenceError(JTMError, FloatingPointError):
    pass
