"""Exception hierarchy.

The CLI maps the three top-level families to exit codes:
``ConfigError`` -> 1, ``DataError`` -> 2, ``NumericError`` -> 3.
"""


class DocmaskError(Exception):
    pass


class ConfigError(DocmaskError, ValueError):
    pass


class DataError(DocmaskError):
    pass


class NumericError(DocmaskError, ArithmeticError):
    pass


class InvalidPageError(DataError, ValueError):
    pass


class InvalidBoxError(DataError, ValueError):
    pass


class GridError(ConfigError):
    pass


class FormatError(DataError, ValueError):
    pass


class CorpusParseError(DataError, ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class CorpusIOError(DataError, OSError):
    def __init__(self, path, message: str = "missing image file"):
        super().__init__(f"{message}: {path}")
        self.path = str(path)


class MaskingError(ConfigError):
    pass


class TagParseError(DataError, ValueError):
    pass
