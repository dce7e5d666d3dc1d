"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument violates a documented precondition."""


class CapacityError(RuntimeError):
    """A requested exact computation exceeds the supported state-space size."""


class ConfigError(ValueError):
    """A run configuration is inconsistent or incomplete."""


class DataFormatError(ValueError):
    """A file or text input does not conform to its format.

    Carries optional line/column information for parser errors.
    """

    def __init__(self, message, line=None, column=None, path=None):
        self.line = line
        self.column = column
        self.path = path
        loc = ""
        if path is not None:
            loc += f"{path}:"
        if line is not None:
            loc += f"line {line}"
            if column is not None:
                loc += f", col {column}"
        super().__init__(f"{loc}: {message}" if loc else message)
