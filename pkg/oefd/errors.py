from typing import Optional, Sequence


# Exit codes are a stable contract of the command line front end.
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4


class OefdError(Exception):
    """Base class for every error raised by the toolkit."""
    exit_code = EXIT_CONFIG
    error_type = "OEFD_ERROR"

    def __init__(self, message: str, field_name: Optional[str] = None):
        super().__init__(message)
        self.field_name = field_name


# --- Input / configuration errors (exit 2) ---

class ConfigError(OefdError):
    error_type = "CONFIG_ERROR"


class ShapeError(OefdError):
    error_type = "SHAPE_ERROR"

    @classmethod
    def mismatch(cls, what: str, left: Sequence[int], right: Sequence[int]) -> "ShapeError":
        return cls(f"{what}: shape {tuple(left)} is incompatible with shape {tuple(right)}")


class LabelError(OefdError):
    error_type = "LABEL_ERROR"


class DomainError(OefdError):
    error_type = "DOMAIN_ERROR"


class ProtocolError(OefdError):
    error_type = "PROTOCOL_ERROR"


class SplitError(OefdError):
    error_type = "SPLIT_ERROR"


class DegenerateInputError(OefdError):
    error_type = "DEGENERATE_INPUT"


# --- File errors (exit 3) ---

class InputOutputError(OefdError):
    exit_code = EXIT_IO
    error_type = "IO_ERROR"


class ParseError(InputOutputError):
    error_type = "PARSE_ERROR"

    def __init__(self, message: str, path: Optional[str] = None,
                 line: Optional[int] = None, offset: Optional[int] = None):
        location = ""
        if line is not None:
            location = f" (line {line})"
        elif offset is not None:
            location = f" (byte offset {offset})"
        prefix = f"{path}: " if path else ""
        super().__init__(f"{prefix}{message}{location}")
        self.path = path
        self.line = line
        self.offset = offset


class UnsupportedVersionError(InputOutputError):
    error_type = "UNSUPPORTED_VERSION"


# --- Numerical errors (exit 4) ---

class NumericalError(OefdError):
    exit_code = EXIT_NUMERICAL
    error_type = "NUMERICAL_ERROR"

    def __init__(self, message: str, sample_index: Optional[int] = None,
                 step: Optional[int] = None, losses: Optional[dict] = None):
        details = []
        if sample_index is not None:
            details.append(f"sample {sample_index}")
        if step is not None:
            details.append(f"step {step}")
        if losses:
            details.append(", ".join(f"{k}={v!r}" for k, v in losses.items()))
        suffix = f" [{'; '.join(details)}]" if details else ""
        super().__init__(f"{message}{suffix}")
        self.sample_index = sample_index
        self.step = step
        self.losses = dict(losses or {})
