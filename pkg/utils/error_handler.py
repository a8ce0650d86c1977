from typing import Optional, Sequence, Tuple


class CaforgeError(Exception):
    """Base exception for all caforge errors"""
    pass


class ShapeError(CaforgeError):
    """Raised when a tensor op receives incompatible shapes"""

    def __init__(self, op: str, shapes: Sequence[Tuple[int, ...]], detail: str = ''):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        message = f'{op}: incompatible shapes {list(self.shapes)}'
        if detail:
            message = f'{message} ({detail})'
        super().__init__(message)


class TapeError(CaforgeError):
    """Custom exception for invalid backward passes"""
    pass


class ValidationError(CaforgeError):
    """Custom exception for data validation errors"""
    pass


class ConfigurationError(CaforgeError):
    """Custom exception for configuration-related errors"""
    pass


class GuardError(CaforgeError):
    """Raised when an enumeration or search exceeds its size guard"""
    pass


class NumericalError(CaforgeError):
    """Raised when a loss or metric becomes NaN or infinite"""

    def __init__(self, message: str, dump_path: Optional[str] = None):
        self.dump_path = dump_path
        if dump_path:
            message = f'{message} (diagnostics written to {dump_path})'
        super().__init__(message)


class DatasetError(CaforgeError):
    """Custom exception for dataset and checkpoint IO failures"""

    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        if path:
            message = f'{message}: {path}'
        super().__init__(message)


EXIT_CODES = {
    ConfigurationError: 2,
    ValidationError: 2,
    GuardError: 2,
    NumericalError: 3,
    DatasetError: 4,
}


def exit_code_for(error: BaseException) -> int:
    """Map an exception to the CLI exit code"""
    for error_type, code in EXIT_CODES.items():
        if isinstance(error, error_type):
            return code
    if isinstance(error, OSError):
        return 4
    return 1
