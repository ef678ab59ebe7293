# app/core/errors.py
from typing import List, Optional, Sequence

# Códigos de salida del CLI
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


class DIWPError(Exception):
    """Error base del proyecto"""
    error_code: str = "diwp_error"
    exit_code: int = EXIT_NUMERIC

    def __init__(self, message: str, detail: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.detail = detail


class ShapeError(DIWPError):
    error_code = "shape_error"


class DomainError(DIWPError):
    """Argumento fuera del dominio matemático (log de negativos, polos, dof)"""
    error_code = "domain_error"


class DecompositionError(DIWPError):
    """Cholesky falló tras agotar el escalado de jitter"""
    error_code = "decomposition_error"

    def __init__(self, message: str, attempted_jitter: Sequence[float] = ()):
        super().__init__(message, detail=f"jitter intentado: {list(attempted_jitter)}")
        self.attempted_jitter: List[float] = list(attempted_jitter)


class SingularTriangleError(DIWPError):
    error_code = "singular_triangle"


class UnsupportedDofError(DomainError):
    error_code = "unsupported_dof"


class NumericError(DIWPError):
    """Fallo numérico atribuible a una capa concreta"""
    error_code = "numeric_error"

    def __init__(self, message: str, layer: Optional[str] = None):
        super().__init__(message if layer is None else f"[{layer}] {message}")
        self.layer = layer


class ConfigError(DIWPError):
    error_code = "config_error"
    exit_code = EXIT_CONFIG


class DataError(DIWPError):
    error_code = "data_error"
    exit_code = EXIT_IO


class DataParseError(DataError):
    error_code = "data_parse_error"

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(message if line is None else f"línea {line}: {message}")
        self.line = line


class CheckpointError(DIWPError):
    error_code = "checkpoint_error"
    exit_code = EXIT_IO
