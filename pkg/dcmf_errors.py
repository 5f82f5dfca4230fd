#!/usr/bin/env python3
"""
dCMF Errors - Exception Hierarchy
=================================

Every error raised by the dCMF modules derives from DCMFError and from the
closest builtin, so callers may catch either.

This program is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.
"""

from typing import Any, List, Optional, Sequence, Tuple


class DCMFError(Exception):
    """Base class for all dCMF failures"""


class ShapeError(DCMFError, ValueError):
    """Operand shapes do not conform"""

    def __init__(self, message: str, *shapes: Tuple[int, ...]):
        self.shapes = shapes
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(message)


class DecompositionError(DCMFError, ValueError):
    """Cholesky factorization hit a non-positive pivot"""

    def __init__(self, pivot: int, message: Optional[str] = None):
        self.pivot = pivot
        super().__init__(message or f"matrix is not positive definite (pivot {pivot})")


class DomainError(DCMFError, ValueError):
    """Argument outside the domain of an operation"""


class EntityLookupError(DCMFError, KeyError):
    """Unknown entity id"""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown entity"


class ViewLookupError(DCMFError, KeyError):
    """Unknown view id"""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown view"


class GraphValidationError(DCMFError, ValueError):
    """Relation graph failed validation"""

    def __init__(self, report: Any):
        self.report = report
        lines = "; ".join(str(f) for f in getattr(report, "findings", []))
        super().__init__(f"relation graph is not usable: {lines}")


class TopologyError(DCMFError, ValueError):
    """Views are not wired the way an operation requires"""


class NumericalDivergenceError(DCMFError, RuntimeError):
    """Non-finite activations or losses"""

    def __init__(self, entity: str, message: Optional[str] = None):
        self.entity = entity
        super().__init__(message or f"non-finite values in autoencoder for entity '{entity}'")


class TrainingError(DCMFError, RuntimeError):
    """Training diverged; carries the last finite history"""

    def __init__(self, message: str, history: Sequence[Any] = ()):
        self.history: List[Any] = list(history)
        super().__init__(message)


class SurrogateError(DCMFError, RuntimeError):
    """Surrogate Gram matrix could not be factorized"""


class FoldError(DCMFError, ValueError):
    """Cross-validation folds cannot be built"""


class LoadError(DCMFError, ValueError):
    """Malformed input file"""

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        self.line = line
        self.path = path
        where = ""
        if path:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class ConfigParseError(DCMFError, ValueError):
    """Run configuration violates the schema"""

    def __init__(self, message: str, field_path: str = "", line: Optional[int] = None):
        self.field_path = field_path
        self.line = line
        where = field_path or "<root>"
        if line is not None:
            where += f" (line {line})"
        super().__init__(f"{where}: {message}")
