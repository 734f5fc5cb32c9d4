from typing import Optional


class DGError(Exception):
    """
    Base error of the solver stack.
    Like an HTTP error it carries a `detail` message plus a code; here the code
    is the process exit status used by the command line.
    """
    exit_code = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class UsageError(DGError):
    """Invalid command-line flags or configuration values"""
    exit_code = 1


class ConfigError(DGError):
    """Malformed study configuration file"""
    exit_code = 1


class MeshError(DGError):
    exit_code = 3


class MeshValidityError(MeshError):
    """Mesh violates a geometric or topological invariant"""


class MeshGenerationError(MeshError):
    """Generator could not produce a valid mesh"""


class MeshParseError(MeshError):
    """Malformed mesh file; `line` is 1-based when known"""

    def __init__(self, detail: str, line: Optional[int] = None):
        if line is not None:
            detail = f"line {line}: {detail}"
        super().__init__(detail)
        self.line = line


class HierarchyError(DGError):
    exit_code = 3


class NonNestedError(HierarchyError):
    """Consecutive levels do not define nested spaces"""


class DegenerateElementError(DGError):
    """Local mass matrix of an element is numerically singular"""
    exit_code = 3

    def __init__(self, element: int, detail: str):
        super().__init__(f"element {element}: {detail}")
        self.element = element


class SpaceMismatchError(DGError):
    exit_code = 3


class FactorizationError(DGError):
    """Direct factorization failed (singular or not SPD)"""
    exit_code = 2


class SingularBlockError(FactorizationError):
    """A block-Jacobi diagonal block could not be factored"""

    def __init__(self, element: int, detail: str):
        super().__init__(f"element {element}: {detail}")
        self.element = element


class ConvergenceError(DGError):
    """Iterative solver did not reach the requested tolerance"""
    exit_code = 2
