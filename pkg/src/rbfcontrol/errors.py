"""Exception types shared across the package."""


class RbfControlError(Exception):
    """Base class for all package-specific errors."""


class InvalidSizeError(RbfControlError, ValueError):
    """Requested node count / grid size cannot produce a valid cloud."""


class NodeFileError(RbfControlError, ValueError):
    """Malformed node file. Carries the 1-based line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TagError(NodeFileError):
    """Unknown boundary tag or segment token in a node file."""


class EmptyCloudError(NodeFileError):
    """Node file contains no nodes."""


class AssemblyError(RbfControlError, ValueError):
    """Collocation system cannot be assembled (e.g. missing boundary data)."""


class SingularSystemError(RbfControlError, RuntimeError):
    """Collocation or solve matrix is exactly singular."""


class ShapeMismatchError(RbfControlError, ValueError):
    """Incompatible operand shapes at tape record time."""


class ContractError(RbfControlError, ValueError):
    """An operation was called outside its contract (bad argument ranges)."""


class OptimizerError(RbfControlError, RuntimeError):
    """Non-finite gradient or similar failure inside a descent loop.

    Carries the iteration index at which the failure occurred.
    """

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)
        self.iteration = iteration


class NonConvergenceError(RbfControlError, RuntimeError):
    """Projection iteration diverged. Carries diagnostic history."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NoValidOmegaError(RbfControlError, RuntimeError):
    """Every candidate loss weight failed the PDE-fit threshold."""

    def __init__(self, message, per_omega=None):
        super().__init__(message)
        self.per_omega = per_omega or {}
