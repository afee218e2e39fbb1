"""Exception types shared across the toolkit."""


class SchemaError(ValueError):
    """Model document violates the JSON schema (missing/extra/ill-typed fields)."""


class StructureError(ValueError):
    """Node graph is not a tree (cycle, orphan, out-of-range child index)."""


class PackError(ValueError):
    """Node tuple does not fit the packed register layout."""


class PlanError(ValueError):
    """Allocation request exceeds the target's usable register budget."""


class PlanMismatch(ValueError):
    """Allocation plan references nodes that are not in the tree it is applied to."""


class LoweringError(ValueError):
    """IR cannot be lowered to the requested target."""


class TrapError(RuntimeError):
    """Abstract machine fault: unbound label, unwritten register read, bad index."""

    def __init__(self, message: str, pc: int = -1):
        super().__init__(message)
        self.pc = pc


class ToolchainError(RuntimeError):
    """External assembler/compiler/linker invocation failed."""


class ValidationError(RuntimeError):
    """Pre-benchmark differential check failed; the binary must not be measured."""
