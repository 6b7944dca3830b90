"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command-line front end:
1 for user errors, 2 for reported merge conflicts, 3 for hook rejection and
4 for internal errors or on-disk corruption.
"""


class DsvcError(Exception):
    exit_code = 1


# core model
class InvalidValue(DsvcError):
    pass


class InvalidDataset(DsvcError):
    pass


# repository
class ConfigError(DsvcError):
    pass


class AlreadyExists(DsvcError):
    pass


class IoFailure(DsvcError):
    exit_code = 4


class Duplicate(DsvcError):
    pass


class UnknownVersion(DsvcError):
    pass


class UnknownBranch(DsvcError):
    pass


class BranchExists(DsvcError):
    pass


class UnknownTable(DsvcError):
    pass


class DuplicateInsert(DsvcError):
    pass


class UnknownKey(DsvcError):
    pass


class SampledRowUpdateForbidden(DsvcError):
    pass


class StaleBase(DsvcError):
    pass


class EmptyCommit(DsvcError):
    pass


class ConstraintNameUnknown(DsvcError):
    pass


class NoCommonAncestor(DsvcError):
    pass


class ResetRefused(DsvcError):
    pass


class CorruptRepository(DsvcError):
    exit_code = 4


# delta engine
class DeltaMismatch(CorruptRepository):
    pass


class SketchMismatch(DsvcError):
    pass


# storage
class UnknownBaseVersion(DsvcError):
    pass


class BrokenChain(CorruptRepository):
    pass


# planner
class InfeasibleGraph(DsvcError):
    pass


class TooLarge(DsvcError):
    pass


class BudgetInfeasible(DsvcError):
    pass


# merge
class UnresolvedConflicts(DsvcError):
    exit_code = 2

    def __init__(self, conflicts):
        super().__init__(f"{len(conflicts)} unresolved conflict(s)")
        self.conflicts = conflicts


# hooks
class NotExecutable(DsvcError):
    pass


class HookRejected(DsvcError):
    exit_code = 3

    def __init__(self, hook: str, exit_code: int, stderr: str):
        super().__init__(f"hook {hook} rejected the commit (exit {exit_code}): {stderr.strip()}")
        self.hook = hook
        self.hook_exit_code = exit_code
        self.stderr = stderr


# vql
class VqlError(DsvcError):
    pass


class VqlSyntaxError(VqlError):
    def __init__(self, message: str, line: int, column: int, expected=()):
        loc = f"{line}:{column}"
        exp = f" (expected one of: {', '.join(sorted(expected))})" if expected else ""
        super().__init__(f"syntax error at {loc}: {message}{exp}")
        self.line = line
        self.column = column
        self.expected = frozenset(expected)


class UnknownFunction(VqlError):
    pass


class NonScalarVersionSubquery(VqlError):
    pass


class VqlTypeError(VqlError):
    pass


class UnresolvedReference(VqlError):
    pass
