"""Error taxonomy shared across the toolkit.

Every category maps to a dedicated CLI exit code (see cli.EXIT_CODES).
"""


class ToolkitError(Exception):
    """Base class for all toolkit errors."""

    category = "error"


class InputError(ToolkitError, ValueError):
    """Malformed or out-of-contract input values."""

    category = "input"


class DegenerateGeometryError(InputError):
    """Point configuration too degenerate to solve (collinear/coincident)."""

    category = "degenerate"


class RegistrationError(ToolkitError, RuntimeError):
    """ICP could not establish correspondences; carries the last pose reached."""

    category = "registration"

    def __init__(self, message, last_pose=None):
        super().__init__(message)
        self.last_pose = last_pose


class PreconditionError(ToolkitError, RuntimeError):
    """Operation invoked in a state that does not satisfy its preconditions."""

    category = "precondition"


class TransitionError(ToolkitError, RuntimeError):
    """Label status change not permitted by the review state machine."""

    category = "state"

    def __init__(self, old, new):
        super().__init__(f"label status transition {old!r} -> {new!r} is not allowed")
        self.old = old
        self.new = new


class LockError(ToolkitError, RuntimeError):
    """Scene lock missing, stale, or held by someone else."""

    category = "lock"
