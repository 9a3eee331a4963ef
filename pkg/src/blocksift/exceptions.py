"""Exception types, mapped to CLI exit codes by the command-line front end."""


class InputError(ValueError):
    """Malformed or inconsistent user input (CLI exit code 1)."""


class GeneratorError(InputError):
    """Synthetic-pattern calibration could not meet a planted mass target."""


class InfeasibleGridError(RuntimeError):
    """No hyperparameter cell met the recall floor for some length range (exit code 2)."""


class InternalInvariantError(AssertionError):
    """A runtime self-check failed; indicates a bug, not bad input (exit code 3)."""
