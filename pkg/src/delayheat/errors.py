"""Exception and warning types shared across the pipeline.

Each error class carries the process exit code the CLI reports for it.
"""


class DelayHeatError(Exception):
    exit_code = 1


class ConfigError(DelayHeatError):
    """Invalid configuration; ``problems`` lists every violated field."""

    exit_code = 2

    def __init__(self, message, problems=None):
        self.problems = list(problems or [])
        if self.problems:
            message = message + "\n" + "\n".join(f"  - {p}" for p in self.problems)
        super().__init__(message)


class DesignError(DelayHeatError):
    """Uncontrollable pair, non-Hurwitz closed loop, bad pole targets."""

    exit_code = 3


class NumericalError(DelayHeatError):
    exit_code = 4


class DivergenceError(DelayHeatError):
    exit_code = 5


class ConvergenceWarning(UserWarning):
    pass


class SpectralWarning(UserWarning):
    pass


class ConditioningWarning(UserWarning):
    pass
