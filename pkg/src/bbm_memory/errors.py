"""Exception types shared across the package."""


class BBMError(Exception):
    """Base class for package errors."""


class ConfigError(BBMError, ValueError):
    """Invalid configuration or mismatched discretization."""


class ValidationError(BBMError, ValueError):
    """A value violates a structural assumption (kernel conditions, ranges)."""


class UnsupportedQuery(BBMError):
    """The history backend cannot answer this query."""


class DivergenceError(BBMError, FloatingPointError):
    """The numerical solution blew up."""

    def __init__(self, message: str, time: float):
        super().__init__(f"{message} (t = {time:.6g})")
        self.time = time


class InadmissibleForce(BBMError):
    """The force violates the smallness bound ``||F|| < frak_c``."""

    def __init__(self, report):
        super().__init__(
            f"force not admissible: ||F|| = {report.normF:.6g} >= frak_c = {report.frak_c:.6g}"
        )
        self.report = report
