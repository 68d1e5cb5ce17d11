"""Exception hierarchy shared by every module of the package."""


class RPSDEError(Exception):
    """Base class; the CLI renders these with the raising module's name."""

    module = "rpsde"


class NotSymmetric(RPSDEError):
    module = "spectral"


class NotHyperbolic(RPSDEError):
    module = "spectral"


class EigensolveFailure(RPSDEError):
    module = "spectral"


class NotOnGrid(RPSDEError):
    module = "wiener"


# evaluating a path off its lattice is the same failure as shifting off it
OffGrid = NotOnGrid


class EmptyWindow(RPSDEError):
    module = "wiener"


class WindowTooSmall(RPSDEError):
    module = "stochastic_convolution"


class HorizonOffGrid(RPSDEError):
    module = "stochastic_convolution"


class NonConstantDiffusion(RPSDEError):
    module = "stochastic_convolution"


class UnknownFamily(RPSDEError):
    module = "drift_model"


class ConditionMViolation(RPSDEError):
    module = "drift_model"

    def __init__(self, inequality, detail=""):
        self.inequality = inequality
        msg = f"Condition (M) violated: {inequality}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class MissingGradBound(RPSDEError):
    module = "fixed_point_solver"


class NotConverged(RPSDEError):
    """Raised only on request; the solver normally flags non-convergence in its report."""

    module = "fixed_point_solver"

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class NotAutonomous(RPSDEError):
    module = "verifier"


class ConfigError(RPSDEError):
    module = "cli_runner"

    def __init__(self, violations):
        # violations: list of (line or None, message)
        self.violations = list(violations)
        super().__init__("\n".join(_fmt(v) for v in self.violations))


class ParseError(ConfigError):
    pass


class ValidationError(ConfigError):
    pass


def _fmt(v):
    line, msg = v
    return f"line {line}: {msg}" if line is not None else msg
