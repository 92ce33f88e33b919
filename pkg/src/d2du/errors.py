"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid network configuration, density vector or scenario file."""


class NumericalFailure(RuntimeError):
    """A quadrature did not reach its tolerance.

    Carries the name of the integral, the estimate achieved so far and the
    error bound at the point of giving up.
    """

    def __init__(self, integral: str, estimate: float, error: float, detail: str = ""):
        self.integral = integral
        self.estimate = estimate
        self.error = error
        msg = f"{integral}: no convergence (estimate={estimate:.6g}, error bound={error:.3g})"
        if detail:
            msg += f"; {detail}"
        super().__init__(msg)
