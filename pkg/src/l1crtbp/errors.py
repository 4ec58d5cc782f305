"""Exception hierarchy shared by the solver modules."""


class L1CrtbpError(Exception):
    """Base class for all errors raised by this package."""


class SingularityError(L1CrtbpError):
    """Position too close to one of the primaries."""


class DegenerateMass(L1CrtbpError):
    """Spacecraft mass at or below the dry mass."""


class UndefinedDirection(L1CrtbpError):
    """Thrust direction requested where the primer vector vanishes."""


class RegularityViolation(L1CrtbpError):
    """A switching point with |H01| below the regularity tolerance."""

    def __init__(self, t, h01, tol):
        super().__init__(f"irregular switch at t={t:.15g}: |H01|={abs(h01):.3e} < {tol:.1e}")
        self.t = t
        self.h01 = h01


class ChatteringSuspected(L1CrtbpError):
    """Too many switches: the extremal may be approaching a chattering arc."""

    def __init__(self, n_switches, t):
        super().__init__(f"{n_switches} switches detected by t={t:.6g}; aborting")
        self.n_switches = n_switches
        self.t = t


class IntegrationError(L1CrtbpError):
    """The step size underflowed."""


class NoConvergence(L1CrtbpError):
    def __init__(self, iterations, residual, reason=""):
        msg = f"Newton failed after {iterations} iterations, |S|_inf={residual:.3e}"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)
        self.iterations = iterations
        self.residual = residual


class HomotopyStalled(L1CrtbpError):
    def __init__(self, lambda_reached, detail=""):
        msg = f"continuation stalled at lambda={lambda_reached:.6g}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.lambda_reached = lambda_reached


class RankDeficientTarget(L1CrtbpError):
    """The target constraint Jacobian lost full row rank."""


class NearSingularMx(L1CrtbpError):
    """dx/dp0 at the final time is too ill-conditioned to invert."""

    def __init__(self, cond):
        super().__init__(f"cond(dx/dp0) = {cond:.3e}")
        self.cond = cond


class PathSolveFailed(L1CrtbpError):
    def __init__(self, xi, detail=""):
        super().__init__(f"fixed-endpoint solve failed at xi={xi:.6g} {detail}".rstrip())
        self.xi = xi


class ScenarioError(L1CrtbpError):
    """Base for scenario file problems."""


class ParseError(ScenarioError):
    pass


class ValidationError(ScenarioError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
