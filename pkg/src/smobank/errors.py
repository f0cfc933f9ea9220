"""Exception and warning types shared across the package."""


class SmobankError(Exception):
    """Base class for all domain errors raised by this package."""


class SingularMatrix(SmobankError):
    """A linear solve hit a pivot below the singularity tolerance."""


class EigFailure(SmobankError):
    """The eigenvalue iteration did not converge."""


class NotHurwitz(SmobankError):
    """A matrix required to be Hurwitz has an eigenvalue with Re >= 0."""


class BadQ(SmobankError):
    """A Lyapunov right-hand side is not symmetric positive definite."""


class PlacementFailure(SmobankError):
    """Eigenvalue assignment failed for the requested pole set."""


class BadTransform(SmobankError):
    """A user-supplied coordinate change violates the canonical-form invariants."""


class InsufficientGain(SmobankError):
    """The injection magnitude does not dominate the disturbance bound."""


class DegenerateBank(SmobankError):
    """The observer initial states do not span the state space."""


class SingularD2(SmobankError):
    """The disturbance distribution block lost column rank."""


class NumericalBlowup(SmobankError):
    """Integration produced a non-finite state; carries the failure time."""

    def __init__(self, t, message=None):
        self.t = float(t)
        super().__init__(message or f"non-finite state at t = {self.t:.6g} s")


class HullViolation(UserWarning):
    """The plant initial state lies outside the hull of the observer initial
    states.  Simulation is still allowed; the transient-free estimation
    guarantee is void."""
