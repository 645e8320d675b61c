"""Exception hierarchy shared by all keyforge modules."""


class KeyforgeError(Exception):
    """Base class for every error raised by the package."""


class NonHermitianInput(KeyforgeError):
    pass


class NegativeEigenvalue(KeyforgeError):
    pass


class DimensionMismatch(KeyforgeError):
    pass


class InvalidPovm(KeyforgeError):
    pass


class IncompleteKeyMap(KeyforgeError):
    pass


class InvalidDistribution(KeyforgeError):
    pass


class EfficiencyOutOfRange(KeyforgeError):
    pass


class InvalidQber(KeyforgeError):
    pass


class IllFormedProgram(KeyforgeError):
    pass


class IdentityConstraintMissing(KeyforgeError):
    pass


class PerturbationOutOfRange(KeyforgeError):
    pass


class InfeasibleScenario(KeyforgeError):
    pass


class UnsupportedConstraint(KeyforgeError):
    pass


class SolverNotConverged(KeyforgeError):
    pass


class SOutOfRange(KeyforgeError):
    pass


class OutOfRange(KeyforgeError):
    pass


class TooFewRounds(KeyforgeError):
    """Raised when n is below the AEP validity threshold."""

    def __init__(self, n, threshold):
        super().__init__(f"n={n} is below the required threshold {threshold}")
        self.n = n
        self.threshold = threshold


class InfeasibleObservations(KeyforgeError):
    pass


class ConfigValidation(KeyforgeError):
    """Carries every violation found while validating a config document."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = [f"{path}: {msg}" for path, msg in self.violations]
        super().__init__("invalid configuration\n" + "\n".join(lines))
