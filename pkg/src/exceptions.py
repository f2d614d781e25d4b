"""
Custom exceptions for the adaptive NOMA/OMA scheduling toolkit
"""


class AoISchedError(Exception):
    """Base exception class for scheduling toolkit errors"""
    pass


class InvalidParameterError(AoISchedError):
    """Raised when a physical or numerical parameter is invalid"""
    pass


class ConstraintViolationError(AoISchedError):
    """Raised when a two-user power split violates the NOMA decodability condition"""
    pass


class ConvergenceError(AoISchedError):
    """Raised when an iterative solver exhausts its iteration budget"""

    def __init__(self, message: str, iterations: int, residual: float):
        super().__init__(f"{message} (iterations={iterations}, residual={residual:.3e})")
        self.iterations = iterations
        self.residual = residual


class SwitchingStructureError(AoISchedError):
    """Raised when a policy is not of switching type but boundaries are requested"""

    def __init__(self, message: str, violations: list):
        super().__init__(f"{message} ({len(violations)} violating pairs)")
        self.violations = violations


class CombinatorialGuardError(AoISchedError):
    """Raised when an exhaustive search would exceed its size guard"""
    pass


class PolicyResolutionError(AoISchedError):
    """Raised when a simulation policy identifier cannot be resolved"""
    pass


class SimulationError(AoISchedError):
    """Raised when a policy fails during a simulation run"""

    def __init__(self, message: str, slot: int, ages: tuple[int, ...]):
        super().__init__(f"{message} (slot={slot}, ages={ages})")
        self.slot = slot
        self.ages = ages


class SpecValidationError(AoISchedError):
    """Raised when an experiment spec document is invalid; carries every error found"""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors) if errors else "invalid experiment spec")
        self.errors = errors


class RunFailedError(AoISchedError):
    """Raised when simulate rows fail; the rows are still written with their error column"""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors
