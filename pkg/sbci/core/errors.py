from typing import List, Optional


class SbciError(Exception):
    """Base class for solver, parser and backend failures."""


class DimensionError(SbciError, ValueError):
    pass


class ContractError(SbciError, ValueError):
    pass


class RankDeficiencyError(SbciError):
    def __init__(self, index: int, message: str = ""):
        self.index = index
        super().__init__(message or f"direction {index} is linearly dependent on the previous ones")


class EmptyBasisError(SbciError):
    pass


class ParseError(SbciError, ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}" if line is not None else message)


class NonConvergenceError(SbciError, RuntimeError):
    def __init__(self, state: int, energy: float, residual: float, iterations: int,
                 residuals: Optional[List[float]] = None, method: str = "sbci1"):
        self.state = state
        self.energy = energy
        self.residual = residual
        self.iterations = iterations
        self.residuals = residuals
        self.method = method
        detail = f"state {state} not converged after {iterations} iterations ({method}): " \
                 f"best E={energy:.12f}, |z'|={residual:.3e}"
        if residuals is not None:
            detail += f", residuals={[float(f'{r:.3e}') for r in residuals]}"
        super().__init__(detail)


class SizeGuardError(SbciError):
    def __init__(self, n_det: int, limit: int):
        self.n_det = n_det
        self.limit = limit
        super().__init__(f"determinant space has {n_det:,} entries, above the limit of {limit:,}; "
                         f"pass an explicit override to build it anyway")
