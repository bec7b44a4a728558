from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np

from sbci.core.linalg import combine


class RestartReason(str, Enum):
    STALL_SMALL_B = "StallSmallB"
    NORM_OUT_OF_RANGE = "NormOutOfRange"
    RESIDUAL_BLOWUP = "ResidualBlowup"
    MAX_CYCLE = "MaxCycle"


class StepStatus(str, Enum):
    CONTINUE = "continue"
    CONVERGED = "converged"
    RESTART = "restart"


@dataclass
class StepOutcome:
    status: StepStatus
    reason: Optional[RestartReason] = None
    energy: Optional[float] = None
    vector: Optional[np.ndarray] = None
    image: Optional[np.ndarray] = None

    @classmethod
    def proceed(cls) -> "StepOutcome":
        return cls(StepStatus.CONTINUE)

    @classmethod
    def converged(cls, energy: float, vector: np.ndarray,
                  image: Optional[np.ndarray] = None) -> "StepOutcome":
        return cls(StepStatus.CONVERGED, energy=energy, vector=vector, image=image)

    @classmethod
    def restart(cls, reason: RestartReason) -> "StepOutcome":
        return cls(StepStatus.RESTART, reason=reason)

    @property
    def is_converged(self) -> bool:
        return self.status is StepStatus.CONVERGED

    @property
    def is_restart(self) -> bool:
        return self.status is StepStatus.RESTART


@dataclass
class SubspaceSnapshot:
    """Inputs of the last Rayleigh-Ritz problem and its Ritz coefficients over them."""
    vectors: List[np.ndarray]
    images: List[np.ndarray]
    coefficients: np.ndarray
    values: np.ndarray

    @property
    def size(self) -> int:
        return self.coefficients.shape[1]

    def ritz_vector(self, k: int) -> np.ndarray:
        return combine(self.vectors, self.coefficients[:, k])

    def ritz_image(self, k: int) -> np.ndarray:
        return combine(self.images, self.coefficients[:, k])


@dataclass
class Seed:
    vector: np.ndarray
    image: np.ndarray
    energy: float


@dataclass
class ConvergedEigenpair:
    state: int
    energy: float
    vector: np.ndarray
    iterations: int = 0
    restarts: int = 0
    residual_norm: float = 0.0
    image: Optional[np.ndarray] = None


@dataclass
class SolveResult:
    method: str
    eigenpairs: List[ConvergedEigenpair]
    trace: list = field(default_factory=list)
    init_matvecs: int = 0
    refresh_matvecs: int = 0
    peak_vectors: int = 0

    @property
    def energies(self) -> List[float]:
        return [pair.energy for pair in self.eigenpairs]

    @property
    def vectors(self) -> List[np.ndarray]:
        return [pair.vector for pair in self.eigenpairs]

    @property
    def iterations(self) -> int:
        return len(self.trace)

    @property
    def restarts(self) -> int:
        return sum(1 for record in self.trace if record.restart_reason)


def sorted_pairs(pairs: Sequence[ConvergedEigenpair]) -> List[ConvergedEigenpair]:
    return sorted(pairs, key=lambda pair: pair.energy)
