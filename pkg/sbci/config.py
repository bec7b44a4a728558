from pathlib import Path
from dataclasses import dataclass, asdict, fields, replace
from typing import Any, Dict, List, Optional

from sbci.core.errors import ContractError


PROJECT_ROOT = Path(__file__).parent.parent
DATA_DIR = PROJECT_ROOT / "data"
RUNS_DIR = DATA_DIR / "runs"

SBCI_DIR = PROJECT_ROOT / "sbci"
FIXTURES_DIR = SBCI_DIR / "tests" / "fixtures"

LOG_DIR = DATA_DIR / "logs"
LOG_FILE = LOG_DIR / "sbci.log"
LOG_ROTATION = "10 MB"


REGEX = {
    "MM_HEADER": r"^%%MatrixMarket\s+matrix\s+coordinate\s+real\s+symmetric\s*$",
    "MM_SIZE": r"^\s*(\d+)\s+(\d+)\s+(\d+)\s*$",
    "MM_ENTRY": r"^\s*(\d+)\s+(\d+)\s+(\S+)\s*$",
    "FCI_NAMELIST": r"&FCI\b(.*?)(?:&END|/)",
    "FCI_FIELD": r"\b(NORB|NELEC|MS2)\s*=\s*(-?\d+)",
}


PRESETS: Dict[str, tuple] = {
    "tight": (1e-10, 1e-5),
    "loose": (1e-8, 1e-4),
}


@dataclass
class SolverConfig:
    eps0: float = 1e-10
    r0: float = 1e-5
    b_th: float = 1e-2
    eps1: float = 1e-7
    x_th1: float = 0.1
    x_th2: float = 1.2
    r1: float = 1.0
    max_cycle: int = 20
    max_cycle_pair: int = 10
    t_max: int = 10000
    lindep: float = 1e-14
    clamp_delta: float = 1e-10
    refresh_every: int = 5

    def validate(self) -> "SolverConfig":
        for name in ("eps0", "r0", "b_th", "eps1", "x_th1", "x_th2", "r1", "lindep", "clamp_delta"):
            if not getattr(self, name) > 0:
                raise ContractError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.x_th1 < 1.0 < self.x_th2:
            raise ContractError(f"norm window must bracket 1: x_th1={self.x_th1}, x_th2={self.x_th2}")
        if self.max_cycle < 2 or self.max_cycle_pair < 2:
            raise ContractError("max_cycle must be at least 2")
        if self.t_max < 1 or self.refresh_every < 1:
            raise ContractError("t_max and refresh_every must be at least 1")
        return self

    def with_overrides(self, **overrides: Any) -> "SolverConfig":
        changes = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **changes).validate()

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SolverConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ContractError(f"unknown solver config keys: {', '.join(unknown)}")
        return cls(**data).validate()


def solver_config(preset: str = "tight", **overrides: Any) -> SolverConfig:
    if preset not in PRESETS:
        raise ContractError(f"unknown preset '{preset}', expected one of {sorted(PRESETS)}")
    eps0, r0 = PRESETS[preset]
    return SolverConfig(eps0=eps0, r0=r0).with_overrides(**overrides)


@dataclass
class DavidsonConfig:
    nroots: int = 1
    max_space: Optional[int] = None
    max_iter: int = 500
    eps0: float = 1e-10
    r0: float = 1e-5
    lindep: float = 1e-14
    check_orthonormality: bool = False

    def __post_init__(self):
        if self.max_space is None:
            self.max_space = 12 * self.nroots
        if self.nroots < 1:
            raise ContractError("nroots must be at least 1")
        if self.max_space < 2 * self.nroots:
            raise ContractError(f"max_space={self.max_space} must be at least 2*nroots={2 * self.nroots}")

    @classmethod
    def from_solver_config(cls, cfg: SolverConfig, nroots: int, **extra: Any) -> "DavidsonConfig":
        return cls(nroots=nroots, eps0=cfg.eps0, r0=cfg.r0, lindep=cfg.lindep, **extra)


@dataclass
class FciConfig:
    max_det: int = 5_000_000


SOLVER_CONFIG = SolverConfig()
FCI_CONFIG = FciConfig()


TRACE_COLUMNS: List[str] = [
    "method", "state", "pair_partner", "segment", "t", "status",
    "E", "dE", "res_norm",
    "b", "c", "b_ab", "b_ba", "b_bb", "c_ab", "c_ba", "c_bb", "a_ab", "a_ba",
    "x_norm", "E_partner", "x_norm_partner", "kinetic", "matvecs", "restart_reason",
]

SUMMARY_KEYS: List[str] = [
    "method", "nroots", "dim", "energies", "iterations", "restarts",
    "matvecs", "wall_time", "peak_vectors", "converged",
]

METHODS: List[str] = ["sbci1", "sbci2", "davidson"]


class OutputFiles:
    MATRIX_MTX = "hamiltonian.mtx"


def ensure_directories() -> None:
    for directory in [DATA_DIR, RUNS_DIR, LOG_DIR]:
        directory.mkdir(parents=True, exist_ok=True)
