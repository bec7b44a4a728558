"""
Preconditioner Module

Diagonal inverse-mass preconditioner (D - E0)^-1 with a sign-preserving clamp,
and the deflation set of converged eigenvectors that later states are kept
orthogonal to.
"""

from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from sbci.core.errors import DimensionError
from sbci.core.linalg import dot, norm


@dataclass(frozen=True, eq=False)
class GroundShiftPreconditioner:
    diagonal: np.ndarray
    e0: float
    clamp_delta: float = 1e-10

    def denominators(self) -> np.ndarray:
        shifted = self.diagonal - self.e0
        small = np.abs(shifted) < self.clamp_delta
        if not np.any(small):
            return shifted
        clamped = np.where(shifted < 0.0, -self.clamp_delta, self.clamp_delta)
        return np.where(small, clamped, shifted)

    def apply(self, zres: np.ndarray) -> np.ndarray:
        zres = np.asarray(zres, dtype=float)
        if zres.shape != self.diagonal.shape:
            raise DimensionError(f"residual has shape {zres.shape}, diagonal {self.diagonal.shape}")
        return zres / self.denominators()

    def kinetic(self, y: np.ndarray) -> float:
        """y^T M y with M = D - E0 (guarded)."""
        return float(np.dot(y * self.denominators(), y))


def update_shift(pre: GroundShiftPreconditioner, e_new: float) -> GroundShiftPreconditioner:
    if e_new == pre.e0:
        return pre
    return replace(pre, e0=float(e_new))


@dataclass(frozen=True, eq=False)
class DeflationSet:
    vectors: Tuple[np.ndarray, ...] = field(default_factory=tuple)
    energies: Tuple[float, ...] = field(default_factory=tuple)
    images: Tuple[np.ndarray, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.vectors)

    def extended(self, x_c: np.ndarray, e_c: float,
                 hx_c: Optional[np.ndarray] = None) -> "DeflationSet":
        """Add a converged pair; without a cached image, E_c x_c stands in for H x_c."""
        x_c = np.asarray(x_c, dtype=float)
        hx_c = e_c * x_c if hx_c is None else np.asarray(hx_c, dtype=float)
        x_c, hx_c = self.project_with_image(x_c, hx_c)
        scale = 1.0 / norm(x_c)
        return DeflationSet(self.vectors + (x_c * scale,), self.energies + (float(e_c),),
                            self.images + (hx_c * scale,))

    def project(self, v: np.ndarray) -> np.ndarray:
        # two sweeps: output orthogonal to every x_c within roundoff
        out = np.array(v, dtype=float)
        for _ in range(2 if self.vectors else 0):
            for x_c in self.vectors:
                out -= dot(x_c, out) * x_c
        return out

    def project_with_image(self, v: np.ndarray, hv: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Project v and carry its image along through the cached images of the x_c."""
        out = np.array(v, dtype=float)
        image = np.array(hv, dtype=float)
        for _ in range(2 if self.vectors else 0):
            for x_c, hx_c in zip(self.vectors, self.images):
                overlap = dot(x_c, out)
                out -= overlap * x_c
                image -= overlap * hx_c
        return out, image


def precondition_and_deflate(zres: np.ndarray, pre: GroundShiftPreconditioner,
                             defl: DeflationSet) -> np.ndarray:
    return defl.project(pre.apply(zres))
