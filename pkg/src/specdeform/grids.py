"""Uniform momentum grids for the dense fiber pipeline."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MomentumGrid:
    """Uniform symmetric grid on [-cutoff, cutoff]^dim.

    `points` is the node count per axis and must be odd so that 0 is a node
    and the node set is symmetric about the origin.
    """

    cutoff: float
    points: int
    dim: int = 1

    def __post_init__(self):
        if self.cutoff <= 0:
            raise ValueError("cutoff must be positive")
        if self.points < 3 or self.points % 2 == 0:
            raise ValueError("points must be odd and >= 3")
        if self.dim not in (1, 2):
            raise ValueError("dense pipeline supports dim 1 or 2")
        if self.dim == 2 and self.points > 64:
            raise ValueError("dim=2 grids are limited to 64 points per axis")

    @property
    def spacing(self) -> float:
        return 2.0 * self.cutoff / (self.points - 1)

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.cutoff, self.cutoff, self.points)

    @property
    def size(self) -> int:
        return self.points**self.dim

    def nodes(self) -> np.ndarray:
        """All grid nodes, shape (points**dim, dim)."""
        ax = self.axis
        if self.dim == 1:
            return ax[:, None]
        xx, yy = np.meshgrid(ax, ax, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])

    @property
    def grid_id(self) -> str:
        return f"K{self.cutoff:g}_N{self.points}_d{self.dim}"

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim
