"""Split a two-row defect into ``2d`` coefficient fields along coordinate axes.

Term ``j`` (0-based) has direction ``e_k`` with ``k = j // 2``; the second row
carries sign ``+1`` for even ``j`` and ``-1`` for odd ``j``.
"""

from dataclasses import dataclass

import numpy as np

from .fields import DefectField


def direction(j):
    return j // 2


def row_sign(j):
    return 1.0 if j % 2 == 0 else -1.0


@dataclass(frozen=True)
class RowDecomposition:
    grid: object
    coefficients: np.ndarray  # shape (2d,) + grid.shape

    @property
    def count(self):
        return self.coefficients.shape[0]


def decompose(defect):
    r1, r2 = defect.first, defect.second
    g = np.empty((2 * defect.grid.dim,) + defect.grid.shape)
    g[0::2] = 0.5 * (r1 + r2)
    g[1::2] = 0.5 * (r1 - r2)
    return RowDecomposition(defect.grid, g)


def reconstruct(dec):
    g = dec.coefficients
    return DefectField(dec.grid, g[0::2] + g[1::2], g[0::2] - g[1::2])
