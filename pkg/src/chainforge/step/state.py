from dataclasses import dataclass

import numpy as np

from ..fields import DefectField, ScalarField, VectorField, zeros_defect, zeros_scalar, zeros_vector


@dataclass(frozen=True)
class State:
    """Density, field, two-row defect and the current source ``h``."""

    rho: ScalarField
    u: VectorField
    defect: DefectField
    h: VectorField

    @property
    def grid(self):
        return self.rho.grid

    @classmethod
    def initial(cls, h):
        """Zero density and field; the whole source sits in the second defect row."""
        grid = h.grid
        zero = zeros_defect(grid)
        return cls(zeros_scalar(grid), zeros_vector(grid), DefectField(grid, zero.first, h.values), h)


def defect_l1(defect):
    """``||R||_{L^1}`` with the Frobenius norm of the 2 x d matrix pointwise."""
    acc = np.zeros(defect.grid.shape)
    for row in (defect.first, defect.second):
        for comp in row:
            acc += comp * comp
    return float(np.mean(np.sqrt(acc)))


def defect_sup(defect):
    acc = np.zeros(defect.grid.shape)
    for row in (defect.first, defect.second):
        for comp in row:
            acc += comp * comp
    return float(np.sqrt(acc.max()))
