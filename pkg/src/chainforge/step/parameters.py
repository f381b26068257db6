"""Step parameters and the exponent bookkeeping that ties them together."""

import math
from dataclasses import asdict, dataclass


class ExponentError(ValueError):
    pass


def dual(p):
    return p / (p - 1.0)


def exponent_gap(dim, p, ptilde):
    """``(d-1)/ptilde - (d-1)/p' - 1``; positive exactly when the exponents are admissible."""
    return (dim - 1) / ptilde - (dim - 1) / dual(p) - 1.0


def check_exponents(dim, p, ptilde):
    if dim < 2:
        raise ExponentError("dimension must be at least 2")
    if not (p > 1.0 and ptilde >= 1.0):
        raise ExponentError(f"need p > 1 and ptilde >= 1, got p={p}, ptilde={ptilde}")
    if not (1.0 / p + 1.0 / ptilde > 1.0 + 1.0 / (dim - 1)):
        raise ExponentError(
            f"1/p + 1/ptilde = {1 / p + 1 / ptilde:.6f} must exceed 1 + 1/(d-1) = {1 + 1 / (dim - 1):.6f}"
        )
    return exponent_gap(dim, p, ptilde)


def concentration_exponent(gap):
    """``max(2, ceil(1/gap) + 1)``; guarantees ``c * gap > 1``."""
    if gap <= 0:
        raise ExponentError(f"exponent gap must be positive, got {gap}")
    return max(2, math.ceil(1.0 / gap - 1e-12) + 1)


def mu_minimum(dim):
    """Concentrations below this break support disjointness of the ``2d`` offsets."""
    return 2 * dim + 2


@dataclass(frozen=True)
class StepParameters:
    cubes: int
    cutoff: float
    zeta: float
    lam: int
    mu: float
    exponent: int
    gap: float
    mode: str = "standard"

    @property
    def eps(self):
        return 1.0 / self.cubes

    def to_dict(self):
        out = asdict(self)
        out["eps"] = self.eps
        return out

    @classmethod
    def from_dict(cls, data):
        keys = ("cubes", "cutoff", "zeta", "lam", "mu", "exponent", "gap", "mode")
        return cls(**{k: data[k] for k in keys})

    def validate(self, grid):
        problems = []
        if grid.n % self.cubes:
            problems.append(f"cubes {self.cubes} must divide N={grid.n}")
        if self.lam % self.cubes:
            problems.append(f"frequency {self.lam} must be a multiple of {self.cubes}")
        if grid.n % self.lam:
            problems.append(f"frequency {self.lam} must divide N={grid.n}")
        if self.mu < 1.0:
            problems.append(f"concentration {self.mu} below 1")
        if self.mode not in ("standard", "hamiltonian"):
            problems.append(f"unknown mode {self.mode!r}")
        if self.mode == "hamiltonian" and grid.dim % 2:
            problems.append("Hamiltonian mode needs an even dimension")
        if problems:
            raise ValueError("; ".join(problems))
