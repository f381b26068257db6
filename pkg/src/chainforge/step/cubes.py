"""Cube partition of the grid, cube averages and nested cutoff functions."""

import itertools
from functools import reduce

import numpy as np
from scipy.special import expit

from ..mikado import smooth_step


class CubePartition:
    """Partition of the torus into ``cubes**d`` axis-aligned cubes of side ``1/cubes``."""

    def __init__(self, grid, cubes):
        if cubes < 1 or grid.n % cubes:
            raise ValueError(f"{cubes} cubes per axis do not tile {grid.n} samples")
        self.grid = grid
        self.cubes = int(cubes)
        self.block = grid.n // cubes

    @property
    def side(self):
        return 1.0 / self.cubes

    def indices(self):
        return itertools.product(range(self.cubes), repeat=self.grid.dim)

    def slices(self, q):
        b = self.block
        return tuple(slice(qi * b, (qi + 1) * b) for qi in q)

    def coords(self, qi):
        return (qi * self.block + np.arange(self.block)) / self.grid.n

    def means(self, arr):
        """Cube averages over the trailing spatial axes (midpoint rule)."""
        d, n, b = self.grid.dim, self.cubes, self.block
        lead = arr.shape[: arr.ndim - d]
        shaped = np.asarray(arr).reshape(lead + sum(((n, b) for _ in range(d)), ()))
        axes = tuple(len(lead) + 2 * i + 1 for i in range(d))
        return shaped.mean(axis=axes)

    def expand(self, means):
        """Piecewise-constant field from cube values."""
        out = means
        lead = means.ndim - self.grid.dim
        for axis in range(self.grid.dim):
            out = np.repeat(out, self.block, axis=lead + axis)
        return out


def ramp(t, lo, hi):
    """0 for ``t <= lo``, 1 for ``t >= hi``, smooth in between; plateaus exact."""
    t = np.asarray(t, dtype=np.float64)
    out = np.where(t >= hi, 1.0, 0.0)
    mid = (t > lo) & (t < hi)
    out[mid] = smooth_step((t[mid] - lo) / (hi - lo))
    return out


def ramp_derivatives(t, lo, hi):
    """Value, first and second derivative of :func:`ramp` with respect to ``t``."""
    t = np.asarray(t, dtype=np.float64)
    width = hi - lo
    val = ramp(t, lo, hi)
    d1 = np.zeros_like(t)
    d2 = np.zeros_like(t)
    mid = (t > lo) & (t < hi)
    if np.any(mid):
        s = (t[mid] - lo) / width
        # smooth_step(s) = expit(v) with v = 1/(1-s) - 1/s
        sig = expit(1.0 / (1.0 - s) - 1.0 / s)
        dv = 1.0 / (1.0 - s) ** 2 + 1.0 / s**2
        ddv = 2.0 / (1.0 - s) ** 3 - 2.0 / s**3
        ds = sig * (1.0 - sig)
        d1[mid] = ds * dv / width
        d2[mid] = (ds * (1.0 - 2.0 * sig) * dv**2 + ds * ddv) / width**2
    return val, d1, d2


def cutoff_derivatives(x, start, side, alpha, which="chi"):
    """Analytic 1-D cutoff factor of the cube ``[start, start+side)`` at points ``x`` inside it.

    Returns value, first and second derivative in ``x``.
    """
    rel = np.asarray(x, dtype=np.float64) - start
    dist = np.minimum(rel, side - rel)
    sign = np.where(rel <= side - rel, 1.0, -1.0)
    ae = alpha * side
    if which == "chi":
        val, d1, d2 = ramp_derivatives(dist, 0.5 * ae, ae)
    else:
        val, d1, d2 = ramp_derivatives(dist, 0.25 * ae, 0.5 * ae)
        inside = dist >= 0.5 * ae
        val, d1, d2 = np.where(inside, 1.0, val), np.where(inside, 0.0, d1), np.where(inside, 0.0, d2)
    return val, sign * d1, d2


class CubeCutoffs:
    """Tensorized cutoffs ``chi`` (plateau beyond ``a*eps``) and ``psi`` (beyond ``a*eps/2``).

    Every cube has the same relative sample positions, so one block array
    serves all cubes.  ``chi != 0`` implies ``psi == 1`` exactly.
    """

    def __init__(self, partition, alpha):
        if not 0.0 < alpha < 0.5:
            raise ValueError(f"cutoff parameter must lie in (0, 1/2), got {alpha}")
        self.partition = partition
        self.alpha = float(alpha)
        eps = partition.side
        if 0.25 * self.alpha * eps * partition.grid.n < 1.0:
            raise ValueError(
                f"cutoff ramp of width {0.25 * self.alpha * eps:.3e} is below the grid spacing "
                f"1/{partition.grid.n}; use a larger grid or cutoff parameter")
        rel = np.arange(partition.block) / partition.grid.n
        dist = np.minimum(rel, eps - rel)
        ae = self.alpha * eps
        self.chi_1d = ramp(dist, 0.5 * ae, ae)
        self.psi_1d = ramp(dist, 0.25 * ae, 0.5 * ae)
        self.psi_1d[self.chi_1d > 0] = 1.0
        d = partition.grid.dim
        self.chi_block = reduce(np.multiply.outer, [self.chi_1d] * d)
        self.psi_block = reduce(np.multiply.outer, [self.psi_1d] * d)

    def full(self, q, which="chi"):
        grid = self.partition.grid
        out = np.zeros(grid.shape)
        out[self.partition.slices(q)] = self.chi_block if which == "chi" else self.psi_block
        return out

    def band_volume(self):
        """Measured volume where ``chi < 1``."""
        return float(1.0 - np.mean(self.chi_1d == 1.0) ** self.partition.grid.dim)

    def check(self):
        """Sampled nesting checks with analytic gradients of the 1-D factors."""
        eps = self.partition.side
        rel = np.arange(self.partition.block) / self.partition.grid.n
        dist = np.minimum(rel, eps - rel)
        ae = self.alpha * eps
        psi_moving = (dist > 0.25 * ae) & (dist < 0.5 * ae)
        chi_moving = (dist > 0.5 * ae) & (dist < ae)
        return {
            "psi_moving_implies_chi_zero": bool(np.all(self.chi_1d[psi_moving] == 0.0)),
            "chi_moving_implies_psi_one": bool(np.all(self.psi_1d[chi_moving] == 1.0)),
            "chi_nonzero_implies_psi_one": bool(np.all(self.psi_1d[self.chi_1d > 0] == 1.0)),
            "chi_plateau_beyond_band": bool(np.all(self.chi_1d[dist > ae] == 1.0)),
            "chi_zero_near_faces": bool(np.all(self.chi_1d[dist < 0.5 * ae] == 0.0)),
        }
