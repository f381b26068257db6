"""Right inverse of the divergence on zero-mean scalars, ``R = grad Delta^{-1}``."""

import numpy as np

from .fields import ScalarField, VectorField, gradient_inverse_laplacian, lp_norm_array


def antidivergence(s, tol=1e-12):
    """Vector field ``v`` with ``div v = s`` (discrete symbol); ``s`` must have zero mean."""
    scale = max(1.0, float(np.abs(s.values).max()))
    if abs(s.mean()) > tol * scale:
        raise ValueError(f"antidivergence needs zero mean, got {s.mean():.3e}")
    return VectorField(s.grid, gradient_inverse_laplacian(s.values, s.grid))


def oscillate(profile, grid, frequency):
    """Sample ``x -> profile(frequency * x)`` for a 1-periodic vectorized profile."""
    coords = np.meshgrid(*([grid.axis()] * grid.dim), indexing="ij")
    return profile(*[frequency * c for c in coords])


def gain_audit(slow, fast, grid, frequencies, r=np.inf):
    """Measure ``||R(f g_lambda)||_{L^r}`` against ``lambda`` and fit a log-log slope.

    ``slow`` and ``fast`` are callables on coordinates; ``fast`` is 1-periodic
    with zero mean.
    """
    coords = np.meshgrid(*([grid.axis()] * grid.dim), indexing="ij")
    f = np.asarray(slow(*coords), dtype=np.float64) * np.ones(grid.shape)
    norms = []
    for lam in frequencies:
        src = f * oscillate(fast, grid, lam)
        src = src - src.mean()
        v = antidivergence(ScalarField(grid, src))
        norms.append(lp_norm_array(v.values, grid, r))
    slope = float(np.polyfit(np.log(frequencies), np.log(norms), 1)[0])
    return {"frequencies": list(map(float, frequencies)), "norms": norms, "slope": slope}
