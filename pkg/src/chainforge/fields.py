"""Periodic grid fields on the unit torus and their spectral calculus.

Fields are sampled at the points ``i / N`` along every axis.  All derivative
operators share one discrete symbol (``2*pi*i*m`` with the Nyquist mode
zeroed), so discrete summation by parts and ``div grad = laplacian`` hold to
round-off.  This is what makes the weak identities audited downstream exact
on any grid.
"""

import os
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft


def _workers():
    try:
        return max(1, int(os.environ.get("FORGE_THREADS", "1")))
    except ValueError:
        return 1


def _frozen(arr):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.flags.writeable:
        arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GridSpec:
    dim: int
    n: int

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError(f"dimension must be at least 2, got {self.dim}")
        if self.n < 4 or self.n & (self.n - 1):
            raise ValueError(f"samples per axis must be a power of two >= 4, got {self.n}")

    @property
    def shape(self):
        return (self.n,) * self.dim

    @property
    def size(self):
        return self.n**self.dim

    @property
    def spacing(self):
        return 1.0 / self.n

    def axis(self):
        return np.arange(self.n) / self.n

    def coordinate(self, axis):
        """Coordinate ``x_axis`` as a broadcastable array."""
        shape = [1] * self.dim
        shape[axis] = self.n
        return self.axis().reshape(shape)


@dataclass(frozen=True)
class ScalarField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ValueError(f"expected shape {self.grid.shape}, got {self.values.shape}")
        object.__setattr__(self, "values", _frozen(self.values))

    def mean(self):
        return float(self.values.mean())


@dataclass(frozen=True)
class VectorField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        want = (self.grid.dim,) + self.grid.shape
        if self.values.shape != want:
            raise ValueError(f"expected shape {want}, got {self.values.shape}")
        object.__setattr__(self, "values", _frozen(self.values))

    def component(self, k):
        return ScalarField(self.grid, self.values[k])


@dataclass(frozen=True)
class DefectField:
    """Two-row defect; each row is a ``(d,) + grid.shape`` array."""

    grid: GridSpec
    first: np.ndarray
    second: np.ndarray

    def __post_init__(self):
        want = (self.grid.dim,) + self.grid.shape
        for name in ("first", "second"):
            arr = getattr(self, name)
            if arr.shape != want:
                raise ValueError(f"defect row {name}: expected shape {want}, got {arr.shape}")
            object.__setattr__(self, name, _frozen(arr))

    def row(self, i):
        return VectorField(self.grid, (self.first, self.second)[i])

    @property
    def values(self):
        return np.stack([self.first, self.second])

    @classmethod
    def from_array(cls, grid, values):
        return cls(grid, values[0], values[1])


def zeros_scalar(grid):
    """Zero field backed by a broadcast view (no storage)."""
    return ScalarField(grid, np.broadcast_to(np.float64(0.0), grid.shape))


def zeros_vector(grid):
    return VectorField(grid, np.broadcast_to(np.float64(0.0), (grid.dim,) + grid.shape))


def zeros_defect(grid):
    z = np.broadcast_to(np.float64(0.0), (grid.dim,) + grid.shape)
    return DefectField(grid, z, z)


def is_zero_view(arr):
    """True for the storage-free zero fields built above."""
    return arr.ndim > 0 and all(st == 0 for st in arr.strides) and arr.flat[0] == 0.0


def sample_analytic(f, grid, components=None):
    """Sample ``f(*coords)`` on the grid; ``components`` selects the field kind."""
    coords = np.meshgrid(*([grid.axis()] * grid.dim), indexing="ij")
    out = np.asarray(f(*coords), dtype=np.float64)
    bad = np.argwhere(~np.isfinite(out))
    if bad.size:
        idx = tuple(int(v) for v in bad[0][out.ndim - grid.dim:]) if out.ndim >= grid.dim else ()
        point = tuple(i / grid.n for i in idx)
        raise ValueError(f"non-finite sample at x = {point}")
    if components is None:
        return ScalarField(grid, np.broadcast_to(out, grid.shape).copy())
    return VectorField(grid, np.broadcast_to(out, (grid.dim,) + grid.shape).copy())


# spectral symbols -------------------------------------------------------


def _wavenumbers(grid):
    """Per-axis ``2*pi*m`` arrays for the rfft layout, Nyquist zeroed."""
    n = grid.n
    out = []
    for axis in range(grid.dim):
        if axis == grid.dim - 1:
            m = sfft.rfftfreq(n, 1.0 / n)
        else:
            m = sfft.fftfreq(n, 1.0 / n)
        m = m.copy()
        m[np.abs(m) == n // 2] = 0.0
        shape = [1] * grid.dim
        shape[axis] = m.size
        out.append((2.0 * np.pi * m).reshape(shape))
    return out


def _rfft(a):
    return sfft.rfftn(a, workers=_workers())


def _irfft(a, grid):
    return sfft.irfftn(a, s=grid.shape, workers=_workers())


def derivative(values, grid, axis):
    """Spectral partial derivative of a raw sample array."""
    k = _wavenumbers(grid)[axis]
    return _irfft(1j * k * _rfft(values), grid)


def derivative_1d(samples):
    """Spectral derivative of a 1-periodic sample vector, Nyquist zeroed."""
    n = samples.size
    m = sfft.rfftfreq(n, 1.0 / n)
    m[m == n // 2] = 0.0
    return sfft.irfft(2j * np.pi * m * sfft.rfft(samples), n=n)


def spectral_gradient(s):
    grid = s.grid
    hat = _rfft(s.values)
    ks = _wavenumbers(grid)
    return VectorField(grid, np.stack([_irfft(1j * k * hat, grid) for k in ks]))


def spectral_divergence(v):
    grid = v.grid
    ks = _wavenumbers(grid)
    acc = None
    for axis, k in enumerate(ks):
        term = 1j * k * _rfft(v.values[axis])
        acc = term if acc is None else acc + term
    return ScalarField(grid, _irfft(acc, grid))


def _laplacian_symbol(grid):
    ks = _wavenumbers(grid)
    sym = 0.0
    for k in ks:
        sym = sym - k**2
    return sym


def inverse_laplacian(s, tol=1e-12):
    """Zero-mean solution of ``Delta phi = s`` with the discrete symbol."""
    grid = s.grid
    if abs(s.mean()) > tol * float(np.abs(s.values).max()):
        raise ValueError(f"inverse Laplacian needs zero mean, got {s.mean():.3e}")
    return ScalarField(grid, _irfft(_inverse_laplacian_hat(_rfft(s.values), grid), grid))


def _inverse_laplacian_hat(hat, grid):
    sym = np.broadcast_to(_laplacian_symbol(grid), hat.shape)
    out = np.zeros_like(hat)
    live = sym != 0.0
    out[live] = hat[live] / sym[live]
    return out


def gradient_inverse_laplacian(values, grid):
    """``grad Delta^{-1}`` of a raw zero-mean array, one forward transform."""
    hat = _inverse_laplacian_hat(_rfft(values), grid)
    return np.stack([_irfft(1j * k * hat, grid) for k in _wavenumbers(grid)])


# norms --------------------------------------------------------------------


def pointwise_magnitude(values, grid):
    """Euclidean (or Frobenius) magnitude over all leading component axes."""
    lead = values.ndim - grid.dim
    if lead == 0:
        return np.abs(values)
    flat = values.reshape((-1,) + grid.shape)
    acc = np.zeros(grid.shape)
    tmp = np.empty(grid.shape)
    for comp in flat:
        acc += np.multiply(comp, comp, out=tmp)
    return np.sqrt(acc, out=acc)


def lp_norm_array(values, grid, r):
    if not r >= 1.0:
        raise ValueError(f"norm exponent must be at least 1, got {r}")
    mag = pointwise_magnitude(values, grid)
    if np.isinf(r):
        return float(mag.max())
    if r == 1.0:
        return float(np.mean(mag))
    return float(np.mean(np.power(mag, r, out=mag if mag is not values else None)) ** (1.0 / r))


def lp_norm(field, r):
    return lp_norm_array(field.values, field.grid, r)


def jacobian_lp_norm(values, grid, r):
    """``||Dv||_{L^r}`` of a raw scalar or vector array, Frobenius pointwise."""
    ks = _wavenumbers(grid)
    acc = np.zeros(grid.shape)
    comps = values if values.ndim > grid.dim else values[None]
    for comp in comps:
        hat = _rfft(comp)
        for k in ks:
            d = _irfft(1j * k * hat, grid)
            acc += np.square(d, out=d)
            del d
        del hat
    return lp_norm_array(np.sqrt(acc, out=acc), grid, r)


def sobolev_w1p_norm(v, r):
    """``||v||_{L^r} + ||Dv||_{L^r}`` with the spectral Jacobian."""
    return lp_norm_array(v.values, v.grid, r) + jacobian_lp_norm(v.values, v.grid, r)


def weak_divergence_residual(flux, source, mode_cutoff):
    """Max over ``0 < |m|_inf <= cutoff`` of ``|<flux, grad phi_m> + <source, phi_m>|``.

    ``phi_m = exp(2 pi i m.x)``.  A vanishing residual is the weak form of
    ``div flux = source``.  Accepts fields or raw arrays; ``source`` may be None.
    """
    fvals = flux.values if hasattr(flux, "values") else np.asarray(flux)
    dim = fvals.shape[0]
    n = fvals.shape[-1]
    if 2 * mode_cutoff >= n:
        raise ValueError(f"mode cutoff {mode_cutoff} must be below N/2 = {n // 2}")
    acc = None
    for k in range(dim):
        coeff, m = low_mode_coefficients(fvals[k], n, dim, mode_cutoff)
        shape = [1] * dim
        shape[k] = m.size
        term = 2j * np.pi * m.reshape(shape) * coeff
        acc = term if acc is None else acc + term
    if source is not None:
        svals = source.values if hasattr(source, "values") else np.asarray(source)
        acc = acc + low_mode_coefficients(svals, n, dim, mode_cutoff)[0]
    mag = np.abs(acc)
    mag[(mode_cutoff,) * dim] = 0.0  # the constant test function is trivial
    return float(mag.max())


def weak_identity_residual(terms, dim, n, mode_cutoff):
    """Weak divergence residual of ``sum(terms)`` with a relative scale.

    Each term is a callable ``i -> component array``.  The scale bounds
    ``|<term, grad phi_m>|`` for the individual terms, so ``relative`` is the
    cancellation left over relative to the size of the pieces.
    """
    if 2 * mode_cutoff >= n:
        raise ValueError(f"mode cutoff {mode_cutoff} must be below N/2 = {n // 2}")
    acc = None
    scale = 0.0
    for term in terms:
        sq = None
        for k in range(dim):
            comp = np.asarray(term(k), dtype=np.float64)
            sq = comp * comp if sq is None else sq + comp * comp
            coeff, m = low_mode_coefficients(comp, n, dim, mode_cutoff)
            shape = [1] * dim
            shape[k] = m.size
            part = 2j * np.pi * m.reshape(shape) * coeff
            acc = part if acc is None else acc + part
        scale += float(np.mean(np.sqrt(sq)))
    mag = np.abs(acc)
    mag[(mode_cutoff,) * dim] = 0.0
    scale *= 2.0 * np.pi * np.sqrt(dim) * mode_cutoff
    residual = float(mag.max())
    return {"absolute": residual, "scale": scale, "relative": residual / scale if scale > 0 else residual}


def low_mode_coefficients(values, n, dim, cutoff):
    """``(1/N^d) sum_x f(x) exp(2 pi i m.x)`` for ``|m|_inf <= cutoff``.

    Separable contraction, so only ``(2K+1)`` modes per axis are formed.
    """
    m = np.arange(-cutoff, cutoff + 1)
    x = np.arange(n) / n
    basis = np.exp(2j * np.pi * np.outer(x, m)) / n
    out = np.asarray(values)
    if is_zero_view(out):
        return np.zeros(out.shape[: out.ndim - dim] + (m.size,) * dim, dtype=np.complex128), m
    for _ in range(dim):
        # contract the current leading spatial axis, append the mode axis
        out = np.tensordot(out, basis, axes=([out.ndim - dim], [0]))
    return out, m
