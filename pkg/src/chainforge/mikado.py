"""Concentrated tube profiles ("Mikado" density/flux pairs).

A pair lives on ``d-1`` transverse coordinates and is constant along its axis
``e_k``.  The unit-cell profile is built from smoothed indicators of three
disjoint balls; concentrating by ``mu`` squeezes it into the corner cell
``(0, 1/mu)^{d-1}`` and a per-pair offset moves that cell so that pairs with
different indices have disjoint supports.

Moments and norms are computed from the radial structure by Gauss quadrature.
Independent tensor-grid quadrature of the physical evaluators is available in
:func:`cell_quadrature` for audits.
"""

from dataclasses import dataclass, field
from math import gamma, pi

import numpy as np

LAYOUT_RADIUS = 1.0 / 8.0
HAMILTONIAN_RADIUS = 1.0 / 16.0
BLEND_OUTER = 0.24
ELL_FLOOR = 1e-6


class ProfileError(ValueError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


def smooth_step(t):
    """C-infinity ramp: 0 for t <= 0, 1 for t >= 1, exact at both plateaus."""
    t = np.asarray(t, dtype=np.float64)
    out = (t >= 1.0).astype(np.float64)
    inner = (t > 0.0) & (t < 1.0)
    if np.any(inner):
        s = t[inner]
        a = np.exp(-1.0 / s)
        b = np.exp(-1.0 / (1.0 - s))
        out[inner] = a / (a + b)
    return out


def smooth_step_deriv(t):
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros_like(t)
    inner = (t > 0.0) & (t < 1.0)
    if np.any(inner):
        s = t[inner]
        a = np.exp(-1.0 / s)
        b = np.exp(-1.0 / (1.0 - s))
        da = a / s**2
        db = -b / (1.0 - s) ** 2
        out[inner] = (da * (a + b) - a * (da + db)) / (a + b) ** 2
    return out


def ell_cap(n, hamiltonian=False):
    """Widest smoothing that keeps a plateau and keeps the three balls disjoint."""
    if hamiltonian:
        return HAMILTONIAN_RADIUS
    return 1.0 / 12.0 if n == 1 else LAYOUT_RADIUS


def ball_volume(n):
    return pi ** (n / 2) / gamma(n / 2 + 1)


def ball_centers(n):
    """Three centers in ``(0,1)^n``: pairwise 1/2 apart for ``n >= 2``, 1/3 on a line."""
    if n == 1:
        return np.array([[5.0 / 6.0], [1.0 / 6.0], [0.5]])
    p1 = np.full(n, 0.75)
    p2 = p1.copy()
    p2[0] = 0.25
    p3 = p1.copy()
    p3[1] = 0.25
    return np.stack([p1, p2, p3])


def alpha_bound(beta, dim, radius=LAYOUT_RADIUS):
    n = dim - 1
    return max(1.0, 2.0 * (1.0 / radius) ** n * (1.0 + 1.0 / beta.growth_lower) / ball_volume(n))


def solve_alpha(beta, amplitude, sigma, mu, p, dim, radius=LAYOUT_RADIUS):
    """Coefficients matching the two moment conditions for sharp indicators."""
    n = dim - 1
    c = 1.0 / (ball_volume(n) * radius**n)
    t = abs(amplitude) ** (1.0 / p) * mu ** (n / p)
    bp, bm = float(beta(t)), float(beta(-t))
    denom = bp + bm
    if not denom > 0:
        raise ProfileError(f"growth condition violated at mu={mu:g}: beta(t)+beta(-t)={denom:.3e} at t={t:.3e}")
    a1 = c * (bm + sigma * t) / denom
    a2 = c * (-bp + sigma * t) / denom
    return np.array([a1, a2, -(a1 + a2)])


# radial quadrature ------------------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)


def _panel_nodes(lo, hi, panels=24):
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
    w = (half[:, None] * _GL_W[None, :]).ravel()
    return x, w


def radial_integral(f, n, lo, hi, inner_value=None):
    """``int f(|y|) dy`` over ``lo <= |y| <= hi`` in ``R^n``, plus ``inner_value * |B_lo|``."""
    rho, w = _panel_nodes(lo, hi)
    total = n * ball_volume(n) * float(np.sum(w * f(rho) * rho ** (n - 1)))
    if inner_value is not None:
        total += inner_value * ball_volume(n) * lo**n
    return total


def _indicator(rho, radius, ell):
    return smooth_step((radius + 0.5 * ell - rho) / ell)


def _indicator_deriv(rho, radius, ell):
    return -smooth_step_deriv((radius + 0.5 * ell - rho) / ell) / ell


def _blend(rho):
    return smooth_step((BLEND_OUTER - rho) / (BLEND_OUTER - LAYOUT_RADIUS))


def _blend_deriv(rho):
    return -smooth_step_deriv((BLEND_OUTER - rho) / (BLEND_OUTER - LAYOUT_RADIUS)) / (BLEND_OUTER - LAYOUT_RADIUS)


@dataclass(frozen=True)
class TransverseProfile:
    """Unit-cell profiles on ``R^n`` (``n = d-1``); coordinates passed as a list of arrays."""

    n: int
    alpha: tuple
    ell: float
    hamiltonian: bool = False

    @property
    def radius(self):
        return HAMILTONIAN_RADIUS if self.hamiltonian else LAYOUT_RADIUS

    @property
    def centers(self):
        return ball_centers(self.n)

    def _rho(self, ys, i):
        c = self.centers[i]
        acc = 0.0
        for y, ci in zip(ys, c):
            acc = acc + (y - ci) ** 2
        return np.sqrt(acc)

    def density(self, ys):
        r, ell = self.radius, self.ell
        return _indicator(self._rho(ys, 0), r, ell) - _indicator(self._rho(ys, 1), r, ell)

    def flux(self, ys):
        """Flux profile for the divergence-free layout."""
        out = 0.0
        for i, a in enumerate(self.alpha):
            out = out + a * _indicator(self._rho(ys, i), LAYOUT_RADIUS, self.ell)
        return out

    def potential(self, ys):
        """Hamiltonian potential: slope ``alpha_i`` along ``y_1`` on each inner ball.

        Each ball term is odd in ``y_1 - c_1`` times a radial blend, so the
        potential has zero mean without a compensating collar.
        """
        out = 0.0
        for i, a in enumerate(self.alpha):
            out = out + a * (ys[0] - self.centers[i][0]) * _blend(self._rho(ys, i))
        return out

    def potential_gradient(self, ys):
        grads = [0.0] * self.n
        for i, a in enumerate(self.alpha):
            c = self.centers[i]
            rho = self._rho(ys, i)
            safe = np.where(rho > 0, rho, 1.0)
            radial = a * (ys[0] - c[0]) * _blend_deriv(rho) / safe
            for m in range(self.n):
                grads[m] = grads[m] + radial * (ys[m] - c[m])
            grads[0] = grads[0] + a * _blend(rho)
        return grads


@dataclass(frozen=True)
class MikadoPair:
    dim: int
    axis: int
    amplitude: float
    sigma: float
    mu: float
    zeta: float
    p: float
    offset: float
    profile: TransverseProfile
    moment_flux: float
    moment_renorm: float
    target_renorm: float
    hamiltonian: bool = False
    potential_axis: int = -1
    potential_sign: float = 1.0
    norms: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def p_dual(self):
        return self.p / (self.p - 1.0)

    @property
    def transverse_axes(self):
        """Physical axes in profile order (potential axis first when Hamiltonian)."""
        rest = [i for i in range(self.dim) if i != self.axis]
        if self.hamiltonian:
            rest.remove(self.potential_axis)
            return [self.potential_axis] + rest
        return rest

    def _cell_coords(self, coords, lam):
        """Map 1-D physical coordinates (profile order) to cell coordinates.

        Returns per-axis ``(index, z)`` with ``z = mu * frac(lam x - offset)`` kept
        only where ``z < 1``.
        """
        out = []
        for x in coords:
            z = self.mu * np.mod(lam * np.asarray(x, dtype=np.float64) - self.offset, 1.0)
            idx = np.nonzero(z < 1.0)[0]
            out.append((idx, z[idx]))
        return out

    def sample(self, coords, lam, quantities=("density",)):
        """Evaluate on the tensor mesh of 1-D physical transverse coordinates.

        ``coords`` are given for ``transverse_axes`` in increasing physical
        axis order.  Returns a dict of dense ``(d-1)``-arrays, also in
        increasing physical order.  Quantities: ``density``, ``flux``
        (its ``e_k`` component), ``potential`` and ``potential_gradient``
        (a list over physical transverse axes, evaluated at ``lam x``).
        """
        phys = sorted(self.transverse_axes)
        order = [phys.index(a) for a in self.transverse_axes]
        prof_coords = [coords[i] for i in order]
        cells = self._cell_coords(prof_coords, lam)
        shape_prof = tuple(len(c) for c in prof_coords)
        idx = np.ix_(*[c[0] for c in cells])
        zs = np.meshgrid(*[c[1] for c in cells], indexing="ij", sparse=True)
        n = self.dim - 1
        inv = np.argsort(order)
        result = {}

        def place(vals):
            dense = np.zeros(shape_prof)
            if self.amplitude != 0 and dense.size and all(len(c[0]) for c in cells):
                dense[idx] = vals
            return np.transpose(dense, inv)

        for q in quantities:
            if q == "density":
                result[q] = place(self.mu ** (n / self.p) * self.profile.density(zs))
            elif q == "flux":
                if self.hamiltonian:
                    raise ValueError("Hamiltonian pairs expose the potential, not a scalar flux")
                result[q] = place(self.mu ** (n / self.p_dual) * self.profile.flux(zs))
            elif q == "potential":
                scale = self.potential_sign * self.mu ** (n / self.p_dual - 1.0)
                result[q] = place(scale * self.profile.potential(zs))
            elif q == "potential_gradient":
                scale = self.potential_sign * self.mu ** (n / self.p_dual)
                grads = self.profile.potential_gradient(zs)
                by_prof = [place(scale * g * np.ones(tuple(len(c[0]) for c in cells))) for g in grads]
                result[q] = [by_prof[order.index(i)] for i in range(n)]
            else:
                raise KeyError(q)
        return result

    def flux_vector(self, grad_phys):
        """``J grad H`` from a gradient given on physical transverse axes."""
        d = self.dim
        half = d // 2
        phys = sorted(self.transverse_axes)
        full = [None] * d
        for a, g in zip(phys, grad_phys):
            full[a] = g
        out = []
        for i in range(d):
            src = i + half if i < half else i - half
            g = full[src]
            if g is None:
                out.append(None)
            else:
                out.append(g if i < half else -g)
        return out


def offsets(count, dim):
    """Per-index offsets ``j/(2d+1)`` applied to every transverse coordinate."""
    return [j / (2 * dim + 1) for j in range(count)]


def _moments(beta, profile, amplitude, mu, p):
    n = profile.n
    r, ell = profile.radius, profile.ell
    lo, hi = r - 0.5 * ell, r + 0.5 * ell
    a1, a2, _ = profile.alpha
    t = abs(amplitude) ** (1.0 / p) * mu ** (n / p)
    ind = lambda rho: _indicator(rho, r, ell)
    if profile.hamiltonian:
        flux_moment = (a1 - a2) * radial_integral(ind, n, lo, hi, inner_value=1.0)
        plus = radial_integral(lambda rho: beta(t * ind(rho)), n, lo, hi, inner_value=float(beta(t)))
        minus = radial_integral(lambda rho: beta(-t * ind(rho)), n, lo, hi, inner_value=float(beta(-t)))
    else:
        flux_moment = (a1 - a2) * radial_integral(lambda rho: ind(rho) ** 2, n, lo, hi, inner_value=1.0)
        plus = radial_integral(lambda rho: beta(t * ind(rho)) * ind(rho), n, lo, hi, inner_value=float(beta(t)))
        minus = radial_integral(lambda rho: beta(-t * ind(rho)) * ind(rho), n, lo, hi, inner_value=float(beta(-t)))
    renorm_moment = (a1 * plus + a2 * minus) / mu ** (n / p)
    return flux_moment, renorm_moment


def _sharp_distances(profile, p):
    """Lp distance of the smoothed profiles to the sharp indicator profiles."""
    n, r, ell = profile.n, profile.radius, profile.ell
    lo, hi = r - 0.5 * ell, r + 0.5 * ell
    pd = p / (p - 1.0)

    def gap(q):
        return lambda rho: np.abs(_indicator(rho, r, ell) - (rho < r)) ** q

    dens = (2.0 * radial_integral(gap(p), n, lo, hi)) ** (1.0 / p)
    weights = sum(abs(a) ** pd for a in profile.alpha)
    if profile.hamiltonian:
        flux = 0.0
    else:
        flux = (weights * radial_integral(gap(pd), n, lo, hi)) ** (1.0 / pd)
    return dens, flux


def _profile_norms(profile, p):
    """Normalized norms of the unit-cell profiles for ``r`` in ``{1, p, p', 2, inf}``."""
    n, r, ell = profile.n, profile.radius, profile.ell
    lo, hi = r - 0.5 * ell, r + 0.5 * ell
    pd = p / (p - 1.0)
    ind = lambda rho: _indicator(rho, r, ell)
    out = {}
    for tag, q in (("1", 1.0), ("p", p), ("p_dual", pd), ("2", 2.0)):
        dens = (2.0 * radial_integral(lambda rho: ind(rho) ** q, n, lo, hi, inner_value=1.0)) ** (1.0 / q)
        out[f"density_L{tag}"] = dens
        if not profile.hamiltonian:
            ball = radial_integral(lambda rho: ind(rho) ** q, n, lo, hi, inner_value=1.0)
            out[f"flux_L{tag}"] = (sum(abs(a) ** q for a in profile.alpha) * ball) ** (1.0 / q)
            prod = radial_integral(lambda rho: ind(rho) ** (2 * q), n, lo, hi, inner_value=1.0)
            out[f"product_L{tag}"] = ((abs(profile.alpha[0]) ** q + abs(profile.alpha[1]) ** q) * prod) ** (1.0 / q)
    out["density_Linf"] = 1.0
    if not profile.hamiltonian:
        out["flux_Linf"] = float(max(abs(a) for a in profile.alpha))
        out["product_Linf"] = float(max(abs(profile.alpha[0]), abs(profile.alpha[1])))
    return out


def build_pair(beta, amplitude, axis, zeta, mu, sigma, p, dim, offset=0.0, hamiltonian=False):
    """Build a pair whose measured moments are within ``zeta`` of their targets.

    The smoothing width starts at :func:`ell_cap` and is bisected (in log scale)
    to the largest value admitted by both moment conditions.
    """
    if dim < 2:
        raise ValueError("dimension must be at least 2")
    if sigma not in (1, -1, 1.0, -1.0):
        raise ValueError("sigma must be +1 or -1")
    if hamiltonian and (dim % 2 or dim < 4):
        raise ValueError("Hamiltonian pairs need an even dimension of at least 4")
    n = dim - 1
    half = dim // 2
    if hamiltonian:
        potential_axis = axis + half if axis < half else axis - half
        potential_sign = 1.0 if axis < half else -1.0
    else:
        potential_axis, potential_sign = -1, 1.0
    if amplitude == 0:
        # a vanishing cube coefficient gets no tube at all
        return MikadoPair(
            dim=dim, axis=axis, amplitude=0.0, sigma=float(sigma), mu=float(mu), zeta=float(zeta),
            p=float(p), offset=float(offset),
            profile=TransverseProfile(n, (0.0, 0.0, 0.0), ell_cap(n, hamiltonian), hamiltonian),
            moment_flux=0.0, moment_renorm=0.0, target_renorm=0.0, hamiltonian=hamiltonian,
            potential_axis=potential_axis, potential_sign=potential_sign,
            norms={}, diagnostics={"ell": ell_cap(n, hamiltonian), "zero": True},
        )
    radius = HAMILTONIAN_RADIUS if hamiltonian else LAYOUT_RADIUS
    alpha = solve_alpha(beta, amplitude, sigma, mu, p, dim, radius=radius)
    target = sigma * abs(amplitude) ** (1.0 / p)

    def errors(ell):
        prof = TransverseProfile(n, tuple(alpha), ell, hamiltonian)
        m1, m2 = _moments(beta, prof, amplitude, mu, p)
        return prof, m1, m2, max(abs(m1 - 1.0), abs(m2 - target))

    goal = 0.5 * zeta
    cap = ell_cap(n, hamiltonian)
    ell = cap
    prof, m1, m2, err = errors(ell)
    while err >= goal:
        ell *= 0.5
        if ell < ELL_FLOOR:
            raise ProfileError(
                f"smoothing width fell below {ELL_FLOOR} before moments were within {goal}",
                {"ell": ell, "flux_moment": m1, "renorm_moment": m2, "target_renorm": target},
            )
        prof, m1, m2, err = errors(ell)
    if ell < cap:
        lo, hi = ell, 2.0 * ell  # lo admissible, hi not
        for _ in range(12):
            mid = np.sqrt(lo * hi)
            if errors(mid)[3] < goal:
                lo = mid
            else:
                hi = mid
        ell = lo
        prof, m1, m2, err = errors(ell)

    norms = _profile_norms(prof, p)
    if hamiltonian:
        norms.update(_potential_norms(prof, p))
    dens_gap, flux_gap = _sharp_distances(prof, p)
    bound = alpha_bound(beta, dim, radius=radius)
    lip = beta.lipschitz
    diagnostics = {
        "ell": ell,
        "alpha": [float(a) for a in alpha],
        "alpha_bound": bound,
        "moment_error": err,
        "density_sharp_gap": dens_gap,
        "flux_sharp_gap": flux_gap,
        "sharp_gap_limit": zeta / (2.0 * bound),
        "sharp_gap_limit_weighted": zeta / (2.0 * bound * lip),
        "density_sharp_gap_weighted": abs(amplitude) ** (1.0 / (p / (p - 1.0))) * dens_gap,
        "flux_sharp_gap_weighted": abs(amplitude) ** (1.0 / p) * flux_gap,
    }
    return MikadoPair(
        dim=dim, axis=axis, amplitude=float(amplitude), sigma=float(sigma), mu=float(mu),
        zeta=float(zeta), p=float(p), offset=float(offset), profile=prof,
        moment_flux=m1, moment_renorm=m2, target_renorm=target,
        hamiltonian=hamiltonian, potential_axis=potential_axis,
        potential_sign=potential_sign, norms=norms, diagnostics=diagnostics,
    )


def _potential_norms(profile, p, points=96):
    """Norms of the Hamiltonian flux profile ``|grad potential|`` by tensor quadrature."""
    n = profile.n
    pd = p / (p - 1.0)
    x = (np.arange(points) + 0.5) / points
    ys = np.meshgrid(*([x] * n), indexing="ij", sparse=True)
    grads = profile.potential_gradient(ys)
    mag = np.sqrt(sum(g * g for g in grads)) * np.ones((points,) * n)
    dens = profile.density(ys) * np.ones((points,) * n)
    out = {}
    for tag, q in (("1", 1.0), ("p", p), ("p_dual", pd), ("2", 2.0)):
        out[f"flux_L{tag}"] = float(np.mean(mag**q) ** (1.0 / q))
        out[f"product_L{tag}"] = float(np.mean(np.abs(dens * mag) ** q) ** (1.0 / q))
    out["flux_Linf"] = float(mag.max())
    out["product_Linf"] = float(np.abs(dens * mag).max())
    return out


def measured_constant(pairs):
    """Smallest constant consistent with every normalized norm of the given pairs."""
    best = 1e-300
    for pair in pairs:
        for key, val in pair.norms.items():
            best = max(best, np.sqrt(val) if key.startswith("product") else val)
    return float(best)


def cell_quadrature(pair, beta, points=512, lam=1.0):
    """Independent midpoint quadrature over the pair's support cell.

    Integrates the physical evaluators over ``offset/lam + (0, 1/(lam mu))^{d-1}``
    per transverse axis; integrals against the torus reduce to this cell.
    Returns measured moments, flux mean and normalized norms.
    """
    n = pair.dim - 1
    h = 1.0 / (lam * pair.mu * points)
    base = (pair.offset + 0.0) / lam
    x = base + (np.arange(points) + 0.5) * h
    coords = [x] * n
    qty = ("density", "potential_gradient") if pair.hamiltonian else ("density", "flux")
    vals = pair.sample(coords, lam, qty)
    theta = vals["density"]
    if pair.hamiltonian:
        comps = pair.flux_vector(vals["potential_gradient"])
        axial = comps[pair.axis]
        mag = np.sqrt(sum(c * c for c in comps if c is not None))
        flux_mean = [float(np.sum(c) * h**n) if c is not None else 0.0 for c in comps]
    else:
        axial = vals["flux"]
        mag = np.abs(axial)
        flux_mean = [0.0] * pair.dim
        flux_mean[pair.axis] = float(np.sum(axial) * h**n)
    g = abs(pair.amplitude) ** (1.0 / pair.p)
    return {
        "flux_moment": float(np.sum(theta * axial) * h**n),
        "renorm_moment": float(np.sum(beta(g * theta) * axial) * h**n),
        "flux_mean": flux_mean,
        "density_Lp": float(np.sum(np.abs(theta) ** pair.p) * h**n) ** (1.0 / pair.p),
        "flux_Lp_dual": float(np.sum(mag**pair.p_dual) * h**n) ** (1.0 / pair.p_dual),
        "density_max": float(np.abs(theta).max()),
        "flux_max": float(mag.max()),
    }
