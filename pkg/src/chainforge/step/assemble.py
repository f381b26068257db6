"""One convex-integration step on a periodic grid.

Perturbations are assembled cube by cube from concentrated tube pairs; the
defect is assembled term by term so every term's size can be reported.
Products with tube profiles are pointwise and every derivative is spectral,
which keeps the three weak identities exact to round-off on any grid.
Whether the tubes are resolved is a separate question, recorded in the
report under ``resolution``.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .. import fields as F
from ..mikado import build_pair, measured_constant, offsets
from .cubes import CubeCutoffs, CubePartition
from .parameters import dual, mu_minimum
from .state import State, defect_sup

TERM_NAMES = (
    "R1_quad", "R1_mean", "R1_chipsi", "R1_lin", "R1_corr",
    "R2_quad", "R2_mean", "R2_chi", "R2_lin", "R2_corr", "R_h",
)


@dataclass
class StepReport:
    parameters: dict
    estimates: dict = field(default_factory=dict)
    terms: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)
    input_residuals: dict = field(default_factory=dict)
    resolution: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    pairs: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)
    selection: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    @property
    def estimates_ok(self):
        return all(e["ok"] for e in self.estimates.values())

    @property
    def residuals_ok(self):
        return all(r["ok"] for r in self.residuals.values())

    def to_dict(self):
        return {
            "parameters": self.parameters,
            "estimates": self.estimates,
            "terms": self.terms,
            "residuals": self.residuals,
            "input_residuals": self.input_residuals,
            "resolution": self.resolution,
            "constants": self.constants,
            "pairs": self.pairs,
            "bounds": self.bounds,
            "selection": self.selection,
            "timing": self.timing,
            "estimates_ok": self.estimates_ok,
            "residuals_ok": self.residuals_ok,
        }


def _expand(arr, axis):
    return np.expand_dims(arr, axis)


class _PairTable:
    """Pairs for every nonzero cube coefficient, with grid-measured moments."""

    def __init__(self, coeffs, partition, beta, p, params, moment_source):
        grid = partition.grid
        d = grid.dim
        self.p = p
        self.pairs = {}
        self.moments = {}
        offs = offsets(2 * d, d)
        ham = params.mode == "hamiltonian"
        period = np.arange(grid.n // params.lam) / grid.n
        active = {j for j in range(2 * d) if np.any(coeffs[j] != 0.0)}
        if len(active) > 1 and params.mu < mu_minimum(d):
            raise ValueError(
                f"concentration {params.mu} below {mu_minimum(d)} cannot separate {len(active)} tube families")
        for j in range(2 * d):
            sigma = 1.0 if j % 2 == 0 else -1.0
            for q in partition.indices():
                g = float(coeffs[(j,) + q])
                if g == 0.0:
                    continue
                pair = build_pair(beta, g, j // 2, params.zeta, params.mu, sigma, p, d,
                                  offset=offs[j], hamiltonian=ham)
                self.pairs[(j, q)] = pair
                if moment_source == "grid":
                    self.moments[(j, q)] = _grid_moments(pair, beta, period, params.lam, p)
                else:
                    self.moments[(j, q)] = (pair.moment_flux, pair.moment_renorm)

    def summary(self):
        if not self.pairs:
            return {"count": 0}
        ells = [pr.diagnostics["ell"] for pr in self.pairs.values()]
        quad = np.array([[pr.moment_flux, pr.moment_renorm - pr.target_renorm] for pr in self.pairs.values()])
        grid = np.array([
            [self.moments[key][0], self.moments[key][1] - self.pairs[key].target_renorm]
            for key in self.pairs
        ])
        return {
            "count": len(self.pairs),
            "ell_min": float(min(ells)),
            "ell_max": float(max(ells)),
            "quadrature_flux_moment_error": float(np.max(np.abs(quad[:, 0] - 1.0))),
            "quadrature_renorm_moment_error": float(np.max(np.abs(quad[:, 1]))),
            "grid_flux_moment_error": float(np.max(np.abs(grid[:, 0] - 1.0))),
            "grid_renorm_moment_error": float(np.max(np.abs(grid[:, 1]))),
        }


def _axial_flux(pair, sample):
    if pair.hamiltonian:
        return pair.flux_vector(sample["potential_gradient"])[pair.axis]
    return sample["flux"]


def _grid_moments(pair, beta, period, lam, p):
    """Moments of the sampled profiles averaged over one transverse period."""
    n = pair.dim - 1
    qty = ("density", "potential_gradient") if pair.hamiltonian else ("density", "flux")
    s = pair.sample([period] * n, lam, qty)
    theta, axial = s["density"], _axial_flux(pair, s)
    amp = abs(pair.amplitude) ** (1.0 / p)
    return float(np.mean(theta * axial)), float(np.mean(beta(amp * theta) * axial))


def _sample_block(pair, partition, q, lam):
    coords = [partition.coords(q[i]) for i in range(partition.grid.dim) if i != pair.axis]
    if pair.hamiltonian:
        return pair.sample(coords, lam, ("density", "potential", "potential_gradient"))
    return pair.sample(coords, lam, ("density", "flux"))


def cube_coefficients(defect, partition):
    """Cube averages of the ``2d`` coefficient fields, shape ``(2d,) + (cubes,)*d``."""
    m1 = partition.means(defect.first)
    m2 = partition.means(defect.second)
    d = partition.grid.dim
    g = np.empty((2 * d,) + m1.shape[1:])
    g[0::2] = 0.5 * (m1 + m2)
    g[1::2] = 0.5 * (m1 - m2)
    # means below 1e-13 ||R||_inf are treated as exactly zero
    g[np.abs(g) <= 1e-13 * defect_sup(defect)] = 0.0
    return g


def quadratic_terms(part, cut, table, lam, beta, p, buffers=None):
    """Antidivergences of the two oscillating remainders.

    Assembles, one direction at a time, the cube-local fluxes
    ``chi g [(Theta W)_lam - m]`` and ``chi c [beta(|g|^{1/p} Theta_lam) W_lam - m]``
    along ``e_k``, takes their spectral divergence and applies ``grad Delta^{-1}``.
    When ``buffers`` is given the results are subtracted from it.  Returns the
    L1 norms.
    """
    grid = part.grid
    d = grid.dim
    pd = dual(p)
    chi = cut.chi_block
    ks = F._wavenumbers(grid)
    acc = [None, None]
    for k in range(d):
        v1 = None
        for q in part.indices():
            blk = part.slices(q)
            for j in (2 * k, 2 * k + 1):
                pair = table.pairs.get((j, q))
                if pair is None:
                    continue
                if v1 is None:
                    v1, v2 = np.zeros(grid.shape), np.zeros(grid.shape)
                g = pair.amplitude
                amp = abs(g) ** (1.0 / p)
                c = np.sign(g) * abs(g) ** (1.0 / pd)
                m_flux, m_ren = table.moments[(j, q)]
                s = _sample_block(pair, part, q, lam)
                theta, axial = s["density"], _axial_flux(pair, s)
                v1[blk] += chi * (g * _expand(theta * axial - m_flux, k))
                v2[blk] += chi * (c * _expand(beta(amp * theta) * axial - m_ren, k))
        if v1 is None:
            continue
        for slot, v in enumerate((v1, v2)):
            term = 1j * ks[k] * F._rfft(v)
            acc[slot] = term if acc[slot] is None else acc[slot] + term
        del v1, v2
    norms = {}
    for slot, name in enumerate(("R1_quad", "R2_quad")):
        if acc[slot] is None:
            norms[name] = 0.0
            continue
        hat = F._inverse_laplacian_hat(acc[slot], grid)
        acc[slot] = None
        sq = np.zeros(grid.shape)
        for i in range(d):
            comp = F._irfft(1j * ks[i] * hat, grid)
            sq += comp * comp
            if buffers is not None:
                buffers[slot][i] -= comp
        norms[name] = float(np.mean(np.sqrt(sq)))
    return norms


def perform_step(state, target, beta, p, ptilde, delta, params, mode_cutoff=8,
                 moment_source="grid", residual_tol=1e-6, check_input=True, extras=None):
    """Return ``(new_state, report)`` for explicit parameters.

    ``target`` is the source the new defect is measured against.  Nothing
    here decides whether the parameters are good enough; see
    :func:`chainforge.step.selection.choose_parameters`.  If ``extras`` is a
    dict it receives the assembled Hamiltonian potential under ``"potential"``.
    """
    t0 = time.perf_counter()
    grid = state.grid
    params.validate(grid)
    d, n = grid.dim, grid.n
    pd = dual(p)
    lam = params.lam
    ham = params.mode == "hamiltonian"
    part = CubePartition(grid, params.cubes)
    cut = CubeCutoffs(part, params.cutoff)
    chi, psi = cut.chi_block, cut.psi_block
    rho0, u0 = state.rho.values, state.u.values
    R0a, R0b = state.defect.first, state.defect.second
    rho0_zero, u0_zero = F.is_zero_view(rho0), F.is_zero_view(u0)

    h0, hs = state.h.values, target.values
    target_gap = 0.0 if h0 is hs else F.lp_norm_array(h0 - hs, grid, 1.0)
    if target_gap > 0.25 * delta:
        raise ValueError(f"target moved by {target_gap:.3e} in L1, more than delta/4 = {0.25 * delta:.3e}")

    report = StepReport(parameters=params.to_dict())
    if check_input:
        report.input_residuals = state_residuals(state, beta, mode_cutoff)

    coeffs = cube_coefficients(state.defect, part)
    table = _PairTable(coeffs, part, beta, p, params, moment_source)
    t_pairs = time.perf_counter()

    nu = np.zeros(grid.shape)
    w = np.zeros((d,) + grid.shape)
    hpot = np.zeros(grid.shape) if ham else None
    R1 = np.zeros((d,) + grid.shape)
    R2 = np.zeros((d,) + grid.shape)
    block_norms = {"R1_mean": 0.0, "R1_chipsi": 0.0, "R2_mean": 0.0, "R2_chi": 0.0}
    overlap = 0

    # pass A: pointwise, cube-local quantities; one direction at a time keeps
    # the block temporaries scalar-sized
    for q in part.indices():
        blk = part.slices(q)
        squares = {name: np.zeros(chi.shape) for name in block_norms}
        for k in range(d):
            mean1 = np.zeros(chi.shape)
            mean2 = np.zeros(chi.shape)
            for j in (2 * k, 2 * k + 1):
                pair = table.pairs.get((j, q))
                if pair is None:
                    continue
                g = pair.amplitude
                amp = abs(g) ** (1.0 / p)
                c = np.sign(g) * abs(g) ** (1.0 / pd)
                m_flux, m_ren = table.moments[(j, q)]
                s = _sample_block(pair, part, q, lam)
                theta = _expand(s["density"], k)
                piece = psi * (amp * theta)
                if not overlap:
                    # beta(nu) is evaluated as a sum over pairs only if supports are disjoint
                    overlap = int(np.count_nonzero((piece != 0) & (nu[blk] != 0)))
                nu[blk] += piece
                del piece
                if ham:
                    comps = pair.flux_vector(s["potential_gradient"])
                    for i, comp in enumerate(comps):
                        if comp is not None:
                            w[(i,) + blk] += chi * (c * _expand(comp, k))
                    hpot[blk] += chi * ((c / lam) * _expand(s["potential"], k))
                else:
                    w[(k,) + blk] += chi * (c * _expand(s["flux"], k))
                mean1 += chi * (g * (m_flux - 1.0))
                mean2 += chi * (c * (m_ren - pair.sigma * amp))
                del s, theta
            gp, gm = coeffs[(2 * k,) + q], coeffs[(2 * k + 1,) + q]
            for name, val, row in (("R1_mean", mean1, R1), ("R2_mean", mean2, R2),
                                   ("R1_chipsi", chi * (gp + gm) - R0a[(k,) + blk], R1),
                                   ("R2_chi", chi * (gp - gm) - R0b[(k,) + blk], R2)):
                squares[name] += val * val
                row[(k,) + blk] -= val
            del mean1, mean2
        scale = part.block**d / grid.size
        for name, sq in squares.items():
            block_norms[name] += scale * float(np.mean(np.sqrt(sq)))
        del squares
    report.terms.update(block_norms)

    report.terms.update(quadratic_terms(part, cut, table, lam, beta, p, (R1, R2)))

    nu_c = -float(nu.mean())
    rho1 = rho0 + nu + nu_c

    # corrector
    ks = F._wavenumbers(grid)
    if ham:
        hhat = F._rfft(hpot)
        half = d // 2
        wc = np.empty_like(w)
        for i in range(d):
            src = i + half if i < half else i - half
            comp = F._irfft(1j * ks[src] * hhat, grid)
            wc[i] = (comp if i < half else -comp) - w[i]
        del hhat
        if extras is not None:
            extras["potential"] = hpot
        del hpot
    else:
        div_hat = None
        for i in range(d):
            term = 1j * ks[i] * F._rfft(w[i])
            div_hat = term if div_hat is None else div_hat + term
        hat = F._inverse_laplacian_hat(div_hat, grid)
        wc = np.empty_like(w)
        for i in range(d):
            wc[i] = -F._irfft(1j * ks[i] * hat, grid)
        del div_hat, hat

    # remaining defect terms, one at a time
    beta_rho1 = beta(rho1)

    def account(name, buf, comp_fn):
        sq = np.zeros(grid.shape)
        for i in range(d):
            comp = comp_fn(i)
            buf[i] -= comp
            sq += np.square(comp, out=comp)
            del comp
        report.terms[name] = float(np.mean(np.sqrt(sq, out=sq)))

    if rho0_zero and u0_zero:
        report.terms["R1_lin"] = 0.0
    else:
        account("R1_lin", R1, lambda i: nu * u0[i] + rho0 * w[i])
    dens = nu if rho0_zero else rho0 + nu
    account("R1_corr", R1, lambda i: dens * wc[i])
    del dens
    beta_gap = beta_rho1 - beta(nu)
    if u0_zero:
        account("R2_lin", R2, lambda i: beta_gap * w[i])
    else:
        beta_shift = beta_rho1 - beta(rho0)
        account("R2_lin", R2, lambda i: beta_shift * u0[i] + beta_gap * w[i])
        del beta_shift
    del beta_gap
    account("R2_corr", R2, lambda i: beta_rho1 * wc[i])
    del beta_rho1
    if h0 is hs:
        report.terms["R_h"] = 0.0
    else:
        account("R_h", R2, lambda i: h0[i] - hs[i])

    # estimates
    r0_l1 = _defect_l1(R0a, R0b)
    r1_l1 = _defect_l1(R1, R2)
    m0 = measured_constant(table.pairs.values()) if table.pairs else 0.0
    big_m = m0 * max((3 * d) ** (1.0 / p), (3 * d) ** (1.0 / pd))
    nu_lpp = F.lp_norm_array(nu, grid, p) ** p
    rho_change = F.lp_norm_array(rho1 if rho0_zero else rho1 - rho0, grid, p)
    corrector_l1 = F.lp_norm_array(wc, grid, 1.0)
    corrector_w1 = F.lp_norm_array(wc, grid, ptilde) + F.jacobian_lp_norm(wc, grid, ptilde)
    # fold the corrector into w: the perturbation is all that is needed from here on
    w += wc
    del wc
    pert = w
    u_change = F.lp_norm_array(pert, grid, pd)
    u_w1 = F.lp_norm_array(pert, grid, ptilde) + F.jacobian_lp_norm(pert, grid, ptilde)
    report.estimates = {
        "density_Lp": _estimate(rho_change, big_m * r0_l1 ** (1.0 / p)),
        "field_Lp_dual": _estimate(u_change, big_m * r0_l1 ** (1.0 / pd)),
        "field_W1": _estimate(u_w1, delta),
        "defect_L1": _estimate(r1_l1, delta),
    }
    report.constants = {
        "M0": m0, "M": big_m, "delta": delta, "defect_in_L1": r0_l1, "defect_out_L1": r1_l1,
        "nu_c": nu_c, "p": p, "ptilde": ptilde, "corrector_L1": corrector_l1,
        "corrector_W1": corrector_w1,
        "perturbation_W1": u_w1,
        "terms_sum": float(sum(report.terms.values())),
        "density_perturbation_Lp_p": nu_lpp,
    }
    r0_sup = defect_sup(state.defect)
    report.bounds = {
        "R1_mean": _estimate(report.terms["R1_mean"], 2 * d * params.zeta * r0_l1),
        "R2_mean": _estimate(report.terms["R2_mean"], 2 * d * params.zeta * r0_sup ** (1.0 / pd)),
        "R_h": _estimate(report.terms["R_h"], 0.25 * delta),
        "triangle": _estimate(r1_l1, report.constants["terms_sum"] * (1 + 1e-12) + 1e-300),
        "holder_main_term": {"value": nu_lpp, "main_term": 2 * d * m0**p * r0_l1,
                             "excess": nu_lpp - 2 * d * m0**p * r0_l1},
    }
    summary = table.summary()
    report.pairs = summary
    ell_min = summary.get("ell_min", 1.0)
    required = 8.0 * lam * params.mu / ell_min
    report.resolution = {
        "samples_per_tube_cell": n / (lam * params.mu),
        "samples_per_smoothing_width": n * ell_min / (lam * params.mu),
        "required_samples_per_axis": required,
        "nyquist_ok": bool(n >= required),
        "cutoff_band_volume": cut.band_volume(),
        "cutoff_checks": cut.check(),
        "overlapping_density_samples": overlap,
        "disjoint_supports": overlap == 0,
    }
    del w
    u1 = pert if u0_zero else pert + u0
    del pert
    new_state = State(
        F.ScalarField(grid, rho1), F.VectorField(grid, u1),
        F.DefectField(grid, R1, R2), target,
    )
    report.residuals = state_residuals(new_state, beta, mode_cutoff, residual_tol)
    report.timing = {"pairs_s": t_pairs - t0, "total_s": time.perf_counter() - t0}
    return new_state, report


def _estimate(value, bound):
    return {"value": float(value), "bound": float(bound), "ok": bool(value <= bound),
            "margin": float(bound - value)}


def _defect_l1(a, b):
    acc = None
    for row in (a, b):
        if F.is_zero_view(row):
            continue
        for comp in row:
            acc = comp * comp if acc is None else acc + comp * comp
    return 0.0 if acc is None else float(np.mean(np.sqrt(acc)))


def state_residuals(state, beta, mode_cutoff=8, tol=1e-6):
    """Relative weak residuals of the three identities a state must satisfy."""
    grid = state.grid
    d, n = grid.dim, grid.n
    rho, u = state.rho.values, state.u.values
    Ra, Rb = state.defect.first, state.defect.second
    h = state.h.values
    brho = beta(rho)
    out = {
        "divergence_free": F.weak_identity_residual([lambda i: u[i]], d, n, mode_cutoff),
        "transport": F.weak_identity_residual([lambda i: rho * u[i], lambda i: Ra[i]], d, n, mode_cutoff),
        "renormalized": F.weak_identity_residual(
            [lambda i: brho * u[i], lambda i: -h[i], lambda i: Rb[i]], d, n, mode_cutoff),
    }
    for val in out.values():
        val["ok"] = bool(val["relative"] <= tol)
    return out
