"""Measured decay exponents of single defect terms and correctors.

Every probe runs a reduced configuration (one cube, one tube family) through
the same code a full step uses, at a sequence of parameter doublings, and fits
a log-log slope.  Reduced configurations are what make the measurement
meaningful: the oscillation gain in ``lambda`` only shows once the tube
pattern is resolved and ``lambda`` times the cutoff ramp width is large,
which a uniform three-dimensional grid cannot afford.  The oscillating
remainders and the linear terms are therefore probed in two dimensions on the
regular grid, and the Hamiltonian corrector (pointwise, analytic) by
quadrature on the tube boxes themselves.
"""

import itertools
from functools import lru_cache

import numpy as np

from . import fields as F
from .mikado import build_pair
from .renormalization import parse_beta
from .step.assemble import _PairTable, _sample_block, perform_step, quadratic_terms
from .step.cubes import CubeCutoffs, CubePartition, cutoff_derivatives
from .step.parameters import StepParameters, dual
from .step.state import State

QUAD = {"dim": 2, "n": 4096, "p": 4 / 3, "mu": 1.0, "cutoff": 0.4, "zeta": 0.4,
        "amplitude": 2.0, "beta": "smooth-abs:1", "start": 8}
LIN = {"dim": 2, "n": 2048, "p": 4 / 3, "lam": 2, "cutoff": 0.4, "zeta": 0.4,
       "amplitude": 2.0, "density": 0.1, "beta": "smooth-abs:1", "start": 16}
HOLDER = {"dim": 2, "n": 2048, "p": 4 / 3, "mu": 1.0, "cutoff": 0.4, "zeta": 0.4,
          "amplitude": 2.0, "beta": "smooth-abs:1", "start": 8}
HAMILTONIAN = {"dim": 4, "p": 1.5, "ptilde": 1.0, "lam": 4, "cutoff": 0.4,
               "zeta": 0.4, "amplitude": 2.0, "beta": "smooth-abs:1", "start": 8,
               "nodes": 16, "axial_nodes": 32}


def _gap(cfg):
    d = cfg["dim"]
    return (d - 1) / cfg["ptilde"] - (d - 1) / dual(cfg["p"]) - 1.0


def _lin_exponent(cfg):
    d, p = cfg["dim"], cfg["p"]
    return -min((d - 1) / p, (d - 1) / dual(p))


# quantity -> (family, parameter, defaults, expected exponent)
PROBES = {
    "R1_quad": ("quad", "lam", QUAD, lambda cfg: -1.0),
    "R2_quad": ("quad", "lam", QUAD, lambda cfg: -1.0),
    "R1_lin": ("lin", "mu", LIN, _lin_exponent),
    "R2_lin": ("lin", "mu", LIN, _lin_exponent),
    "improved_holder": ("holder", "lam", HOLDER, lambda cfg: -1.0),
    "wc_hamiltonian_W1": ("hamiltonian", "mu", HAMILTONIAN, lambda cfg: -(_gap(cfg) + 1.0)),
}


def _single_family(cfg):
    d = cfg["dim"]
    coeffs = np.zeros((2 * d,) + (1,) * d)
    coeffs[0] = cfg["amplitude"]
    return coeffs


def _params(cfg, lam, mu):
    return StepParameters(cubes=1, cutoff=cfg["cutoff"], zeta=cfg["zeta"], lam=int(lam), mu=float(mu),
                          exponent=2, gap=0.5)


def _quad(cfg, lam):
    grid = F.GridSpec(cfg["dim"], cfg["n"])
    part = CubePartition(grid, 1)
    cut = CubeCutoffs(part, cfg["cutoff"])
    beta = parse_beta(cfg["beta"])
    table = _PairTable(_single_family(cfg), part, beta, cfg["p"], _params(cfg, lam, cfg["mu"]), "grid")
    return quadratic_terms(part, cut, table, int(lam), beta, cfg["p"])


def _lin_state(cfg):
    d = cfg["dim"]
    grid = F.GridSpec(d, cfg["n"])
    x = np.meshgrid(*([grid.axis()] * d), indexing="ij")
    two_pi = 2.0 * np.pi
    rho = cfg["density"] * np.cos(two_pi * x[0]) * np.sin(two_pi * x[1])
    u = np.stack([(1.0 if i == 0 else 0.0) + 0.5 * np.sin(two_pi * x[(i + 1) % d]) for i in range(d)])
    defect = np.zeros((d,) + grid.shape)
    defect[0] = cfg["amplitude"]
    return State(F.ScalarField(grid, rho), F.VectorField(grid, u),
                 F.DefectField(grid, defect, defect.copy()), F.zeros_vector(grid))


def _lin(cfg, mu):
    state = _lin_state(cfg)
    beta = parse_beta(cfg["beta"])
    _, report = perform_step(state, state.h, beta, cfg["p"], 1.0, 1.0, _params(cfg, cfg["lam"], mu),
                             check_input=False)
    return {"R1_lin": report.terms["R1_lin"], "R2_lin": report.terms["R2_lin"]}


def _holder(cfg, lam):
    """``| ||nu||_p^p - sum_j ||psi |g_j|^{1/p}||_p^p ||Theta_j||_p^p |`` on the grid."""
    grid = F.GridSpec(cfg["dim"], cfg["n"])
    part = CubePartition(grid, 1)
    cut = CubeCutoffs(part, cfg["cutoff"])
    beta = parse_beta(cfg["beta"])
    p = cfg["p"]
    table = _PairTable(_single_family(cfg), part, beta, p, _params(cfg, lam, cfg["mu"]), "grid")
    period = np.arange(grid.n // int(lam)) / grid.n
    total = split = 0.0
    for (j, q), pair in table.pairs.items():
        weight = cut.psi_block * abs(pair.amplitude) ** (1.0 / p)
        theta = _sample_block(pair, part, q, int(lam))["density"]
        total += float(np.mean(np.abs(weight * np.expand_dims(theta, pair.axis)) ** p))
        cell = pair.sample([period] * (grid.dim - 1), int(lam), ("density",))["density"]
        split += float(np.mean(weight**p)) * float(np.mean(np.abs(cell) ** p))
    return {"improved_holder": abs(total - split), "density_Lp_p": total, "split": split}


def _tube_boxes(lo, side, lam, mu, offset):
    """Transverse support intervals of one tube family inside ``[lo, lo+side)``."""
    first = int(np.floor(lo * lam - offset)) - 1
    last = int(np.ceil((lo + side) * lam - offset)) + 1
    boxes = []
    for m in range(first, last + 1):
        a = max((m + offset) / lam, lo)
        b = min((m + offset + 1.0 / mu) / lam, lo + side)
        if b > a:
            boxes.append((a, b))
    return boxes


def _midpoints(a, b, count):
    h = (b - a) / count
    return a + (np.arange(count) + 0.5) * h, h


def hamiltonian_corrector_norms(pair, lam, cutoff, ptilde, nodes=24, axial_nodes=64,
                                cube_start=None, side=1.0):
    """Norms of ``w_c = (c/lam) H(lam x) J grad chi`` for one pair in one cube, by tube quadrature.

    Returns ``L1``, ``L^{p'}``, ``L^{ptilde}`` and ``W^{1,ptilde}`` norms
    (Jacobian Frobenius pointwise).
    """
    if not pair.hamiltonian:
        raise ValueError("tube quadrature of the corrector needs a Hamiltonian pair")
    d, k = pair.dim, pair.axis
    half = d // 2
    start = [0.0] * d if cube_start is None else list(cube_start)
    g = pair.amplitude
    c = np.sign(g) * abs(g) ** (1.0 / pair.p_dual)
    pd = pair.p_dual
    trans = sorted(pair.transverse_axes)
    ax_x, ax_h = _midpoints(start[k], start[k] + side, axial_nodes)
    ax_cut = cutoff_derivatives(ax_x, start[k], side, cutoff)
    boxes = [_tube_boxes(start[i], side, lam, pair.mu, pair.offset) for i in trans]
    sums = {"L1": 0.0, "Lp_dual": 0.0, "Lptilde": 0.0, "jacobian": 0.0}

    def along(vec, axis):
        shape = [1] * d
        shape[axis] = vec.size
        return vec.reshape(shape)

    for combo in itertools.product(*boxes):
        coords, weights, cuts = [], ax_h, {k: ax_cut}
        for axis, (a, b) in zip(trans, combo):
            x, h = _midpoints(a, b, nodes)
            coords.append(x)
            weights = weights * h
            cuts[axis] = cutoff_derivatives(x, start[axis], side, cutoff)
        if any(not np.any(cuts[i][0]) for i in range(d)):
            continue
        s = pair.sample(coords, lam, ("potential", "potential_gradient"))
        pot = np.expand_dims(s["potential"], k)
        gpot = {axis: np.expand_dims(gr, k) for axis, gr in zip(trans, s["potential_gradient"])}
        val = [along(cuts[i][0], i) for i in range(d)]
        d1 = [along(cuts[i][1], i) for i in range(d)]
        d2 = [along(cuts[i][2], i) for i in range(d)]

        def prod(factors):
            out = 1.0
            for f in factors:
                out = out * f
            return out

        grad = [prod([d1[l] if m == l else val[m] for m in range(d)]) for l in range(d)]

        def hess(l, m):
            if l == m:
                return prod([d2[l] if i == l else val[i] for i in range(d)])
            return prod([d1[i] if i in (l, m) else val[i] for i in range(d)])

        def jay(i):
            return (i + half, 1.0) if i < half else (i - half, -1.0)

        scale = c / lam
        wc_sq = 0.0
        jac_sq = 0.0
        for i in range(d):
            src, sgn = jay(i)
            wc_i = scale * sgn * grad[src] * pot
            wc_sq = wc_sq + wc_i * wc_i
            for l in range(d):
                term = sgn * hess(l, src) * pot
                if l in gpot:
                    term = term + sgn * grad[src] * lam * gpot[l]
                entry = scale * term
                jac_sq = jac_sq + entry * entry
        mesh = tuple(axial_nodes if i == k else nodes for i in range(d))
        mag = np.broadcast_to(np.sqrt(wc_sq), mesh)
        jac = np.broadcast_to(np.sqrt(jac_sq), mag.shape)
        sums["L1"] += float(np.sum(mag)) * weights
        sums["Lp_dual"] += float(np.sum(mag**pd)) * weights
        sums["Lptilde"] += float(np.sum(mag**ptilde)) * weights
        sums["jacobian"] += float(np.sum(jac**ptilde)) * weights
    lpt = sums["Lptilde"] ** (1.0 / ptilde)
    jac = sums["jacobian"] ** (1.0 / ptilde)
    return {"L1": sums["L1"], "Lp_dual": sums["Lp_dual"] ** (1.0 / pd), "Lptilde": lpt,
            "jacobian": jac, "W1": lpt + jac}


def _hamiltonian(cfg, lam, mu):
    beta = parse_beta(cfg["beta"])
    pair = build_pair(beta, cfg["amplitude"], 0, cfg["zeta"], float(mu), 1.0, cfg["p"], cfg["dim"],
                      hamiltonian=True)
    norms = hamiltonian_corrector_norms(pair, int(lam), cfg["cutoff"], cfg["ptilde"],
                                        cfg["nodes"], cfg["axial_nodes"])
    return {"wc_hamiltonian_W1": norms["W1"], **norms}


@lru_cache(maxsize=64)
def _measure(family, value, frozen_cfg):
    cfg = dict(frozen_cfg)
    if family == "quad":
        return _quad(cfg, value)
    if family == "lin":
        return _lin(cfg, value)
    if family == "holder":
        return _holder(cfg, value)
    if family == "hamiltonian":
        return _hamiltonian(cfg, cfg["lam"], value)
    raise KeyError(family)


def probe_config(quantity, **overrides):
    if quantity not in PROBES:
        raise KeyError(f"unknown probe {quantity!r}; known: {sorted(PROBES)}")
    _, _, defaults, _ = PROBES[quantity]
    unknown = set(overrides) - set(defaults)
    if unknown:
        raise KeyError(f"unknown probe settings {sorted(unknown)}")
    return {**defaults, **overrides}


def slope_probe(quantity, doublings=4, tolerance=0.15, **overrides):
    """Fit the log-log slope of ``quantity`` over ``doublings`` parameter values.

    The parameter starts at the configuration's ``start`` and doubles.
    Returns the measurements, the fitted slope, the expected exponent and
    whether they agree within ``tolerance``.
    """
    if doublings < 2:
        raise ValueError("a slope needs at least two parameter values")
    family, parameter, _, expected_fn = PROBES[quantity]
    cfg = probe_config(quantity, **overrides)
    values = [cfg["start"] * 2**i for i in range(doublings)]
    frozen = tuple(sorted(cfg.items()))
    measured = [_measure(family, v, frozen)[quantity] for v in values]
    if min(measured) <= 0.0:
        slope = float("nan")
    else:
        slope = float(np.polyfit(np.log(values), np.log(measured), 1)[0])
    expected = float(expected_fn(cfg))
    return {
        "quantity": quantity,
        "parameter": parameter,
        "values": values,
        "measured": measured,
        "slope": slope,
        "expected": expected,
        "tolerance": tolerance,
        "ok": bool(np.isfinite(slope) and abs(slope - expected) <= tolerance),
        "config": cfg,
    }
