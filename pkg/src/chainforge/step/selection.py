"""Parameter selection: cube size, cutoff, moment tolerance, then lambda escalation.

The first three are fixed from measured quantities of the incoming defect.
``lambda`` is then doubled, each trial running a full step, until the four
step estimates pass.  Under ``policy="strict"`` a trial must also resolve the
tube profiles (``N >= 8 lambda mu / ell``); under ``policy="report"`` that
requirement and the rule ``mu = lambda^c`` give way to what the grid can
hold, and the relaxation is recorded in every trial.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ..renormalization import concentration_floor
from .assemble import cube_coefficients, perform_step
from .cubes import CubeCutoffs, CubePartition
from .parameters import (StepParameters, check_exponents, concentration_exponent, dual,
                         exponent_gap, mu_minimum)
from .state import defect_l1, defect_sup

MAX_CUBES = 32
MIN_CUBE_SAMPLES = 32
MIN_RAMP_SAMPLES = 2.0
MIN_TUBE_SAMPLES = 2.0


class ParameterSelectionError(RuntimeError):
    """No admissible trial passed; ``best`` holds the closest ``(params, state, report)``."""

    def __init__(self, message, trials, best=None, notes=None):
        super().__init__(message)
        self.trials = trials
        self.best = best
        self.notes = notes or []


@dataclass
class Selection:
    params: StepParameters
    state: object
    report: object
    trials: list = field(default_factory=list)
    notes: list = field(default_factory=list)


def piecewise_error(defect, partition):
    """Per-index ``||g_j - sum_Q 1_Q g_j^Q||_{L1}``."""
    r1, r2 = defect.first, defect.second
    d = partition.grid.dim
    means = cube_coefficients(defect, partition)
    out = []
    for j in range(2 * d):
        k = j // 2
        g = 0.5 * (r1[k] + r2[k]) if j % 2 == 0 else 0.5 * (r1[k] - r2[k])
        out.append(float(np.mean(np.abs(g - partition.expand(means[j])))))
    return out


def choose_cubes(defect, delta, limit=None):
    grid = defect.grid
    d = grid.dim
    limit = min(MAX_CUBES, grid.n // MIN_CUBE_SAMPLES) if limit is None else limit
    goal = delta / (16 * d)
    cubes, errors = 1, piecewise_error(defect, CubePartition(grid, 1))
    while max(errors) >= goal and 2 * cubes <= limit:
        cubes *= 2
        errors = piecewise_error(defect, CubePartition(grid, cubes))
    return cubes, {"piecewise_error_max": max(errors), "goal": goal, "met": max(errors) < goal,
                   "cube_limit": limit}


def choose_cutoff(grid, cubes, sup_norm, delta):
    """Largest ``alpha`` in ``1/4, 1/8, ...`` with ``sup|R0| vol(D) <= delta/(16 d)``.

    ``vol(D)`` is the measured volume where ``chi < 1``.  Stops when the inner
    ramp (width ``alpha eps / 4``) would be narrower than ``MIN_RAMP_SAMPLES``.
    """
    d = grid.dim
    goal = delta / (16 * d)
    part = CubePartition(grid, cubes)
    alpha = 0.25
    last = None
    while alpha * part.side / 4 * grid.n >= MIN_RAMP_SAMPLES:
        vol = CubeCutoffs(part, alpha).band_volume()
        last = (alpha, vol)
        if sup_norm * vol <= goal:
            return alpha, {"band_volume": vol, "goal": goal, "met": True}
        alpha *= 0.5
    if last is None:
        raise ParameterSelectionError(
            f"{grid.n} samples cannot resolve any cutoff ramp for {cubes} cubes per axis", [])
    alpha, vol = last
    return alpha, {"band_volume": vol, "goal": goal, "met": False,
                   "note": "ramp resolution reached before the band condition"}


def choose_zeta(l1_norm, sup_norm, p, delta, dim):
    scale = max(l1_norm, sup_norm ** (1.0 / dual(p)), 1e-300)
    return delta / (8 * dim * scale)


def _score(report):
    return max(e["value"] / e["bound"] if e["bound"] > 0 else math.inf for e in report.estimates.values())


def choose_parameters(state, target, beta, p, ptilde, delta, mode="standard", policy="strict",
                      max_trials=8, **step_options):
    """Select parameters and run the accepted step; returns a :class:`Selection`.

    Raises :class:`ParameterSelectionError` carrying every trial and the best
    attempt when no admissible ``lambda`` passes.
    """
    if policy not in ("strict", "report"):
        raise ValueError(f"unknown resolution policy {policy!r}")
    grid = state.grid
    d, n = grid.dim, grid.n
    check_exponents(d, p, ptilde)
    gap = exponent_gap(d, p, ptilde)
    c = concentration_exponent(gap)
    notes = []
    l1, sup = defect_l1(state.defect), defect_sup(state.defect)

    cubes, cube_info = choose_cubes(state.defect, delta)
    if not cube_info["met"]:
        notes.append(f"cube error {cube_info['piecewise_error_max']:.3e} above {cube_info['goal']:.3e} "
                     f"at the cube limit {cube_info['cube_limit']}")
    alpha, cut_info = choose_cutoff(grid, cubes, sup, delta)
    if not cut_info["met"]:
        notes.append(f"cutoff band {sup * cut_info['band_volume']:.3e} above {cut_info['goal']:.3e}")
    if policy == "strict" and not (cube_info["met"] and cut_info["met"]):
        raise ParameterSelectionError("; ".join(notes), [], notes=notes)
    zeta = choose_zeta(l1, sup, p, delta, d)

    coeffs = cube_coefficients(state.defect, CubePartition(grid, cubes))
    nonzero = np.abs(coeffs[coeffs != 0.0])
    smallest = float(nonzero.min()) if nonzero.size else 0.0
    floor = concentration_floor(beta, smallest, p, d) if smallest > 0 else 1.0
    mu_floor = max(floor, float(mu_minimum(d)))

    trials, best = [], None
    lam = cubes
    for _ in range(max_trials):
        if n % lam or lam >= n:
            break
        mu = max(float(lam) ** c, mu_floor)
        relaxed = False
        if policy == "strict":
            # necessary condition with the widest admissible smoothing, 1/8
            if 8.0 * lam * mu * 8.0 > n:
                trials.append({"lam": lam, "mu": mu, "skipped": "resolution ceiling"})
                break
        else:
            ceiling = n / (MIN_TUBE_SAMPLES * lam)
            if mu > ceiling:
                mu, relaxed = ceiling, True
            if mu < mu_floor:
                trials.append({"lam": lam, "mu": mu, "skipped": "grid ceiling below concentration floor"})
                break
        params = StepParameters(cubes=cubes, cutoff=alpha, zeta=zeta, lam=lam, mu=mu,
                                exponent=c, gap=gap, mode=mode)
        new_state, report = perform_step(state, target, beta, p, ptilde, delta, params, **step_options)
        resolved = report.resolution["nyquist_ok"]
        passed = report.estimates_ok and (resolved or policy == "report")
        trials.append({
            "lam": lam, "mu": mu, "mu_relaxed": relaxed, "resolved": resolved,
            "estimates": {k: e["value"] / e["bound"] if e["bound"] > 0 else None
                          for k, e in report.estimates.items()},
            "passed": passed,
        })
        report.selection = {"policy": policy, "mu_relaxed": relaxed, "notes": list(notes)}
        if best is None or _score(report) < _score(best[2]):
            best = (params, new_state, report)
        if passed:
            return Selection(params, new_state, report, trials, notes)
        lam *= 2
    raise ParameterSelectionError(
        f"no admissible lambda passed the step estimates on {n} samples per axis", trials, best, notes)
