"""Audit of dumped states and standalone tube pairs.

Everything here is recomputed from raw sample arrays with ``numpy.fft`` and
plain quadrature; nothing is read back from a step's internal term ledger.
The only report values taken as inputs are the constants that cannot be
derived from fields (``M``, ``delta``, the exponents).

Exit codes of :func:`audit_directory`: 0 pass, 2 estimate failure, 3 weak
residual failure, 4 corrupt or inconsistent artifacts.
"""

import json
import os

import numpy as np

from . import cif
from .driver import load_state, sha256

EXIT_OK, EXIT_ESTIMATE, EXIT_RESIDUAL, EXIT_CORRUPT = 0, 2, 3, 4
REPORT_RTOL = 1e-10
# weak residuals are already relative to the size of their terms
RESIDUAL_ATOL = 1e-10
# audit quadrature points per transverse axis, keyed by transverse dimension
AUDIT_POINTS = {1: 8192, 2: 1024, 3: 128}
LR_SLACK = 1e-3


class AuditMismatch(ValueError):
    """Report and dumps disagree."""


# grid quantities ---------------------------------------------------------


def _norm(values, r):
    """``L^r`` norm of the pointwise Euclidean magnitude over the leading component axis."""
    mag = np.sqrt(np.sum(values * values, axis=0))
    if np.isinf(r):
        return float(mag.max())
    return float(np.mean(mag**r) ** (1.0 / r))


def _frequencies(n):
    m = np.fft.fftfreq(n, 1.0 / n)
    m[n // 2] = 0.0
    return 2 * np.pi * m


def _jacobian(values):
    d = values.shape[0]
    n = values.shape[-1]
    k = _frequencies(n)
    out = np.empty((d, d) + values.shape[1:])
    for i in range(d):
        hat = np.fft.fftn(values[i])
        for axis in range(d):
            shape = [1] * d
            shape[axis] = n
            out[i, axis] = np.fft.ifftn(1j * k.reshape(shape) * hat).real
    return out


def _w1(values, r):
    jac = _jacobian(values)
    return _norm(values, r) + _norm(jac.reshape((-1,) + values.shape[1:]), r)


def _low_modes(values, cutoff):
    """Fourier coefficients ``(1/N^d) sum f(x) exp(2 pi i m.x)`` for ``|m|_inf <= cutoff``."""
    d = values.ndim
    n = values.shape[0]
    hat = np.fft.fftn(values) / values.size
    sel = np.r_[0:cutoff + 1, n - cutoff:n]
    # real input: the coefficient of exp(+2 pi i m.x) is conj(hat[m])
    block = np.conj(hat[np.ix_(*([sel] * d))])
    return block, np.r_[0:cutoff + 1, -cutoff:0]


def weak_residual(terms, cutoff):
    """Relative weak residual of ``div(sum terms) = 0`` against modes ``0 < |m| <= cutoff``."""
    acc, scale = None, 0.0
    d = terms[0].shape[0]
    for term in terms:
        for k in range(d):
            coeff, m = _low_modes(term[k], cutoff)
            shape = [1] * d
            shape[k] = m.size
            part = 2j * np.pi * m.reshape(shape) * coeff
            acc = part if acc is None else acc + part
        scale += _norm(term, 1.0)
    mag = np.abs(acc)
    mag[(0,) * d] = 0.0
    scale *= 2.0 * np.pi * np.sqrt(d) * cutoff
    residual = float(mag.max())
    return {"absolute": residual, "scale": scale, "relative": residual / scale if scale > 0 else residual}


def _check(value, bound):
    return {"value": float(value), "bound": float(bound), "ok": bool(value <= bound),
            "margin": float(bound - value)}


def _agrees(a, b, rtol=REPORT_RTOL):
    return abs(a - b) <= rtol * max(abs(a), abs(b)) or a == b


def audit_step(before, after, report, beta, M=None, mode_cutoff=8, residual_tol=1e-6):
    """Recompute the four step estimates and three weak residuals from two states.

    ``report`` is a step report dict; ``M`` overrides its constant.  Returns a
    verdict with every check and every disagreement with the report.
    """
    const = report["constants"]
    p, pt, delta = const["p"], const["ptilde"], const["delta"]
    pd = p / (p - 1.0)
    big_m = const["M"] if M is None else M
    d = before.grid.dim

    r0 = np.concatenate([before.defect.first, before.defect.second])
    r1 = np.concatenate([after.defect.first, after.defect.second])
    r0_l1 = _norm(r0, 1.0)
    drho = after.rho.values - before.rho.values
    du = after.u.values - before.u.values
    checks = {
        "density_Lp": _check(_norm(drho[None], p), big_m * r0_l1 ** (1.0 / p)),
        "field_Lp_dual": _check(_norm(du, pd), big_m * r0_l1 ** (1.0 / pd)),
        "field_W1": _check(_w1(du, pt), delta),
        "defect_L1": _check(_norm(r1, 1.0), delta),
    }
    rho, u, h = after.rho.values, after.u.values, after.h.values
    brho = beta(rho)
    residuals = {
        "divergence_free": weak_residual([u], mode_cutoff),
        "transport": weak_residual([rho[None] * u, after.defect.first], mode_cutoff),
        "renormalized": weak_residual([brho[None] * u, -h, after.defect.second], mode_cutoff),
    }
    for val in residuals.values():
        val["ok"] = bool(val["relative"] <= residual_tol)

    mismatches = []
    for name, chk in checks.items():
        theirs = report["estimates"][name]
        for key in ("value", "bound"):
            if key == "bound" and M is not None and name in ("density_Lp", "field_Lp_dual"):
                continue
            if not _agrees(chk[key], theirs[key]):
                mismatches.append(f"{name}.{key}: audit {chk[key]!r} vs report {theirs[key]!r}")
    for name, val in residuals.items():
        theirs = report["residuals"][name]
        if abs(val["relative"] - theirs["relative"]) > RESIDUAL_ATOL:
            mismatches.append(f"{name}.relative: audit {val['relative']!r} vs report {theirs['relative']!r}")
        if not _agrees(val["scale"], theirs["scale"]):
            mismatches.append(f"{name}.scale: audit {val['scale']!r} vs report {theirs['scale']!r}")
    if not _agrees(r0_l1, const["defect_in_L1"]):
        mismatches.append(f"defect_in_L1: audit {r0_l1!r} vs report {const['defect_in_L1']!r}")
    return {
        "estimates": checks,
        "residuals": residuals,
        "estimates_ok": all(c["ok"] for c in checks.values()),
        "residuals_ok": all(r["ok"] for r in residuals.values()),
        "mismatches": mismatches,
        "dim": d,
    }


# tube pairs ---------------------------------------------------------------


def _cell_samples(pair, points):
    n = pair.dim - 1
    h = 1.0 / (pair.mu * points)
    x = pair.offset + (np.arange(points) + 0.5) * h
    if pair.hamiltonian:
        vals = pair.sample([x] * n, 1.0, ("density", "potential_gradient"))
        comps = pair.flux_vector(vals["potential_gradient"])
    else:
        vals = pair.sample([x] * n, 1.0, ("density", "flux"))
        comps = [None] * pair.dim
        comps[pair.axis] = vals["flux"]
    shape = (points,) * n
    comps = [np.zeros(shape) if c is None else np.broadcast_to(c, shape) for c in comps]
    return x, h, np.broadcast_to(vals["density"], shape), comps


def _transverse_weak_residual(pair, x, h, comps, cutoff=2):
    """``max_m |int W . grad phi_m|`` over transverse modes, relative to ``int |W||grad phi_m|``."""
    phys = [a for a in range(pair.dim) if a != pair.axis]
    m = np.arange(-cutoff, cutoff + 1)
    basis = np.exp(2j * np.pi * np.outer(x, m)) * h
    acc = 0.0
    scale = 0.0
    for slot, axis in enumerate(phys):
        coeff = comps[axis]
        for _ in phys:
            coeff = np.tensordot(coeff, basis, axes=([0], [0]))
        shape = [1] * len(phys)
        shape[slot] = m.size
        acc = acc + 2j * np.pi * m.reshape(shape) * coeff
        scale += float(np.sum(np.abs(comps[axis])) * h ** len(phys))
    scale *= 2 * np.pi * cutoff * np.sqrt(len(phys))
    res = float(np.abs(acc).max())
    return res / scale if scale > 0 else res


def audit_mikado(pair, beta, points=None, tol=1e-9):
    """Recheck a pair's five properties and ``L^r`` bounds by midpoint quadrature on its cell."""
    n = pair.dim - 1
    points = AUDIT_POINTS.get(n, 64) if points is None else points
    x, h, theta, comps = _cell_samples(pair, points)
    vol = h**n
    k = pair.axis
    axial = comps[k]
    mag = np.sqrt(sum(c * c for c in comps))
    amp = abs(pair.amplitude) ** (1.0 / pair.p)
    zero = pair.amplitude == 0
    checks = {}

    flux_mean = [float(np.sum(c) * vol) for c in comps]
    flux_size = float(np.sum(mag) * vol)
    checks["flux_mean_zero"] = max(abs(v) for v in flux_mean) <= tol * max(flux_size, 1.0)
    checks["divergence_free"] = _transverse_weak_residual(pair, x, h, comps) <= tol
    off_axis = max((float(np.abs(theta * c).max()) for i, c in enumerate(comps) if i != k), default=0.0)
    checks["product_axial"] = off_axis <= tol * max(float(np.abs(theta * axial).max()), 1.0)
    m1 = float(np.sum(theta * axial) * vol)
    m2 = float(np.sum(beta(amp * theta) * axial) * vol)
    target2 = pair.sigma * amp
    if zero:
        checks["flux_moment"] = checks["renorm_moment"] = bool(
            np.all(theta == 0) and all(np.all(c == 0) for c in comps))
        checks["both_signs"] = True
    else:
        checks["flux_moment"] = abs(m1 - 1.0) < pair.zeta
        checks["renorm_moment"] = abs(m2 - target2) < pair.zeta
        checks["both_signs"] = bool(theta.max() > 0 and theta.min() < 0)

    bounds = {}
    if not zero:
        const = max((np.sqrt(v) if key.startswith("product") else v) for key, v in pair.norms.items())
        pd = pair.p_dual
        for tag, r in (("1", 1.0), ("p", pair.p), ("p_dual", pd), ("inf", np.inf)):
            inv_r = 0.0 if np.isinf(r) else 1.0 / r
            for name, arr, base in (("density", np.abs(theta), 1.0 / pair.p), ("flux", mag, 1.0 / pd)):
                val = float(arr.max()) if np.isinf(r) else float(np.sum(arr**r) * vol) ** inv_r
                bound = const * pair.mu ** (n * (base - inv_r))
                bounds[f"{name}_L{tag}"] = {"value": val, "bound": bound, "ok": bool(val <= bound * (1 + LR_SLACK))}
    ok = all(checks.values()) and all(b["ok"] for b in bounds.values())
    return {
        "ok": bool(ok), "checks": {k2: bool(v) for k2, v in checks.items()}, "bounds": bounds,
        "moments": {"flux": m1, "renorm": m2, "renorm_target": target2, "zeta": pair.zeta},
        "flux_mean": flux_mean, "points": points,
    }


# directories ---------------------------------------------------------------


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


def audit_directory(path, beta=None, tolerance_overrides=None):
    """Audit a run directory; returns ``(exit_code, verdict)``."""
    from .renormalization import parse_beta

    verdict = {"steps": [], "errors": []}
    try:
        manifest = _read_json(os.path.join(path, "manifest.json"))
        config = _read_json(os.path.join(path, "config.json"))
    except (OSError, ValueError) as exc:
        verdict["errors"].append(f"unreadable manifest or config: {exc}")
        return EXIT_CORRUPT, verdict
    for name, digest in manifest["files"].items():
        target = os.path.join(path, name)
        if not os.path.exists(target):
            verdict["errors"].append(f"{name}: missing")
        elif sha256(target) != digest:
            verdict["errors"].append(f"{name}: hash mismatch")
    if verdict["errors"]:
        return EXIT_CORRUPT, verdict

    beta = parse_beta(config["beta"]) if beta is None else beta
    opts = dict(mode_cutoff=config.get("mode_cutoff", 8), residual_tol=config.get("residual_tol", 1e-6))
    opts.update(tolerance_overrides or {})
    code = EXIT_OK
    try:
        before = load_state(os.path.join(path, "state_000.cif"))
        summary = _read_json(os.path.join(path, "summary.json"))
        for q in range(1, config["steps"] + 1):
            step_path = os.path.join(path, f"step_{q:03d}.json")
            if not os.path.exists(step_path):
                verdict["errors"].append(f"step {q} was not reached")
                code = max(code, EXIT_ESTIMATE)
                break
            record = _read_json(step_path)
            if "state" not in record:
                verdict["errors"].append(f"step {q}: no attempt was dumped ({record.get('error', '')})")
                code = max(code, EXIT_ESTIMATE)
                break
            after = load_state(os.path.join(path, record["state"]))
            result = audit_step(before, after, record["report"], beta, **opts)
            result["q"] = q
            result["status"] = record["status"]
            verdict["steps"].append(result)
            row = next((r for r in summary["trajectory"] if r["q"] == q), None)
            if row is None or not _agrees(row["defect_L1"], result["estimates"]["defect_L1"]["value"]):
                result["mismatches"].append("summary trajectory disagrees with the dumped defect")
            if result["mismatches"]:
                code = max(code, EXIT_CORRUPT)
            elif not result["residuals_ok"]:
                code = max(code, EXIT_RESIDUAL)
            elif not result["estimates_ok"] or record["status"] != "accepted":
                code = max(code, EXIT_ESTIMATE)
            if record["status"] != "accepted":
                break
            before = after
    except cif.CorruptArtifact as exc:
        verdict["errors"].append(str(exc))
        return EXIT_CORRUPT, verdict
    verdict["exit_code"] = code
    return code, verdict
