"""Outer loop: smoothed targets, repeated steps with ``delta_q = 2**-q``, artifacts.

Artifacts written by :func:`run` (all paths relative to the output directory):

``config.json``
    the validated configuration.
``state_XXX.cif``
    CIF1 dump of state ``q``; components ``rho, u[0..d), R1[0..d), R2[0..d), h[0..d)``.
``step_XXX.json``
    report of the step producing state ``XXX`` (``status`` is ``accepted`` or
    ``failed``; a failed step still dumps its closest attempt).
``slice_XXX.csv``
    the plane through the origin spanned by the first two axes.
``summary.json``, ``summary.csv``
    the norm trajectory ``||R_q||_{L1}`` against ``2**-q``.
``manifest.json``
    sha256 of every dump and report, used by :mod:`chainforge.verify`.

Wall-clock timings go to ``timing.json``, which is not hashed, so identical
configurations give byte-identical reports.
"""

import csv
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import cif
from .fields import DefectField, GridSpec, ScalarField, VectorField
from .renormalization import parse_beta
from .step.assemble import state_residuals
from .step.parameters import ExponentError, check_exponents
from .step.selection import ParameterSelectionError, choose_parameters
from .step.state import State, defect_l1


@dataclass
class RunConfig:
    dim: int
    p: float
    ptilde: float
    steps: int
    grid: int
    beta: str = "smooth-abs:1.0"
    defect: str = "demo"
    mode: str = "standard"
    out: str = "forge-run"
    policy: str = "strict"
    mode_cutoff: int = 8
    residual_tol: float = 1e-6
    max_trials: int = 8
    overrides: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def validate(config):
    """Check exponents, dimension and mode; returns ``(config, gap)``."""
    d, p, pt = config.dim, config.p, config.ptilde
    if d < 3:
        raise ExponentError(f"dimension must be at least 3, got {d}")
    gap = check_exponents(d, p, pt)
    if gap <= 0:
        raise ExponentError(f"exponent gap (d-1)/ptilde - (d-1)/p' - 1 = {gap:.6f} must be positive")
    if config.mode not in ("standard", "hamiltonian"):
        raise ValueError(f"unknown mode {config.mode!r}")
    if config.mode == "hamiltonian" and (d % 2 or d < 4):
        raise ExponentError(f"Hamiltonian mode needs an even dimension of at least 4, got {d}")
    if config.steps < 0:
        raise ValueError("steps must be non-negative")
    if config.grid < 8 or config.grid & (config.grid - 1):
        raise ValueError(f"grid size must be a power of two, at least 8, got {config.grid}")
    if not 1 <= config.mode_cutoff < config.grid // 2:
        raise ValueError(f"mode cutoff {config.mode_cutoff} must lie in [1, N/2) for N={config.grid}")
    if config.policy not in ("strict", "report"):
        raise ValueError(f"unknown resolution policy {config.policy!r}")
    return config, gap


# defect sources ---------------------------------------------------------


class FourierSeries:
    """Real vector series ``sum_k cos_k cos(2 pi k.x) + sin_k sin(2 pi k.x)``."""

    def __init__(self, dim, modes):
        self.dim = dim
        self.modes = []
        for mode in modes:
            k = tuple(int(v) for v in mode["k"])
            cos = np.asarray(mode.get("cos", [0.0] * dim), dtype=np.float64)
            sin = np.asarray(mode.get("sin", [0.0] * dim), dtype=np.float64)
            if len(k) != dim or cos.shape != (dim,) or sin.shape != (dim,):
                raise ValueError(f"mode {mode} does not match dimension {dim}")
            self.modes.append((k, cos, sin))

    @property
    def max_frequency(self):
        return max((max(abs(v) for v in k) for k, _, _ in self.modes), default=0)

    def sample(self, grid, cutoff=None):
        x = grid.axis()
        out = np.zeros((grid.dim,) + grid.shape)
        for k, cos, sin in self.modes:
            if cutoff is not None and max(abs(v) for v in k) > cutoff:
                continue
            # phase 2 pi k.x built separably
            phase = np.zeros(grid.shape)
            for axis, kv in enumerate(k):
                shape = [1] * grid.dim
                shape[axis] = grid.n
                phase = phase + (2 * np.pi * kv * x).reshape(shape)
            c, s = np.cos(phase), np.sin(phase)
            for i in range(grid.dim):
                if cos[i]:
                    out[i] += cos[i] * c
                if sin[i]:
                    out[i] += sin[i] * s
        return VectorField(grid, out)


def demo_series(dim):
    """Gradient of ``sin(2 pi x1) sin(2 pi x2)``."""
    a = [0.0] * dim
    b = [0.0] * dim
    a[0], a[1] = np.pi, np.pi
    b[0], b[1] = -np.pi, np.pi
    kp = [1, 1] + [0] * (dim - 2)
    km = [1, -1] + [0] * (dim - 2)
    return FourierSeries(dim, [{"k": kp, "sin": a}, {"k": km, "sin": b}])


def load_defect(spec, dim):
    """``demo`` or ``file:<path>`` with ``{"modes": [{"k": [...], "cos": [...], "sin": [...]}]}``."""
    if spec == "demo":
        return demo_series(dim)
    kind, _, path = spec.partition(":")
    if kind != "file" or not path:
        raise ValueError(f"unknown defect source {spec!r}")
    with open(path) as fh:
        data = json.load(fh)
    if "modes" not in data:
        raise ValueError(f"{path}: missing key 'modes'")
    return FourierSeries(dim, data["modes"])


def smooth_target_sequence(series, grid, count):
    """Cutoffs ``K_0 <= ... <= K_count`` and the truncations ``h_q``.

    ``K_q`` is the smallest admissible cutoff with ``||h - h_q||_{L1} <= 2**-(q+1) / 8``,
    which gives ``||h_{q+1} - h_q||_{L1} <= 2**-(q+1) / 4``.
    """
    top = series.max_frequency
    if 2 * top >= grid.n:
        raise ValueError(f"defect frequency {top} is not representable on {grid.n} samples")
    full = series.sample(grid)
    cutoffs, targets, tails = [], [], []
    k = 0
    for q in range(count + 1):
        goal = 2.0 ** (-(q + 1)) / 8.0
        while True:
            trunc = series.sample(grid, k)
            tail = float(np.mean(np.sqrt(np.sum((full.values - trunc.values) ** 2, axis=0))))
            if tail <= goal:
                break
            if k >= top:
                raise ValueError(f"truncation tail {tail:.3e} above {goal:.3e} at the full cutoff {k}")
            k += 1
        cutoffs.append(k)
        targets.append(trunc)
        tails.append(tail)
    return cutoffs, targets, tails


# artifacts --------------------------------------------------------------


def state_components(state):
    g = state.grid
    return np.concatenate([
        state.rho.values[None], state.u.values, state.defect.first, state.defect.second, state.h.values,
    ]).reshape((1 + 4 * g.dim,) + g.shape)


def state_from_components(values, grid):
    d = grid.dim
    return State(
        ScalarField(grid, values[0]),
        VectorField(grid, values[1:1 + d]),
        DefectField(grid, values[1 + d:1 + 2 * d], values[1 + 2 * d:1 + 3 * d]),
        VectorField(grid, values[1 + 3 * d:1 + 4 * d]),
    )


def load_state(path):
    values, shape = cif.read_cif(path)
    grid = GridSpec(len(shape), shape[0])
    return state_from_components(values, grid)


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_slice(path, state):
    g = state.grid
    x = g.axis()
    idx = (slice(None), slice(None)) + (0,) * (g.dim - 2)
    rho = state.rho.values[idx]
    speed = np.sqrt(sum(c[idx] ** 2 for c in state.u.values))
    defect = np.sqrt(sum(c[idx] ** 2 for row in (state.defect.first, state.defect.second) for c in row))
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["x0", "x1", "rho", "u_norm", "defect_norm"])
        for i in range(g.n):
            for j in range(g.n):
                out.writerow([repr(float(x[i])), repr(float(x[j])), repr(float(rho[i, j])),
                              repr(float(speed[i, j])), repr(float(defect[i, j]))])


class _Artifacts:
    def __init__(self, out):
        self.out = out
        os.makedirs(out, exist_ok=True)
        self.files = {}

    def path(self, name):
        return os.path.join(self.out, name)

    def add(self, name):
        self.files[name] = sha256(self.path(name))

    def state(self, q, state):
        name = f"state_{q:03d}.cif"
        cif.write_cif(self.path(name), state_components(state), state.grid.dim)
        self.add(name)
        write_slice(self.path(f"slice_{q:03d}.csv"), state)
        return name

    def json(self, name, data, hashed=True):
        _write_json(self.path(name), data)
        if hashed:
            self.add(name)
        return name


def run(config):
    """Run the outer loop; returns the summary dict (``summary["ok"]`` is the overall verdict)."""
    config, gap = validate(config)
    grid = GridSpec(config.dim, config.grid)
    beta = parse_beta(config.beta)
    series = load_defect(config.defect, config.dim)
    cutoffs, targets, tails = smooth_target_sequence(series, grid, config.steps)

    art = _Artifacts(config.out)
    art.json("config.json", config.to_dict())
    state = State.initial(targets[0])
    rows = [{
        "q": 0, "delta": 1.0, "defect_L1": defect_l1(state.defect), "status": "initial",
        "cutoff": cutoffs[0], "target_tail_L1": tails[0],
    }]
    residuals0 = state_residuals(state, beta, config.mode_cutoff, config.residual_tol)
    art.state(0, state)
    art.json("initial.json", {"residuals": residuals0, "cutoff": cutoffs[0], "target_tail_L1": tails[0]})
    timing = {}
    ok = all(r["ok"] for r in residuals0.values())
    halted = None

    for q in range(config.steps):
        delta = 2.0 ** (-(q + 1))
        target = targets[q + 1]
        step_name = f"step_{q + 1:03d}.json"
        base = {"q": q + 1, "delta": delta, "cutoff": cutoffs[q + 1], "target_tail_L1": tails[q + 1],
                "policy": config.policy}
        try:
            sel = choose_parameters(state, target, beta, config.p, config.ptilde, delta, mode=config.mode,
                                    policy=config.policy, max_trials=config.max_trials,
                                    mode_cutoff=config.mode_cutoff, residual_tol=config.residual_tol,
                                    **config.overrides)
        except ParameterSelectionError as exc:
            record = dict(base, status="failed", error=str(exc), trials=exc.trials, notes=exc.notes)
            if exc.best is not None:
                _, attempt, report = exc.best
                record["report"] = _report_dict(report)
                timing[step_name] = report.timing
                record["state"] = art.state(q + 1, attempt)
                rows.append(_row(q + 1, delta, attempt, report, record["status"], cutoffs, tails))
            art.json(step_name, record)
            halted = q + 1
            ok = False
            break
        report = sel.report
        record = dict(base, status="accepted", trials=sel.trials, notes=sel.notes, report=_report_dict(report))
        timing[step_name] = report.timing
        record["state"] = art.state(q + 1, sel.state)
        art.json(step_name, record)
        rows.append(_row(q + 1, delta, sel.state, report, "accepted", cutoffs, tails))
        ok = ok and report.estimates_ok and report.residuals_ok
        state = sel.state

    summary = {"ok": ok, "halted_at": halted, "gap": gap, "trajectory": rows}
    art.json("summary.json", summary)
    with open(art.path("summary.csv"), "w", newline="") as fh:
        keys = ["q", "delta", "defect_L1", "status", "lam", "mu", "estimates_ok", "residuals_ok",
                "cutoff", "target_tail_L1"]
        out = csv.DictWriter(fh, fieldnames=keys, extrasaction="ignore")
        out.writeheader()
        for row in rows:
            out.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    art.add("summary.csv")
    _write_json(art.path("timing.json"), timing)
    _write_json(art.path("manifest.json"), {"files": art.files, "state_layout": "rho,u,R1,R2,h"})
    return summary


def _report_dict(report):
    out = report.to_dict()
    out.pop("timing", None)
    return out


def _row(q, delta, state, report, status, cutoffs, tails):
    return {
        "q": q, "delta": delta, "defect_L1": defect_l1(state.defect), "status": status,
        "lam": report.parameters["lam"], "mu": report.parameters["mu"],
        "estimates_ok": report.estimates_ok, "residuals_ok": report.residuals_ok,
        "cutoff": cutoffs[q], "target_tail_L1": tails[q],
    }
