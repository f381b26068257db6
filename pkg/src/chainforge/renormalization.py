"""Renormalization maps beta: Lipschitz, beta(0) = 0, linear growth bounds.

A map carries its declared constants: Lipschitz constant, lower growth
constant ``D`` (``beta(t) >= D|t|`` for ``|t| >= threshold``), upper growth
constant ``C`` (``beta(t) <= C|t|``) and the threshold itself.
``certify`` checks the declarations by sampling.
"""

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class RenormalizationMap:
    func: object
    deriv: object
    lipschitz: float
    growth_lower: float
    growth_upper: float
    growth_threshold: float
    label: str = "beta"
    shift: float = field(default=0.0)

    def __call__(self, tau):
        return self.func(np.asarray(tau, dtype=np.float64)) - self.shift

    def derivative(self, tau):
        return self.deriv(np.asarray(tau, dtype=np.float64))


def normalize(beta):
    """Shift so that ``beta(0) == 0``; Lipschitz and derivative are unchanged."""
    offset = float(beta.func(np.float64(0.0)))
    return RenormalizationMap(
        beta.func, beta.deriv, beta.lipschitz, beta.growth_lower,
        beta.growth_upper, beta.growth_threshold, beta.label, offset,
    )


def smooth_abs(delta=1.0):
    """``sqrt(t^2 + delta^2) - delta``."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    d2 = float(delta) ** 2
    return RenormalizationMap(
        lambda t: np.sqrt(t * t + d2) - delta,
        lambda t: t / np.sqrt(t * t + d2),
        lipschitz=1.0,
        growth_lower=0.5,
        growth_upper=1.0,
        growth_threshold=2.0 * delta,
        label=f"smooth-abs:{delta:g}",
    )


def exact_abs():
    return RenormalizationMap(
        np.abs, np.sign, lipschitz=1.0, growth_lower=1.0, growth_upper=1.0,
        growth_threshold=0.0, label="abs",
    )


def piecewise_polynomial(breakpoints, coefficients, lipschitz, growth_lower,
                         growth_upper, growth_threshold, label="piecewise"):
    """Piece ``i`` is ``sum_j c[i][j] (t - b_i)^j`` on ``[b_i, b_{i+1})``.

    The first and last pieces extend to minus and plus infinity.
    """
    b = np.asarray(breakpoints, dtype=np.float64)
    coeffs = [np.asarray(c, dtype=np.float64) for c in coefficients]
    if b.ndim != 1 or len(coeffs) != b.size - 1 or b.size < 2:
        raise ValueError("need n+1 breakpoints for n coefficient rows")
    if np.any(np.diff(b) <= 0):
        raise ValueError("breakpoints must increase")

    def locate(t):
        return np.clip(np.searchsorted(b, t, side="right") - 1, 0, len(coeffs) - 1)

    def evaluate(t, order):
        t = np.asarray(t, dtype=np.float64)
        idx = locate(t)
        out = np.zeros_like(t)
        for i, c in enumerate(coeffs):
            sel = idx == i
            if not np.any(sel):
                continue
            poly = np.polynomial.Polynomial(c)
            if order:
                poly = poly.deriv(order)
            out[sel] = poly(t[sel] - b[i])
        return out

    return RenormalizationMap(
        lambda t: evaluate(t, 0), lambda t: evaluate(t, 1),
        float(lipschitz), float(growth_lower), float(growth_upper),
        float(growth_threshold), label,
    )


def load_beta_file(path):
    with open(path) as fh:
        data = json.load(fh)
    try:
        return piecewise_polynomial(
            data["breakpoints"], data["coefficients"], data["lipschitz"],
            data["growth_lower"], data["growth_upper"], data["growth_threshold"],
            label=f"file:{path}",
        )
    except KeyError as exc:
        raise ValueError(f"{path}: missing key {exc}") from exc


def parse_beta(text):
    """``smooth-abs:<delta>``, ``abs`` or ``file:<path>``; result is normalized."""
    kind, _, arg = text.partition(":")
    if kind == "smooth-abs":
        beta = smooth_abs(float(arg) if arg else 1.0)
    elif kind == "abs":
        beta = exact_abs()
    elif kind == "file":
        beta = load_beta_file(arg)
    else:
        raise ValueError(f"unknown renormalization map {text!r}")
    return normalize(beta)


def certify(beta, samples=10_000, rtol=1e-9):
    """Sampled check of the declared constants; returns a flat report dict."""
    span = 10.0 * beta.growth_threshold + 10.0
    tau = np.linspace(-span, span, samples)
    vals = beta(tau)
    slopes = np.abs(np.diff(vals) / np.diff(tau))
    lip_seen = float(max(slopes.max(), np.abs(beta.derivative(tau)).max()))
    far = tau[np.abs(tau) >= beta.growth_threshold]
    far = far[far != 0.0]
    ratio = beta(far) / np.abs(far) if far.size else np.array([np.inf])
    upper_seen = float(np.max(np.abs(vals[tau != 0]) / np.abs(tau[tau != 0])))
    report = {
        "beta_at_zero": float(beta(0.0)),
        "lipschitz_declared": beta.lipschitz,
        "lipschitz_sampled": lip_seen,
        "growth_lower_declared": beta.growth_lower,
        "growth_lower_sampled": float(ratio.min()),
        "growth_upper_declared": beta.growth_upper,
        "growth_upper_sampled": upper_seen,
    }
    slack = 1.0 + rtol
    report["ok"] = bool(
        abs(report["beta_at_zero"]) <= 1e-12
        and lip_seen <= beta.lipschitz * slack
        and report["growth_lower_sampled"] * slack >= beta.growth_lower
        and upper_seen <= beta.growth_upper * slack
    )
    return report


def concentration_floor(beta, min_amplitude, p, dim):
    """Smallest admissible concentration: ``max(1, (t*/S^{1/p})^{p/(d-1)})``."""
    if min_amplitude <= 0:
        raise ValueError("concentration floor needs a positive smallest cube mean")
    base = beta.growth_threshold / min_amplitude ** (1.0 / p)
    return max(1.0, base ** (p / (dim - 1))) if base > 0 else 1.0
