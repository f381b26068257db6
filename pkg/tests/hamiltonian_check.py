"""One Hamiltonian step (d=4, N=64); prints a JSON line with the grid checks.

Run as a separate process: the step peaks near 4 GB.
"""

import json
import sys

import numpy as np

from chainforge.fields import DefectField, GridSpec, VectorField, zeros_scalar, zeros_vector
from chainforge.renormalization import parse_beta
from chainforge.step.assemble import perform_step
from chainforge.step.parameters import StepParameters, concentration_exponent, exponent_gap
from chainforge.step.state import State
from chainforge.verify import weak_residual


def main(n=64):
    d, p, ptilde = 4, 1.5, 1.0
    grid = GridSpec(d, n)
    # one constant tube family; coarser families are unresolved at N=64
    e0 = np.zeros((d,) + grid.shape)
    e0[0] = 1.0
    h = VectorField(grid, e0)
    state = State(zeros_scalar(grid), zeros_vector(grid), DefectField(grid, e0, e0), h)
    gap = exponent_gap(d, p, ptilde)
    params = StepParameters(cubes=1, cutoff=0.25, zeta=0.05, lam=2, mu=2.0,
                            exponent=concentration_exponent(gap), gap=gap, mode="hamiltonian")
    extras = {}
    new, report = perform_step(state, h, parse_beta("smooth-abs:1.0"), p, ptilde, 0.5, params,
                               check_input=False, extras=extras)
    # J grad H with numpy.fft, independent of the step's transforms
    hat = np.fft.fftn(extras.pop("potential"))
    freqs = 2j * np.pi * np.fft.fftfreq(n, 1.0 / n)
    freqs[n // 2] = 0.0
    du = new.u.values - state.u.values
    err = 0.0
    half = d // 2
    for i in range(d):
        src = i + half if i < half else i - half
        shape = [1] * d
        shape[src] = n
        comp = np.fft.ifftn(freqs.reshape(shape) * hat).real
        err = max(err, float(np.abs(du[i] - (comp if i < half else -comp)).max()))
    del hat
    out = {
        "sup_error": err,
        "field_sup": float(np.abs(du).max()),
        "divergence_residual": weak_residual([new.u.values], 8)["relative"],
        "step_residual": report.residuals["divergence_free"]["relative"],
    }
    print(json.dumps(out))


if __name__ == "__main__":
    main(*map(int, sys.argv[1:]))
