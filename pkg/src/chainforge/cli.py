"""``forge`` command line: ``run``, ``verify`` and ``mikado``."""

import argparse
import json
import os
import sys

import numpy as np

from . import cif


def _run(args):
    from .driver import RunConfig, run
    from .step.parameters import ExponentError

    config = RunConfig(
        dim=args.dim, p=args.p, ptilde=args.ptilde, steps=args.steps, grid=args.grid, beta=args.beta,
        defect=args.defect, mode=args.mode, out=args.out, policy=args.policy,
        mode_cutoff=args.mode_cutoff, residual_tol=args.residual_tol, max_trials=args.max_trials,
    )
    try:
        summary = run(config)
    except (ExponentError, ValueError) as exc:
        print(f"forge run: {exc}", file=sys.stderr)
        return 1
    for row in summary["trajectory"]:
        print(f"q={row['q']} delta={row['delta']:.6g} |R|_L1={row['defect_L1']:.6e} {row['status']}")
    print("ok" if summary["ok"] else f"not ok (halted at step {summary['halted_at']})")
    return 0 if summary["ok"] else 1


def _verify(args):
    from .verify import audit_directory

    code, verdict = audit_directory(args.directory)
    for err in verdict["errors"]:
        print(f"error: {err}")
    for step in verdict.get("steps", []):
        for name, chk in step["estimates"].items():
            flag = "pass" if chk["ok"] else "FAIL"
            print(f"step {step['q']} {name}: {flag} {chk['value']:.6e} <= {chk['bound']:.6e}")
        for name, res in step["residuals"].items():
            flag = "pass" if res["ok"] else "FAIL"
            print(f"step {step['q']} residual {name}: {flag} {res['relative']:.3e}")
        for msg in step["mismatches"]:
            print(f"step {step['q']} mismatch: {msg}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(verdict, fh, indent=2, default=float)
    print(f"exit code {code}")
    return code


def _mikado(args):
    from .fields import GridSpec
    from .mikado import build_pair
    from .renormalization import parse_beta
    from .verify import audit_mikado

    beta = parse_beta(args.beta)
    pair = build_pair(beta, args.amplitude, args.axis, args.zeta, args.mu, args.sigma, args.p, args.dim,
                      offset=args.offset, hamiltonian=args.hamiltonian)
    os.makedirs(args.out, exist_ok=True)
    grid = GridSpec(args.dim, args.grid)
    x = grid.axis()
    coords = [x] * (args.dim - 1)
    qty = ("density", "potential_gradient") if pair.hamiltonian else ("density", "flux")
    vals = pair.sample(coords, args.lam, qty)
    if pair.hamiltonian:
        comps = pair.flux_vector(vals["potential_gradient"])
    else:
        comps = [None] * args.dim
        comps[args.axis] = vals["flux"]
    out = np.zeros((1 + args.dim,) + grid.shape)
    for slot, arr in enumerate([vals["density"]] + comps):
        if arr is not None:
            out[slot] = np.expand_dims(arr, args.axis)
    cif.write_cif(os.path.join(args.out, "mikado.cif"), out, args.dim)
    cert = {
        "dim": pair.dim, "axis": pair.axis, "amplitude": pair.amplitude, "sigma": pair.sigma, "mu": pair.mu,
        "zeta": pair.zeta, "p": pair.p, "offset": pair.offset, "hamiltonian": pair.hamiltonian,
        "lam": args.lam, "grid": args.grid, "components": "density,flux[0..d)",
        "moments": {"flux": pair.moment_flux, "renorm": pair.moment_renorm, "renorm_target": pair.target_renorm},
        "norms": pair.norms, "diagnostics": pair.diagnostics, "audit": audit_mikado(pair, beta),
    }
    with open(os.path.join(args.out, "mikado.json"), "w") as fh:
        json.dump(cert, fh, indent=2, sort_keys=True, default=float)
    ok = cert["audit"]["ok"]
    print(f"moments m1={pair.moment_flux:.6f} m2={pair.moment_renorm:.6f} target={pair.target_renorm:.6f}")
    print("certificate ok" if ok else "certificate FAILED")
    return 0 if ok else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="forge")
    parser.add_argument("--threads", type=int, help="FFT worker cap (sets FORGE_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the outer loop and write artifacts")
    run.add_argument("--dim", type=int, default=3)
    run.add_argument("--p", type=float, default=4 / 3)
    run.add_argument("--ptilde", type=float, default=1.0)
    run.add_argument("--steps", type=int, default=1)
    run.add_argument("--grid", type=int, default=128)
    run.add_argument("--beta", default="smooth-abs:1.0")
    run.add_argument("--defect", default="demo")
    run.add_argument("--mode", choices=("standard", "hamiltonian"), default="standard")
    run.add_argument("--out", required=True)
    run.add_argument("--policy", choices=("strict", "report"), default="strict",
                     help="report: relax tube resolution to the grid and dump the closest attempt")
    run.add_argument("--mode-cutoff", type=int, default=8)
    run.add_argument("--residual-tol", type=float, default=1e-6)
    run.add_argument("--max-trials", type=int, default=8)
    run.set_defaults(func=_run)

    ver = sub.add_parser("verify", help="audit a run directory")
    ver.add_argument("directory")
    ver.add_argument("--json", help="write the full verdict here")
    ver.set_defaults(func=_verify)

    mik = sub.add_parser("mikado", help="build, sample and certify one tube pair")
    mik.add_argument("--dim", type=int, default=3)
    mik.add_argument("--mu", type=float, default=16.0)
    mik.add_argument("--amplitude", type=float, default=1.0)
    mik.add_argument("--axis", type=int, default=0)
    mik.add_argument("--sigma", type=float, choices=(-1.0, 1.0), default=1.0)
    mik.add_argument("--zeta", type=float, default=0.05)
    mik.add_argument("--p", type=float, default=4 / 3)
    mik.add_argument("--offset", type=float, default=0.0)
    mik.add_argument("--beta", default="smooth-abs:1.0")
    mik.add_argument("--hamiltonian", action="store_true")
    mik.add_argument("--lam", type=int, default=1)
    mik.add_argument("--grid", type=int, default=64)
    mik.add_argument("--out", required=True)
    mik.set_defaults(func=_mikado)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads:
        os.environ["FORGE_THREADS"] = str(args.threads)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
