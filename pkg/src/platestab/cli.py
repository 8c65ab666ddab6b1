"""Command-line entry point: kernel synthesis, simulation, verification.

Exit codes: 0 success, 1 configuration error, 2 numerical divergence,
3 verification failure.
"""

import argparse
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import csvout
from .config import (canonical_text, config_hash, load_config, resolve_params,
                     resolve_sim)
from .control import build_gain_tables
from .exceptions import ConfigError, DivergenceError, VerificationError
from .kernels import (ControllerKernels, export_kernels_csv, kernel_residual,
                      phi0_matrix, solve_controller_kernels, solve_observer_kernels)
from .params import ModalCoefficients
from .triangle import TriangleGrid

__all__ = ["main", "RunManifest"]


@dataclass
class RunManifest:
    profile: str
    outdir: str
    hash: str
    config: dict

    def write(self):
        os.makedirs(self.outdir, exist_ok=True)
        path = os.path.join(self.outdir, "manifest.json")
        with open(path, "w") as fh:
            json.dump({"profile": self.profile, "hash": self.hash,
                       "config": self.config}, fh, indent=1, sort_keys=True)
        return path


def _manifest(cfg, args):
    outdir = args.out or os.environ.get("PLATE_STAB_OUT", ".")
    man = RunManifest(profile=args.config or "<builtin>", outdir=outdir,
                      hash=config_hash(cfg), config=dict(cfg))
    man.write()
    return man


def _apply_quick(args):
    if getattr(args, "quick", False):
        args.grid_m = 21
        if getattr(args, "T", None) is None:
            args.T = 1.5


def cmd_kernels(args):
    cfg = load_config(args.config)
    d = resolve_params(cfg)
    _apply_quick(args)
    man = _manifest(cfg, args)
    N = args.modes if args.modes is not None else int(float(cfg.get("modes", 3)))
    m = args.grid_m or int(float(cfg.get("kernel_m", 41)))
    grid = TriangleGrid(m)
    delta = (float(cfg.get("delta1", 5)), float(cfg.get("delta2", 5)),
             float(cfg.get("delta3", 5)))
    tol = float(cfg.get("kernel_tol", 1e-10))
    threshold = 10.0 * grid.delta
    ok = True
    for n in range(N + 1):
        c = ModalCoefficients(d, n)
        ctrl = solve_controller_kernels(c, delta, grid, tol)
        obs = solve_observer_kernels(c, grid, tol, controller=ctrl)
        path = os.path.join(man.outdir, f"kernels_{n}.csv")
        export_kernels_csv(path, ctrl, obs)
        gt = build_gain_tables(ctrl, d, n)
        csvout.write_gains(os.path.join(man.outdir, f"gains_{n}.csv"), gt, man.hash)
        rep_c = kernel_residual(ctrl, c)
        rep_o = kernel_residual(obs, c)
        line = (f"mode {n}: ctrl pde {rep_c['max_pde']:.3e} bc {rep_c['max_bc']:.3e} "
                f"| obs pde {rep_o['max_pde']:.3e} bc {rep_o['max_bc']:.3e}")
        print(line)
        ok &= rep_c["max_pde"] <= threshold and rep_o["max_pde"] <= threshold
    print(f"kernel residual threshold {threshold:.3e}: {'ok' if ok else 'EXCEEDED'}")
    return 0


def cmd_simulate(args):
    cfg = load_config(args.config)
    d = resolve_params(cfg)
    _apply_quick(args)
    man = _manifest(cfg, args)
    sim_cfg = resolve_sim(cfg, dt=args.dt, dx=args.dx, T=args.T, scenario=args.scenario,
                          modes=args.modes, kernel_m=args.grid_m)
    from .sim import run_scenario
    jobs = args.jobs or (sim_cfg.N + 1)
    result = run_scenario(sim_cfg, d, jobs=jobs)
    csvout.write_series(os.path.join(man.outdir, "series.csv"), result, man.hash)
    if result.sigma_snaps:
        csvout.write_snapshots(man.outdir, result, d, man.hash)
    if result.U_modes is not None:
        csvout.write_control_trace(os.path.join(man.outdir, "utrace.csv"),
                                   result, d, manifest_hash=man.hash)
    if result.obs_err is not None:
        csvout.write_errors(os.path.join(man.outdir, "errors.csv"), result, man.hash)
    print(f"scenario {sim_cfg.scenario}: omega_a {result.omega_a[0]:.6g} -> "
          f"{result.omega_a[-1]:.6g} over T={sim_cfg.T}")
    return 0


def load_kernels_csv(path, d, delta=(5.0, 5.0, 5.0)):
    """Rebuild a controller kernel set from an exported CSV (for re-validation)."""
    data = {}
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("n,block"):
            raise VerificationError(f"{path}: not a kernel table")
        for raw in fh:
            n_, block, i, j, x, y, v = raw.strip().split(",")
            data.setdefault(block, []).append((int(i) - 1, int(j) - 1,
                                               float(x), float(y), float(v)))
    if "K" not in data:
        raise VerificationError(f"{path}: missing kernel block K")
    xs = sorted({row[2] for row in data["K"]})
    m = len(xs)
    grid = TriangleGrid(m)
    mode = int(path.rsplit("_", 1)[1].split(".")[0])

    def dense(block, one_arg=False):
        arr = np.zeros((3, 3, m)) if one_arg else np.zeros((3, 3, m, m))
        for i, j, x, y, v in data[block]:
            a = int(round(x * (m - 1)))
            if one_arg:
                arr[i, j, a] = v
            else:
                arr[i, j, a, int(round(y * (m - 1)))] = v
        return arr

    K, L = dense("K"), dense("L")
    Phi, Omega = dense("Phi", True), dense("Omega", True)
    c = ModalCoefficients(d, mode)
    return ControllerKernels(n=mode, grid=grid, lam=d.lambdas, delta=delta,
                             K=K, L=L, Phi=Phi, Omega=Omega, phi0=Phi[:, :, 0]), c


def cmd_verify(args):
    cfg = load_config(args.config)
    d = resolve_params(cfg)
    _apply_quick(args)
    man = _manifest(cfg, args)
    from .verify import run_checks
    m = args.grid_m or (21 if args.quick else int(float(cfg.get("kernel_m", 41))))
    checks = run_checks(d, cfg, kernel_m=m, quick=bool(args.quick),
                        kernel_files=sorted(
                            f"{man.outdir}/{f}" for f in os.listdir(man.outdir)
                            if f.startswith("kernels_") and f.endswith(".csv")))
    failed = [c for c in checks if not c[1]]
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")
    if failed:
        raise VerificationError(f"{len(failed)} verification check(s) failed")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="platestab",
                                 description="Boundary stabilization of a 2-D "
                                             "elastic plate: kernels, simulation, checks")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value profile file (built-in default)")
        p.add_argument("--out", help="output directory (or $PLATE_STAB_OUT, default '.')")
        p.add_argument("--modes", type=int, help="highest Fourier mode N")
        p.add_argument("--jobs", type=int, help="parallel kernel solves (default: modes)")
        p.add_argument("--quick", action="store_true", help="coarse fast variant")
        p.add_argument("--grid-m", type=int, dest="grid_m",
                       help="kernel triangle resolution")

    pk = sub.add_parser("kernels", help="solve kernels and export tables")
    common(pk)
    pk.set_defaults(func=cmd_kernels)

    ps = sub.add_parser("simulate", help="run a closed- or open-loop scenario")
    common(ps)
    ps.add_argument("--scenario", choices=("open-loop", "state-feedback",
                                           "output-feedback"))
    ps.add_argument("--dt", type=float)
    ps.add_argument("--dx", type=float)
    ps.add_argument("--T", type=float)
    ps.set_defaults(func=cmd_simulate)

    pv = sub.add_parser("verify", help="run the property/oracle check suite")
    common(pv)
    pv.set_defaults(func=cmd_verify)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if not hasattr(args, "T"):
        args.T = None
    if not hasattr(args, "scenario"):
        args.scenario = None
    if not hasattr(args, "dt"):
        args.dt = None
    if not hasattr(args, "dx"):
        args.dx = None
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return 2
    except VerificationError as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
