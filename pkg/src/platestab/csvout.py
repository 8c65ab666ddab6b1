"""CSV writers for simulation and synthesis outputs.

All floating-point numbers are written with 17 significant digits; every
file starts with a comment line referencing the run-manifest hash so outputs
can be traced back to their exact configuration.
"""

import numpy as np

from .control import sum_modal_inputs
from .sim import RunResult, physical_fields
from .modal import reconstruct

__all__ = ["write_series", "write_snapshots", "write_gains", "write_errors",
           "write_control_trace"]

FMT = "%.17g"


def _open(path, header, manifest_hash):
    fh = open(path, "w")
    if manifest_hash:
        fh.write(f"# manifest {manifest_hash}\n")
    fh.write(header + "\n")
    return fh


def _fmt(*vals):
    return ",".join(FMT % v for v in vals)


def write_series(path, result: RunResult, manifest_hash=""):
    """Time series of norms, Lyapunov values and control magnitudes."""
    V = result.omega_n.shape[0]
    cols = ["t"] + [f"omega_{n}" for n in range(V)] + ["omega_a"]
    has_d = result.omega_d is not None
    if has_d:
        cols.append("omega_d")
    has_v = result.V_lyap is not None
    if has_v:
        cols += [f"V_{n}" for n in range(V)]
    has_u = result.control2d_max is not None
    if has_u:
        cols += ["U1_max", "U2_max", "U3_max"]
    with _open(path, ",".join(cols), manifest_hash) as fh:
        for i, t in enumerate(result.t):
            row = [t] + list(result.omega_n[:, i]) + [result.omega_a[i]]
            if has_d:
                row.append(result.omega_d[i])
            if has_v:
                k = int(round(t / result.cfg.dt))
                row += list(result.V_lyap[:, k])
            if has_u:
                row += list(result.control2d_max[i])
            fh.write(_fmt(*row) + "\n")
    return path


def write_snapshots(outdir, result: RunResult, d, manifest_hash=""):
    """Plate fields w, alpha, beta on the (x, y) grid at the snapshot times."""
    paths = []
    op = result.op
    ygrid = np.linspace(0.0, d.L, result.cfg.ny)
    for t, _, stack in result.sigma_snaps:
        f = physical_fields(op, stack.Z, stack.Y, stack.X)
        w2 = reconstruct(f["w"], "sine", d.L, ygrid)
        al2 = reconstruct(f["alpha"], "sine", d.L, ygrid)
        be2 = reconstruct(f["beta"], "cosine", d.L, ygrid)
        path = f"{outdir}/snapshot_{t:g}.csv"
        with _open(path, "x,y,w,alpha,beta", manifest_hash) as fh:
            for a, xv in enumerate(op.x):
                for b, yv in enumerate(ygrid):
                    fh.write(_fmt(xv, yv, w2[a, b], al2[a, b], be2[a, b]) + "\n")
        paths.append(path)
    return paths


def write_gains(path, gt, manifest_hash=""):
    """Gain tables of one mode: rows (n, kind, i, j, xi, value)."""
    with _open(path, "n,kind,i,j,xi,value", manifest_hash) as fh:
        for i in range(3):
            for j in range(6):
                for xi, v in zip(gt.xi, gt.F[i, j]):
                    fh.write(f"{gt.n},F,{i + 1},{j + 1},{FMT % xi},{FMT % v}\n")
        for i in range(3):
            for j in range(6):
                fh.write(f"{gt.n},D,{i + 1},{j + 1},1,{FMT % gt.Dc[i, j]}\n")
    return path


def write_errors(path, result: RunResult, manifest_hash=""):
    """Observer-error norms per mode: (t, n, sigma_err, psi_err, X_err, Omega_nf)."""
    with _open(path, "t,n,sigma_err,psi_err,X_err,Omega_nf", manifest_hash) as fh:
        V = result.omega_n.shape[0]
        for i, t in enumerate(result.t):
            for n in range(V):
                fh.write(f"{FMT % t},{n},"
                         + _fmt(result.obs_err['sigma_err'][n, i],
                                result.obs_err['psi_err'][n, i],
                                result.obs_err['X_err'][n, i],
                                result.obs_err['omega_nf'][n, i]) + "\n")
    return path


def write_control_trace(path, result: RunResult, d, ny=61, manifest_hash=""):
    """2-D control traces (t, y, U1, U2, U3) at the recorded steps."""
    U = result.Uhat_modes if result.Uhat_modes is not None else result.U_modes
    ygrid = np.linspace(0.0, d.L, ny)
    with _open(path, "t,y,U1,U2,U3", manifest_hash) as fh:
        for i, t in enumerate(result.t):
            tr = sum_modal_inputs(U[i], ygrid, d.L)
            for b, yv in enumerate(ygrid):
                fh.write(_fmt(t, yv, tr[0, b], tr[1, b], tr[2, b]) + "\n")
    return path
