"""Programmatic verification suite backing ``platestab verify``.

Each check returns (name, passed, detail).  The suite exercises the oracle
pairs that guard transcription of the model: transform round trips, the
dual-formulation control law comparison, kernel residuals, the reflected /
direct observer cross-check, and a short closed-loop run with its target
and Lyapunov diagnostics.
"""

import numpy as np

from .control import build_gain_tables, control_hyperbolic, state_feedback, unwind_inputs
from .kernels import kernel_residual, phi0_matrix, solve_controller_kernels, \
    solve_observer_kernels
from .modal import project, reconstruct
from .params import ModalCoefficients
from .riemann import PhysicalModalState, to_hyperbolic, to_physical
from .sim import SimConfig, lyapunov_monitor, run_scenario, target_transform_check
from .triangle import TriangleGrid

__all__ = ["run_checks", "random_smooth_state", "dual_formulation_gap"]


def random_smooth_state(x, rng, flat_ends=True):
    """Random band-limited state; derivative fields are exact.

    With ``flat_ends`` the fields vanish to second order at both ends, which
    keeps endpoint quadrature artifacts out of transcription comparisons.
    """
    def field():
        coef = rng.standard_normal(4)
        if flat_ends:
            modes = np.arange(2, 6)
            f = sum(c * np.sin(k * np.pi * x) ** 3 for c, k in zip(coef, modes))
            fx = sum(3 * c * k * np.pi * np.sin(k * np.pi * x) ** 2 * np.cos(k * np.pi * x)
                     for c, k in zip(coef, modes))
        else:
            modes = np.arange(1, 5)
            f = sum(c * np.sin(k * np.pi * x) for c, k in zip(coef, modes))
            fx = sum(c * k * np.pi * np.cos(k * np.pi * x) for c, k in zip(coef, modes))
        return f, fx

    w, w_x = field()
    al, al_x = field()
    be, be_x = field()
    w_t, _ = field()
    al_t, _ = field()
    be_t, _ = field()
    return PhysicalModalState(x=x, w=w, alpha=al, beta=be, w_t=w_t, alpha_t=al_t,
                              beta_t=be_t, w_x=w_x, alpha_x=al_x, beta_x=be_x)


def dual_formulation_gap(ctrl, gt, d, n, x, rng, samples=20):
    """Max relative gap between the characteristic-space law and the tables."""
    K1 = np.stack([[np.interp(x, ctrl.grid.xs, ctrl.K_edge[i, j]) for j in range(3)]
                   for i in range(3)])
    L1 = np.stack([[np.interp(x, ctrl.grid.xs, ctrl.L_edge[i, j]) for j in range(3)]
                   for i in range(3)])
    worst = 0.0
    for _ in range(samples):
        s = random_smooth_state(x, rng)
        h = to_hyperbolic(s, d)
        Uin = control_hyperbolic(K1, L1, ctrl.Phi_end, h)
        U_hyp = unwind_inputs(Uin, d, n, s.w_t[-1], s.alpha[-1], s.alpha_t[-1], s.beta_t[-1])
        U_phys = state_feedback(gt, s, d, n)
        scale = max(np.abs(U_hyp).max(), 1e-3)
        worst = max(worst, float(np.abs(U_hyp - U_phys).max() / scale))
    return worst


def run_checks(d, cfg, kernel_m=41, quick=False, kernel_files=()):
    checks = []
    rng = np.random.default_rng(7)
    grid = TriangleGrid(kernel_m)
    delta = (float(cfg.get("delta1", 5)), float(cfg.get("delta2", 5)),
             float(cfg.get("delta3", 5)))

    # modal round trip
    ygrid = np.linspace(0.0, d.L, 181)
    coefs = rng.standard_normal(4)
    coefs_c = rng.standard_normal(4)
    f = reconstruct(coefs, "sine", d.L, ygrid) + 0 * ygrid
    g = reconstruct(coefs_c, "cosine", d.L, ygrid)
    err_s = np.abs(project(f, "sine", 3, d.L, ygrid) - np.where(np.arange(4) == 0, 0, coefs)).max()
    err_c = np.abs(project(g, "cosine", 3, d.L, ygrid) - coefs_c).max()
    err = max(err_s, err_c)
    checks.append(("modal round trip", err < 1e-10, f"max err {err:.2e}"))

    # Riemann round trip
    x = np.linspace(0.0, 1.0, 81)
    s = random_smooth_state(x, rng, flat_ends=False)
    s2 = to_physical(to_hyperbolic(s, d), d)
    err = max(np.abs(s2.w - s.w).max(), np.abs(s2.w_t - s.w_t).max(),
              np.abs(s2.alpha_x - s.alpha_x).max())
    tol = 5e-4  # displacement fields carry one cumulative trapezoid
    checks.append(("riemann round trip", err < tol, f"max err {err:.2e}"))

    # E1 diagonality
    worst = 0.0
    for n in range(2):
        c = ModalCoefficients(d, n)
        E1 = c.Sigma @ phi0_matrix(c, delta) + c.A
        off = E1 - np.diag(np.diag(E1))
        worst = max(worst, np.abs(off).max(),
                    np.abs(np.diag(E1) + np.asarray(delta)).max())
    checks.append(("boundary ODE matrix diagonal", worst < 1e-13, f"max dev {worst:.2e}"))

    # kernels of one representative mode
    c1 = ModalCoefficients(d, 1)
    ctrl = solve_controller_kernels(c1, delta, grid)
    rep = kernel_residual(ctrl, c1)
    thr = 10.0 * grid.delta
    checks.append(("controller kernel residuals",
                   rep["max_pde"] < thr and rep["max_bc"] < 1e-6,
                   f"pde {rep['max_pde']:.2e} bc {rep['max_bc']:.2e}"))

    obs_r = solve_observer_kernels(c1, grid, controller=ctrl, method="reflected")
    rep_o = kernel_residual(obs_r, c1)
    checks.append(("observer kernel residuals",
                   rep_o["max_pde"] < thr and rep_o["bc_reflection"] < 1e-6,
                   f"pde {rep_o['max_pde']:.2e} refl {rep_o['bc_reflection']:.2e}"))

    obs_d = solve_observer_kernels(c1, grid, controller=ctrl, method="direct")
    gap = max(np.abs(obs_d.N - obs_r.N).max(), np.abs(obs_d.M - obs_r.M).max())
    checks.append(("observer dual-path agreement", gap < 20 * grid.delta,
                   f"max gap {gap:.2e}"))

    # dual-formulation gain check
    gt = build_gain_tables(ctrl, d, 1)
    xs = np.linspace(0.0, 1.0, kernel_m)
    gap = dual_formulation_gap(ctrl, gt, d, 1, xs, rng, samples=5 if quick else 20)
    tol = 2e-3 if quick else 2e-4
    checks.append(("dual-formulation control law", gap < tol, f"max rel gap {gap:.2e}"))

    # short closed-loop run
    sim_cfg = SimConfig(dt=1e-3, dx=0.05, T=1.0 if quick else 2.0, N=1,
                        scenario="state-feedback", delta=delta,
                        kernel_m=kernel_m, snapshot_times=())
    res = run_scenario(sim_cfg, d, ctrl_kernels=None)
    rep_t = target_transform_check(res, d)
    checks.append(("target boundary annihilation", rep_t["sigma1_max"] < 1e-8,
                   f"max |sigma(t,1)| {rep_t['sigma1_max']:.2e}"))
    viol = sum(lyapunov_monitor(res.V_lyap[v], res.lyap[v]["cprime"], sim_cfg.dt)
               for v in range(2))
    checks.append(("Lyapunov decay", viol == 0, f"violations {viol}"))
    decayed = res.omega_a[-1] < res.omega_a[0]
    checks.append(("closed-loop norm decreases", decayed,
                   f"ratio {res.omega_a[-1] / res.omega_a[0]:.2e}"))

    # re-validate exported kernel tables, if any
    for path in kernel_files:
        from .cli import load_kernels_csv
        try:
            kern, cc = load_kernels_csv(path, d, delta)
            rep = kernel_residual(kern, cc)
            thr_file = 10.0 / (kern.grid.m - 1)
            ok = rep["max_pde"] < thr_file and rep["max_bc"] < 1e-6
            checks.append((f"kernel file {path.rsplit('/', 1)[-1]}", ok,
                           f"pde {rep['max_pde']:.2e} bc {rep['max_bc']:.2e}"))
        except Exception as exc:  # corrupted tables must fail loudly, not crash
            checks.append((f"kernel file {path.rsplit('/', 1)[-1]}", False, str(exc)))
    return checks
