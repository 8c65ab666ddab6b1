"""Finite-difference closed-loop simulation of the modal plant stack.

First-order explicit upwind transport for both characteristic families plus
forward Euler for the boundary ODEs, all modes stepped together.  Scenarios:
open loop (free end mapped to a reflection closure), full-state feedback
(characteristic-space law imposed at x = 1), and observer-based output
feedback.  Diagnostics cover the per-mode and 2-D energy norms, the target
variables of the backstepping transform, and a Lyapunov functional whose
weights are assembled from the transform bounds.
"""

import time
from dataclasses import dataclass

import numpy as np

from .control import build_gain_tables, output_feedback, state_feedback, sum_modal_inputs
from .exceptions import ConfigError, DivergenceError
from .kernels import (ControllerKernels, _sample_tables, inverse_kernels,
                      phi0_matrix, solve_controller_kernels, solve_observer_kernels)
from .modal import parseval_weights
from .numutil import cumtrapz_last, trapz_weights
from .observer import ObserverGains, invert_error_transform, resample_kernel_field
from .params import DimensionlessParams, ModalCoefficients
from .riemann import HyperbolicModalState, PhysicalModalState
from .triangle import TriangleGrid

__all__ = [
    "SimConfig", "PlantOperator", "ModeStack", "plant_step", "run_scenario",
    "target_transform_check", "lyapunov_monitor", "lyapunov_params",
    "lyapunov_value", "energy_band_constants", "RunResult", "default_initial_state",
    "mode_state", "TargetView",
]

SCENARIOS = ("open-loop", "state-feedback", "output-feedback")


@dataclass
class SimConfig:
    dt: float = 1e-3
    dx: float = 0.05
    T: float = 6.0
    N: int = 3
    scenario: str = "state-feedback"
    delta: tuple = (5.0, 5.0, 5.0)
    L_gains: tuple = (5.0, 5.0, 5.0)
    kernel_m: int = 41
    kernel_tol: float = 1e-10
    kernel_max_iter: int = 200
    ny: int = 181
    diag_stride: int = 1
    snapshot_times: tuple = ()
    observer_init: str = "zero"   # or "truth"
    observer_method: str = "reflected"
    phi0_literal_npi: bool = False
    init_amplitude: float = 0.01

    def validate(self, d: DimensionlessParams):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.dt <= 0 or self.dx <= 0 or self.T <= 0:
            raise ConfigError("dt, dx and T must be positive")
        if self.N < 0 or int(self.N) != self.N:
            raise ConfigError("mode count N must be a nonnegative integer")
        limit = np.sqrt(d.mu2)
        if self.dt / self.dx > limit * (1 + 1e-12):
            raise ConfigError(
                f"CFL violation: dt/dx = {self.dt / self.dx:.4g} exceeds sqrt(mu2) = "
                f"{limit:.4g} (fastest characteristic speed is 1/sqrt(mu2))")
        return self


@dataclass
class ModeStack:
    """All modes' characteristic states on one grid."""

    x: np.ndarray
    Z: np.ndarray  # (V, 3, ms)
    Y: np.ndarray
    X: np.ndarray  # (V, 3)
    t: float = 0.0

    def mode(self, v) -> HyperbolicModalState:
        return HyperbolicModalState(self.x, self.Z[v], self.Y[v], self.X[v], self.t)

    def copy(self):
        return ModeStack(self.x, self.Z.copy(), self.Y.copy(), self.X.copy(), self.t)


class PlantOperator:
    """Per-mode coefficient samples on the simulation grid and the upwind step."""

    def __init__(self, d: DimensionlessParams, coeffs, dx):
        self.d = d
        self.coeffs = list(coeffs)
        self.ms = int(round(1.0 / dx)) + 1
        if abs((self.ms - 1) * dx - 1.0) > 1e-9:
            raise ConfigError(f"dx = {dx} does not divide the unit interval")
        self.x = np.linspace(0.0, 1.0, self.ms)
        self.dx = 1.0 / (self.ms - 1)
        self.lam = d.lambdas
        mv = lambda F: np.moveaxis(F, 0, -1)
        self.F11 = np.stack([mv(c.F11(self.x)) for c in self.coeffs])
        self.F12 = np.stack([mv(c.F12(self.x)) for c in self.coeffs])
        self.F13 = np.stack([mv(c.F13(self.x)) for c in self.coeffs])
        self.F21 = np.stack([mv(c.F21(self.x)) for c in self.coeffs])
        self.F22 = np.stack([mv(c.F22(self.x)) for c in self.coeffs])
        self.F23 = np.stack([mv(c.F23(self.x)) for c in self.coeffs])
        self.A = np.stack([c.A for c in self.coeffs])
        self.Dm = np.stack([c.D for c in self.coeffs])
        self.C = self.coeffs[0].C
        self.sep = {}
        for name in ("F14", "F15", "F24", "F25"):
            terms = [c.separable(name, self.x) for c in self.coeffs]
            ii = np.array([t[0] for t in terms[0]])
            jj = np.array([t[1] for t in terms[0]])
            G = np.stack([[trm[2] for trm in rows] for rows in terms])  # (V, nt, ms)
            H = np.stack([[trm[3] for trm in rows] for rows in terms])
            self.sep[name] = (ii, jj, G, H)
        se = np.sqrt(d.eps)
        self.k1 = np.exp(se * d.cbar1 * self.x)
        self.k2 = np.exp(se * d.cbar2 * self.x)
        self.wx = trapz_weights(self.x)
        self.nLs = np.array([c.nL for c in self.coeffs])

    def _integral(self, name, S):
        """(V,3,ms) field int_0^x F(x,y) S(y) dy via the separable terms."""
        ii, jj, G, H = self.sep[name]
        out = np.zeros_like(S)
        cum = cumtrapz_last(H * S[:, jj, :], self.dx)
        for t in range(len(ii)):
            out[:, ii[t], :] += G[:, t, :] * cum[:, t, :]
        return out

    def couple(self, Z, Y, X):
        """In-domain coupling terms of both transport families."""
        Zq = (np.einsum("vijm,vjm->vim", self.F11, Z + Y)
              + np.einsum("vijm,vjm->vim", self.F12, Z - Y)
              + np.einsum("vijm,vj->vim", self.F13, X)
              + self._integral("F14", Z) + self._integral("F15", Y))
        Yq = (np.einsum("vijm,vjm->vim", self.F21, Z + Y)
              + np.einsum("vijm,vjm->vim", self.F22, Z - Y)
              + np.einsum("vijm,vj->vim", self.F23, X)
              + self._integral("F24", Z) + self._integral("F25", Y))
        return Zq, Yq

    def check_cfl(self, dt):
        if dt * self.lam[2] / self.dx > 1 + 1e-12:
            raise ConfigError(
                f"CFL violation: dt*lambda_max/dx = {dt * self.lam[2] / self.dx:.4g} > 1")

    def step_interior(self, st: ModeStack, dt):
        """Upwind interior update; Z(:, -1) is left stale for the closure."""
        self.check_cfl(dt)
        Z, Y, X = st.Z, st.Y, st.X
        Zq, Yq = self.couple(Z, Y, X)
        lam = self.lam[None, :, None]
        newZ = Z.copy()
        newZ[:, :, :-1] += dt * (lam * (Z[:, :, 1:] - Z[:, :, :-1]) / self.dx)[:, :, :]
        newZ[:, :, :-1] += dt * Zq[:, :, :-1]
        newY = Y.copy()
        newY[:, :, 1:] += dt * (-lam * (Y[:, :, 1:] - Y[:, :, :-1]) / self.dx + Yq[:, :, 1:])
        newX = X + dt * (np.einsum("vij,vj->vi", self.A, X) + self.lam[None, :] * Z[:, :, 0])
        out = ModeStack(st.x, newZ, newY, newX, st.t + dt)
        out.Y[:, :, 0] = np.einsum("ij,vj->vi", self.C, out.Z[:, :, 0]) \
            + np.einsum("vij,vj->vi", self.Dm, out.X)
        if not np.isfinite(out.X).all():
            raise DivergenceError("plant state diverged (NaN in boundary ODE)",
                                  step=int(round(out.t / dt)))
        return out

    def alpha_at_one(self, Z, Y, X):
        """alpha_n(1) reconstructed from the rotation characteristics."""
        integrand = 0.5 * (Z[:, 1, :] + Y[:, 1, :])
        return X[:, 1] + integrand @ self.wx

    def reflect_closure(self, Y, U4, U2, U5):
        """Z(t,1) realizing commanded slopes (U4, U2, U5) against outgoing waves."""
        d = self.d
        se = np.sqrt(d.eps)
        h1 = 2.0 * np.exp(se * d.cbar1)
        h2 = -np.exp(se * (d.cbar1 - d.cbar2))
        Z1 = np.empty((Y.shape[0], 3))
        Z1[:, 0] = h1 * U4 + h2 * Y[:, 0, -1]
        Z1[:, 1] = 2.0 * U2 - Y[:, 1, -1]
        Z1[:, 2] = 2.0 * U5 - Y[:, 2, -1]
        return Z1

    def open_loop_closure(self, st: ModeStack):
        """Free end with zero applied force and moments."""
        a1 = self.alpha_at_one(st.Z, st.Y, st.X)
        return self.reflect_closure(st.Y, a1, np.zeros_like(a1), -self.nLs * a1)


def plant_step(op: PlantOperator, st: ModeStack, dt, z_boundary=None):
    """One explicit step; ``z_boundary`` supplies Z(t+dt, 1) as a (V,3) array
    or a callable of the updated stack (used by feedback closures)."""
    out = op.step_interior(st, dt)
    if z_boundary is not None:
        vals = z_boundary(out) if callable(z_boundary) else np.asarray(z_boundary, float)
        out.Z[:, :, -1] = vals
    return out


def default_initial_state(op: PlantOperator, amplitude=0.01):
    """Six characteristic fields amplitude*sin(pi x); X = (a, 2a, a)."""
    V = len(op.coeffs)
    prof = amplitude * np.sin(np.pi * op.x)
    Z = np.tile(prof, (V, 3, 1))
    Y = np.tile(prof, (V, 3, 1))
    X = np.tile(np.array([1.0, 2.0, 1.0]) * amplitude, (V, 1))
    return ModeStack(op.x, Z, Y, X, 0.0)


# ---------------------------------------------------------------------------
# physical views and norms
# ---------------------------------------------------------------------------

def physical_fields(op: PlantOperator, Z, Y, X):
    """Vectorized inverse Riemann map; returns a dict of (V, ms) arrays."""
    se, s1, s2 = np.sqrt(op.d.eps), np.sqrt(op.d.mu1), np.sqrt(op.d.mu2)
    k1, k2 = op.k1, op.k2
    p, r, u = Z[:, 0], Z[:, 1], Z[:, 2]
    q, s_, v = Y[:, 0], Y[:, 1], Y[:, 2]
    w_x = 0.5 * (p / k1 + q / k2)
    w_t = (p / k1 - q / k2) / (2.0 * se)
    al_x = 0.5 * (r + s_)
    al_t = (r - s_) / (2.0 * s1)
    be_x = 0.5 * (u + v)
    be_t = (u - v) / (2.0 * s2)
    w = X[:, 0:1] + cumtrapz_last(w_x, op.dx)
    al = X[:, 1:2] + cumtrapz_last(al_x, op.dx)
    be = X[:, 2:3] + cumtrapz_last(be_x, op.dx)
    return {"w": w, "alpha": al, "beta": be, "w_x": w_x, "alpha_x": al_x,
            "beta_x": be_x, "w_t": w_t, "alpha_t": al_t, "beta_t": be_t}


def mode_state(op: PlantOperator, st: ModeStack, v) -> PhysicalModalState:
    f = physical_fields(op, st.Z[v:v + 1], st.Y[v:v + 1], st.X[v:v + 1])
    return PhysicalModalState(x=op.x, w=f["w"][0], alpha=f["alpha"][0], beta=f["beta"][0],
                              w_t=f["w_t"][0], alpha_t=f["alpha_t"][0], beta_t=f["beta_t"][0],
                              w_x=f["w_x"][0], alpha_x=f["alpha_x"][0], beta_x=f["beta_x"][0],
                              t=st.t)


def mode_norms(op: PlantOperator, Z, Y, X):
    """Per-mode energy norm Omega_n (H1 in x for the fields, L2 for rates)."""
    f = physical_fields(op, Z, Y, X)
    w = op.wx
    sq = lambda g: (g * g) @ w
    return (sq(f["w"]) + sq(f["w_x"]) + sq(f["w_t"])
            + sq(f["alpha"]) + sq(f["alpha_x"]) + sq(f["alpha_t"])
            + sq(f["beta"]) + sq(f["beta_x"]) + sq(f["beta_t"]))


def total_norm_2d(op: PlantOperator, Z, Y, X, N, L):
    """2-D energy norm via the modal Parseval weights (includes y-derivatives)."""
    f = physical_fields(op, Z, Y, X)
    w = op.wx
    sq = lambda g: (g * g) @ w
    n = np.arange(N + 1)
    ky2 = (n * np.pi / L) ** 2
    ws = parseval_weights("sine", N, L)
    wc = parseval_weights("cosine", N, L)
    sine_part = ws * (sq(f["w"]) * (1 + ky2) + sq(f["w_x"]) + sq(f["w_t"])
                      + sq(f["alpha"]) * (1 + ky2) + sq(f["alpha_x"]) + sq(f["alpha_t"]))
    cos_part = wc * (sq(f["beta"]) * (1 + ky2) + sq(f["beta_x"]) + sq(f["beta_t"]))
    return float(np.sum(sine_part + cos_part))


def hyperbolic_energy(op: PlantOperator, Z, Y, X):
    """Plain characteristic-space energy per mode."""
    w = op.wx
    return ((Z * Z) @ w + (Y * Y) @ w).sum(axis=1) + (X * X).sum(axis=1)


def energy_band_constants(d: DimensionlessParams):
    """Crude but safe constants with c_lo * E <= Omega_n <= c_hi * E."""
    se = np.sqrt(d.eps)
    m = max(1.0, np.exp(-se * d.cbar1), np.exp(-se * d.cbar2))
    M = max(1.0, np.exp(se * d.cbar1), np.exp(se * d.cbar2))
    invspeed = max(1.0, 1.0 / d.eps, 1.0 / d.mu1, 1.0 / d.mu2)
    speeds = max(1.0, d.eps, d.mu1, d.mu2)
    c_hi = 16.0 * m * m * invspeed
    c_lo = 1.0 / (16.0 * M * M * speeds)
    return c_lo, c_hi


# ---------------------------------------------------------------------------
# backstepping transform on the simulation grid
# ---------------------------------------------------------------------------

class TargetView:
    """Evaluates sigma = Z - int K Z - int L Y - Phi X on the sim grid."""

    def __init__(self, ctrl_list, op: PlantOperator):
        self.op = op
        x = op.x
        self.Ks = np.stack([resample_kernel_field(k.K, k.grid, x) for k in ctrl_list])
        self.Ls = np.stack([resample_kernel_field(k.L, k.grid, x) for k in ctrl_list])
        self.Phis = np.stack([
            np.stack([[np.interp(x, k.grid.xs, k.Phi[i, j]) for j in range(3)]
                      for i in range(3)]) for k in ctrl_list])
        self.Omegas = np.stack([
            np.stack([[np.interp(x, k.grid.xs, k.Omega[i, j]) for j in range(3)]
                      for i in range(3)]) for k in ctrl_list])
        ms = len(x)
        d = x[1] - x[0]
        Wtri = np.tril(np.full((ms, ms), d))
        Wtri[:, 0] = d / 2.0
        idx = np.arange(ms)
        Wtri[idx, idx] = d / 2.0
        Wtri[0, 0] = 0.0
        self.Wtri = Wtri

    def sigma(self, st: ModeStack):
        TK = np.einsum("ky,vijky,vjy->vik", self.Wtri, self.Ks, st.Z)
        TL = np.einsum("ky,vijky,vjy->vik", self.Wtri, self.Ls, st.Y)
        TP = np.einsum("vijk,vj->vik", self.Phis, st.X)
        return st.Z - TK - TL - TP


# ---------------------------------------------------------------------------
# Lyapunov functional
# ---------------------------------------------------------------------------

def _specnorm(batch):
    """Largest singular value over trailing grid axes of a (3,3,...) stack."""
    return np.linalg.svd(np.moveaxis(batch, (0, 1), (-2, -1)), compute_uv=False).max(-1)


def lyapunov_params(c: ModalCoefficients, kern: ControllerKernels, delta):
    """Functional weights (zeta1, zeta2, delta_w) and the decay rate c'."""
    T = _sample_tables(c, kern.grid)
    W = kern.grid.W
    Kb, Lb, Phib = inverse_kernels(kern)
    Xi1 = (np.einsum("ipa,pja->ija", T.SGpm, Phib) + T.E23
           + np.einsum("ipay,pjy,ay->ija", T.Fmp, Phib, W[:, 0, :]))
    Xi2 = (np.einsum("ipa,pjab->ijab", T.SGpm, Kb) + T.Fmp
           + np.einsum("ipas,pjsb,abs->ijab", T.Fmp, Kb, W))
    Xi3 = (np.einsum("ipa,pjab->ijab", T.SGpm, Lb) + T.Fmm
           + np.einsum("ipas,pjsb,abs->ijab", T.Fmp, Lb, W))
    Sinv = np.diag(1.0 / kern.lam)
    E2 = T.C @ kern.phi0 + T.D
    M1 = np.linalg.norm(E2, 2) ** 2 + 1.0
    zeta1 = M1 + 1.0
    M2 = np.linalg.norm(zeta1 * np.diag(kern.lam) + E2.T @ T.C, 2) ** 2 \
        + np.linalg.norm(T.C, 2) ** 2
    M3 = float((_specnorm(np.einsum("ik,kja->ija", Sinv, T.SGpm)) ** 2).max())
    M4 = float((_specnorm(np.einsum("ik,kja->ija", Sinv, Xi1)) ** 2).max())
    M5 = float((_specnorm(np.einsum("ik,kjp->ijp", Sinv, kern.grid.to_nodes(Xi2))) ** 2).max())
    M6 = 1.0 + float((_specnorm(np.einsum("ik,kjp->ijp", Sinv,
                                          kern.grid.to_nodes(Xi3))) ** 2).max())
    zeta2 = 1.001 * max(M3 + M5, M2)
    cprime = 2.0 * min(delta) - 1.0
    ninv = np.linalg.norm(Sinv, 2)
    delta_w = 1.001 * max(
        (2.0 * float(_specnorm(T.SGpp).max()) + cprime) * ninv + M6 + M4 + 2.0,
        (cprime + 2.0 * float(_specnorm(kern.Omega).max())) * ninv + 1.0)
    return {"zeta1": zeta1, "zeta2": zeta2, "delta_w": delta_w, "cprime": cprime,
            "M": (M1, M2, M3, M4, M5, M6)}


def lyapunov_value(params, lam, x, sigma, psi, X):
    """V = zeta1 |X|^2 + zeta2 int e^{dw x} s'Sinv s + int e^{-dw x} p'Sinv p."""
    w = trapz_weights(x)
    dw = params["delta_w"]
    ep = np.exp(dw * x) * w
    em = np.exp(-dw * x) * w
    qs = np.einsum("im,i,m->", sigma**2, 1.0 / lam, ep)
    qp = np.einsum("im,i,m->", psi**2, 1.0 / lam, em)
    return params["zeta1"] * float(X @ X) + params["zeta2"] * qs + qp


def lyapunov_monitor(V_series, cprime, dt, tol_frac=1e-9, skip=10):
    """Count discrete decay violations V[k+1] > V[k] e^{-c' dt} + tol*V[0]."""
    V = np.asarray(V_series, float)
    fac = np.exp(-cprime * dt)
    bad = V[1:] > V[:-1] * fac + tol_frac * V[0]
    return int(bad[skip:].sum())


# ---------------------------------------------------------------------------
# scenario runner
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    cfg: SimConfig
    t: np.ndarray
    omega_n: np.ndarray          # (V, nrec)
    omega_a: np.ndarray          # (nrec,)
    energy_hyp: np.ndarray       # (V, nrec)
    t_dense: np.ndarray
    V_lyap: np.ndarray | None    # (V, nt+1), state-feedback runs
    sigma1: np.ndarray | None    # (nt+1,)
    X_series: np.ndarray | None  # (nt+1, V, 3)
    sigma0: np.ndarray | None    # (nt+1, V, 3)
    U_modes: np.ndarray | None   # (nrec, V, 3)
    Uhat_modes: np.ndarray | None
    omega_d: np.ndarray | None
    obs_err: dict | None
    Xhat_err: np.ndarray | None  # (nrec, V, 3)
    sigma_snaps: list
    lyap: list
    final: ModeStack
    final_obs: ModeStack | None
    control2d_max: np.ndarray | None
    runtime: float
    kernels: list
    obs_kernels: list | None
    gains: list
    op: PlantOperator


class _SolveCtrl:
    """Picklable per-mode controller solve for the process pool."""

    def __init__(self, cfg, d):
        self.cfg, self.d = cfg, d

    def __call__(self, n):
        c = ModalCoefficients(self.d, n)
        grid = TriangleGrid(self.cfg.kernel_m)
        phi0 = phi0_matrix(c, self.cfg.delta, literal_npi=self.cfg.phi0_literal_npi)
        return solve_controller_kernels(c, self.cfg.delta, grid, self.cfg.kernel_tol,
                                        self.cfg.kernel_max_iter, phi0=phi0)


def run_scenario(cfg: SimConfig, d: DimensionlessParams, ctrl_kernels=None,
                 obs_kernels=None, jobs=1) -> RunResult:
    """Run one scenario end to end; kernel sets may be passed in for reuse."""
    t_start = time.perf_counter()
    cfg.validate(d)
    modes = list(range(cfg.N + 1))
    coeffs = [ModalCoefficients(d, n) for n in modes]
    op = PlantOperator(d, coeffs, cfg.dx)
    grid = TriangleGrid(cfg.kernel_m)
    need_ctrl = cfg.scenario in ("state-feedback", "output-feedback")
    need_obs = cfg.scenario == "output-feedback"
    dense = cfg.scenario == "state-feedback"

    if need_ctrl and ctrl_kernels is None:
        solver = _SolveCtrl(cfg, d)
        if jobs > 1:
            from concurrent.futures import ProcessPoolExecutor
            with ProcessPoolExecutor(max_workers=jobs) as ex:
                ctrl_kernels = list(ex.map(solver, modes))
        else:
            ctrl_kernels = [solver(n) for n in modes]
    if need_obs and obs_kernels is None:
        obs_kernels = [solve_observer_kernels(coeffs[n], grid, cfg.kernel_tol,
                                              cfg.kernel_max_iter,
                                              controller=ctrl_kernels[n],
                                              method=cfg.observer_method)
                       for n in modes]

    gains = [build_gain_tables(ctrl_kernels[n], d, n) for n in modes] if need_ctrl else []
    view = TargetView(ctrl_kernels, op) if dense else None
    lyap = [lyapunov_params(coeffs[n], ctrl_kernels[n], cfg.delta) for n in modes] \
        if dense else []

    if need_ctrl:
        kg = ctrl_kernels[0].grid
        K1s = np.stack([[[np.interp(op.x, kg.xs, k.K_edge[i, j]) for j in range(3)]
                         for i in range(3)] for k in ctrl_kernels])
        L1s = np.stack([[[np.interp(op.x, kg.xs, k.L_edge[i, j]) for j in range(3)]
                         for i in range(3)] for k in ctrl_kernels])
        Phi1 = np.stack([k.Phi_end for k in ctrl_kernels])

    if need_obs:
        ogains = [ObserverGains.from_kernels(obs_kernels[n], d, op.x, cfg.L_gains)
                  for n in modes]
        Pp = np.stack([g.Pplus for g in ogains])
        Pm = np.stack([g.Pminus for g in ogains])
        Lx = ogains[0].Lx
        Nsim = np.stack([resample_kernel_field(k.N, k.grid, op.x) for k in obs_kernels])
        Msim = np.stack([resample_kernel_field(k.M, k.grid, op.x) for k in obs_kernels])

    st = default_initial_state(op, cfg.init_amplitude)
    ob = None
    if need_obs:
        ob = st.copy() if cfg.observer_init == "truth" else \
            ModeStack(op.x, np.zeros_like(st.Z), np.zeros_like(st.Y),
                      np.zeros_like(st.X), 0.0)

    nt = int(round(cfg.T / cfg.dt))
    stride = max(1, int(cfg.diag_stride))
    rec_steps = list(range(0, nt + 1, stride))
    if rec_steps[-1] != nt:
        rec_steps.append(nt)
    rec_of_step = {k: i for i, k in enumerate(rec_steps)}
    nrec = len(rec_steps)
    V = len(modes)

    omega_n = np.zeros((V, nrec))
    omega_a = np.zeros(nrec)
    energy_hyp = np.zeros((V, nrec))
    t_rec = np.array(rec_steps, float) * cfg.dt
    t_dense = np.arange(nt + 1) * cfg.dt
    V_lyap = np.zeros((V, nt + 1)) if dense else None
    sigma1 = np.zeros(nt + 1) if dense else None
    X_series = np.zeros((nt + 1, V, 3)) if dense else None
    sigma0 = np.zeros((nt + 1, V, 3)) if dense else None
    U_modes = np.zeros((nrec, V, 3)) if need_ctrl else None
    Uhat_modes = np.zeros((nrec, V, 3)) if need_obs else None
    omega_d = np.zeros(nrec) if need_obs else None
    Xhat_err = np.zeros((nrec, V, 3)) if need_obs else None
    obs_err = {k: np.zeros((V, nrec)) for k in
               ("sigma_err", "psi_err", "X_err", "omega_nf")} if need_obs else None
    control2d_max = np.zeros((nrec, 3)) if need_ctrl else None
    ygrid = np.linspace(0.0, d.L, cfg.ny)
    sigma_snaps = []
    snap_steps = {int(round(ts / cfg.dt)) for ts in cfg.snapshot_times}
    wq = op.wx

    def uin_solve(stack):
        rhs = (np.einsum("vijm,vjm,m->vi", K1s[:, :, :, :-1], stack.Z[:, :, :-1], wq[:-1])
               + np.einsum("vijm,vjm,m->vi", L1s, stack.Y, wq)
               + np.einsum("vij,vj->vi", Phi1, stack.X))
        lhs = np.eye(3)[None] - wq[-1] * K1s[:, :, :, -1]
        return np.linalg.solve(lhs, rhs[..., None])[..., 0]

    def eval_controls(stack, obstack):
        U = np.zeros((V, 3))
        Uhat = np.zeros((V, 3)) if need_obs else None
        for v in range(V):
            ps = mode_state(op, stack, v)
            U[v] = state_feedback(gains[v], ps, d, modes[v])
            if need_obs:
                es = mode_state(op, obstack, v)
                Uhat[v] = output_feedback(gains[v], es, tuple(stack.X[v]), d, modes[v])
        return U, Uhat

    def record(k, stack, obstack):
        i = rec_of_step[k]
        omega_n[:, i] = mode_norms(op, stack.Z, stack.Y, stack.X)
        omega_a[i] = total_norm_2d(op, stack.Z, stack.Y, stack.X, cfg.N, d.L)
        energy_hyp[:, i] = hyperbolic_energy(op, stack.Z, stack.Y, stack.X)
        if need_ctrl:
            U, Uhat = eval_controls(stack, obstack)
            U_modes[i] = U
            U2d = sum_modal_inputs(U, ygrid, d.L)
            control2d_max[i] = np.abs(U2d).max(axis=1)
            if need_obs:
                Uhat_modes[i] = Uhat
        if need_obs:
            om_hat = total_norm_2d(op, obstack.Z, obstack.Y, obstack.X, cfg.N, d.L)
            omega_d[i] = omega_a[i] + om_hat
            Xhat_err[i] = np.abs(stack.X - obstack.X)
            sig, psi = invert_error_transform(stack.Z - obstack.Z, stack.Y - obstack.Y,
                                              Nsim, Msim, op.x)
            obs_err["sigma_err"][:, i] = np.sqrt(np.einsum("vim,m->v", sig**2, wq))
            obs_err["psi_err"][:, i] = np.sqrt(np.einsum("vim,m->v", psi**2, wq))
            obs_err["X_err"][:, i] = np.linalg.norm(stack.X - obstack.X, axis=1)
            obs_err["omega_nf"][:, i] = mode_norms(op, stack.Z - obstack.Z,
                                                   stack.Y - obstack.Y,
                                                   stack.X - obstack.X)

    def dense_diag(k, stack):
        sig = view.sigma(stack)
        for v in range(V):
            V_lyap[v, k] = lyapunov_value(lyap[v], op.lam, op.x, sig[v],
                                          stack.Y[v], stack.X[v])
        sigma1[k] = np.abs(sig[:, :, -1]).max()
        X_series[k] = stack.X
        sigma0[k] = sig[:, :, 0]
        return sig

    record(0, st, ob)
    sig_now = dense_diag(0, st) if dense else None
    if 0 in snap_steps:
        sigma_snaps.append((0.0, None if sig_now is None else sig_now.copy(), st.copy()))

    for k in range(1, nt + 1):
        if cfg.scenario == "open-loop":
            new = op.step_interior(st, cfg.dt)
            new.Z[:, :, -1] = op.open_loop_closure(new)
            st = new
        elif cfg.scenario == "state-feedback":
            new = op.step_interior(st, cfg.dt)
            new.Z[:, :, -1] = uin_solve(new)
            st = new
        else:
            _, Uhat = eval_controls(st, ob)
            a1_hat = op.alpha_at_one(ob.Z, ob.Y, ob.X)
            U4 = Uhat[:, 0] / d.kGh + a1_hat
            U2c = Uhat[:, 1]
            U5 = Uhat[:, 2] - op.nLs * a1_hat
            Z0_meas, X_meas = st.Z[:, :, 0].copy(), st.X.copy()
            new = op.step_interior(st, cfg.dt)
            new.Z[:, :, -1] = op.reflect_closure(new.Y, U4, U2c, U5)
            # observer advance with measurements from the just-left level
            Zq, Yq = op.couple(ob.Z, ob.Y, X_meas)
            inj = Z0_meas - ob.Z[:, :, 0]
            Zq += np.einsum("vijm,vj->vim", Pm, inj)
            Yq += np.einsum("vijm,vj->vim", Pp, inj)
            lam = op.lam[None, :, None]
            newZh = ob.Z.copy()
            newZh[:, :, :-1] += cfg.dt * (lam * (ob.Z[:, :, 1:] - ob.Z[:, :, :-1]) / op.dx
                                          + Zq)[:, :, :-1]
            newYh = ob.Y.copy()
            newYh[:, :, 1:] += cfg.dt * (-lam * (ob.Y[:, :, 1:] - ob.Y[:, :, :-1]) / op.dx
                                         + Yq)[:, :, 1:]
            newXh = ob.X + cfg.dt * (np.einsum("vij,vj->vi", op.A, X_meas)
                                     + op.lam[None, :] * Z0_meas
                                     + Lx[None, :] * (X_meas - ob.X))
            newYh[:, :, 0] = np.einsum("ij,vj->vi", op.C, new.Z[:, :, 0]) \
                + np.einsum("vij,vj->vi", op.Dm, new.X)
            newZh[:, :, -1] = op.reflect_closure(newYh, U4, U2c, U5)
            ob = ModeStack(op.x, newZh, newYh, newXh, ob.t + cfg.dt)
            st = new
        if dense:
            sig_now = dense_diag(k, st)
        if k in rec_of_step:
            record(k, st, ob)
        if k in snap_steps:
            sigma_snaps.append((k * cfg.dt, None if sig_now is None else sig_now.copy(),
                                st.copy()))

    return RunResult(
        cfg=cfg, t=t_rec, omega_n=omega_n, omega_a=omega_a, energy_hyp=energy_hyp,
        t_dense=t_dense, V_lyap=V_lyap, sigma1=sigma1, X_series=X_series, sigma0=sigma0,
        U_modes=U_modes, Uhat_modes=Uhat_modes, omega_d=omega_d, obs_err=obs_err,
        Xhat_err=Xhat_err, sigma_snaps=sigma_snaps, lyap=lyap, final=st, final_obs=ob,
        control2d_max=control2d_max, runtime=time.perf_counter() - t_start,
        kernels=ctrl_kernels if need_ctrl else [], obs_kernels=obs_kernels,
        gains=gains, op=op)


def target_transform_check(result: RunResult, d: DimensionlessParams):
    """Residual report of the target dynamics along a recorded trajectory."""
    out = {}
    if result.sigma1 is not None:
        out["sigma1_max"] = float(np.abs(result.sigma1).max())
    if result.X_series is not None:
        dt = result.cfg.dt
        E1 = -np.diag(np.asarray(result.cfg.delta, float))
        lam = np.asarray(d.lambdas)
        X = result.X_series
        dX = (X[1:] - X[:-1]) / dt
        drift = np.einsum("ij,kvj->kvi", E1, X[:-1]) + lam[None, None, :] * result.sigma0[:-1]
        out["ode_residual"] = float(np.abs(dX - drift).max())
    snaps = [s for s in result.sigma_snaps if s[1] is not None]
    if len(snaps) >= 2:
        res = 0.0
        lam = np.asarray(d.lambdas)[None, :, None]
        for (t0, s0, st0), (t1, s1, _) in zip(snaps, snaps[1:]):
            ddt = (s1 - s0) / (t1 - t0)
            dx = st0.x[1] - st0.x[0]
            dsx = np.zeros_like(s0)
            dsx[:, :, :-1] = (s0[:, :, 1:] - s0[:, :, :-1]) / dx
            dsx[:, :, -1] = dsx[:, :, -2]
            res = max(res, float(np.abs(ddt - lam * dsx
                                        - _omega_apply(result, st0.x, s0)).max()))
        out["transport_residual"] = res
    return out


def _omega_apply(result: RunResult, x, sig):
    out = np.zeros_like(sig)
    for v, k in enumerate(result.kernels):
        om = np.stack([[np.interp(x, k.grid.xs, k.Omega[i, j]) for j in range(3)]
                       for i in range(3)])
        out[v] = np.einsum("ijm,jm->im", om, sig[v])
    return out
