"""Backstepping kernel solvers on the triangle, for controller and observer.

Controller side: 3x3 matrix kernels K, L over the triangle and Phi over
[0, 1], found as the fixed point of characteristic integral equations by
successive approximation.  Rows are solved bottom-up (fastest transport
speed first); within a row the cascade matrix Omega couples the row's own
hypotenuse trace to already-solved rows, keeping every sweep linear.

Observer side: kernels M, N with data on the hypotenuse and a reflection
relation on the edge x = 1.  The primary solver works in reflected
coordinates (chi, y) = (1 - y, 1 - x), where the anchor structure matches
the controller machinery; a direct-coordinate solver provides an
independent cross-check.  The cascade matrix of the observer target system
is the controller's Omega, which also pins the upper hypotenuse trace of N
to the diagonal trace of K.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DivergenceError
from .params import ModalCoefficients
from .triangle import (BOTTOM, HYP_DOWN, HYP_UP, RIGHT, PathRule, TriangleGrid,
                       _compile_paths, build_path_rule, interp1d_rule)

__all__ = [
    "ControllerKernels", "ObserverKernels",
    "solve_controller_kernels", "solve_observer_kernels",
    "kernel_residual", "inverse_kernels", "bound_certificate",
    "export_kernels_csv", "phi0_matrix",
]


def phi0_matrix(c: ModalCoefficients, delta, literal_npi=False):
    """Initial condition of Phi at x = 0.

    The (3,2) entry is -n*pi/L so that Sigma*Phi(0) + A is exactly
    diag(-delta); set ``literal_npi`` for the variant with -n*pi instead.
    """
    d1, d2, d3 = delta
    se, s1, s2 = c.se, c.s1, c.s2
    out = np.array([
        [-d1 * se, 1.0, 0.0],
        [0.0, -d2 * s1, 0.0],
        [0.0, -(c.n * np.pi if literal_npi else c.nL), -d3 * s2],
    ])
    return out


@dataclass
class _Tables:
    """Coefficient samples of one mode on the triangle grid."""

    lam: np.ndarray
    SGpp: np.ndarray  # sigma^{++} = F21 - F22 sampled on xs, (3,3,m)
    SGpm: np.ndarray  # sigma^{+-} = F21 + F22
    SGmp: np.ndarray  # sigma^{-+} = F11 - F12
    SGmm: np.ndarray  # sigma^{--} = F11 + F12
    E13: np.ndarray   # (3,3,m)
    E23: np.ndarray
    Fpp: np.ndarray   # F14 on the full (m,m) product grid, (3,3,m,m)
    Fpm: np.ndarray   # F15
    Fmp: np.ndarray   # F24
    Fmm: np.ndarray   # F25
    A: np.ndarray
    C: np.ndarray
    D: np.ndarray


def _sample_tables(c: ModalCoefficients, grid: TriangleGrid) -> _Tables:
    xs = grid.xs
    F11, F12 = c.F11(xs), c.F12(xs)
    F21, F22 = c.F21(xs), c.F22(xs)
    mv = lambda F: np.moveaxis(F, 0, -1)          # (m,3,3) -> (3,3,m)
    mv2 = lambda F: np.moveaxis(F, (0, 1), (-2, -1))  # (m,m,3,3) -> (3,3,m,m)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    return _Tables(
        lam=c.lambdas.copy(),
        SGpp=mv(F21 - F22), SGpm=mv(F21 + F22),
        SGmp=mv(F11 - F12), SGmm=mv(F11 + F12),
        E13=mv(c.F13(xs)), E23=mv(c.F23(xs)),
        Fpp=mv2(c.F14(X, Y)), Fpm=mv2(c.F15(X, Y)),
        Fmp=mv2(c.F24(X, Y)), Fmm=mv2(c.F25(X, Y)),
        A=c.A, C=c.C, D=c.D,
    )


def _cumtrapz_x(vals, delta):
    """Cumulative trapezoid along the last axis from index 0."""
    avg = 0.5 * (vals[..., 1:] + vals[..., :-1]) * delta
    out = np.zeros_like(vals)
    out[..., 1:] = np.cumsum(avg, axis=-1)
    return out


def _omega_from_kdiag(kdiag, SGmm, lam):
    """Strictly upper cascade matrix omega_ij = (lam_i - lam_j) k_ij(x,x) + sigma^{--}_ij."""
    m = kdiag.shape[-1]
    omega = np.zeros((3, 3, m))
    for i in range(3):
        for j in range(i + 1, 3):
            omega[i, j] = (lam[i] - lam[j]) * kdiag[i, j] + SGmm[i, j]
    return omega


class Anti1D:
    """Antiderivative of a 1-D function on [0, 1] with interpolated lookup."""

    def __init__(self, fun_or_samples, n=2049):
        if callable(fun_or_samples):
            self.x = np.linspace(0.0, 1.0, n)
            f = np.asarray(fun_or_samples(self.x), float)
        else:
            f = np.asarray(fun_or_samples, float)
            self.x = np.linspace(0.0, 1.0, f.size)
        d = self.x[1] - self.x[0]
        self.F = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * d)])

    def __call__(self, x):
        return np.interp(np.clip(x, 0.0, 1.0), self.x, self.F)

    def between(self, a, b):
        """Integral over [a, b] (signed)."""
        return self(b) - self(a)


def controller_jumps(c: ModalCoefficients, phi0):
    """Closed-form jump amplitudes of the subdiagonal kernels.

    K_ij (j < i) is discontinuous across the characteristic through the
    corner, lam_i*y = lam_j*x; the hypotenuse data and the edge relation
    give incompatible corner values, and the jump rides the characteristic
    unchanged because the coupling matrix sigma^{--} has zero diagonal.
    """
    lam = c.lambdas
    s_mm = c.F11(0.0) + c.F12(0.0)
    s_mp = c.F11(0.0) - c.F12(0.0)
    C = c.C
    jumps = {}
    for i in range(3):
        for j in range(i):
            hyp = -s_mm[i, j] / (lam[i] - lam[j])
            edge = sum(lam[k] * C[k, j] * (-s_mp[i, k] / (lam[i] + lam[k]))
                       for k in range(3)) / lam[j] + phi0[i, j]
            jumps[(i, j)] = hyp - edge
    return jumps


def jump_indicator(lam, i, j, X, Y):
    """H = 1 on the hypotenuse side of the (i, j) separatrix (ties included)."""
    return (lam[i] * np.asarray(Y) - lam[j] * np.asarray(X) >= -1e-14).astype(float)


# ---------------------------------------------------------------------------
# controller kernels
# ---------------------------------------------------------------------------

@dataclass
class ControllerKernels:
    """Converged controller kernel set of one mode."""

    n: int
    grid: TriangleGrid
    lam: np.ndarray
    delta: tuple
    K: np.ndarray      # (3,3,m,m), zero above the diagonal
    L: np.ndarray
    Phi: np.ndarray    # (3,3,m)
    Omega: np.ndarray  # (3,3,m), strictly upper
    phi0: np.ndarray
    info: dict = field(default_factory=dict)

    @property
    def K_edge(self):
        """K(1, y) on the grid, (3,3,m)."""
        return self.K[:, :, -1, :]

    @property
    def L_edge(self):
        return self.L[:, :, -1, :]

    @property
    def Phi_end(self):
        return self.Phi[:, :, -1]

    def kdiag(self):
        m = self.grid.m
        return self.K[:, :, np.arange(m), np.arange(m)]


def _controller_rhs(T: _Tables, grid, K, L, Phi, omega):
    """Dense right-hand-side fields of the K, L and Phi equations."""
    W = grid.W
    GK14 = np.einsum("ipas,pjsb,abs->ijab", K, T.Fpp, W)
    GL24 = np.einsum("ipas,pjsb,abs->ijab", L, T.Fmp, W)
    GK15 = np.einsum("ipas,pjsb,abs->ijab", K, T.Fpm, W)
    GL25 = np.einsum("ipas,pjsb,abs->ijab", L, T.Fmm, W)
    rhs_K = (np.einsum("ipab,pjb->ijab", K, T.SGmm)
             + np.einsum("ipab,pjb->ijab", L, T.SGpm)
             - np.einsum("ipa,pjab->ijab", omega, K)
             - T.Fpp + GK14 + GL24)
    rhs_L = (np.einsum("ipab,pjb->ijab", K, T.SGmp)
             + np.einsum("ipab,pjb->ijab", L, T.SGpp)
             - np.einsum("ipa,pjab->ijab", omega, L)
             - T.Fpm + GK15 + GL25)
    SD = T.lam[:, None] * T.D
    intE = (np.einsum("ipay,pjy,ay->ija", K, T.E13, W[:, 0, :])
            + np.einsum("ipay,pjy,ay->ija", L, T.E23, W[:, 0, :]))
    rhs_Phi = (np.einsum("ipa,pj->ija", Phi, T.A)
               - T.E13
               - np.einsum("ipa,pja->ija", omega, Phi)
               + np.einsum("ipa,pj->ija", L[:, :, :, 0], SD)
               + intE)
    return rhs_K, rhs_L, rhs_Phi


def solve_controller_kernels(c: ModalCoefficients, delta=(5.0, 5.0, 5.0),
                             grid: TriangleGrid | None = None,
                             tol=1e-10, max_iter=200, phi0=None) -> ControllerKernels:
    """Solve the controller kernel equations of mode ``c.n``.

    Successive approximation along exact straight characteristics; rows are
    solved in the order 3, 2, 1 so that the cascade couplings always pair the
    current row's hypotenuse trace with already-converged rows.
    """
    t0 = time.perf_counter()
    grid = grid or TriangleGrid(41)
    T = _sample_tables(c, grid)
    lam = T.lam
    m = grid.m
    if phi0 is None:
        phi0 = phi0_matrix(c, delta)

    # precompiled characteristic rules and anchor data
    ruleK = [[build_path_rule(grid, lam[i], lam[j], "K") for j in range(3)] for i in range(3)]
    ruleL = [[build_path_rule(grid, lam[i], lam[j], "L") for j in range(3)] for i in range(3)]
    xs = grid.xs

    def entry_at(fun_minus, pts, i, j):
        return fun_minus(pts)[..., i, j]

    sig_mp = lambda pts: c.F11(pts) - c.F12(pts)
    sig_mm = lambda pts: c.F11(pts) + c.F12(pts)

    dataL = [[-entry_at(sig_mp, ruleL[i][j].coord, i, j) / (lam[i] + lam[j])
              for j in range(3)] for i in range(3)]
    dataK_hyp = []
    edge1d = []
    for i in range(3):
        rowK, row1d = [], []
        for j in range(3):
            r = ruleK[i][j]
            vals = np.zeros(grid.n_nodes)
            hyp = r.kind == HYP_DOWN
            if hyp.any():
                vals[hyp] = -entry_at(sig_mm, r.coord[hyp], i, j) / (lam[i] - lam[j])
            rowK.append((vals, hyp))
            bot = ~hyp
            row1d.append((bot, interp1d_rule(xs, r.coord[bot])))
        dataK_hyp.append(rowK)
        edge1d.append(row1d)

    K = np.zeros((3, 3, m, m))
    L = np.zeros((3, 3, m, m))
    Phi = np.zeros((3, 3, m))
    omega = np.zeros((3, 3, m))
    increments = []
    first_sweep_max = []

    apply1d = lambda rule, vec: np.einsum("kp,kp->p", rule[1], vec[rule[0]])

    for i in reversed(range(3)):
        row_inc = []
        for q in range(max_iter):
            rhs_K, rhs_L, rhs_Phi = _controller_rhs(T, grid, K, L, Phi, omega)
            inc = 0.0
            newL = np.empty((3, grid.n_nodes))
            for j in range(3):
                newL[j] = dataL[i][j] + ruleL[i][j].integrate(grid.to_nodes(rhs_L[i, j]))
                inc = max(inc, np.abs(newL[j] - grid.to_nodes(L[i, j])).max())
                L[i, j][grid.ia, grid.ib] = newL[j]
            for j in range(3):
                newPhi = phi0[i, j] + _cumtrapz_x(rhs_Phi[i, j], grid.delta) / lam[i]
                inc = max(inc, np.abs(newPhi - Phi[i, j]).max())
                Phi[i, j] = newPhi
            for j in range(3):
                vals, hyp = dataK_hyp[i][j]
                data = vals.copy()
                bot, rule = edge1d[i][j]
                if bot.any():
                    acc = np.zeros(bot.sum())
                    for k in range(3):
                        acc += lam[k] * T.C[k, j] * apply1d(rule, L[i, k][:, 0])
                    data[bot] = acc / lam[j] + apply1d(rule, Phi[i, j])
                newK = data + ruleK[i][j].integrate(grid.to_nodes(rhs_K[i, j]))
                inc = max(inc, np.abs(newK - grid.to_nodes(K[i, j])).max())
                K[i, j][grid.ia, grid.ib] = newK
            omega = _omega_from_kdiag(K[:, :, np.arange(m), np.arange(m)], T.SGmm, lam)
            row_inc.append(inc)
            if q == 0:
                first_sweep_max.append(max(np.abs(K[i]).max(), np.abs(L[i]).max(),
                                           np.abs(Phi[i]).max()))
            if not np.isfinite(inc) or inc > 1e8:
                raise DivergenceError(
                    f"controller kernel iteration diverged on row {i + 1} of mode {c.n}",
                    last_norm=inc, step=q)
            if inc < tol:
                break
        else:
            raise DivergenceError(
                f"controller kernel iteration did not reach tol={tol} in {max_iter} sweeps "
                f"(row {i + 1}, mode {c.n})", last_norm=row_inc[-1], step=max_iter)
        increments.append(row_inc)

    info = {
        "increments": increments[::-1],  # row 1 first
        "first_sweep_max": first_sweep_max[::-1],
        "sweeps": [len(r) for r in increments[::-1]],
        "solve_seconds": time.perf_counter() - t0,
    }
    return ControllerKernels(n=c.n, grid=grid, lam=lam, delta=tuple(delta),
                             K=K, L=L, Phi=Phi, Omega=omega, phi0=phi0, info=info)


# ---------------------------------------------------------------------------
# observer kernels
# ---------------------------------------------------------------------------

@dataclass
class ObserverKernels:
    """Converged observer kernel set of one mode."""

    n: int
    grid: TriangleGrid
    lam: np.ndarray
    M: np.ndarray       # (3,3,m,m)
    N: np.ndarray
    Dplus: np.ndarray   # (3,3,m,m)
    Dminus: np.ndarray
    Omega: np.ndarray   # cascade matrix shared with the controller, (3,3,m)
    R1: np.ndarray      # reflection matrix at x = 1
    info: dict = field(default_factory=dict)

    @property
    def Pplus(self):
        """Output-injection gain P+(x) = M(x,0) Sigma, (3,3,m)."""
        return self.M[:, :, :, 0] * self.lam[None, :, None]

    @property
    def Pminus(self):
        return self.N[:, :, :, 0] * self.lam[None, :, None]


def reflection_matrix(d):
    """Diagonal reflection Z(1) = R1 Y(1) + inputs of the uncontrolled part."""
    se = np.sqrt(d.eps)
    return np.diag([-np.exp(se * (d.cbar1 - d.cbar2)), -1.0, -1.0])


def _observer_rhs_direct(T: _Tables, grid, M, N, omega):
    W = grid.W
    IN_mp = np.einsum("ipat,pjtb,abt->ijab", T.Fmp, N, W)
    IM_mm = np.einsum("ikat,kjtb,abt->ijab", T.Fmm, M, W)
    IN_pp = np.einsum("ipat,pjtb,abt->ijab", T.Fpp, N, W)
    IM_pm = np.einsum("ikat,kjtb,abt->ijab", T.Fpm, M, W)
    rhs_M = (np.einsum("ika,kjab->ijab", T.SGpp, M)
             + np.einsum("ipa,pjab->ijab", T.SGpm, N)
             - np.einsum("ipab,pjb->ijab", M, omega)
             + T.Fmp + IN_mp + IM_mm)
    rhs_N = (-np.einsum("ika,kjab->ijab", T.SGmm, N)
             - np.einsum("ipa,pjab->ijab", T.SGmp, M)
             + np.einsum("ipab,pjb->ijab", N, omega)
             - T.Fpp - IN_pp - IM_pm)
    return rhs_M, rhs_N


def _observer_n_rule_direct(grid, lam, i, j):
    """Mixed-anchor characteristic rule for N_ij in original coordinates."""
    x0, y0 = grid.xa, grid.yb
    n = grid.n_nodes
    a, b = lam[i], lam[j]
    kind = np.full(n, RIGHT)
    coord = y0 + b * (1.0 - x0) / a
    sF = (1.0 - x0) / a
    dx = np.full(n, a)
    dy = np.full(n, b)
    sign = -np.ones(n)
    if j < i:
        hyp = a * y0 - b * x0 >= -1e-14
        kind[hyp] = HYP_DOWN
        sF[hyp] = (x0[hyp] - y0[hyp]) / (a - b)
        coord[hyp] = x0[hyp] - a * sF[hyp]
        dx[hyp], dy[hyp], sign[hyp] = -a, -b, 1.0
    elif j > i:
        s_hyp = (x0 - y0) / (b - a)
        x_hyp = x0 + a * s_hyp
        sliver = x_hyp <= 1.0 + 1e-14
        kind[sliver] = HYP_UP
        sF[sliver] = s_hyp[sliver]
        coord[sliver] = np.minimum(x_hyp[sliver], 1.0)
    return _compile_paths(grid, x0.copy(), y0.copy(), dx, dy, sF, kind, coord, sign)


def solve_observer_kernels(c: ModalCoefficients, grid: TriangleGrid | None = None,
                           tol=1e-10, max_iter=200, controller: ControllerKernels | None = None,
                           delta=(5.0, 5.0, 5.0), method="reflected") -> ObserverKernels:
    """Solve the observer kernel equations of mode ``c.n``.

    The cascade matrix (and with it the upper hypotenuse trace of N) comes
    from the controller kernels; if none are supplied they are solved here
    with the given design parameters.  ``method`` selects the reflected-
    coordinate construction (default) or the direct-coordinate one used as
    its cross-check.
    """
    t0 = time.perf_counter()
    grid = grid or TriangleGrid(41)
    if controller is None:
        controller = solve_controller_kernels(c, delta=delta, grid=grid, tol=tol,
                                              max_iter=max_iter)
    if controller.grid.m != grid.m:
        raise ValueError("controller kernels were solved on a different grid")
    T = _sample_tables(c, grid)
    lam = T.lam
    m = grid.m
    xs = grid.xs
    omega = controller.Omega
    kdiag = controller.kdiag()
    R1 = reflection_matrix(c.d)
    r1 = np.diag(R1)

    sig_pm = lambda pts: c.F21(pts) + c.F22(pts)
    sig_mm = lambda pts: c.F11(pts) + c.F12(pts)

    if method == "direct":
        ruleM = [[build_path_rule(grid, lam[i], lam[j], "L") for j in range(3)] for i in range(3)]
        ruleN = [[_observer_n_rule_direct(grid, lam, i, j) for j in range(3)] for i in range(3)]

        dataM = [[sig_pm(ruleM[i][j].coord)[:, i, j] / (lam[i] + lam[j])
                  for j in range(3)] for i in range(3)]
        # N anchors: prescribed hypotenuse data, or reflection off M(1, .)
        fixedN, edgeN = [], []
        for i in range(3):
            rowF, rowE = [], []
            for j in range(3):
                r = ruleN[i][j]
                vals = np.zeros(grid.n_nodes)
                down = r.kind == HYP_DOWN
                if down.any():
                    vals[down] = -sig_mm(r.coord[down])[:, i, j] / (lam[i] - lam[j])
                up = r.kind == HYP_UP
                if up.any():
                    cols, wts = interp1d_rule(xs, r.coord[up])
                    vals[up] = np.einsum("kp,kp->p", wts, kdiag[i, j][cols])
                right = r.kind == RIGHT
                rowF.append(vals)
                rowE.append((right, interp1d_rule(xs, r.coord[right])))
            fixedN.append(rowF)
            edgeN.append(rowE)

        M = np.zeros((3, 3, m, m))
        N = np.zeros((3, 3, m, m))
        increments = []
        for q in range(max_iter):
            rhs_M, rhs_N = _observer_rhs_direct(T, grid, M, N, omega)
            inc = 0.0
            for i in range(3):
                for j in range(3):
                    new = dataM[i][j] + ruleM[i][j].integrate(grid.to_nodes(rhs_M[i, j]))
                    inc = max(inc, np.abs(new - grid.to_nodes(M[i, j])).max())
                    M[i, j][grid.ia, grid.ib] = new
            for i in range(3):
                for j in range(3):
                    right, rule = edgeN[i][j]
                    data = fixedN[i][j].copy()
                    if right.any():
                        data[right] = r1[i] * np.einsum("kp,kp->p", rule[1],
                                                        M[i, j][-1, :][rule[0]])
                    new = data + ruleN[i][j].integrate(grid.to_nodes(rhs_N[i, j]))
                    inc = max(inc, np.abs(new - grid.to_nodes(N[i, j])).max())
                    N[i, j][grid.ia, grid.ib] = new
            increments.append(inc)
            if not np.isfinite(inc) or inc > 1e8:
                raise DivergenceError(f"observer kernel iteration diverged (mode {c.n})",
                                      last_norm=inc, step=q)
            if inc < tol:
                break
        else:
            raise DivergenceError(
                f"observer kernel iteration did not reach tol={tol} in {max_iter} sweeps "
                f"(mode {c.n})", last_norm=increments[-1], step=max_iter)

    elif method == "reflected":
        M, N, increments = _solve_observer_reflected(c, grid, T, omega, kdiag, r1,
                                                     tol, max_iter)
    else:
        raise ValueError(f"unknown observer solver method {method!r}")

    Dminus, Dplus = _injection_fields(T, grid, M, N)
    info = {"increments": increments, "sweeps": len(increments),
            "method": method, "solve_seconds": time.perf_counter() - t0}
    return ObserverKernels(n=c.n, grid=grid, lam=lam, M=M, N=N,
                           Dplus=Dplus, Dminus=Dminus, Omega=omega, R1=R1, info=info)


def _solve_observer_reflected(c, grid, T, omega, kdiag, r1, tol, max_iter):
    """Observer kernels via (chi, y) = (1 - y, 1 - x); anchors become
    hypotenuse data plus a bottom-edge reflection, mirroring the controller."""
    lam = T.lam
    m = grid.m
    xs = grid.xs
    rev = slice(None, None, -1)
    ref2 = lambda F: F[:, :, rev, rev].swapaxes(-1, -2)
    SGpp_r, SGpm_r = T.SGpp[:, :, rev], T.SGpm[:, :, rev]
    SGmp_r, SGmm_r = T.SGmp[:, :, rev], T.SGmm[:, :, rev]
    omega_r = omega[:, :, rev]
    Fmp_rr, Fmm_rr = T.Fmp[:, :, rev, rev], T.Fmm[:, :, rev, rev]
    Fpp_rr, Fpm_rr = T.Fpp[:, :, rev, rev], T.Fpm[:, :, rev, rev]
    Fmp_ref2, Fpp_ref2 = ref2(T.Fmp), ref2(T.Fpp)

    ruleM = [[build_path_rule(grid, lam[j], lam[i], "L") for j in range(3)] for i in range(3)]
    ruleN = [[build_path_rule(grid, lam[j], lam[i], "K") for j in range(3)] for i in range(3)]

    sig_pm = lambda pts: c.F21(pts) + c.F22(pts)
    dataM = [[sig_pm(1.0 - ruleM[i][j].coord)[:, i, j] / (lam[i] + lam[j])
              for j in range(3)] for i in range(3)]
    fixedN, edgeN = [], []
    for i in range(3):
        rowF, rowE = [], []
        for j in range(3):
            r = ruleN[i][j]
            vals = np.zeros(grid.n_nodes)
            hyp = r.kind == HYP_DOWN  # only when i < j
            if hyp.any():
                cols, wts = interp1d_rule(xs, 1.0 - r.coord[hyp])
                vals[hyp] = np.einsum("kp,kp->p", wts, kdiag[i, j][cols])
            bot = r.kind == BOTTOM
            rowF.append(vals)
            rowE.append((bot, interp1d_rule(xs, r.coord[bot])))
        fixedN.append(rowF)
        edgeN.append(rowE)

    W = grid.W
    Mb = np.zeros((3, 3, m, m))
    Nb = np.zeros((3, 3, m, m))
    increments = []
    for q in range(max_iter):
        IN_mp = np.einsum("ipbt,pjat,abt->ijab", Fmp_rr, Nb, W)
        IM_mm = np.einsum("ikbt,kjat,abt->ijab", Fmm_rr, Mb, W)
        rhs_M = (np.einsum("ikb,kjab->ijab", SGpp_r, Mb)
                 + np.einsum("ipb,pjab->ijab", SGpm_r, Nb)
                 - np.einsum("ipab,pja->ijab", Mb, omega_r)
                 + Fmp_ref2 + IN_mp + IM_mm)
        IN_pp = np.einsum("ipbt,pjat,abt->ijab", Fpp_rr, Nb, W)
        IM_pm = np.einsum("ikbt,kjat,abt->ijab", Fpm_rr, Mb, W)
        rhs_N = (np.einsum("ikb,kjab->ijab", SGmm_r, Nb)
                 + np.einsum("ipb,pjab->ijab", SGmp_r, Mb)
                 - np.einsum("ipab,pja->ijab", Nb, omega_r)
                 + Fpp_ref2 + IN_pp + IM_pm)
        inc = 0.0
        for i in range(3):
            for j in range(3):
                new = dataM[i][j] + ruleM[i][j].integrate(grid.to_nodes(rhs_M[i, j]))
                inc = max(inc, np.abs(new - grid.to_nodes(Mb[i, j])).max())
                Mb[i, j][grid.ia, grid.ib] = new
        for i in range(3):
            for j in range(3):
                bot, rule = edgeN[i][j]
                data = fixedN[i][j].copy()
                if bot.any():
                    data[bot] = r1[i] * np.einsum("kp,kp->p", rule[1],
                                                  Mb[i, j][:, 0][rule[0]])
                new = data + ruleN[i][j].integrate(grid.to_nodes(rhs_N[i, j]))
                inc = max(inc, np.abs(new - grid.to_nodes(Nb[i, j])).max())
                Nb[i, j][grid.ia, grid.ib] = new
        increments.append(inc)
        if not np.isfinite(inc) or inc > 1e8:
            raise DivergenceError(f"observer kernel iteration diverged (mode {c.n})",
                                  last_norm=inc, step=q)
        if inc < tol:
            break
    else:
        raise DivergenceError(
            f"observer kernel iteration did not reach tol={tol} in {max_iter} sweeps "
            f"(mode {c.n})", last_norm=increments[-1], step=max_iter)

    return ref2(Mb).copy(), ref2(Nb).copy(), increments


def _injection_fields(T: _Tables, grid, M, N):
    """D-+ by forward substitution in x, then D+ explicitly."""
    m = grid.m
    W = grid.W
    base_minus = T.Fpm - np.einsum("ikab,kjb->ijab", N, T.SGmp)
    Dminus = np.zeros((3, 3, m, m))
    I3 = np.eye(3)
    for b in range(m):
        for a in range(b, m):
            rhs = base_minus[:, :, a, b].copy()
            if a > b:
                w = W[a, b, b:a]
                rhs -= np.einsum("s,iks,kjs->ij", w, N[:, :, a, b:a], Dminus[:, :, b:a, b])
            wa = W[a, b, a]
            Dminus[:, :, a, b] = np.linalg.solve(I3 + wa * N[:, :, a, a], rhs)
    intMD = np.einsum("ikas,kjsb,abs->ijab", M, Dminus, W)
    Dplus = T.Fmm - np.einsum("ikab,kjb->ijab", M, T.SGmp) - intMD
    tri = grid.to_dense(np.ones(grid.n_nodes))
    return Dminus * tri, Dplus * tri


# ---------------------------------------------------------------------------
# residuals, inverses, certificates, export
# ---------------------------------------------------------------------------

def _pde_residual(field, rhs, lam_i, lam_j, sign_y, grid):
    """max | lam_i D_x field + sign_y lam_j D_y field - rhs | on interior nodes."""
    d = grid.delta
    m = grid.m
    res = []
    for a in range(2, m):
        bs = np.arange(1, a)
        dx = (field[a, bs] - field[a - 1, bs]) / d
        dy = (field[a, bs] - field[a, bs - 1]) / d
        res.append(np.abs(lam_i * dx + sign_y * lam_j * dy - rhs[a, bs]))
    return max((r.max() for r in res if r.size), default=0.0)


def kernel_residual(kern, c: ModalCoefficients):
    """Pointwise PDE and boundary-condition residual report."""
    grid = kern.grid
    T = _sample_tables(c, grid)
    lam = T.lam
    m = grid.m
    rep = {}
    diag = np.arange(m)
    if isinstance(kern, ControllerKernels):
        rhs_K, rhs_L, rhs_Phi = _controller_rhs(T, grid, kern.K, kern.L, kern.Phi, kern.Omega)
        rep["pde_K"] = max(_pde_residual(kern.K[i, j], rhs_K[i, j], lam[i], lam[j], +1, grid)
                           for i in range(3) for j in range(3))
        rep["pde_L"] = max(_pde_residual(kern.L[i, j], rhs_L[i, j], lam[i], lam[j], -1, grid)
                           for i in range(3) for j in range(3))
        dphi = np.diff(kern.Phi, axis=-1) / grid.delta
        mid = 0.5 * (rhs_Phi[..., 1:] + rhs_Phi[..., :-1])
        rep["pde_Phi"] = np.abs(lam[:, None, None] * dphi - mid).max()
        # boundary conditions (60)-(63)
        Lh = kern.L[:, :, diag, diag]
        Kh = kern.K[:, :, diag, diag]
        bcL = lam[:, None, None] * Lh + Lh * lam[None, :, None] + T.SGmp
        bcK = lam[:, None, None] * Kh - Kh * lam[None, :, None] + T.SGmm \
            - kern.Omega
        rep["bc_hyp_L"] = np.abs(bcL).max()
        rep["bc_hyp_K"] = np.abs(bcK).max()
        edge = kern.K[:, :, :, 0] * lam[None, :, None] \
            - np.einsum("ikx,kj->ijx", kern.L[:, :, :, 0] * lam[None, :, None], T.C) \
            - kern.Phi * lam[None, :, None]
        rep["bc_edge"] = np.abs(edge).max()
        rep["bc_phi0"] = np.abs(kern.Phi[:, :, 0] - kern.phi0).max()
        rep["max_bc"] = max(rep["bc_hyp_L"], rep["bc_hyp_K"], rep["bc_edge"], rep["bc_phi0"])
        rep["max_pde"] = max(rep["pde_K"], rep["pde_L"], rep["pde_Phi"])
    elif isinstance(kern, ObserverKernels):
        rhs_M, rhs_N = _observer_rhs_direct(T, grid, kern.M, kern.N, kern.Omega)
        rep["pde_M"] = max(_pde_residual(kern.M[i, j], rhs_M[i, j], lam[i], lam[j], -1, grid)
                           for i in range(3) for j in range(3))
        rep["pde_N"] = max(_pde_residual(kern.N[i, j], rhs_N[i, j], lam[i], lam[j], +1, grid)
                           for i in range(3) for j in range(3))
        Mh = kern.M[:, :, diag, diag]
        Nh = kern.N[:, :, diag, diag]
        bcM = lam[:, None, None] * Mh + Mh * lam[None, :, None] - T.SGpm
        bcN = lam[:, None, None] * Nh - Nh * lam[None, :, None] + T.SGmm - kern.Omega
        rep["bc_hyp_M"] = np.abs(bcM).max()
        rep["bc_hyp_N"] = np.abs(bcN).max()
        refl = kern.N[:, :, -1, :] - np.diag(kern.R1)[:, None, None] * kern.M[:, :, -1, :]
        rep["bc_reflection"] = np.abs(refl).max()
        intND = np.einsum("ikas,kjsb,abs->ijab", kern.N, kern.Dminus, grid.W)
        resD = kern.Dminus - (T.Fpm - np.einsum("ikab,kjb->ijab", kern.N, T.SGmp) - intND)
        rep["recursion_Dminus"] = np.abs(grid.to_nodes(resD)).max()
        rep["max_bc"] = max(rep["bc_hyp_M"], rep["bc_hyp_N"], rep["bc_reflection"])
        rep["max_pde"] = max(rep["pde_M"], rep["pde_N"])
    else:
        raise TypeError(f"unsupported kernel set {type(kern)!r}")
    return rep


def inverse_kernels(kern: ControllerKernels):
    """Resolvent kernels of the backstepping transform (forward substitution).

    Returns (Kb, Lb, Phib) with Z = sigma + int Kb sigma + int Lb psi + Phib X.
    """
    grid = kern.grid
    m = grid.m
    W = grid.W
    I3 = np.eye(3)
    Kb = np.zeros_like(kern.K)
    Lb = np.zeros_like(kern.L)
    weight_end = W[np.arange(m), :, np.arange(m)]
    for b in range(m):
        for a in range(b, m):
            wa = weight_end[a, b]
            lhs = I3 - wa * kern.K[:, :, a, a]
            rhsK = kern.K[:, :, a, b].copy()
            rhsL = kern.L[:, :, a, b].copy()
            if a > b:
                w = W[a, b, b:a]
                rhsK += np.einsum("s,iks,kjs->ij", w, kern.K[:, :, a, b:a], Kb[:, :, b:a, b])
                rhsL += np.einsum("s,iks,kjs->ij", w, kern.K[:, :, a, b:a], Lb[:, :, b:a, b])
            Kb[:, :, a, b] = np.linalg.solve(lhs, rhsK)
            Lb[:, :, a, b] = np.linalg.solve(lhs, rhsL)
    Phib = np.zeros_like(kern.Phi)
    for a in range(m):
        wa = weight_end[a, 0] if a > 0 else 0.0
        rhs = kern.Phi[:, :, a].copy()
        if a > 0:
            w = W[a, 0, :a]
            rhs += np.einsum("s,iks,kjs->ij", w, kern.K[:, :, a, :a], Phib[:, :, :a])
        Phib[:, :, a] = np.linalg.solve(I3 - wa * kern.K[:, :, a, a], rhs)
    return Kb, Lb, Phib


def bound_certificate(c: ModalCoefficients, kern: ControllerKernels):
    """Uniform-bound certificate sup|kernels| <= phibar * exp(Mconst)."""
    grid = kern.grid
    T = _sample_tables(c, grid)
    lam = T.lam
    lam_bar, lam_lo = lam[2], 1.0 / lam[0]
    mu_bar = max(abs(lam[i] - lam[p]) for i in range(3) for p in range(3))
    a_bar = np.abs(T.A).max()
    d_bar = np.abs(T.D).max()
    c_bar = np.abs(T.C).max()
    f_bar = max(np.abs(F).max() for F in (T.Fpp, T.Fpm, T.Fmp, T.Fmm))
    s_bar = max(np.abs(S).max() for S in (T.SGpp, T.SGpm, T.SGmp, T.SGmm))
    e_bar = max(np.abs(T.E13).max(), np.abs(T.E23).max())
    S_rows = max(np.abs(kern.K).max(), np.abs(kern.L).max(), np.abs(kern.Phi).max())
    m_bar = (3 * lam_bar * lam_lo * c_bar * (6 * s_bar + 3 * mu_bar * S_rows + 3 * f_bar)
             + 3 * a_bar + 3 * lam_bar * d_bar + 6 * mu_bar * S_rows
             + 6 * e_bar + 6 * s_bar + 6 * f_bar)
    phibar = max(max(kern.info.get("first_sweep_max", [0.0])), 1e-30)
    Mconst = m_bar * phibar / lam[0]
    bound = phibar * np.exp(min(Mconst, 700.0))
    return {"phibar": phibar, "Mconst": Mconst, "bound": bound,
            "sup_kernels": S_rows, "ok": bool(S_rows <= bound)}


def export_kernels_csv(path, ctrl: ControllerKernels | None = None,
                       obs: ObserverKernels | None = None):
    """Write kernel tables as rows (n, block, i, j, x, y, value)."""
    rows = []

    def emit(n, block, arr, grid, one_arg=False):
        if one_arg:
            for i in range(3):
                for j in range(3):
                    for a in range(grid.m):
                        rows.append((n, block, i + 1, j + 1, grid.xs[a], 0.0, arr[i, j, a]))
        else:
            for i in range(3):
                for j in range(3):
                    for a, b in zip(grid.ia, grid.ib):
                        rows.append((n, block, i + 1, j + 1, grid.xs[a], grid.xs[b],
                                     arr[i, j, a, b]))

    if ctrl is not None:
        emit(ctrl.n, "K", ctrl.K, ctrl.grid)
        emit(ctrl.n, "L", ctrl.L, ctrl.grid)
        emit(ctrl.n, "Phi", ctrl.Phi, ctrl.grid, one_arg=True)
        emit(ctrl.n, "Omega", ctrl.Omega, ctrl.grid, one_arg=True)
    if obs is not None:
        emit(obs.n, "N", obs.N, obs.grid)
        emit(obs.n, "M", obs.M, obs.grid)
        emit(obs.n, "Dplus", obs.Dplus, obs.grid)
        emit(obs.n, "Dminus", obs.Dminus, obs.grid)
        emit(obs.n, "Pplus", obs.Pplus, obs.grid, one_arg=True)
        emit(obs.n, "Pminus", obs.Pminus, obs.grid, one_arg=True)
    with open(path, "w") as fh:
        fh.write("n,block,i,j,x,y,value\n")
        for n, block, i, j, x, y, v in rows:
            fh.write(f"{n},{block},{i},{j},{x:.17g},{y:.17g},{v:.17g}\n")
    return len(rows)
