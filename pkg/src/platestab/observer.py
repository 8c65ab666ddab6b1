"""Boundary-measurement observer for the per-mode hyperbolic plant.

The sensed edge is x = 0: deflection, rotations and their x/t derivatives
there give, mode by mode, the incoming characteristic values Z(t,0) and the
boundary ODE state X.  The observer copies the plant dynamics driven by
those measurements, with output injection P-+(x)(Z(t,0) - Zhat(t,0)) in the
PDE part and a diagonal gain on X.  Estimated plate fields are derived
views of the characteristic estimate, never integrated separately.
"""

from dataclasses import dataclass

import numpy as np

from .kernels import ObserverKernels
from .modal import project
from .numutil import trapz_weights, tri_weights
from .params import DimensionlessParams
from .riemann import HyperbolicModalState, PhysicalModalState, to_physical

__all__ = [
    "Measurements", "extract_measurements", "ObserverGains",
    "reconstruct_estimates", "invert_error_transform", "error_diagnostics",
]


@dataclass
class Measurements:
    """Per-mode boundary data at x = 0: Z(t,0) rows and the ODE state."""

    n: int
    Z0: np.ndarray  # (3,)
    X: np.ndarray   # (3,)


def extract_measurements(traces, d: DimensionlessParams, N, ygrid):
    """Modal measurements from sensed 2-D traces along the edge x = 0.

    ``traces`` maps the names w, alpha, beta, w_x, w_t, alpha_x, alpha_t,
    beta_x, beta_t to samples over ygrid.  Returns a list of
    :class:`Measurements`, modes 0..N.
    """
    se, s1, s2 = np.sqrt(d.eps), np.sqrt(d.mu1), np.sqrt(d.mu2)
    p0 = project(traces["w_x"] + se * traces["w_t"], "sine", N, d.L, ygrid)
    r0 = project(traces["alpha_x"] + s1 * traces["alpha_t"], "sine", N, d.L, ygrid)
    u0 = project(traces["beta_x"] + s2 * traces["beta_t"], "cosine", N, d.L, ygrid)
    x1 = project(traces["w"], "sine", N, d.L, ygrid)
    x2 = project(traces["alpha"], "sine", N, d.L, ygrid)
    x3 = project(traces["beta"], "cosine", N, d.L, ygrid)
    return [Measurements(n=n, Z0=np.array([p0[n], r0[n], u0[n]]),
                         X=np.array([x1[n], x2[n], x3[n]])) for n in range(N + 1)]


@dataclass
class ObserverGains:
    """Injection gains of one mode resampled onto a simulation grid."""

    n: int
    Pplus: np.ndarray   # (3,3,ms)
    Pminus: np.ndarray  # (3,3,ms)
    Lx: np.ndarray      # (3,)

    @classmethod
    def from_kernels(cls, kern: ObserverKernels, d: DimensionlessParams, x, L_gains):
        lam = d.lambdas
        Lx = np.asarray(L_gains, float) * lam
        Pp = np.empty((3, 3, len(x)))
        Pm = np.empty((3, 3, len(x)))
        for i in range(3):
            for j in range(3):
                Pp[i, j] = np.interp(x, kern.grid.xs, kern.Pplus[i, j])
                Pm[i, j] = np.interp(x, kern.grid.xs, kern.Pminus[i, j])
        return cls(n=kern.n, Pplus=Pp, Pminus=Pm, Lx=Lx)


def reconstruct_estimates(o: HyperbolicModalState, d: DimensionlessParams, n=None) -> PhysicalModalState:
    """Estimated plate fields from the characteristic estimate (derived view)."""
    return to_physical(o, d)


def resample_kernel_field(field, grid, x):
    """Kernel field (3,3,m,m) interpolated onto the (x, y<=x) product grid."""
    ms = len(x)
    X, Y = np.meshgrid(x, x, indexing="ij")
    Y = np.minimum(Y, X)
    cols, wts = grid.interp_weights(X.ravel(), Y.ravel())
    out = np.empty((3, 3, ms, ms))
    for i in range(3):
        for j in range(3):
            nodal = grid.to_nodes(field[i, j])
            out[i, j] = (wts * nodal[cols]).sum(0).reshape(ms, ms)
    tri = np.tril(np.ones((ms, ms)))
    return out * tri


def invert_error_transform(Zt, Yt, Nk, Mk, x):
    """Map (Z~, Y~) to the target variables (sigma~, psi~) on the grid.

    Solves Z~ = sigma~ + int_0^x N(x,y) sigma~(y) dy by forward substitution
    in x (trapezoid), then psi~ = Y~ - int M sigma~.  Shapes: Zt, Yt are
    (..., 3, ms) and Nk, Mk are (..., 3, 3, ms, ms).
    """
    x = np.asarray(x, float)
    ms = x.size
    d = x[1] - x[0]
    sig = np.zeros_like(Zt)
    I3 = np.eye(3)
    for k in range(ms):
        rhs = Zt[..., :, k].copy()
        if k > 0:
            w = np.full(k, d)
            w[0] = d / 2.0
            rhs = rhs - np.einsum("y,...ijy,...jy->...i", w, Nk[..., :, :, k, :k],
                                  sig[..., :, :k])
            lhs = I3 + (d / 2.0) * Nk[..., :, :, k, k]
        else:
            lhs = np.broadcast_to(I3, Nk[..., :, :, 0, 0].shape)
        sig[..., :, k] = np.linalg.solve(lhs, rhs[..., None])[..., 0]
    psi = Yt - np.einsum("ky,...ijky,...jy->...ik", tri_weights(ms, d), Mk, sig)
    return sig, psi


def error_diagnostics(plant: HyperbolicModalState, o: HyperbolicModalState,
                      Nk, Mk, d: DimensionlessParams):
    """Observer-error norms (|sigma~|, |psi~|, |X~|, Omega_nf) of one mode.

    Nk, Mk are the observer kernels resampled on the state grid (3,3,ms,ms).
    """
    x = plant.x
    Zt, Yt, Xt = plant.Z - o.Z, plant.Y - o.Y, plant.X - o.X
    sig, psi = invert_error_transform(Zt, Yt, Nk, Mk, x)
    err = HyperbolicModalState(x, Zt, Yt, Xt, plant.t)
    phys = to_physical(err, d)
    w = trapz_weights(x)
    l2 = lambda f: float(np.sum(w * f * f))
    omega_nf = (l2(phys.w) + l2(phys.w_x) + l2(phys.w_t)
                + l2(phys.alpha) + l2(phys.alpha_x) + l2(phys.alpha_t)
                + l2(phys.beta) + l2(phys.beta_x) + l2(phys.beta_t))
    return {
        "sigma_err": float(np.sqrt(np.sum(w * sig**2))),
        "psi_err": float(np.sqrt(np.sum(w * psi**2))),
        "X_err": float(np.linalg.norm(Xt)),
        "omega_nf": omega_nf,
    }
