"""Characteristic (Riemann) variables of the per-mode Timoshenko plant.

Forward map: p, q carry the deflection wave with exponential weights
exp(sqrt(eps)*cbar1*x), exp(sqrt(eps)*cbar2*x) that remove the diagonal
piston-theory coupling; r, s and u, v carry the two rotation waves
unweighted.  The boundary ODE state is X = (w(0), alpha(0), beta(0)).
Inverse map: derivative fields come back algebraically, the displacement
fields by cumulative trapezoid from x = 0.
"""

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .params import DimensionlessParams

__all__ = ["PhysicalModalState", "HyperbolicModalState", "to_hyperbolic", "to_physical"]


@dataclass
class PhysicalModalState:
    """Per-mode fields over the x-grid plus their t- and x-derivatives."""

    x: np.ndarray
    w: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    w_t: np.ndarray
    alpha_t: np.ndarray
    beta_t: np.ndarray
    w_x: np.ndarray
    alpha_x: np.ndarray
    beta_x: np.ndarray
    t: float = 0.0

    def boundary_ode_state(self):
        return np.array([self.w[0], self.alpha[0], self.beta[0]])


@dataclass
class HyperbolicModalState:
    """Characteristic state: Z = (p, r, u), Y = (q, s, v) over x, ODE state X."""

    x: np.ndarray
    Z: np.ndarray  # (3, nx)
    Y: np.ndarray  # (3, nx)
    X: np.ndarray  # (3,)
    t: float = 0.0

    def copy(self):
        return HyperbolicModalState(self.x, self.Z.copy(), self.Y.copy(), self.X.copy(), self.t)


def _weights(d: DimensionlessParams, x):
    se = np.sqrt(d.eps)
    return np.exp(se * d.cbar1 * x), np.exp(se * d.cbar2 * x)


def to_hyperbolic(s: PhysicalModalState, d: DimensionlessParams) -> HyperbolicModalState:
    """Riemann transform of a physical state."""
    x = np.asarray(s.x, float)
    for name in ("w", "alpha", "beta", "w_t", "alpha_t", "beta_t", "w_x", "alpha_x", "beta_x"):
        if np.shape(getattr(s, name)) != x.shape:
            raise ValueError(f"field {name!r} does not match the state grid")
    se, s1, s2 = np.sqrt(d.eps), np.sqrt(d.mu1), np.sqrt(d.mu2)
    k1, k2 = _weights(d, x)
    Z = np.stack([
        k1 * (s.w_x + se * s.w_t),
        s.alpha_x + s1 * s.alpha_t,
        s.beta_x + s2 * s.beta_t,
    ])
    Y = np.stack([
        k2 * (s.w_x - se * s.w_t),
        s.alpha_x - s1 * s.alpha_t,
        s.beta_x - s2 * s.beta_t,
    ])
    X = np.array([s.w[0], s.alpha[0], s.beta[0]])
    return HyperbolicModalState(x, Z, Y, X, s.t)


def to_physical(h: HyperbolicModalState, d: DimensionlessParams) -> PhysicalModalState:
    """Invert the Riemann transform; displacement fields integrate from x = 0."""
    x = np.asarray(h.x, float)
    se, s1, s2 = np.sqrt(d.eps), np.sqrt(d.mu1), np.sqrt(d.mu2)
    k1, k2 = _weights(d, x)
    p, r, u = h.Z
    q, s_, v = h.Y

    w_x = (k2 * p + k1 * q) / (2.0 * k1 * k2)
    w_t = (k2 * p - k1 * q) / (2.0 * se * k1 * k2)
    alpha_x = (r + s_) / 2.0
    alpha_t = (r - s_) / (2.0 * s1)
    beta_x = (u + v) / 2.0
    beta_t = (u - v) / (2.0 * s2)

    w = cumulative_trapezoid(w_x, x, initial=0.0) + h.X[0]
    alpha = cumulative_trapezoid(alpha_x, x, initial=0.0) + h.X[1]
    beta = cumulative_trapezoid(beta_x, x, initial=0.0) + h.X[2]
    return PhysicalModalState(
        x=x, w=w, alpha=alpha, beta=beta,
        w_t=w_t, alpha_t=alpha_t, beta_t=beta_t,
        w_x=w_x, alpha_x=alpha_x, beta_x=beta_x, t=h.t,
    )
