"""Plate/flow parameters and the per-mode coefficient matrices.

Physical inputs are nondimensionalized with the plate chord as the length
scale and the bending stiffness as the force scale.  The derived constants
(eps, mu1, mu2, a, theta, xi) define a 6x6 first-order hyperbolic system
coupled to a 3-dimensional boundary ODE; :class:`ModalCoefficients` assembles
its constant matrices and coefficient functions for one Fourier mode.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, UnsupportedRegimeError

__all__ = [
    "PhysicalParams",
    "DimensionlessParams",
    "ModalCoefficients",
    "nondimensionalize",
    "assemble_coefficients",
]


@dataclass(frozen=True)
class PhysicalParams:
    """Dimensional plate and free-stream data (SI units)."""

    L1: float   # chordwise length [m]
    L2: float   # spanwise length [m]
    h: float    # thickness [m]
    rho: float  # plate density [kg/m^3]
    E: float    # Young's modulus [Pa]
    G: float    # shear modulus [Pa]
    kprime: float  # shear correction factor [-]
    I: float    # section moment per unit width [m^3]
    I1: float   # rotary inertia moment, x bending [m^3]
    I2: float   # rotary inertia moment, y bending [m^3]
    M: float    # free-stream Mach number [-]
    rhof: float  # free-stream density [kg/m^3]
    U: float    # free-stream velocity [m/s]

    def validate(self):
        for name, value in self.__dict__.items():
            if not np.isfinite(value) or value <= 0.0:
                raise ConfigError(f"physical parameter {name!r} must be positive, got {value}")
        if self.kprime > 1.0:
            raise ConfigError(f"shear factor kprime must lie in (0, 1], got {self.kprime}")


@dataclass(frozen=True)
class DimensionlessParams:
    """Dimensionless constants of the hyperbolic plant.

    Only (eps, mu1, mu2, a, theta, xi, L) enter the dynamics; the remaining
    fields are kept for traceability when built from physical data.
    """

    eps: float
    mu1: float
    mu2: float
    a: float
    theta: float
    xi: float
    L: float
    h: float | None = None
    G: float | None = None
    rho: float | None = None
    I: float | None = None
    I1: float | None = None
    I2: float | None = None
    rhof: float | None = None
    U: float | None = None
    M: float | None = None

    @property
    def kGh(self):
        """Dimensionless shear rigidity k'Gh; equals a/eps by definition of eps."""
        return self.a / self.eps

    @property
    def cbar1(self):
        return self.xi / (2.0 * np.sqrt(self.eps)) + self.theta / (2.0 * self.eps)

    @property
    def cbar2(self):
        return self.xi / (2.0 * np.sqrt(self.eps)) - self.theta / (2.0 * self.eps)

    @property
    def lambdas(self):
        """Transport speeds (1/sqrt(eps), 1/sqrt(mu1), 1/sqrt(mu2))."""
        return np.array([self.eps, self.mu1, self.mu2]) ** -0.5

    def validate(self):
        for name in ("eps", "mu1", "mu2", "a", "L"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0.0:
                raise ConfigError(f"dimensionless parameter {name!r} must be positive, got {value}")
        for name in ("theta", "xi"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0.0:
                raise ConfigError(f"dimensionless parameter {name!r} must be nonnegative, got {value}")
        lam = self.lambdas
        if not (lam[0] < lam[1] < lam[2]):
            raise UnsupportedRegimeError(
                "wave-speed ordering 1/sqrt(eps) < 1/sqrt(mu1) < 1/sqrt(mu2) violated "
                f"(eps={self.eps}, mu1={self.mu1}, mu2={self.mu2}); "
                "the design assumes eps > mu1 > mu2"
            )
        return self


def nondimensionalize(p: PhysicalParams) -> DimensionlessParams:
    """Map physical data to the dimensionless constants of the plant."""
    p.validate()
    EI = p.E * p.I
    G = p.G * p.L1**3 / EI
    rho = p.rho * p.L1**5 / EI
    h = p.h / p.L1
    kGh = p.kprime * G * h
    rhof = p.rhof * p.L1**5 / EI
    U = p.U / p.L1
    d = DimensionlessParams(
        eps=rho * h / kGh,
        mu1=rho * (p.I1 / p.L1**3),
        mu2=rho * (p.I2 / p.L1**3),
        a=rho * h,
        theta=rhof * U / (p.M * kGh),
        xi=rhof * U**2 / (p.M * kGh),
        L=p.L2 / p.L1,
        h=h,
        G=G,
        rho=rho,
        I=p.I / p.L1**3,
        I1=p.I1 / p.L1**3,
        I2=p.I2 / p.L1**3,
        rhof=rhof,
        U=U,
        M=p.M,
    )
    d.validate()
    return d


def _as_field(values, x):
    """Broadcast a (3,3) stack of per-entry samples to x.shape + (3,3)."""
    out = np.zeros(np.shape(x) + (3, 3))
    for i in range(3):
        for j in range(3):
            out[..., i, j] = values[i][j]
    return out


class ModalCoefficients:
    """Constant matrices and coefficient functions of one Fourier mode.

    All two-argument coupling functions are products g(x)h(y); besides dense
    evaluation, :meth:`separable` exposes that structure so time stepping can
    run the in-domain integral terms with cumulative sums.
    """

    def __init__(self, d: DimensionlessParams, n: int):
        if n < 0 or int(n) != n:
            raise ConfigError(f"mode index must be a nonnegative integer, got {n}")
        d.validate()
        self.d = d
        self.n = int(n)
        self.nL = self.n * np.pi / d.L
        eps, mu1, mu2 = d.eps, d.mu1, d.mu2
        self.se, self.s1, self.s2 = np.sqrt(eps), np.sqrt(mu1), np.sqrt(mu2)
        self.lambdas = d.lambdas
        # q2 multiplies the modal stiffness terms shared by all three equations
        self.q2 = (self.n**2 * np.pi**2 * eps + d.a * d.L**2) / (eps * d.L**2)

    # -- scalar helper functions -------------------------------------------------
    def c1(self, x):
        d = self.d
        return d.cbar2 * np.exp(self.se * (d.cbar1 - d.cbar2) * np.asarray(x, float))

    def c2(self, x):
        return -np.exp(self.se * self.d.cbar1 * np.asarray(x, float)) / (2.0 * self.se)

    def c3(self, x):
        d = self.d
        return -d.cbar1 * np.exp(-self.se * (d.cbar1 - d.cbar2) * np.asarray(x, float))

    def c4(self, x):
        return np.exp(self.se * self.d.cbar2 * np.asarray(x, float)) / (2.0 * self.se)

    def c5(self, x):
        return np.exp(-self.se * self.d.cbar1 * np.asarray(x, float))

    def c6(self, x):
        return np.exp(-self.se * self.d.cbar2 * np.asarray(x, float))

    def f11(self, x, y):
        return np.exp(self.se * self.d.cbar1 * (np.asarray(x, float) - np.asarray(y, float)))

    def f12(self, x, y):
        d = self.d
        return np.exp(self.se * (d.cbar1 * np.asarray(x, float) - d.cbar2 * np.asarray(y, float)))

    def f21(self, x, y):
        d = self.d
        return np.exp(self.se * (d.cbar2 * np.asarray(x, float) - d.cbar1 * np.asarray(y, float)))

    def f22(self, x, y):
        return np.exp(self.se * self.d.cbar2 * (np.asarray(x, float) - np.asarray(y, float)))

    # -- constant matrices -------------------------------------------------------
    @property
    def Sigma(self):
        return np.diag(self.lambdas)

    @property
    def A(self):
        A = np.zeros((3, 3))
        A[0, 1] = -1.0 / self.se
        A[2, 1] = self.nL / self.s2
        return A

    @property
    def C(self):
        return -np.eye(3)

    @property
    def D(self):
        D = np.zeros((3, 3))
        D[0, 1] = 2.0
        D[2, 1] = -2.0 * self.nL
        return D

    # -- one-argument coefficient matrices ----------------------------------------
    def F11(self, x):
        z = np.zeros(np.shape(x))
        ac = self.d.a / (4.0 * self.d.eps * self.s1)
        return _as_field([
            [self.c1(x) / 2.0, self.c2(x), z],
            [ac * (self.c5(x) + self.c6(x)), z, z - self.nL / (2.0 * self.s1)],
            [z, z + self.nL / (2.0 * self.s2), z],
        ], x)

    def F12(self, x):
        z = np.zeros(np.shape(x))
        ac = self.d.a / (4.0 * self.d.eps * self.s1)
        return _as_field([
            [-self.c1(x) / 2.0, z, z],
            [ac * (self.c5(x) - self.c6(x)), z, z],
            [z, z, z],
        ], x)

    def F21(self, x):
        z = np.zeros(np.shape(x))
        ac = self.d.a / (4.0 * self.d.eps * self.s1)
        return _as_field([
            [self.c3(x) / 2.0, self.c4(x), z],
            [-ac * (self.c5(x) + self.c6(x)), z, z + self.nL / (2.0 * self.s1)],
            [z, z - self.nL / (2.0 * self.s2), z],
        ], x)

    def F22(self, x):
        z = np.zeros(np.shape(x))
        ac = self.d.a / (4.0 * self.d.eps * self.s1)
        return _as_field([
            [self.c3(x) / 2.0, z, z],
            [-ac * (self.c5(x) - self.c6(x)), z, z],
            [z, z, z],
        ], x)

    def F13(self, x):
        z = np.zeros(np.shape(x))
        n2 = (self.n * np.pi / self.d.L) ** 2
        return _as_field([
            [2.0 * n2 * self.c2(x), z, -2.0 * self.nL * self.c2(x)],
            [z, z - self.q2 / self.s1, z],
            [z + self.d.a * self.nL / (self.d.eps * self.s2), z, z - self.q2 / self.s2],
        ], x)

    def F23(self, x):
        z = np.zeros(np.shape(x))
        n2 = (self.n * np.pi / self.d.L) ** 2
        return _as_field([
            [2.0 * n2 * self.c4(x), z, -2.0 * self.nL * self.c4(x)],
            [z, z + self.q2 / self.s1, z],
            [z - self.d.a * self.nL / (self.d.eps * self.s2), z, z + self.q2 / self.s2],
        ], x)

    # -- two-argument coupling kernels --------------------------------------------
    # Each is a single separable product per entry; `separable` lists
    # (i, j, g, h) callables with entry value g(x) * h(y).

    def _sep_terms(self, name):
        n2se = self.n**2 * np.pi**2 / (2.0 * self.se * self.d.L**2)
        an = self.d.a * self.nL / (2.0 * self.d.eps * self.s2)
        one = lambda x: np.ones(np.shape(x), float)
        k1 = lambda x: np.exp(self.se * self.d.cbar1 * np.asarray(x, float))
        k2 = lambda x: np.exp(self.se * self.d.cbar2 * np.asarray(x, float))
        if name == "F14":
            return [
                (0, 0, lambda x: -n2se * k1(x), self.c5),
                (0, 2, lambda x: -self.nL * self.c2(x), one),
                (1, 1, lambda x: -self.q2 / (2.0 * self.s1) * one(x), one),
                (2, 0, lambda x: an * one(x), self.c5),
                (2, 2, lambda x: -self.q2 / (2.0 * self.s2) * one(x), one),
            ]
        if name == "F15":
            return [
                (0, 0, lambda x: -n2se * k1(x), self.c6),
                (0, 2, lambda x: -self.nL * self.c2(x), one),
                (1, 1, lambda x: -self.q2 / (2.0 * self.s1) * one(x), one),
                (2, 0, lambda x: an * one(x), self.c6),
                (2, 2, lambda x: -self.q2 / (2.0 * self.s2) * one(x), one),
            ]
        if name == "F24":
            return [
                (0, 0, lambda x: n2se * k2(x), self.c5),
                (0, 2, lambda x: -self.nL * self.c4(x), one),
                (1, 1, lambda x: self.q2 / (2.0 * self.s1) * one(x), one),
                (2, 0, lambda x: -an * one(x), self.c5),
                (2, 2, lambda x: self.q2 / (2.0 * self.s2) * one(x), one),
            ]
        if name == "F25":
            return [
                (0, 0, lambda x: n2se * k2(x), self.c6),
                (0, 2, lambda x: -self.nL * self.c4(x), one),
                (1, 1, lambda x: self.q2 / (2.0 * self.s1) * one(x), one),
                (2, 0, lambda x: -an * one(x), self.c6),
                (2, 2, lambda x: self.q2 / (2.0 * self.s2) * one(x), one),
            ]
        raise KeyError(name)

    def separable(self, name, x):
        """Sampled separable terms [(i, j, g(x), h(x)), ...] of a coupling kernel."""
        x = np.asarray(x, float)
        return [(i, j, g(x), h(x)) for i, j, g, h in self._sep_terms(name)]

    def _dense_xy(self, name, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        out = np.zeros(x.shape + (3, 3))
        for i, j, g, h in self._sep_terms(name):
            out[..., i, j] = g(x) * h(y)
        return out

    def F14(self, x, y):
        return self._dense_xy("F14", x, y)

    def F15(self, x, y):
        return self._dense_xy("F15", x, y)

    def F24(self, x, y):
        return self._dense_xy("F24", x, y)

    def F25(self, x, y):
        return self._dense_xy("F25", x, y)


def assemble_coefficients(d: DimensionlessParams, n: int) -> ModalCoefficients:
    """Build the mode-`n` coefficient bundle (matrices and functions)."""
    return ModalCoefficients(d, n)
