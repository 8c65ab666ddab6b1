"""Sine/cosine modal projection and reconstruction along the span.

Transverse deflection and the x-rotation use the sine basis sin(n*pi*y/L);
the y-rotation uses the cosine basis cos(n*pi*y/L).  Projections carry the
orthogonality factor 2/L (1/L for the cosine n=0 term) so that projecting a
reconstruction returns the coefficients.
"""

import numpy as np

from .exceptions import ConfigError

__all__ = ["basis_matrix", "project", "reconstruct", "parseval_weights"]


def _check(N, L):
    if N < 0 or int(N) != N:
        raise ConfigError(f"truncation order must be a nonnegative integer, got {N}")
    if L <= 0:
        raise ConfigError(f"span length must be positive, got {L}")


def basis_matrix(kind, N, L, ygrid):
    """Rows n=0..N of the basis sampled on ygrid; kind is 'sine' or 'cosine'."""
    _check(N, L)
    ygrid = np.asarray(ygrid, float)
    n = np.arange(N + 1)[:, None]
    arg = n * np.pi * ygrid[None, :] / L
    if kind == "sine":
        return np.sin(arg)
    if kind == "cosine":
        return np.cos(arg)
    raise ConfigError(f"basis kind must be 'sine' or 'cosine', got {kind!r}")


def project(field, kind, N, L, ygrid):
    """Modal coefficients of samples over a uniform y-grid on [0, L].

    `field` has y along its last axis; trapezoid quadrature.  Returns an
    array with a leading mode axis of length N+1.
    """
    _check(N, L)
    field = np.asarray(field, float)
    ygrid = np.asarray(ygrid, float)
    if field.shape[-1] != ygrid.size:
        raise ConfigError("field and ygrid length mismatch")
    B = basis_matrix(kind, N, L, ygrid)
    w = np.gradient(ygrid)  # trapezoid weights on a (uniform) grid
    w[0] = (ygrid[1] - ygrid[0]) / 2.0
    w[-1] = (ygrid[-1] - ygrid[-2]) / 2.0
    coeff = np.einsum("ny,...y->n...", B * w, field) * (2.0 / L)
    if kind == "cosine":
        coeff[0] /= 2.0
    else:
        coeff[0] = 0.0  # sine n=0 carries no content
    return coeff


def reconstruct(coeffs, kind, L, ygrid):
    """Sum the truncated series; mode axis of `coeffs` leads, y axis trails."""
    coeffs = np.asarray(coeffs, float)
    B = basis_matrix(kind, coeffs.shape[0] - 1, L, ygrid)
    return np.einsum("n...,ny->...y", coeffs, B)


def parseval_weights(kind, N, L):
    """L2(0, L) norm weights per mode: ||f||^2 = sum_n w_n ||f_n||^2."""
    _check(N, L)
    w = np.full(N + 1, L / 2.0)
    if kind == "cosine":
        w[0] = L
    else:
        w[0] = 0.0
    return w
