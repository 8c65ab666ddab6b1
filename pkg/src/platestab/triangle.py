"""Uniform grid on the triangle 0 <= y <= x <= 1 and characteristic-path tools.

The kernel equations are integral equations along straight characteristic
lines through the triangle.  This module provides the node layout, linear
interpolation (bilinear on interior cells, barycentric on the half-cells
along the hypotenuse), and precompiled quadrature rules that turn a nodal
right-hand-side field into path integrals from each node to its anchor on
the boundary.
"""

from dataclasses import dataclass

import numpy as np

__all__ = ["TriangleGrid", "PathRule", "build_path_rule", "interp1d_rule"]


class TriangleGrid:
    """Nodes (x_a, y_b) with 0 <= b <= a <= m-1, spacing 1/(m-1)."""

    def __init__(self, m: int):
        if m < 3:
            raise ValueError(f"triangle grid needs at least 3 points per edge, got {m}")
        self.m = int(m)
        self.delta = 1.0 / (self.m - 1)
        self.xs = np.linspace(0.0, 1.0, self.m)
        ia, ib = np.tril_indices(self.m)
        self.ia = ia.astype(np.int64)
        self.ib = ib.astype(np.int64)
        self.n_nodes = self.ia.size
        self.node_id = -np.ones((self.m, self.m), dtype=np.int64)
        self.node_id[self.ia, self.ib] = np.arange(self.n_nodes)
        self.xa = self.xs[self.ia]
        self.yb = self.xs[self.ib]
        # trapezoid weights W[a, b, s] for integrals over s in [x_b, x_a]
        m_ = self.m
        s = np.arange(m_)
        inside = (s[None, None, :] >= np.arange(m_)[None, :, None]) & (
            s[None, None, :] <= np.arange(m_)[:, None, None])
        W = inside.astype(float) * self.delta
        edge_lo = s[None, None, :] == np.arange(m_)[None, :, None]
        edge_hi = s[None, None, :] == np.arange(m_)[:, None, None]
        W[edge_lo & inside] *= 0.5
        W[edge_hi & inside] *= 0.5
        W[s, s, :] = 0.0  # empty interval [x_a, x_a]
        self.W = W

    def to_nodes(self, field):
        """Gather a dense (..., m, m) field to nodal vectors (..., n_nodes)."""
        return np.asarray(field)[..., self.ia, self.ib]

    def to_dense(self, nodal, fill=0.0):
        """Scatter nodal values back to a dense (..., m, m) array."""
        nodal = np.asarray(nodal)
        out = np.full(nodal.shape[:-1] + (self.m, self.m), fill, float)
        out[..., self.ia, self.ib] = nodal
        return out

    def interp_weights(self, X, Y):
        """Linear interpolation of nodal fields at points inside the triangle.

        Returns (cols, wts), each (4, npts); triangle half-cells along the
        hypotenuse use three points with a zero-weight pad.
        """
        X = np.clip(np.asarray(X, float), 0.0, 1.0)
        Y = np.clip(np.asarray(Y, float), 0.0, X)
        d = self.delta
        a = np.clip((X / d).astype(np.int64), 0, self.m - 2)
        b = np.clip((Y / d).astype(np.int64), 0, self.m - 2)
        b = np.minimum(b, a)
        fx = X / d - a
        fy = Y / d - b
        diag = b == a
        fy = np.where(diag, np.minimum(fy, fx), fy)

        cols = np.empty((4, X.size), dtype=np.int64)
        wts = np.empty((4, X.size))
        # interior cells: bilinear on the four corners
        cols[0] = self.node_id[a, b]
        cols[1] = self.node_id[a + 1, b]
        cols[2] = np.where(diag, self.node_id[a + 1, b + 1], self.node_id[a, np.minimum(b + 1, a)])
        cols[3] = self.node_id[a + 1, b + 1]
        w00 = (1 - fx) * (1 - fy)
        w10 = fx * (1 - fy)
        w01 = (1 - fx) * fy
        w11 = fx * fy
        # hypotenuse half-cells: barycentric on (a,b), (a+1,b), (a+1,b+1)
        wts[0] = np.where(diag, 1 - fx, w00)
        wts[1] = np.where(diag, fx - fy, w10)
        wts[2] = np.where(diag, fy, w01)
        wts[3] = np.where(diag, 0.0, w11)
        return cols, wts

    def interp_apply(self, cols, wts, nodal):
        """Evaluate nodal values at points given by precomputed weights."""
        return np.einsum("kp,kp->p", wts, nodal[cols])


# anchor kinds
HYP_DOWN = 0    # hypotenuse reached moving down-left
BOTTOM = 1      # edge y = 0
HYP_UP = 2      # hypotenuse reached moving up-right
RIGHT = 3       # edge x = 1


@dataclass
class PathRule:
    """Precompiled path quadrature for one kernel component.

    value(node) = sign * (path integral of the RHS field) + anchor data,
    with the anchor described by `kind` and the boundary coordinate `coord`
    (x on the hypotenuse or bottom edge, y on the right edge).
    """

    kind: np.ndarray
    coord: np.ndarray
    sign: float
    node_of_sample: np.ndarray
    cols: np.ndarray
    wts: np.ndarray
    n_nodes: int

    def integrate(self, rhs_nodal):
        vals = np.einsum("kp,kp->p", self.wts, rhs_nodal[self.cols])
        return self.sign * np.bincount(self.node_of_sample, weights=vals,
                                       minlength=self.n_nodes)


def _compile_paths(grid, x0, y0, dx, dy, sF, kind, coord, sign):
    """Assemble quadrature knots node + (dx,dy)*s for s in [0, sF] per node.

    Knots sit where the path crosses grid levels of its fastest-varying
    coordinate (plus both endpoints), so that paths in adjacent strips see
    the interpolation cells in the same phase; this keeps the kernel fields
    free of grid-parity wobble.
    """
    d_axis = max(np.abs(dx).max(), np.abs(dy).max())
    h = grid.delta / d_axis
    k = np.maximum(0, np.ceil(sF / h - 1e-9).astype(np.int64) - 1)
    Q = k + 2
    offs = np.concatenate([[0], np.cumsum(Q)])
    node_of_sample = np.repeat(np.arange(grid.n_nodes), Q)
    r = np.arange(offs[-1]) - offs[node_of_sample]
    sFn = sF[node_of_sample]
    kn = k[node_of_sample]
    last = r == Q[node_of_sample] - 1
    s = np.where(last, sFn, r * h)
    tail = sFn - kn * h  # length of the final (possibly short) interval
    wq = np.full(offs[-1], h)
    wq[r == 0] = h / 2.0
    wq[(r == kn) & ~last] = (h + tail[(r == kn) & ~last]) / 2.0
    wq[last] = tail[last] / 2.0
    single = kn == 0  # only the two endpoints
    wq[(r == 0) & single] = (sFn / 2.0)[(r == 0) & single]
    wq[last & single] = (sFn / 2.0)[last & single]
    Xs = x0[node_of_sample] + dx[node_of_sample] * s
    Ys = y0[node_of_sample] + dy[node_of_sample] * s
    cols, wts = grid.interp_weights(Xs, Ys)
    return PathRule(kind=kind, coord=coord, sign=sign,
                    node_of_sample=node_of_sample, cols=cols,
                    wts=wts * wq[None, :], n_nodes=grid.n_nodes)


def build_path_rule(grid, a, b, family, hyp_up_allowed=False):
    """Characteristic rule for a component with speed pair (a, b).

    family 'L': direction (-a, +b); always anchored on the hypotenuse.
    family 'K': direction (-a, -b); anchored on the hypotenuse when b < a and
        a*y - b*x >= 0 at the node, else on the bottom edge y = 0.
    family 'K_up': integrated against the flow, anchored up-right on the
        hypotenuse where the extension stays inside (only when
        hyp_up_allowed, i.e. b > a), else on the right edge x = 1.
    """
    x0, y0 = grid.xa.copy(), grid.yb.copy()
    n = grid.n_nodes
    if family == "L":
        sF = (x0 - y0) / (a + b)
        coord = x0 - a * sF
        return _compile_paths(grid, x0, y0, np.full(n, -a), np.full(n, b), sF,
                              np.full(n, HYP_DOWN), coord, +1.0)
    if family == "K":
        on_hyp = (b < a) & (a * y0 - b * x0 >= -1e-14)
        sF = np.where(on_hyp, (x0 - y0) / (a - b if a != b else 1.0), y0 / b)
        coord = x0 - a * sF
        kind = np.where(on_hyp, HYP_DOWN, BOTTOM)
        return _compile_paths(grid, x0, y0, np.full(n, -a), np.full(n, -b), sF,
                              kind, coord, +1.0)
    if family == "K_up":
        if hyp_up_allowed and b > a:
            s_hyp = (x0 - y0) / (b - a)
            x_hyp = x0 + a * s_hyp
            on_hyp = x_hyp <= 1.0 + 1e-14
        else:
            on_hyp = np.zeros(n, bool)
            s_hyp = np.zeros(n)
            x_hyp = np.zeros(n)
        s_right = (1.0 - x0) / a
        sF = np.where(on_hyp, s_hyp, s_right)
        coord = np.where(on_hyp, np.minimum(x_hyp, 1.0), y0 + b * s_right)
        kind = np.where(on_hyp, HYP_UP, RIGHT)
        return _compile_paths(grid, x0, y0, np.full(n, a), np.full(n, b), sF,
                              kind, coord, -1.0)
    raise ValueError(f"unknown path family {family!r}")


def interp1d_rule(xs, q):
    """Linear interpolation weights of grid values at query points q."""
    xs = np.asarray(xs)
    q = np.clip(np.asarray(q, float), xs[0], xs[-1])
    d = xs[1] - xs[0]
    i = np.clip(((q - xs[0]) / d).astype(np.int64), 0, xs.size - 2)
    f = (q - xs[i]) / d
    return (np.stack([i, i + 1]), np.stack([1.0 - f, f]))
