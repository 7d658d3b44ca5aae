"""Off-grid sampling of gridded fields: bilinear and cubic B-spline backends.

Both backends accept single points ``(dim,)`` or batches ``(N, dim)``.  The
B-spline backend prefilters nodal values into control coefficients once per
field so the spline interpolates the nodal data exactly, and provides
analytic gradients and Hessians; the bilinear backend interpolates nodal
values and precomputed nodal gradients with the same multilinear weights.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .grid import GridSpec, OutsideDomainError, ScalarField, grid_gradient

BACKENDS = ("bilinear", "bspline")


@dataclass(frozen=True)
class InterpSample:
    """Interpolated value with derivatives at one off-grid point."""

    value: float
    gradient: np.ndarray
    hessian: np.ndarray | None = None


def _locate(spec: GridSpec, x, tol: float = 1e-9):
    """Cell index and fractional offset for points ``x``; raises when any
    point is outside the domain."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    u = spec.to_index_space(pts)
    n = np.asarray(spec.counts)
    bad = np.any((u < -tol) | (u > (n - 1) + tol), axis=-1)
    if np.any(bad):
        raise OutsideDomainError(
            f"{int(bad.sum())} of {len(pts)} sample point(s) outside the grid domain"
        )
    cell = np.clip(np.floor(u).astype(int), 0, n - 2)
    t = u - cell
    return cell, t, single


# ---------------------------------------------------------------------------
# cubic B-spline basis on a uniform knot sequence
# ---------------------------------------------------------------------------


def bspline_basis(t: np.ndarray, order: int = 0) -> np.ndarray:
    """Values (or ``order``-th derivatives w.r.t. t) of the four cubic
    B-spline basis functions covering the cell, shape ``t.shape + (4,)``."""
    t = np.asarray(t, dtype=float)
    out = np.empty(t.shape + (4,))
    if order == 0:
        s = 1.0 - t
        out[..., 0] = s * s * s / 6.0
        out[..., 1] = (3 * t**3 - 6 * t**2 + 4) / 6.0
        out[..., 2] = (-3 * t**3 + 3 * t**2 + 3 * t + 1) / 6.0
        out[..., 3] = t * t * t / 6.0
    elif order == 1:
        s = 1.0 - t
        out[..., 0] = -0.5 * s * s
        out[..., 1] = 0.5 * (3 * t * t - 4 * t)
        out[..., 2] = 0.5 * (-3 * t * t + 2 * t + 1)
        out[..., 3] = 0.5 * t * t
    elif order == 2:
        out[..., 0] = 1.0 - t
        out[..., 1] = 3 * t - 2
        out[..., 2] = 1 - 3 * t
        out[..., 3] = t
    else:
        raise ValueError("order must be 0, 1 or 2")
    return out


def bspline_prefilter(values: np.ndarray) -> np.ndarray:
    """Control coefficients such that the tensor-product cubic B-spline
    interpolates ``values`` at the nodes.

    Along each axis solves the tridiagonal system
    ``(c[i-1] + 4 c[i] + c[i+1]) / 6 = f[i]`` closed with replicated end
    coefficients (``c[-1] = c[0]``, ``c[n] = c[n-1]``).  The result is padded
    by one replicated layer per side, so evaluation stencils never index out
    of bounds.
    """
    c = np.asarray(values, dtype=float).copy()
    for axis in range(c.ndim):
        c = np.moveaxis(c, axis, 0)
        n = c.shape[0]
        ab = np.zeros((3, n))
        ab[0, 1:] = 1.0 / 6.0
        ab[1, :] = 4.0 / 6.0
        ab[1, 0] = ab[1, -1] = 5.0 / 6.0
        ab[2, :-1] = 1.0 / 6.0
        flat = c.reshape(n, -1)
        c = solve_banded((1, 1), ab, flat).reshape(c.shape)
        c = np.moveaxis(c, 0, axis)
    return np.pad(c, 1, mode="edge")


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------


class BilinearSampler:
    """Multilinear interpolation of nodal values and precomputed nodal
    gradients over the ``2**dim`` enclosing-voxel vertices.  No Hessian."""

    backend = "bilinear"
    has_hessian = False

    def __init__(self, field: ScalarField):
        self.field = field
        self.spec = field.spec
        # channel 0: value, channels 1..dim: nodal gradient components
        table = np.concatenate(
            [field.values[None], grid_gradient(field)], axis=0
        )
        self._table = table.reshape(1 + self.spec.dim, -1)
        self._corners = list(itertools.product((0, 1), repeat=self.spec.dim))

    def value_and_gradient(self, x):
        """Interpolated value and gradient at point(s) ``x``."""
        cell, t, single = _locate(self.spec, x)
        dim = self.spec.dim
        acc = 0.0
        for corner in self._corners:
            w = np.ones(len(t))
            for k, ck in enumerate(corner):
                w = w * (t[:, k] if ck else 1.0 - t[:, k])
            flat = self.spec.flat_index(cell + np.asarray(corner))
            acc = acc + w[None, :] * self._table[:, flat]
        vals = acc[0]
        grads = acc[1:].T
        if single:
            return float(vals[0]), grads[0]
        return vals, grads

    def sample(self, x) -> InterpSample:
        v, g = self.value_and_gradient(np.asarray(x, dtype=float))
        return InterpSample(value=v, gradient=g)


class BSplineSampler:
    """Tensor-product cubic B-spline interpolation with analytic gradient
    and Hessian (C2-continuous)."""

    backend = "bspline"
    has_hessian = True

    def __init__(self, field: ScalarField):
        self.field = field
        self.spec = field.spec
        self._coef = bspline_prefilter(field.values)

    def _gather(self, cell):
        # padded coefficient block of shape (N, 4[, 4[, 4]])
        dim = self.spec.dim
        offs = np.arange(4)
        if dim == 2:
            r = cell[:, 0, None] + offs
            c = cell[:, 1, None] + offs
            return self._coef[r[:, :, None], c[:, None, :]]
        r = cell[:, 0, None] + offs
        c = cell[:, 1, None] + offs
        z = cell[:, 2, None] + offs
        return self._coef[
            r[:, :, None, None], c[:, None, :, None], z[:, None, None, :]
        ]

    def _weights(self, t):
        dim = self.spec.dim
        w0 = [bspline_basis(t[:, k], 0) for k in range(dim)]
        w1 = [bspline_basis(t[:, k], 1) for k in range(dim)]
        w2 = [bspline_basis(t[:, k], 2) for k in range(dim)]
        return w0, w1, w2

    def value_and_gradient(self, x, with_hessian: bool = False):
        cell, t, single = _locate(self.spec, x)
        dim = self.spec.dim
        h = self.spec.spacing
        block = self._gather(cell)
        w0, w1, w2 = self._weights(t)
        if dim == 2:
            contract = lambda a, b: np.einsum("na,nab,nb->n", a, block, b)
            val = contract(w0[0], w0[1])
            grad = np.stack(
                [contract(w1[0], w0[1]) / h, contract(w0[0], w1[1]) / h], axis=-1
            )
            if with_hessian:
                hess = np.empty((len(t), 2, 2))
                hess[:, 0, 0] = contract(w2[0], w0[1]) / h**2
                hess[:, 1, 1] = contract(w0[0], w2[1]) / h**2
                hess[:, 0, 1] = hess[:, 1, 0] = contract(w1[0], w1[1]) / h**2
        else:
            contract = lambda a, b, c: np.einsum("na,nb,nc,nabc->n", a, b, c, block)
            val = contract(w0[0], w0[1], w0[2])
            grad = np.stack(
                [
                    contract(w1[0], w0[1], w0[2]) / h,
                    contract(w0[0], w1[1], w0[2]) / h,
                    contract(w0[0], w0[1], w1[2]) / h,
                ],
                axis=-1,
            )
            if with_hessian:
                hess = np.empty((len(t), 3, 3))
                hess[:, 0, 0] = contract(w2[0], w0[1], w0[2]) / h**2
                hess[:, 1, 1] = contract(w0[0], w2[1], w0[2]) / h**2
                hess[:, 2, 2] = contract(w0[0], w0[1], w2[2]) / h**2
                hess[:, 0, 1] = hess[:, 1, 0] = contract(w1[0], w1[1], w0[2]) / h**2
                hess[:, 0, 2] = hess[:, 2, 0] = contract(w1[0], w0[1], w1[2]) / h**2
                hess[:, 1, 2] = hess[:, 2, 1] = contract(w0[0], w1[1], w1[2]) / h**2
        if single:
            if with_hessian:
                return float(val[0]), grad[0], hess[0]
            return float(val[0]), grad[0]
        if with_hessian:
            return val, grad, hess
        return val, grad

    def sample(self, x) -> InterpSample:
        v, g, hh = self.value_and_gradient(np.asarray(x, dtype=float), with_hessian=True)
        return InterpSample(value=v, gradient=g, hessian=hh)


def get_sampler(field: ScalarField, backend: str = "bilinear"):
    if backend == "bilinear":
        return BilinearSampler(field)
    if backend == "bspline":
        return BSplineSampler(field)
    raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")


def sample_bilinear(field: ScalarField, x) -> InterpSample:
    return BilinearSampler(field).sample(x)


def sample_bspline(field: ScalarField, x) -> InterpSample:
    return BSplineSampler(field).sample(x)


def interp_weights(spec: GridSpec, x, backend: str = "bilinear"):
    """Stencil node indices and weights expressing interpolation at ``x`` as
    a weighted sum of nodal values.

    Returns ``(flat_indices, weights)`` for a single point or lists thereof
    for a batch.  Weights sum to 1 (partition of unity).  Used identically
    for grid-to-ray value interpolation and ray-to-grid system-matrix rows.
    Near the boundary, B-spline stencil nodes that would fall outside the
    grid are clamped onto the edge (replicate padding), merging weights.
    """
    cell, t, single = _locate(spec, x)
    dim = spec.dim
    n = np.asarray(spec.counts)
    out = []
    if backend == "bilinear":
        corners = list(itertools.product((0, 1), repeat=dim))
        for m in range(len(t)):
            idx = []
            wts = []
            for corner in corners:
                w = 1.0
                for k, ck in enumerate(corner):
                    w *= t[m, k] if ck else 1.0 - t[m, k]
                idx.append(spec.flat_index(cell[m] + np.asarray(corner)))
                wts.append(w)
            out.append((np.asarray(idx), np.asarray(wts)))
    elif backend == "bspline":
        offs = np.arange(-1, 3)
        for m in range(len(t)):
            per_axis_w = [bspline_basis(np.array(t[m, k]), 0) for k in range(dim)]
            per_axis_i = [np.clip(cell[m, k] + offs, 0, n[k] - 1) for k in range(dim)]
            if dim == 2:
                w = np.outer(per_axis_w[0], per_axis_w[1]).ravel()
                gi = np.stack(
                    np.meshgrid(per_axis_i[0], per_axis_i[1], indexing="ij"), -1
                ).reshape(-1, 2)
            else:
                w = np.einsum(
                    "a,b,c->abc", per_axis_w[0], per_axis_w[1], per_axis_w[2]
                ).ravel()
                gi = np.stack(
                    np.meshgrid(*per_axis_i, indexing="ij"), -1
                ).reshape(-1, 3)
            flat = spec.flat_index(gi)
            # clamped stencil nodes may coincide; merge their weights
            uniq, inv = np.unique(flat, return_inverse=True)
            wm = np.zeros(len(uniq))
            np.add.at(wm, inv, w)
            out.append((uniq, wm))
    else:
        raise ValueError(f"unknown backend {backend!r}")
    return out[0] if single else out
