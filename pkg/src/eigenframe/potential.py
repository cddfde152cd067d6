"""Curl tests and reconstruction of potentials by staircase integration.

Given a frame and a verified length candidate b, the matrix field
L^T diag[b] L is the Hessian of the scalar potential being reconstructed;
given a verified speed candidate l, R diag[l] L is the Jacobian of the flux
map.  Integration runs along axis-ordered staircase paths with an adaptive
Gauss-Legendre 7/15 pair, and scalar potentials ride along the staircase as
an ODE state integrated with fixed-substep RK4.  Curl tests gate every
integration; path independence is checked by re-running the sweep with the
axis order reversed.

The chart-space boundary-value solver (solve_rich_beta) fills a grid with
the unique solution determined by one single-variable function per axis,
by Picard iteration of the axis-ordered Volterra integral form with
4th-order cumulative Simpson quadrature.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field as dc_field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import exprlang as ex
from .errors import (
    CurlViolationError,
    NotRankZeroError,
    QuadratureFailureError,
    StepFailureError,
)
from .geometry import (
    FrameSpec,
    RiemannChart,
    distinct_triple_mask,
    eval_frame_jets,
)
from .systems import BetaCandidate, LambdaCandidate, require_rich

DEFAULT_QUAD_TOL = 1e-10
DEFAULT_CURL_TOL = 1e-7
_RK_SUBSTEP = 0.01  # target substep length for staircase ODE states


# ---------------------------------------------------------------------------
# Matrix fields with exact first derivatives
# ---------------------------------------------------------------------------


class MatrixField:
    """An evaluable n x n matrix field M(x) with exact first derivatives.

    values(points) -> (m, N, N); value_grad(points) -> (V, G) with
    G[p, a, b, d] = dM[a,b]/dx_d.
    """

    def __init__(self, n: int, values_fn: Callable, value_grad_fn: Callable):
        self.n = n
        self._values = values_fn
        self._value_grad = value_grad_fn

    def values(self, points: np.ndarray) -> np.ndarray:
        return self._values(np.atleast_2d(np.asarray(points, dtype=float)))

    def value_grad(self, points: np.ndarray):
        return self._value_grad(np.atleast_2d(np.asarray(points, dtype=float)))


def _frame_with_grads(spec: FrameSpec, pts: np.ndarray):
    pts, R, Rgrad, _ = eval_frame_jets(spec, pts)
    L = np.linalg.inv(R)
    Lgrad = -np.einsum("mkp,mpqd,mqa->mkad", L, Rgrad, L, optimize=True)
    return pts, R, Rgrad, L, Lgrad


def length_hessian_field(spec: FrameSpec, cand: BetaCandidate) -> MatrixField:
    """M = L^T diag[b] L, the Hessian field of the scalar potential."""
    params = {**spec.params, **cand.params}

    def values(pts):
        _, R, _, _ = eval_frame_jets(spec, pts)
        L = np.linalg.inv(R)
        b = np.stack([ex.eval_scalar_many(e, pts, params) for e in cand.exprs], axis=1)
        return np.einsum("mka,mk,mkb->mab", L, b, L, optimize=True)

    def value_grad(pts):
        pts, R, Rgrad, L, Lgrad = _frame_with_grads(spec, pts)
        jets = [ex.eval_jet2_many(e, pts, params) for e in cand.exprs]
        b = np.stack([j.value for j in jets], axis=1)
        bg = np.stack([j.grad for j in jets], axis=1)
        V = np.einsum("mka,mk,mkb->mab", L, b, L, optimize=True)
        G = (
            np.einsum("mkad,mk,mkb->mabd", Lgrad, b, L, optimize=True)
            + np.einsum("mka,mkd,mkb->mabd", L, bg, L, optimize=True)
            + np.einsum("mka,mk,mkbd->mabd", L, b, Lgrad, optimize=True)
        )
        return V, G

    return MatrixField(spec.n, values, value_grad)


def flux_jacobian_field(spec: FrameSpec, cand: LambdaCandidate) -> MatrixField:
    """M = R diag[l] L, the Jacobian field of the flux map."""
    params = {**spec.params, **cand.params}

    def values(pts):
        _, R, _, _ = eval_frame_jets(spec, pts)
        L = np.linalg.inv(R)
        lam = np.stack([ex.eval_scalar_many(e, pts, params) for e in cand.exprs], axis=1)
        return np.einsum("mak,mk,mkb->mab", R, lam, L, optimize=True)

    def value_grad(pts):
        pts, R, Rgrad, L, Lgrad = _frame_with_grads(spec, pts)
        jets = [ex.eval_jet2_many(e, pts, params) for e in cand.exprs]
        lam = np.stack([j.value for j in jets], axis=1)
        lg = np.stack([j.grad for j in jets], axis=1)
        V = np.einsum("mak,mk,mkb->mab", R, lam, L, optimize=True)
        G = (
            np.einsum("makd,mk,mkb->mabd", Rgrad.transpose(0, 1, 2, 3), lam, L, optimize=True)
            + np.einsum("mak,mkd,mkb->mabd", R, lg, L, optimize=True)
            + np.einsum("mak,mk,mkbd->mabd", R, lam, Lgrad, optimize=True)
        )
        return V, G

    return MatrixField(spec.n, values, value_grad)


def hessian_field_from_expr(eta_expr, n: int, params: Mapping[str, float]) -> MatrixField:
    """Hessian field of a closed-form scalar, via exact symbolic derivatives
    (third derivatives are needed for the curl test)."""
    first = [ex.differentiate(eta_expr, i) for i in range(n)]
    second = [[ex.differentiate(first[i], j) for j in range(n)] for i in range(n)]

    def values(pts):
        m = pts.shape[0]
        V = np.empty((m, n, n))
        for i in range(n):
            for j in range(n):
                V[:, i, j] = ex.eval_scalar_many(second[i][j], pts, params)
        return V

    def value_grad(pts):
        m = pts.shape[0]
        V = np.empty((m, n, n))
        G = np.empty((m, n, n, n))
        for i in range(n):
            for j in range(n):
                jet = ex.eval_jet2_many(second[i][j], pts, params)
                V[:, i, j] = jet.value
                G[:, i, j, :] = jet.grad
        return V, G

    return MatrixField(n, values, value_grad)


def curl_residual(field: MatrixField, points: np.ndarray) -> float:
    """Max over rows k and pairs i<j of |d_i M[k,j] - d_j M[k,i]|,
    normalized by the field magnitude."""
    V, G = field.value_grad(points)
    curl = G - G.transpose(0, 1, 3, 2)  # [p,k,j,i] - [p,k,i,j]
    scale = 1.0 + np.abs(V).max() + np.abs(G).max()
    return float(np.abs(curl).max() / scale)


# ---------------------------------------------------------------------------
# Adaptive Gauss-Legendre quadrature (7/15 pair)
# ---------------------------------------------------------------------------

_G7 = np.polynomial.legendre.leggauss(7)
_G15 = np.polynomial.legendre.leggauss(15)


def _fixed_gauss(fvec, a: float, b: float, rule) -> np.ndarray:
    nodes, weights = rule
    x = 0.5 * (a + b) + 0.5 * (b - a) * nodes
    vals = fvec(x)
    return 0.5 * (b - a) * np.einsum("q,q...->...", weights, vals)

def adaptive_gauss_segment(
    fvec: Callable, a: float, b: float, tol: float = DEFAULT_QUAD_TOL, depth: int = 0
) -> np.ndarray:
    """Adaptive integral of a (vector-valued) function over [a, b]; the
    error estimate is the difference of 7- and 15-point Gauss rules."""
    coarse = _fixed_gauss(fvec, a, b, _G7)
    fine = _fixed_gauss(fvec, a, b, _G15)
    err = float(np.abs(fine - coarse).max())
    if err < tol or (b - a) < 1e-14:
        return fine
    if depth > 48:
        raise QuadratureFailureError(
            f"segment [{a}, {b}] did not converge (error {err:.3e} > {tol:.1e})"
        )
    mid = 0.5 * (a + b)
    return adaptive_gauss_segment(fvec, a, mid, tol / 2, depth + 1) + adaptive_gauss_segment(
        fvec, mid, b, tol / 2, depth + 1
    )


# ---------------------------------------------------------------------------
# Staircase integration
# ---------------------------------------------------------------------------


def _staircase_legs(base: np.ndarray, target: np.ndarray, order: Sequence[int]):
    """Axis-ordered legs from base to target: list of (axis, start_point,
    t0, t1) with the path holding earlier axes at target values."""
    legs = []
    current = np.array(base, dtype=float)
    for axis in order:
        start = current.copy()
        t0, t1 = current[axis], target[axis]
        if t0 != t1:
            legs.append((axis, start, t0, t1))
        current[axis] = t1
    return legs


def integrate_jacobian(
    field: MatrixField,
    base: Sequence[float],
    target: Sequence[float],
    quad_tol: float = DEFAULT_QUAD_TOL,
    curl_tol: float = DEFAULT_CURL_TOL,
    order: Optional[Sequence[int]] = None,
    check_curl: bool = True,
) -> np.ndarray:
    """The map F with DF = M and F(base) = 0, evaluated at target by line
    integrals along the axis-ordered staircase."""
    base = np.asarray(base, dtype=float)
    target = np.asarray(target, dtype=float)
    order = list(order) if order is not None else list(range(field.n))
    legs = _staircase_legs(base, target, order)
    if check_curl:
        probes = [0.5 * (base + target), base, target] + [
            leg[1] for leg in legs
        ]
        res = curl_residual(field, np.array(probes))
        if res > curl_tol:
            raise CurlViolationError(res, curl_tol)
    F = np.zeros(field.n)
    for axis, start, t0, t1 in legs:
        def column(ts, axis=axis, start=start):
            pts = np.tile(start, (len(ts), 1))
            pts[:, axis] = ts
            return field.values(pts)[:, :, axis]

        F = F + adaptive_gauss_segment(column, t0, t1, quad_tol)
    return F


# ---------------------------------------------------------------------------
# Potential grids
# ---------------------------------------------------------------------------


@dataclass
class PotentialGrid:
    axes: list  # per-variable node arrays
    values: dict  # name -> ndarray over the grid (vector fields have a trailing axis)
    base_point: tuple
    meta: dict = dc_field(default_factory=dict)

    def nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def to_json(self) -> str:
        payload = {
            "axes": [a.tolist() for a in self.axes],
            "base_point": list(self.base_point),
            "meta": self.meta,
            "values": {k: np.asarray(v).tolist() for k, v in self.values.items()},
        }
        return json.dumps(payload)

    def to_csv(self, var_names: Sequence[str]) -> str:
        out = io.StringIO()
        writer = csv.writer(out)
        names = []
        columns = []
        for key, arr in self.values.items():
            arr = np.asarray(arr)
            if arr.ndim == len(self.axes):
                names.append(key)
                columns.append(arr.ravel())
            else:
                for c in range(arr.shape[-1]):
                    names.append(f"{key}{c + 1}")
                    columns.append(arr[..., c].ravel())
        writer.writerow(list(var_names) + names)
        pts = self.nodes()
        for row_idx in range(pts.shape[0]):
            writer.writerow(
                [f"{v:.17g}" for v in pts[row_idx]]
                + [f"{col[row_idx]:.17g}" for col in columns]
        )
        return out.getvalue()


def _grid_axes(lo, hi, counts) -> list:
    return [np.linspace(lo[d], hi[d], counts[d]) for d in range(len(counts))]


def _base_node_index(axes: list, base: np.ndarray):
    """Grid index of the base point when it falls on a node, else None."""
    idx = []
    for d, axis in enumerate(axes):
        j = int(np.argmin(np.abs(axis - base[d])))
        if abs(axis[j] - base[d]) > 1e-12 * max(1.0, abs(base[d])):
            return None
        idx.append(j)
    return tuple(idx)


def _regauge(values: dict, axes: list, base: np.ndarray, scalar_keys, vector_keys):
    """Pin the gauge exactly at the base point when it is a grid node: the
    scalar fields and gradient fields are shifted by their base-node values
    (the shift is within quadrature error, so consistency residuals keep
    their meaning)."""
    idx = _base_node_index(axes, base)
    if idx is None:
        return
    for key in scalar_keys:
        if key in values:
            values[key] = values[key] - values[key][idx]
    for key in vector_keys:
        if key in values:
            values[key] = values[key] - values[key][idx]


def _sweep_vector_potential(
    field: MatrixField,
    base: np.ndarray,
    axes: list,
    quad_tol: float,
    order: Sequence[int],
) -> np.ndarray:
    """F with DF = M on the whole grid, one staircase sweep per axis in the
    given order; grid edges are integrated once each (shared-prefix paths)."""
    n = len(axes)
    shape = tuple(len(a) for a in axes)
    F = np.zeros(shape + (n,))
    corner = np.array([axes[d][0] for d in range(n)])
    F[(0,) * n] = integrate_jacobian(field, base, corner, quad_tol, check_curl=False)

    filled_shape = [1] * n

    def extend_along(axis):
        """Extend the filled block [0:filled] along one axis, edge by edge,
        batching the quadrature over all filled transverse nodes."""
        trans_shape = tuple(filled_shape[d] for d in range(n) if d != axis)
        trans_axes = [np.arange(s) for s in trans_shape]
        mesh = np.meshgrid(*trans_axes, indexing="ij") if trans_axes else []
        trans_idx = (
            np.stack([m.ravel() for m in mesh], axis=-1)
            if mesh
            else np.zeros((1, 0), dtype=int)
        )
        other_dims = [d for d in range(n) if d != axis]
        for k in range(1, len(axes[axis])):
            t0, t1 = axes[axis][k - 1], axes[axis][k]

            def columns(ts):
                npts = len(ts) * trans_idx.shape[0]
                pts = np.empty((trans_idx.shape[0], len(ts), n))
                for c, d in enumerate(other_dims):
                    pts[:, :, d] = axes[d][trans_idx[:, c]][:, None]
                pts[:, :, axis] = ts[None, :]
                vals = field.values(pts.reshape(npts, n))[:, :, axis]
                return vals.reshape(trans_idx.shape[0], len(ts), n).transpose(1, 0, 2)

            seg = adaptive_gauss_segment(columns, t0, t1, quad_tol)  # (ntrans, n)
            for row, tidx in enumerate(trans_idx):
                idx_prev = [0] * n
                idx_here = [0] * n
                for c, d in enumerate(other_dims):
                    idx_prev[d] = idx_here[d] = int(tidx[c])
                idx_prev[axis] = k - 1
                idx_here[axis] = k
                F[tuple(idx_here)] = F[tuple(idx_prev)] + seg[row]
        filled_shape[axis] = len(axes[axis])

    for axis in order:
        extend_along(axis)
    return F


def reconstruct_flux(
    spec: FrameSpec,
    cand: LambdaCandidate,
    base: Sequence[float],
    counts: Sequence[int],
    quad_tol: float = DEFAULT_QUAD_TOL,
    curl_tol: float = DEFAULT_CURL_TOL,
    box: Optional[tuple] = None,
) -> PotentialGrid:
    """Flux map f with Df = R diag[l] L and f(base) = 0 on a grid."""
    lo, hi = box if box is not None else (spec.domain_lo, spec.domain_hi)
    axes = _grid_axes(lo, hi, counts)
    base = np.asarray(base, dtype=float)
    field = flux_jacobian_field(spec, cand)
    probes = np.vstack([spec.sample_points(20), base[None, :]])
    res = curl_residual(field, probes)
    if res > curl_tol:
        raise CurlViolationError(res, curl_tol)
    F = _sweep_vector_potential(field, base, axes, quad_tol, order=list(range(spec.n)))
    F_rev = _sweep_vector_potential(
        field, base, axes, quad_tol, order=list(reversed(range(spec.n)))
    )
    path_res = float(np.abs(F - F_rev).max())
    values = {"f": F}
    _regauge(values, axes, base, scalar_keys=(), vector_keys=("f",))
    return PotentialGrid(
        axes=axes,
        values=values,
        base_point=tuple(base),
        meta={
            "curl_residual": res,
            "path_independence_residual": path_res,
            "quad_tol": quad_tol,
            "kind": "flux",
        },
    )


# ---------------------------------------------------------------------------
# Scalar potentials: staircase ODE sweep
# ---------------------------------------------------------------------------


def _rk4_leg(deriv, state: np.ndarray, t0: float, t1: float) -> np.ndarray:
    """Classic RK4 from t0 to t1 with substeps of at most _RK_SUBSTEP."""
    nsub = max(4, int(np.ceil(abs(t1 - t0) / _RK_SUBSTEP)))
    h = (t1 - t0) / nsub
    t = t0
    for _ in range(nsub):
        k1 = deriv(t, state)
        k2 = deriv(t + h / 2, state + h / 2 * k1)
        k3 = deriv(t + h / 2, state + h / 2 * k2)
        k4 = deriv(t + h, state + h * k3)
        state = state + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return state


def _ode_state_sweep(
    Mfield: MatrixField,
    Afield: Optional[MatrixField],
    base: np.ndarray,
    axes: list,
    order: Sequence[int],
    grad_at_base: Optional[np.ndarray] = None,
):
    """Propagate the state (grad, scalar[, flux-scalar]) along lattice
    staircases: d grad = M dx, d scalar = grad . dx, d q = grad . A dx."""
    n = len(axes)
    with_q = Afield is not None
    width = n + 1 + (1 if with_q else 0)
    shape = tuple(len(a) for a in axes)
    state = np.zeros(shape + (width,))

    def make_deriv(points_of_t, axis):
        def deriv(t, S):
            pts = points_of_t(t)
            M = Mfield.values(pts)[:, :, axis]  # (m, n) column
            out = np.zeros_like(S)
            out[:, :n] = M
            out[:, n] = S[:, axis]
            if with_q:
                A = Afield.values(pts)[:, :, axis]
                out[:, n + 1] = np.einsum("mk,mk->m", S[:, :n], A)
            return out

        return deriv

    # base -> grid corner
    corner = np.array([axes[d][0] for d in range(n)])
    S = np.zeros((1, width))
    if grad_at_base is not None:
        S[0, :n] = grad_at_base
    current = base.astype(float).copy()
    for axis in range(n):
        t0, t1 = current[axis], corner[axis]
        if t0 != t1:
            start = current.copy()

            def pts_of(t, axis=axis, start=start):
                p = start.copy()
                p[axis] = t
                return p[None, :]

            S = _rk4_leg(make_deriv(pts_of, axis), S, t0, t1)
        current[axis] = corner[axis]
    state[(0,) * n] = S[0]

    filled_shape = [1] * n
    for axis in order:
        other_dims = [d for d in range(n) if d != axis]
        trans_shape = tuple(filled_shape[d] for d in other_dims)
        mesh = np.meshgrid(*[np.arange(s) for s in trans_shape], indexing="ij")
        trans_idx = (
            np.stack([m.ravel() for m in mesh], axis=-1)
            if mesh
            else np.zeros((1, 0), dtype=int)
        )
        trans_pts = np.zeros((trans_idx.shape[0], n))
        for c, d in enumerate(other_dims):
            trans_pts[:, d] = axes[d][trans_idx[:, c]]
        # gather current state of the starting wall
        S = np.empty((trans_idx.shape[0], width))
        for row, tidx in enumerate(trans_idx):
            idx = [0] * n
            for c, d in enumerate(other_dims):
                idx[d] = int(tidx[c])
            S[row] = state[tuple(idx)]
        for k in range(1, len(axes[axis])):
            t0, t1 = axes[axis][k - 1], axes[axis][k]

            def pts_of(t, axis=axis, trans_pts=trans_pts):
                p = trans_pts.copy()
                p[:, axis] = t
                return p

            S = _rk4_leg(make_deriv(pts_of, axis), S, t0, t1)
            for row, tidx in enumerate(trans_idx):
                idx = [0] * n
                for c, d in enumerate(other_dims):
                    idx[d] = int(tidx[c])
                idx[axis] = k
                state[tuple(idx)] = S[row]
        filled_shape[axis] = len(axes[axis])
    grad = state[..., :n]
    scalar = state[..., n]
    q = state[..., n + 1] if with_q else None
    return grad, scalar, q


def reconstruct_eta(
    spec: FrameSpec,
    cand: BetaCandidate,
    base: Sequence[float],
    counts: Sequence[int],
    quad_tol: float = DEFAULT_QUAD_TOL,
    curl_tol: float = DEFAULT_CURL_TOL,
    box: Optional[tuple] = None,
) -> PotentialGrid:
    """Scalar potential with Hessian L^T diag[b] L, gauge-fixed so that the
    value and gradient vanish at the base point.

    The gradient grid is computed twice (staircase ODE state and adaptive
    quadrature of the Hessian rows); their agreement and the reversed-order
    sweep are recorded as consistency residuals.
    """
    lo, hi = box if box is not None else (spec.domain_lo, spec.domain_hi)
    axes = _grid_axes(lo, hi, counts)
    base = np.asarray(base, dtype=float)
    field = length_hessian_field(spec, cand)
    probes = np.vstack([spec.sample_points(20), base[None, :]])
    res = curl_residual(field, probes)
    if res > curl_tol:
        raise CurlViolationError(res, curl_tol)
    V = field.values(probes)
    sym = float(np.abs(V - V.transpose(0, 2, 1)).max() / (1.0 + np.abs(V).max()))
    grad, eta, _ = _ode_state_sweep(field, None, base, axes, order=list(range(spec.n)))
    grad_rev, eta_rev, _ = _ode_state_sweep(
        field, None, base, axes, order=list(reversed(range(spec.n)))
    )
    psi_quad = _sweep_vector_potential(field, base, axes, quad_tol, order=list(range(spec.n)))
    values = {"eta": eta, "grad_eta": grad, "psi": psi_quad}
    _regauge(values, axes, base, scalar_keys=("eta",), vector_keys=("grad_eta", "psi"))
    return PotentialGrid(
        axes=axes,
        values=values,
        base_point=tuple(base),
        meta={
            "curl_residual": res,
            "symmetry_residual": sym,
            "path_independence_residual": float(
                max(np.abs(eta - eta_rev).max(), np.abs(grad - grad_rev).max())
            ),
            "grad_consistency_residual": float(np.abs(grad - psi_quad).max()),
            "quad_tol": quad_tol,
            "kind": "eta",
        },
    )


def entropy_flux(
    spec: FrameSpec,
    lambda_cand: LambdaCandidate,
    beta_cand: BetaCandidate,
    base: Sequence[float],
    counts: Sequence[int],
    quad_tol: float = DEFAULT_QUAD_TOL,
    curl_tol: float = DEFAULT_CURL_TOL,
    box: Optional[tuple] = None,
) -> PotentialGrid:
    """Scalar q whose gradient is grad(eta) . (R diag[l] L), gauge q(base)=0.

    grad(eta) rides along the staircase as an ODE state driven by the
    Hessian field of the length candidate (or is evaluated directly when a
    closed-form potential is attached to the candidate).
    """
    lo, hi = box if box is not None else (spec.domain_lo, spec.domain_hi)
    axes = _grid_axes(lo, hi, counts)
    base = np.asarray(base, dtype=float)
    Mfield = length_hessian_field(spec, beta_cand)
    Afield = flux_jacobian_field(spec, lambda_cand)
    probes = np.vstack([spec.sample_points(20), base[None, :]])
    for f in (Mfield, Afield):
        res = curl_residual(f, probes)
        if res > curl_tol:
            raise CurlViolationError(res, curl_tol)
    # with a closed-form potential attached, q corresponds to that potential
    # (its base gradient seeds the state); otherwise to the gauge-fixed one
    grad0 = None
    if beta_cand.eta_expr is not None:
        grad0 = ex.eval_jet2(
            beta_cand.eta_expr, base, {**spec.params, **beta_cand.params}
        ).grad
    grad, eta, q = _ode_state_sweep(
        Mfield, Afield, base, axes, order=list(range(spec.n)), grad_at_base=grad0
    )
    _, _, q_rev = _ode_state_sweep(
        Mfield, Afield, base, axes, order=list(reversed(range(spec.n))), grad_at_base=grad0
    )
    # curl of w = grad(eta) . A at grid probes, using d(grad eta) = M
    nodes = PotentialGrid(axes, {}, tuple(base)).nodes()
    take = nodes[:: max(1, nodes.shape[0] // 40)]
    gflat = grad.reshape(-1, spec.n)[:: max(1, nodes.shape[0] // 40)]
    MV = Mfield.values(take)
    AV, AG = Afield.value_grad(take)
    # d_e w_d = sum_k M[e,k] A[k,d] + grad_k dA[k,d]/dx_e
    P = np.einsum("mek,mkd->mde", MV, AV, optimize=True)
    Q = np.einsum("mk,mkde->mde", gflat, AG, optimize=True)
    total = P + Q
    curl_w = total - total.transpose(0, 2, 1)
    wres = float(np.abs(curl_w).max() / (1.0 + np.abs(MV).max() + np.abs(AV).max()))
    if wres > 100 * curl_tol:
        raise CurlViolationError(wres, 100 * curl_tol)
    values = {"q": q, "eta": eta, "grad_eta": grad}
    _regauge(values, axes, base, scalar_keys=("q", "eta"), vector_keys=())
    return PotentialGrid(
        axes=axes,
        values=values,
        base_point=tuple(base),
        meta={
            "q_curl_residual": wres,
            "path_independence_residual": float(np.abs(q - q_rev).max()),
            "kind": "entropy-flux",
        },
    )


def affine_gauge_compare(
    points: np.ndarray, values: np.ndarray, reference: np.ndarray
) -> float:
    """Max residual of values - reference after removing the best-fit affine
    field a . u + b (the gauge freedom of scalar potentials)."""
    points = np.atleast_2d(points)
    diff = np.asarray(values, dtype=float).ravel() - np.asarray(reference, dtype=float).ravel()
    design = np.hstack([points, np.ones((points.shape[0], 1))])
    coef, *_ = np.linalg.lstsq(design, diff, rcond=None)
    return float(np.abs(diff - design @ coef).max())


# ---------------------------------------------------------------------------
# Chart-space boundary-value solver (rich, rank 0)
# ---------------------------------------------------------------------------


def cumulative_simpson(A: np.ndarray, dx: float, axis: int) -> np.ndarray:
    """4th-order cumulative integral along an axis (composite Simpson with a
    cubic-interpolation first step); node-only stencils."""
    A = np.moveaxis(A, axis, 0)
    npts = A.shape[0]
    if npts < 4:
        raise ValueError("cumulative_simpson needs at least 4 nodes per axis")
    out = np.zeros_like(A)
    out[1] = dx * (9 * A[0] + 19 * A[1] - 5 * A[2] + A[3]) / 24.0
    for k in range(2, npts):
        out[k] = out[k - 2] + dx * (A[k - 2] + 4 * A[k - 1] + A[k]) / 3.0
    return np.moveaxis(out, 0, axis)


def solve_rich_beta(
    spec: FrameSpec,
    chart: RiemannChart,
    boundary_fns: Sequence[Callable],
    base_w: Sequence[float],
    counts: Sequence[int],
    h: float,
    rank0_tol: float = 1e-7,
    max_sweeps: int = 400,
) -> PotentialGrid:
    """Solve the chart-space system d_i g^j = Z[j,i,j] g^j - Z[j,j,i] g^i
    (i != j) on a grid with data g^j = phi_j on the j-th axis through the
    base point.

    Requires a rich frame whose chart-space cross components vanish (rank-0
    condition).  The unique solution is computed by Picard iteration of the
    axis-ordered integral form; quadrature is 4th-order cumulative Simpson,
    so the grid error is O(h^4).
    """
    n = spec.n
    base_w = np.asarray(base_w, dtype=float)
    axes = [base_w[d] + h * np.arange(counts[d]) for d in range(n)]
    require_rich(spec, spec.sample_points(30), 1e-7)
    mesh = np.meshgrid(*axes, indexing="ij")
    w_pts = np.stack([m.ravel() for m in mesh], axis=-1)
    from .geometry import pullback_connection

    pb = pullback_connection(spec, chart, w_pts)
    shape = tuple(counts)
    Z = pb.Z.reshape(shape + (n, n, n))
    zscale = 1.0 + np.abs(Z).max()
    cross = float(np.abs(np.where(distinct_triple_mask(n)[None], pb.Z, 0.0)).max() / zscale)
    if cross > rank0_tol:
        raise NotRankZeroError(
            f"chart-space cross components do not vanish (max scaled {cross:.3e})"
        )
    gamma = [
        np.broadcast_to(
            boundary_fns[j](axes[j]).reshape(
                tuple(len(axes[j]) if d == j else 1 for d in range(n))
            ),
            shape,
        ).copy()
        for j in range(n)
    ]
    prev_delta = np.inf
    for sweep in range(max_sweeps):
        new = []
        for j in range(n):
            acc = np.broadcast_to(
                boundary_fns[j](axes[j]).reshape(
                    tuple(len(axes[j]) if d == j else 1 for d in range(n))
                ),
                shape,
            ).copy()
            for i in range(n):
                if i == j:
                    continue
                integrand = Z[..., j, i, j] * gamma[j] - Z[..., j, j, i] * gamma[i]
                slicer = tuple(
                    slice(None) if (d <= i or d == j) else slice(0, 1) for d in range(n)
                )
                cum = cumulative_simpson(integrand[slicer], h, axis=i)
                acc = acc + cum
            new.append(acc)
        delta = max(float(np.abs(new[j] - gamma[j]).max()) for j in range(n))
        gamma = new
        scale = 1.0 + max(float(np.abs(gmm).max()) for gmm in gamma)
        if delta < 1e-14 * scale:
            break
        if sweep > 60 and delta > prev_delta and delta > 1e-10 * scale:
            raise StepFailureError(
                f"Picard sweeps stopped contracting (delta {delta:.3e}) "
                f"after {sweep + 1} sweeps"
            )
        prev_delta = min(prev_delta, delta)
    else:
        raise StepFailureError(f"no convergence within {max_sweeps} sweeps")
    # a-posteriori residual of the PDE by central differences
    residual = 0.0
    for j in range(n):
        for i in range(n):
            if i == j:
                continue
            dnum = np.gradient(gamma[j], h, axis=i, edge_order=2)
            rhs = Z[..., j, i, j] * gamma[j] - Z[..., j, j, i] * gamma[i]
            residual = max(residual, float(np.abs(dnum - rhs).max()))
    return PotentialGrid(
        axes=axes,
        values={f"gamma{j + 1}": gamma[j] for j in range(n)},
        base_point=tuple(base_w),
        meta={
            "fd_residual": residual,
            "sweeps": sweep + 1,
            "h": h,
            "kind": "chart-space solution",
        },
    )
