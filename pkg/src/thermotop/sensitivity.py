"""Adjoint solves and per-element topological sensitivities.

For an element weight ``w_e`` (1 solid, 0 void) the derivative of a quantity
``Q(d, t)`` is::

    dQ/dw_e = -lam_e . (He dt_e) + omega_e . (Kte t_e) + lam_e . (Ke d_e) + dQ/dw_e|explicit

with the adjoints::

    K lam    = -grad_d Q
    K_t omega = H^T lam - grad_t Q      (only when temperatures are solved for)

Removing element ``e`` changes ``Q`` by about ``-dQ/dw_e``, so the importance
field handed to the level-set is ``-dQ/dw_e``: larger means removing the
element hurts more.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import qoi as q
from .fea import FEModel, Fields, analyze, apply_operator, element_mean_dt, element_weights, thermal_load_transpose
from .grid import VoxelGrid


@dataclass
class AdjointSet:
    lam: np.ndarray
    omega: np.ndarray | None
    g_t: np.ndarray | None
    residual: float


@dataclass
class SensitivityField:
    """Importance field over all elements.

    ``values`` is oriented so that larger means more important to keep and is
    defined on every element (void entries extended from solid neighbours).
    ``raw`` holds ``dQ/dw_e`` on solid elements and NaN on void ones.
    """

    values: np.ndarray
    raw: np.ndarray | None = None

    @property
    def normalized(self) -> np.ndarray:
        return normalize(self.values)


def normalize(values: np.ndarray) -> np.ndarray:
    """Affine map onto [0, 1]; a constant field maps to zeros."""
    v = np.asarray(values, dtype=float)
    lo, hi = v.min(), v.max()
    if hi > lo:
        return (v - lo) / (hi - lo)
    return v - lo


def solve_adjoints(qoi, model: FEModel, fields: Fields, shortcut: bool = True, tol: float | None = None) -> AdjointSet:
    """Structural adjoint ``lam`` and, for solved temperatures, thermal adjoint ``omega``.

    With ``shortcut`` the compliance adjoint is taken as ``-d`` without a
    solve (the system is self-adjoint).
    """
    gd = q.grad_d(qoi, model, fields)
    system = fields.structural
    if shortcut and isinstance(qoi, q.Compliance):
        lam = -fields.d
    else:
        lam = system.solve(-gd, tol=tol)
    free = system.free
    gnorm = np.linalg.norm(gd[free])
    residual = 0.0
    if gnorm > 0 and free.size:
        residual = float(np.linalg.norm(system.matvec(lam[free]) + gd[free]) / gnorm)

    if model.bc.is_uniform:
        return AdjointSet(lam, None, None, residual)
    gt = q.grad_t(qoi, model, fields)
    rhs = thermal_load_transpose(model, fields.weights, lam) - gt
    omega = fields.thermal.solve(rhs, tol=tol)
    return AdjointSet(lam, omega, -gt, residual)


def raw_sensitivity(qoi, model: FEModel, fields: Fields, adjoints: AdjointSet) -> np.ndarray:
    """``dQ/dw_e`` for every element (void elements included, unmasked)."""
    grid = model.grid
    k = model.kernels
    lam_e = adjoints.lam[grid.element_dofs]
    d_e = fields.d[grid.element_dofs]
    dt = element_mean_dt(model, fields.t)
    value = np.einsum("ei,ij,ej->e", lam_e, k.Ke, d_e)
    value -= (lam_e @ k.h) * dt
    if adjoints.omega is not None:
        t_e = fields.t[grid.element_nodes]
        value += np.einsum("ei,ij,ej->e", adjoints.omega[grid.element_nodes], k.Kte, t_e)
    value += q.explicit_sensitivity(qoi, model, fields)
    return value


def element_sensitivity(
    qoi, model: FEModel, fields: Fields, adjoints: AdjointSet | None = None, smooth: bool = False
) -> SensitivityField:
    if adjoints is None:
        adjoints = solve_adjoints(qoi, model, fields)
    raw = raw_sensitivity(qoi, model, fields, adjoints)
    raw[~fields.solid] = np.nan
    values = extend_to_void(model.grid, -raw, fields.solid)
    if smooth:
        values = smooth_field(model.grid, values)
    return SensitivityField(values, raw)


def extend_to_void(grid: VoxelGrid, values: np.ndarray, solid: np.ndarray) -> np.ndarray:
    """Give void elements the mean of their node-sharing solid neighbours.

    Void elements with no solid neighbour get the minimum solid value, so
    they are the last candidates for reintroduction.
    """
    out = np.array(values, dtype=float)
    if solid.all():
        return out
    if not solid.any():
        raise ValueError("cannot extend a field from an empty solid set")
    nb = grid.neighbors
    valid = nb >= 0
    nb_solid = valid & solid[np.where(valid, nb, 0)]
    nb_vals = np.where(nb_solid, out[np.where(valid, nb, 0)], 0.0)
    count = nb_solid.sum(axis=1)
    void = ~solid
    ring = void & (count > 0)
    out[ring] = nb_vals[ring].sum(axis=1) / count[ring]
    out[void & (count == 0)] = out[solid].min()
    return out


def smooth_field(grid: VoxelGrid, values: np.ndarray) -> np.ndarray:
    """One pass of averaging each element with its node-sharing neighbours."""
    nb = grid.neighbors
    valid = nb >= 0
    total = values + np.where(valid, values[np.where(valid, nb, 0)], 0.0).sum(axis=1)
    return total / (1 + valid.sum(axis=1))


def finite_difference_sensitivity(qoi, model: FEModel, design, element: int, eps: float = 1e-4) -> float:
    """Central difference of ``Q`` when element ``element``'s kernels are scaled by ``1 +- eps``.

    Independent of the adjoint path: two full analyses and direct evaluation.
    """
    w = element_weights(design, model.grid.n_elements).copy()
    base = w[element]
    w[element] = base * (1.0 + eps)
    qp = q.evaluate(qoi, model, analyze(model, w))
    w[element] = base * (1.0 - eps)
    qm = q.evaluate(qoi, model, analyze(model, w))
    return (qp - qm) / (2.0 * eps * base)


@dataclass
class CrosscheckReport:
    adjoint_form: np.ndarray
    direct_form: np.ndarray
    max_relative: float
    normwise_relative: float


def displacement_sensitivity_crosscheck(model: FEModel, fields: Fields, dof: int, tol: float = 1e-12) -> CrosscheckReport:
    """Compare the adjoint displacement sensitivity with direct differentiation.

    The direct route solves ``u = K^-1 e_a`` once and, per solid element, the
    temperature derivative ``t'_e = -K_t^-1 (K_te t)`` explicitly::

        d_a'_e = u . (He dt_e - Ke d_e) + (H^T u) . t'_e
    """
    grid = model.grid
    kern = model.kernels
    qoi = q.PointDisplacement(dof)
    adj = solve_adjoints(qoi, model, fields, tol=tol)
    form_a = raw_sensitivity(qoi, model, fields, adj)

    selector = np.zeros(grid.n_dofs)
    selector[dof] = 1.0
    u = fields.structural.solve(selector, tol=tol)
    u_e = u[grid.element_dofs]
    dt = element_mean_dt(model, fields.t)
    form_b = (u_e @ kern.h) * dt - np.einsum("ei,ij,ej->e", u_e, kern.Ke, fields.d[grid.element_dofs])
    if not model.bc.is_uniform:
        Htu = thermal_load_transpose(model, fields.weights, u)
        for e in np.flatnonzero(fields.solid):
            one = np.zeros(grid.n_elements)
            one[e] = 1.0
            dt_prime = -fields.thermal.solve(apply_operator(model, one, "thermal", fields.t), tol=tol)
            form_b[e] += Htu @ dt_prime

    solid = fields.solid
    a, b = form_a[solid], form_b[solid]
    scale = np.maximum(np.abs(a), np.abs(b))
    rel = np.divide(np.abs(a - b), scale, out=np.zeros_like(a), where=scale > 0)
    norm_a = np.linalg.norm(a)
    normwise = float(np.linalg.norm(a - b) / norm_a) if norm_a > 0 else 0.0
    return CrosscheckReport(form_a, form_b, float(rel.max(initial=0.0)), normwise)
