"""Quantities of interest and their partial gradients.

Each quantity ``Q(d, t)`` exposes the partial gradients with respect to the
nodal displacements (``grad_d``) and nodal temperatures (``grad_t``), each
taken with the other field frozen.  ``explicit_sensitivity`` is the partial
derivative with respect to an element's weight at frozen ``d`` and ``t``;
only compliance has one, through the thermal load it carries.

Von Mises gradient
------------------
With ``s = sqrt(A/2)`` and ``A = sum (s_ii - s_jj)^2 + 6 sum s_ij^2``::

    ds/dsigma = v / (2 s)
    v = [2s11 - s22 - s33, 2s22 - s11 - s33, 2s33 - s11 - s22, 6s12, 6s13, 6s23]

so for ``Q = (sum_e s_e^p)^(1/p)``::

    dQ/dd_e = Q^(1-p) s_e^(p-2) F^T v_e / 2,     F = De Bc
    dQ/dt_i = -Q^(1-p) s_e^(p-2) v_e . G / 2,    G = alpha De Phi / 8

for each of the element's eight nodes ``i``.  These prefactors are checked
against central finite differences in the test-suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fea import PHI, FEModel, Fields, element_mean_dt, thermal_load_transpose


@dataclass(frozen=True)
class Compliance:
    name = "compliance"


@dataclass(frozen=True)
class PointDisplacement:
    """Signed displacement of one structural DOF."""

    dof: int
    name = "displacement"

    def __post_init__(self):
        if self.dof < 0:
            raise ValueError("DOF index must be non-negative")


@dataclass(frozen=True)
class PNormStress:
    p: float = 6.0
    name = "stress"

    def __post_init__(self):
        if self.p < 2:
            raise ValueError(f"p-norm exponent must be >= 2, got {self.p}")


QoIKind = Compliance | PointDisplacement | PNormStress


def von_mises(stress: np.ndarray) -> np.ndarray:
    """Von Mises stress of ``(..., 6)`` stress vectors (11, 22, 33, 12, 13, 23)."""
    s = np.asarray(stress, dtype=float)
    s11, s22, s33, s12, s13, s23 = np.moveaxis(s, -1, 0)
    A = (s11 - s22) ** 2 + (s11 - s33) ** 2 + (s22 - s33) ** 2 + 6.0 * (s12**2 + s13**2 + s23**2)
    return np.sqrt(0.5 * A)


def _vm_direction(stress: np.ndarray) -> np.ndarray:
    s11, s22, s33, s12, s13, s23 = np.moveaxis(stress, -1, 0)
    return np.stack(
        [2 * s11 - s22 - s33, 2 * s22 - s11 - s33, 2 * s33 - s11 - s22, 6 * s12, 6 * s13, 6 * s23],
        axis=-1,
    )


def pnorm_stress(stresses: np.ndarray, p: float = 6.0) -> float:
    """p-norm aggregate of the von Mises stresses of the given elements."""
    vm = von_mises(stresses) if np.ndim(stresses) == 2 else np.asarray(stresses, dtype=float)
    if vm.size == 0:
        raise ValueError("p-norm stress needs at least one solid element")
    top = vm.max()
    if top == 0.0:
        return 0.0
    return float(top * np.sum((vm / top) ** p) ** (1.0 / p))


def evaluate(qoi: QoIKind, model: FEModel, fields: Fields) -> float:
    if isinstance(qoi, Compliance):
        return fields.compliance
    if isinstance(qoi, PointDisplacement):
        return float(fields.d[qoi.dof])
    if isinstance(qoi, PNormStress):
        return pnorm_stress(fields.stress[fields.solid], qoi.p)
    raise TypeError(f"unknown quantity of interest {qoi!r}")


def _pnorm_weights(qoi: PNormStress, fields: Fields):
    """Per-element factor ``Q^(1-p) s^(p-2) / 2`` and direction ``v``."""
    vm = von_mises(fields.stress)
    vm[~fields.solid] = 0.0
    Q = pnorm_stress(vm[fields.solid], qoi.p)
    factor = np.zeros_like(vm)
    if Q > 0.0:
        nz = vm > 0.0
        # (s/Q)^(p-2) / Q == Q^(1-p) s^(p-2), overflow-free
        factor[nz] = 0.5 * (vm[nz] / Q) ** (qoi.p - 2.0) / Q
    return factor, _vm_direction(fields.stress)


def grad_d(qoi: QoIKind, model: FEModel, fields: Fields) -> np.ndarray:
    """Partial gradient of ``Q`` with respect to nodal displacements."""
    grid = model.grid
    if isinstance(qoi, Compliance):
        return fields.f_st + fields.f_th
    if isinstance(qoi, PointDisplacement):
        if qoi.dof >= grid.n_dofs:
            raise ValueError(f"DOF {qoi.dof} outside the {grid.n_dofs} structural DOFs")
        g = np.zeros(grid.n_dofs)
        g[qoi.dof] = 1.0
        return g
    if isinstance(qoi, PNormStress):
        factor, v = _pnorm_weights(qoi, fields)
        F = model.kernels.De @ model.kernels.B_centroid
        per_elem = factor[:, None] * (v @ F)
        return np.bincount(grid.element_dofs.ravel(), weights=per_elem.ravel(), minlength=grid.n_dofs)
    raise TypeError(f"unknown quantity of interest {qoi!r}")


def grad_t(qoi: QoIKind, model: FEModel, fields: Fields) -> np.ndarray:
    """Partial gradient of ``Q`` with respect to nodal temperatures."""
    grid = model.grid
    if isinstance(qoi, Compliance):
        # J = (f_st + H dt) . d  =>  H^T d
        return thermal_load_transpose(model, fields.weights, fields.d)
    if isinstance(qoi, PointDisplacement):
        return np.zeros(grid.n_nodes)
    if isinstance(qoi, PNormStress):
        factor, v = _pnorm_weights(qoi, fields)
        k = model.kernels
        G = k.alpha * (k.De @ PHI) / 8.0
        per_node = -factor * (v @ G)
        return np.bincount(
            grid.element_nodes.ravel(), weights=np.repeat(per_node, 8), minlength=grid.n_nodes
        )
    raise TypeError(f"unknown quantity of interest {qoi!r}")


def explicit_sensitivity(qoi: QoIKind, model: FEModel, fields: Fields) -> np.ndarray:
    """``dQ/dw_e`` at frozen fields, for every element."""
    grid = model.grid
    if isinstance(qoi, Compliance):
        dt = element_mean_dt(model, fields.t)
        return (fields.d[grid.element_dofs] @ model.kernels.h) * dt
    return np.zeros(grid.n_elements)


def qoi_from_name(name: str, p: float = 6.0, dof: int | None = None) -> QoIKind:
    if name == "compliance":
        return Compliance()
    if name == "stress":
        return PNormStress(p)
    if name == "displacement":
        if dof is None:
            raise ValueError("displacement quantity needs a DOF index")
        return PointDisplacement(int(dof))
    raise ValueError(f"unknown quantity of interest {name!r}")


__all__ = [
    "Compliance",
    "PointDisplacement",
    "PNormStress",
    "QoIKind",
    "von_mises",
    "pnorm_stress",
    "evaluate",
    "grad_d",
    "grad_t",
    "explicit_sensitivity",
    "qoi_from_name",
]
