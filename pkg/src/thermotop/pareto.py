"""Level-set extraction of topologies from importance fields.

A topology at volume fraction ``v`` is the set of elements whose field value
exceeds a cut ``tau``, plus the protected elements.  ``tau`` is found by
binary search over the distinct field values; ties at ``tau`` are filled in
ascending element order so the result is deterministic and hits the target
element count exactly.

Mirror-symmetric problems produce fields whose mirrored values differ only
by solver round-off, and filling ties by index then breaks the symmetry one
element pair at a time.  ``tie_tol`` and ``max_group`` counter this: values
closer than ``tie_tol`` times the field range are treated as equal, and a
tie group of at most ``max_group`` elements that straddles the cut is
dropped whole, so the count may fall short of the target by less than one
group.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .grid import DesignState, VoxelGrid
from .sensitivity import SensitivityField

log = logging.getLogger(__name__)


class InfeasibleVolumeError(ValueError):
    def __init__(self, target_vf: float, min_vf: float):
        super().__init__(
            f"target volume fraction {target_vf:.4f} is below the protected fraction {min_vf:.4f}"
        )
        self.min_vf = min_vf


class LoadPathError(ValueError):
    """A protected element (load, support or prescribed temperature) lost its
    face connection to every anchor, so the solid region would float."""


@dataclass
class ThresholdResult:
    tau: float
    design: DesignState
    achieved_vf: float
    trace: list[tuple[float, int]] = field(default_factory=list)


def threshold_topology(
    field_values, target_vf: float, protected: np.ndarray, tie_tol: float = 0.0, max_group: int = 0
) -> ThresholdResult:
    values = field_values.values if isinstance(field_values, SensitivityField) else np.asarray(field_values, float)
    protected = np.asarray(protected, dtype=bool)
    n = values.size
    if protected.shape != values.shape:
        raise ValueError("field and protected mask differ in size")
    if not 0.0 < target_vf <= 1.0:
        raise ValueError(f"target volume fraction must lie in (0, 1], got {target_vf}")
    if not np.all(np.isfinite(values)):
        raise ValueError("sensitivity field must be finite on every element")
    if tie_tol > 0.0 and np.ptp(values) > 0.0:
        lo, step = values.min(), tie_tol * np.ptp(values)
        values = lo + np.round((values - lo) / step) * step
    target = int(round(target_vf * n))
    n_prot = int(protected.sum())
    if target < n_prot:
        raise InfeasibleVolumeError(target_vf, n_prot / n)

    free_idx = np.flatnonzero(~protected)
    free_vals = values[free_idx]
    need = target - n_prot
    trace: list[tuple[float, int]] = []
    if free_idx.size == 0:
        return ThresholdResult(np.inf, DesignState(protected.copy(), protected), n_prot / n, trace)

    levels = np.unique(free_vals)

    def above(tau):
        c = int(np.count_nonzero(free_vals > tau))
        trace.append((float(tau), n_prot + c))
        return c

    if need >= free_idx.size:
        tau = float(np.nextafter(levels[0], -np.inf))
        above(tau)
    else:
        # smallest level whose strict super-set fits in the budget
        lo, hi = 0, levels.size - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if above(levels[mid]) <= need:
                hi = mid
            else:
                lo = mid + 1
        tau = float(levels[lo])
    chosen = free_vals > tau
    short = need - int(chosen.sum())
    if short > 0:
        ties = np.flatnonzero(free_vals == tau)
        if ties.size > max_group:
            chosen[ties[:short]] = True
    solid = protected.copy()
    solid[free_idx[chosen]] = True
    design = DesignState(solid, protected)
    return ThresholdResult(tau, design, design.volume_fraction, trace)


def prune_disconnected(grid: VoxelGrid, design: DesignState, anchors: np.ndarray) -> DesignState:
    """Drop solid clusters that are not face-connected to an anchor element.

    Clusters joined only through an edge or a corner would act as hinges in
    the hard-kill stiffness matrix.  Protected elements are never dropped: if
    one of them is cut off, ``LoadPathError`` is raised instead.
    """
    solid = design.solid
    idx = np.flatnonzero(solid)
    fn = grid.face_neighbors[idx]
    rows = np.repeat(idx, fn.shape[1])
    cols = fn.ravel()
    keep = (cols >= 0) & solid[np.where(cols >= 0, cols, 0)]
    n = grid.n_elements
    adj = sp.coo_matrix((np.ones(keep.sum()), (rows[keep], cols[keep])), shape=(n, n))
    _, labels = connected_components(adj, directed=False)
    good = np.unique(labels[solid & anchors])
    connected = np.isin(labels, good) & solid
    if connected.sum() == solid.sum():
        return design
    cut = design.protected & ~connected
    if cut.any():
        raise LoadPathError(f"{int(cut.sum())} protected elements are detached from the supports")
    log.debug("pruned %d floating elements", int(solid.sum() - connected.sum()))
    return design.with_solid(connected)


@dataclass
class FixedPointResult:
    design: DesignState
    fields: object
    converged: bool
    iterations: int
    history: list[dict] = field(default_factory=list)
    tau: float = float("nan")


def fixed_point(
    design: DesignState,
    fields,
    target_vf: float,
    field_fn: Callable,
    analyze_fn: Callable,
    compliance_fn: Callable = lambda f: f.compliance,
    tol: float = 1e-2,
    max_inner: int = 5,
    postprocess: Callable | None = None,
    tie_tol: float = 0.0,
    max_group: int = 0,
) -> FixedPointResult:
    """Alternate thresholding, analysis and sensitivity at a fixed volume fraction.

    ``field_fn(design, fields)`` returns the importance field of a solved
    design; ``analyze_fn(design)`` solves a new design.  Stops when the
    compliance of two successive topologies differs by at most ``tol``
    (relative) or the topology repeats.  Exceptions from ``analyze_fn``
    propagate to the caller, which still holds the last valid design.
    """
    history = []
    J_prev = None
    tau = float("nan")
    for it in range(1, max_inner + 1):
        res = threshold_topology(field_fn(design, fields), target_vf, design.protected, tie_tol, max_group)
        new = res.design if postprocess is None else postprocess(res.design)
        tau = res.tau
        if new == design:
            history.append({"iteration": it, "tau": tau, "vf": new.volume_fraction, "J": compliance_fn(fields)})
            return FixedPointResult(design, fields, True, it, history, tau)
        new_fields = analyze_fn(new)
        J = compliance_fn(new_fields)
        history.append({"iteration": it, "tau": tau, "vf": new.volume_fraction, "J": J})
        design, fields = new, new_fields
        if J_prev is not None and abs(J - J_prev) <= tol * abs(J_prev):
            return FixedPointResult(design, fields, True, it, history, tau)
        J_prev = J
    return FixedPointResult(design, fields, False, max_inner, history, tau)
