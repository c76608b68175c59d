"""Weakly coupled thermo-elastic finite element analysis on voxel grids.

All elements of a grid share one reference element, so the element matrices
are computed once and every global operator is a weighted sum of the same
kernels.  Element weights are 1 for solid and 0 for void (hard-kill); other
values are only used by finite-difference checks that scale a single
element.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .grid import LOCAL_NODE_OFFSETS, BoundaryConditions, DesignState, Dirichlet, MaterialModel, VoxelGrid

log = logging.getLogger(__name__)

PHI = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
GAUSS = np.array([-1.0, 1.0]) / np.sqrt(3.0)
THREADS_ENV = "THERMOTOP_NUM_THREADS"


class SolverError(RuntimeError):
    """Raised when a linear solve cannot deliver a solution."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class ConvergenceError(SolverError):
    pass


class SingularSystemError(SolverError):
    pass


@dataclass
class SolverSettings:
    """Preconditioned CG settings.

    ``preconditioner`` is ``"jacobi"`` or ``"amg"`` (smoothed aggregation from
    pyamg, seeded with rigid-body modes).  ``max_iter=None`` means
    ``max(2000, 10 * sqrt(n))``.  With ``fallback`` an assembled Jacobi
    solve that hits the cap is retried once with AMG.
    """

    tol: float = 1e-8
    max_iter: int | None = None
    preconditioner: str = "jacobi"
    matrix_free: bool = False
    fallback: bool = True

    def __post_init__(self):
        if self.preconditioner not in ("jacobi", "amg"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        if not 0 < self.tol < 1:
            raise ValueError("solver tolerance must lie in (0, 1)")

    def iteration_cap(self, n: int) -> int:
        if self.max_iter is not None:
            return int(self.max_iter)
        return max(2000, int(10 * np.sqrt(n)))


# ---------------------------------------------------------------------------
# element kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ElementKernels:
    Ke: np.ndarray  # (24, 24)
    Kte: np.ndarray  # (8, 8)
    He: np.ndarray  # (24, 8)
    De: np.ndarray  # (6, 6)
    B_centroid: np.ndarray  # (6, 24)
    alpha: float
    volume: float

    @property
    def h(self) -> np.ndarray:
        """Thermal load per unit element-average temperature change (24,)."""
        return self.He.sum(axis=1)


def elasticity_matrix(E: float, nu: float) -> np.ndarray:
    """Isotropic 6x6 elasticity matrix, Voigt order 11, 22, 33, 12, 13, 23."""
    if nu >= 0.5:
        raise ValueError("elasticity matrix is singular for nu >= 0.5")
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    D = np.zeros((6, 6))
    D[:3, :3] = lam
    D[np.arange(3), np.arange(3)] = lam + 2.0 * mu
    D[np.arange(3, 6), np.arange(3, 6)] = mu
    return D


def _shape_gradients(xi, eta, zeta, spacing):
    """(8, 3) physical gradients of the trilinear shape functions."""
    s = 2.0 * LOCAL_NODE_OFFSETS - 1.0
    a = 1.0 + xi * s[:, 0]
    b = 1.0 + eta * s[:, 1]
    c = 1.0 + zeta * s[:, 2]
    dN = np.stack([s[:, 0] * b * c, a * s[:, 1] * c, a * b * s[:, 2]], axis=1) / 8.0
    return dN * (2.0 / np.asarray(spacing))


def strain_displacement(dN: np.ndarray) -> np.ndarray:
    """(6, 24) B matrix with engineering shear strains."""
    B = np.zeros((6, 24))
    for a in range(8):
        dx, dy, dz = dN[a]
        c = 3 * a
        B[0, c] = dx
        B[1, c + 1] = dy
        B[2, c + 2] = dz
        B[3, c], B[3, c + 1] = dy, dx
        B[4, c], B[4, c + 2] = dz, dx
        B[5, c + 1], B[5, c + 2] = dz, dy
    return B


def compute_element_kernels(material: MaterialModel, grid: VoxelGrid) -> ElementKernels:
    """Reference element matrices by 2x2x2 Gauss quadrature."""
    D = elasticity_matrix(material.E, material.nu)
    spacing = grid.spacing
    detJ = grid.element_volume / 8.0
    Ke = np.zeros((24, 24))
    Kte = np.zeros((8, 8))
    h = np.zeros(24)
    for xi in GAUSS:
        for eta in GAUSS:
            for zeta in GAUSS:
                dN = _shape_gradients(xi, eta, zeta, spacing)
                B = strain_displacement(dN)
                Ke += B.T @ D @ B * detJ
                Kte += material.k * dN @ dN.T * detJ
                h += B.T @ D @ PHI * material.alpha * detJ
    He = np.outer(h, np.full(8, 1.0 / 8.0))
    B0 = strain_displacement(_shape_gradients(0.0, 0.0, 0.0, spacing))
    return ElementKernels(
        Ke=0.5 * (Ke + Ke.T),
        Kte=0.5 * (Kte + Kte.T),
        He=He,
        De=D,
        B_centroid=B0,
        alpha=material.alpha,
        volume=grid.element_volume,
    )


# ---------------------------------------------------------------------------
# model bundle
# ---------------------------------------------------------------------------


@dataclass
class FEModel:
    """Grid, material, loads and solver settings of one analysis problem."""

    grid: VoxelGrid
    material: MaterialModel
    bc: BoundaryConditions
    solver: SolverSettings = field(default_factory=SolverSettings)
    n_solves: int = 0

    @cached_property
    def kernels(self) -> ElementKernels:
        return compute_element_kernels(self.material, self.grid)

    @cached_property
    def f_st(self) -> np.ndarray:
        return self.bc.structural_load(self.grid)

    @cached_property
    def _structural_pattern(self):
        return _sparsity(self.grid.element_dofs, self.grid.n_dofs)

    @cached_property
    def _thermal_pattern(self):
        return _sparsity(self.grid.element_nodes, self.grid.n_nodes)

    @property
    def t0(self) -> float:
        return self.material.t0

    def assemble(self, design, which: str = "structural") -> sp.csr_matrix:
        """Global sparse matrix of the weighted design (full DOF numbering)."""
        w = element_weights(design, self.grid.n_elements)
        if which == "structural":
            (indptr, indices, inverse), Ke, n = self._structural_pattern, self.kernels.Ke, self.grid.n_dofs
        elif which == "thermal":
            (indptr, indices, inverse), Ke, n = self._thermal_pattern, self.kernels.Kte, self.grid.n_nodes
        else:
            raise ValueError(f"unknown operator {which!r}")
        vals = (w[:, None] * Ke.ravel()[None, :]).ravel()
        data = np.bincount(inverse, weights=vals, minlength=len(indices))
        return sp.csr_matrix((data, indices, indptr), shape=(n, n))


def _sparsity(conn: np.ndarray, n: int):
    m = conn.shape[1]
    keys = (conn[:, :, None].astype(np.int64) * n + conn[:, None, :]).reshape(-1)
    ukeys, inverse = np.unique(keys, return_inverse=True)
    rows = ukeys // n
    indices = (ukeys % n).astype(np.int64)
    indptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=n))])
    assert inverse.size == conn.shape[0] * m * m
    return indptr, indices, inverse


def element_weights(design, n_elements: int) -> np.ndarray:
    """Float element weights from a DesignState, bool mask or weight array."""
    if isinstance(design, DesignState):
        w = design.solid.astype(float)
    else:
        w = np.asarray(design)
        w = w.astype(float) if w.dtype == bool else w.astype(float, copy=False)
    if w.shape != (n_elements,):
        raise ValueError(f"design has {w.shape} entries, grid has {n_elements} elements")
    return w


def _num_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def apply_operator(model: FEModel, design, which: str, x: np.ndarray) -> np.ndarray:
    """Matrix-free product ``K x`` (structural) or ``K_t x`` (thermal).

    Void elements are skipped entirely.  The element loop is split into
    chunks over ``THERMOTOP_NUM_THREADS`` worker threads.
    """
    grid = model.grid
    w = element_weights(design, grid.n_elements)
    if which == "structural":
        conn, Ke, n = grid.element_dofs, model.kernels.Ke, grid.n_dofs
    elif which == "thermal":
        conn, Ke, n = grid.element_nodes, model.kernels.Kte, grid.n_nodes
    else:
        raise ValueError(f"unknown operator {which!r}")
    x = np.asarray(x, dtype=float)
    if x.shape != (n,):
        raise ValueError(f"vector has length {x.shape}, operator expects {n}")
    active = np.flatnonzero(w)

    def work(elems):
        local = (x[conn[elems]] @ Ke) * w[elems, None]
        return np.bincount(conn[elems].ravel(), weights=local.ravel(), minlength=n)

    threads = _num_threads()
    if threads == 1 or active.size < 4 * threads:
        return work(active)
    with ThreadPoolExecutor(threads) as pool:
        return sum(pool.map(work, np.array_split(active, threads)))


def operator_diagonal(model: FEModel, design, which: str) -> np.ndarray:
    grid = model.grid
    w = element_weights(design, grid.n_elements)
    if which == "structural":
        conn, Ke, n = grid.element_dofs, model.kernels.Ke, grid.n_dofs
    else:
        conn, Ke, n = grid.element_nodes, model.kernels.Kte, grid.n_nodes
    vals = w[:, None] * np.diag(Ke)[None, :]
    return np.bincount(conn.ravel(), weights=vals.ravel(), minlength=n)


# ---------------------------------------------------------------------------
# conjugate gradient
# ---------------------------------------------------------------------------


def pcg(matvec, b, precond=None, tol=1e-8, max_iter=2000, x0=None):
    """Preconditioned conjugate gradient, from ``x0`` or a zero start.

    The stopping test is relative to ``||b||``, so a good initial guess
    shortens the iteration.  Returns ``(x, history)`` where ``history`` holds the relative residual
    after every iteration.  The final residual is recomputed from scratch, so
    the reported value is a true residual.
    """
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b)
    history = [1.0 if bnorm > 0 else 0.0]
    if bnorm == 0.0:
        return x, history
    if precond is None:
        precond = lambda r: r  # noqa: E731
    r = b.copy()
    if x0 is not None:
        x = np.array(x0, dtype=float)
        r = b - matvec(x)
        history[0] = np.linalg.norm(r) / bnorm
        if history[0] <= tol:
            return x, history
    it = 0
    for _restart in range(3):
        z = precond(r)
        p = z.copy()
        rz = r @ z
        while it < max_iter:
            Ap = matvec(p)
            pAp = p @ Ap
            if not pAp > 0.0:
                raise SingularSystemError(
                    f"CG breakdown at iteration {it} (p.Ap = {pAp:.3e}); operator singular or indefinite",
                    history,
                )
            a = rz / pAp
            x += a * p
            r -= a * Ap
            it += 1
            res = np.linalg.norm(r) / bnorm
            history.append(res)
            if res <= tol:
                break
            z = precond(r)
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
        r = b - matvec(x)
        history[-1] = np.linalg.norm(r) / bnorm
        if history[-1] <= tol:
            return x, history
        if it >= max_iter:
            break
    raise ConvergenceError(
        f"CG did not reach relative residual {tol:g} in {it} iterations (last {history[-1]:.3e})",
        history,
    )


def _rigid_body_modes(coords: np.ndarray) -> np.ndarray:
    n = coords.shape[0]
    B = np.zeros((3 * n, 6))
    for c in range(3):
        B[c::3, c] = 1.0
    x, y, z = (coords - coords.mean(axis=0)).T
    B[0::3, 3], B[1::3, 3] = -y, x
    B[1::3, 4], B[2::3, 4] = -z, y
    B[0::3, 5], B[2::3, 5] = z, -x
    return B


class ReducedSystem:
    """Linear system restricted to the free unknowns of one design.

    Built once per design and reused for the primal and adjoint solves.
    """

    def __init__(self, model: FEModel, design, which: str, free: np.ndarray):
        self.model = model
        self.which = which
        self.free = free
        self.n_full = model.grid.n_dofs if which == "structural" else model.grid.n_nodes
        self.weights = element_weights(design, model.grid.n_elements)
        settings = model.solver
        self.last_history: list[float] = []
        self.n_fallbacks = 0
        if settings.matrix_free:
            self.A = None
            diag = operator_diagonal(model, self.weights, which)[free]
        else:
            self.A = model.assemble(self.weights, which)[free][:, free].tocsr()
            diag = self.A.diagonal()
        if free.size and np.any(diag <= 0):
            raise SingularSystemError(f"{which} system has free unknowns with no stiffness")
        self._precond = None
        if settings.preconditioner == "amg" and self.A is not None and free.size > 64:
            self._precond = self._amg()
        else:
            inv = 1.0 / diag
            self._precond = lambda r: inv * r

    def _amg(self):
        import pyamg

        if self.which == "structural":
            B = _rigid_body_modes(self.model.grid.node_coords)[self.free]
        else:
            B = np.ones((self.free.size, 1))
        ml = pyamg.smoothed_aggregation_solver(self.A, B=B, max_coarse=200)
        return ml.aspreconditioner(cycle="V").matvec

    def matvec(self, x):
        """Product with the reduced operator."""
        return self._matvec(x)

    def _matvec(self, x):
        if self.A is not None:
            return self.A @ x
        full = np.zeros(self.n_full)
        full[self.free] = x
        return apply_operator(self.model, self.weights, self.which, full)[self.free]

    def solve(self, rhs_full: np.ndarray, tol: float | None = None, guess: np.ndarray | None = None) -> np.ndarray:
        """Solve for the free unknowns; all other entries of the result are zero.

        ``guess`` is a full-length starting vector (e.g. the solution on a
        neighbouring design); only its free entries are used.
        """
        out = np.zeros(self.n_full)
        if self.free.size == 0:
            return out
        b = np.asarray(rhs_full)[self.free]
        settings = self.model.solver
        tol = tol or settings.tol
        cap = settings.iteration_cap(self.free.size)
        x0 = None if guess is None else np.asarray(guess)[self.free]
        try:
            x, history = pcg(self._matvec, b, self._precond, tol, cap, x0)
        except ConvergenceError as exc:
            # thin hard-kill members make Jacobi-CG stall; AMG copes with them
            if not (settings.fallback and settings.preconditioner == "jacobi" and self.A is not None):
                raise
            log.info("%s; retrying with AMG preconditioner", exc)
            self._precond = self._amg()
            self.n_fallbacks += 1
            x, history = pcg(self._matvec, b, self._precond, tol, cap, x0)
        self.model.n_solves += 1
        self.last_history = history
        out[self.free] = x
        return out


# ---------------------------------------------------------------------------
# thermal problem
# ---------------------------------------------------------------------------


def structural_system(model: FEModel, design) -> ReducedSystem:
    grid = model.grid
    w = element_weights(design, grid.n_elements)
    solid = w > 0
    if not solid.any():
        raise SingularSystemError("design has no solid elements")
    if model.bc.fixed_dofs.size == 0:
        raise SingularSystemError("structural solve requires fixed DOFs")
    active = np.zeros(grid.n_dofs, dtype=bool)
    active[grid.element_dofs[solid].ravel()] = True
    active[model.bc.fixed_dofs] = False
    return ReducedSystem(model, w, "structural", np.flatnonzero(active))


def thermal_system(model: FEModel, design) -> ReducedSystem:
    grid = model.grid
    bc = model.bc
    if not isinstance(bc.thermal, Dirichlet):
        raise ValueError("thermal solve requested in uniform temperature mode")
    w = element_weights(design, grid.n_elements)
    solid = w > 0
    if not solid.any():
        raise SingularSystemError("design has no solid elements")
    active = np.zeros(grid.n_nodes, dtype=bool)
    active[grid.element_nodes[solid].ravel()] = True
    prescribed = np.zeros(grid.n_nodes, dtype=bool)
    prescribed[np.asarray(bc.thermal.nodes, dtype=np.int64)] = True
    _check_thermal_reachability(grid, solid, active, prescribed)
    return ReducedSystem(model, w, "thermal", np.flatnonzero(active & ~prescribed))


def _check_thermal_reachability(grid, solid, active, prescribed):
    conn = grid.element_nodes[solid]
    rows = np.repeat(conn[:, 0], 8)
    adj = sp.coo_matrix((np.ones(rows.size), (rows, conn.ravel())), shape=(grid.n_nodes, grid.n_nodes))
    _, labels = connected_components(adj, directed=False)
    anchored = np.unique(labels[active & prescribed])
    floating = active & ~np.isin(labels, anchored)
    if floating.any():
        raise SingularSystemError(
            f"{int(floating.sum())} nodes have no conduction path to a prescribed temperature"
        )


def solve_thermal(
    model: FEModel, design, system: ReducedSystem | None = None, guess: np.ndarray | None = None
) -> np.ndarray:
    """Nodal temperatures (C) from ``K_t t = q`` with prescribed temperatures.

    In uniform mode no solve happens and ``t = t0 + dt`` at every node.
    Nodes outside the solid region report ``t0``.
    """
    bc = model.bc
    if bc.is_uniform:
        return np.full(model.grid.n_nodes, model.t0 + bc.thermal.dt)
    system = system or thermal_system(model, design)
    t = np.full(model.grid.n_nodes, model.t0)
    nodes = np.asarray(bc.thermal.nodes, dtype=np.int64)
    t[nodes] = bc.thermal.values
    lifted = np.zeros(model.grid.n_nodes)
    lifted[nodes] = np.asarray(bc.thermal.values) - model.t0
    rhs = -apply_operator(model, system.weights, "thermal", lifted)
    if bc.thermal.flux is not None:
        rhs += bc.thermal.flux
    x0 = None if guess is None else guess - model.t0
    t[system.free] = model.t0 + system.solve(rhs, guess=x0)[system.free]
    return t


# ---------------------------------------------------------------------------
# structural problem
# ---------------------------------------------------------------------------


def element_mean_dt(model: FEModel, t: np.ndarray) -> np.ndarray:
    """Element-average temperature change (N,)."""
    return t[model.grid.element_nodes].mean(axis=1) - model.t0


def assemble_thermal_load(model: FEModel, design, t: np.ndarray) -> np.ndarray:
    """``f_th = sum_e He (t_e - t0)`` over solid elements."""
    grid = model.grid
    w = element_weights(design, grid.n_elements)
    dt = element_mean_dt(model, t) * w
    vals = dt[:, None] * model.kernels.h[None, :]
    return np.bincount(grid.element_dofs.ravel(), weights=vals.ravel(), minlength=grid.n_dofs)


def thermal_load_transpose(model: FEModel, design, v: np.ndarray) -> np.ndarray:
    """``H^T v``: nodal vector, each element spreading ``h.v_e / 8`` to its nodes."""
    grid = model.grid
    w = element_weights(design, grid.n_elements)
    per_elem = (v[grid.element_dofs] @ model.kernels.h) * w / 8.0
    return np.bincount(grid.element_nodes.ravel(), weights=np.repeat(per_elem, 8), minlength=grid.n_nodes)


def solve_structural(
    model: FEModel, design, f_th: np.ndarray, system: ReducedSystem | None = None, guess: np.ndarray | None = None
) -> np.ndarray:
    """Displacements from ``K d = f_st + f_th``; fixed and detached DOFs are zero."""
    system = system or structural_system(model, design)
    return system.solve(model.f_st + f_th, guess=guess)


def recover_stress(model: FEModel, design, d: np.ndarray, t: np.ndarray) -> np.ndarray:
    """(N, 6) centroid stress ``De (Bc d_e - alpha dt_e Phi)``; void rows are zero."""
    grid = model.grid
    k = model.kernels
    w = element_weights(design, grid.n_elements)
    strain = d[grid.element_dofs] @ k.B_centroid.T
    strain -= k.alpha * element_mean_dt(model, t)[:, None] * PHI[None, :]
    stress = strain @ k.De.T
    stress[w <= 0] = 0.0
    return stress


def compliance(d: np.ndarray, f_st: np.ndarray, f_th: np.ndarray) -> float:
    return float((f_st + f_th) @ d)


@dataclass
class Fields:
    """Solved state of one design."""

    solid: np.ndarray
    t: np.ndarray
    d: np.ndarray
    f_st: np.ndarray
    f_th: np.ndarray
    stress: np.ndarray
    weights: np.ndarray = field(repr=False, default=None)
    structural: ReducedSystem = field(repr=False, default=None)
    thermal: ReducedSystem | None = field(repr=False, default=None)

    def __post_init__(self):
        if self.weights is None:
            self.weights = self.solid.astype(float)

    @property
    def compliance(self) -> float:
        return compliance(self.d, self.f_st, self.f_th)


def analyze(model: FEModel, design, guess: Fields | None = None) -> Fields:
    """Thermal solve (if needed), structural solve and stress recovery.

    ``guess`` (fields of a nearby design) warm-starts both solves.
    """
    w = element_weights(design, model.grid.n_elements)
    tsys = None
    if not model.bc.is_uniform:
        tsys = thermal_system(model, w)
    t = solve_thermal(model, w, tsys, None if guess is None else guess.t)
    f_th = assemble_thermal_load(model, w, t)
    ssys = structural_system(model, w)
    d = solve_structural(model, w, f_th, ssys, None if guess is None else guess.d)
    stress = recover_stress(model, w, d, t)
    return Fields(w > 0, t, d, model.f_st.copy(), f_th, stress, w, ssys, tsys)


def load_ratio(fields: Fields) -> float:
    """``||f_th|| / ||f_st||`` over the unconstrained DOFs of the solved design."""
    free = fields.structural.free
    f_st = np.linalg.norm(fields.f_st[free])
    if f_st == 0.0:
        raise ValueError("structural load vanishes on the free DOFs")
    return float(np.linalg.norm(fields.f_th[free]) / f_st)
