"""Volume-minimization driver: Pareto stepping with augmented-Lagrangian constraints.

The loop, starting from the full domain:

1. solve the current topology (thermal problem if needed, then structural);
2. evaluate constraints, update multipliers and penalties;
3. on any violation restore the last feasible topology, halve the volume
   decrement and retry, stopping once the decrement falls below its floor;
4. otherwise build the augmented importance field, extract the topology at
   ``v - dv`` and run the fixed-point iteration; a non-converged fixed point
   is handled like a violation;
5. accept the new volume fraction and repeat until the target is reached.

With ``dv_recover`` the decrement doubles again (up to its initial value)
after every feasible accepted step, so only repeated failures from one
design reach the floor.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import qoi as q
from .auglag import ConstraintState, aux_grad_coeff, normalized_violation
from .fea import FEModel, Fields, SolverError, analyze
from .grid import DesignState, mark_protected
from .pareto import LoadPathError, fixed_point, prune_disconnected
from .sensitivity import SensitivityField, element_sensitivity, normalize

log = logging.getLogger(__name__)

TERMINATIONS = ("vf_reached", "constraint_violated_at_floor", "fea_failure")


@dataclass
class OptimizerConfig:
    vf_target: float = 0.25
    dv: float = 0.025
    dv_min: float | None = None
    inner_tol: float = 1e-2
    inner_max: int = 5
    p: float = 6.0
    mu0: float = 100.0
    gamma0: float = 10.0
    zeta: float = 0.25
    eta: float = 10.0
    cg_tol: float = 1e-8
    preconditioner: str = "jacobi"
    smooth: bool = False
    history: bool = False
    prune: bool = True
    dv_recover: bool = False
    symmetric_ties: bool = False

    def __post_init__(self):
        if self.dv_min is None:
            self.dv_min = self.dv / 8.0
        if not 0.0 < self.vf_target < 1.0:
            raise ValueError(f"vf_target must lie in (0, 1), got {self.vf_target}")
        if not 0.0 < self.dv_min <= self.dv:
            raise ValueError("need 0 < dv_min <= dv")
        if self.p < 2:
            raise ValueError("p must be >= 2")
        if not 0.0 < self.zeta < 1.0:
            raise ValueError("zeta must lie in (0, 1)")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.inner_max < 1:
            raise ValueError("inner_max must be >= 1")


@dataclass
class ConstraintSpec:
    """``Q <= factor * Q0`` with ``Q0`` the full-domain value."""

    kind: str
    factor: float
    dof: int | None = None

    def __post_init__(self):
        if self.kind not in ("compliance", "stress", "displacement"):
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        if self.kind == "displacement" and self.dof is None:
            raise ValueError("displacement constraint needs a DOF")
        if not self.factor > 0:
            raise ValueError("constraint factor must be positive")


@dataclass
class Problem:
    model: FEModel
    constraints: list[ConstraintSpec]
    design: DesignState | None = None

    def __post_init__(self):
        if self.design is None:
            self.design = mark_protected(self.model.grid, self.model.bc)


@dataclass
class RunRecord:
    rows: list[dict] = field(default_factory=list)
    termination: str = ""
    J0: float = float("nan")
    sigma0: float = float("nan")
    references: dict = field(default_factory=dict)
    final_fields: Fields | None = field(default=None, repr=False)
    message: str = ""

    @property
    def final(self) -> dict:
        return self.rows[-1]

    @property
    def fea_count(self) -> int:
        return self.rows[-1]["fea_count"] if self.rows else 0

    def columns(self) -> list[str]:
        cols: list[str] = []
        for r in self.rows:
            cols.extend(c for c in r if c not in cols)
        return cols

    def to_csv(self, path) -> None:
        from .export import write_run_log

        write_run_log(self, path)


def compute_references(problem: Problem, p: float = 6.0) -> tuple[float, float]:
    """Full-domain compliance and p-norm stress."""
    full = problem.design.with_solid(np.ones(problem.design.n_elements, dtype=bool))
    fields = analyze(problem.model, full)
    return fields.compliance, q.pnorm_stress(fields.stress[fields.solid], p)


class _Run:
    def __init__(self, problem: Problem, config: OptimizerConfig, callback: Callable | None):
        self.problem = problem
        self.config = config
        self.model = problem.model
        self.callback = callback
        self.stress_qoi = q.PNormStress(config.p)
        self.anchors = problem.model.grid.elements_touching(problem.model.bc.anchor_nodes())
        self.t_start = time.perf_counter()
        self.fea_start = problem.model.n_solves
        self.prev_field = None

    def qoi_for(self, spec: ConstraintSpec):
        return q.qoi_from_name(spec.kind, self.config.p, spec.dof)

    def analyze(self, design: DesignState) -> Fields:
        # cold start on purpose: a warm start carries round-off from design to
        # design and slowly breaks the mirror symmetry of symmetric problems
        return analyze(self.model, design)

    def tie_options(self) -> dict:
        if not self.config.symmetric_ties:
            return {}
        # mirror orbits on a voxel grid have at most 8 elements
        return {"tie_tol": 1e-7, "max_group": 8}

    def postprocess(self, design: DesignState) -> DesignState:
        if not self.config.prune:
            return design
        return prune_disconnected(self.model.grid, design, self.anchors)

    def importance(self, state: ConstraintState, fields: Fields) -> SensitivityField:
        sf = element_sensitivity(state.qoi, self.model, fields, smooth=self.config.smooth)
        if state.limit < 0:
            sf = SensitivityField(-sf.values, sf.raw)
        return sf

    def augmented_field(self, design: DesignState, fields: Fields) -> np.ndarray:
        current = normalize(self._augmented_field(design, fields))
        if self.config.history and self.prev_field is not None:
            current = 0.5 * (current + self.prev_field)
        self.prev_field = current
        return current

    def _augmented_field(self, design: DesignState, fields: Fields) -> np.ndarray:
        coeffs = [aux_grad_coeff(normalized_violation(q.evaluate(s.qoi, self.model, fields), s.limit), s.mu, s.gamma) for s in self.states]
        if not any(c > 0 for c in coeffs):
            # every constraint inactive: the Lagrangian gradient is flat, so
            # order elements by the constraints' own fields, equally weighted
            coeffs = [1.0] * len(self.states)
        total = np.zeros(design.n_elements)
        for c, s in zip(coeffs, self.states):
            if c > 0:
                total += c * self.importance(s, fields).normalized
        return total

    def row(self, step, design, fields, vf_nominal, dv, inner, tau) -> dict:
        J = fields.compliance
        sigma = q.pnorm_stress(fields.stress[fields.solid], self.config.p)
        r = {
            "step": step,
            "vf": design.volume_fraction,
            "vf_nominal": vf_nominal,
            "dv": dv,
            "J_ratio": J / self.J0,
            "sigma_ratio": sigma / self.sigma0 if self.sigma0 > 0 else float("nan"),
        }
        for s in self.states:
            r[f"{s.name}_g"] = s.g
            r[f"{s.name}_mu"] = s.mu
            r[f"{s.name}_gamma"] = s.gamma
        r["inner"] = inner
        r["tau"] = tau
        r["fea_count"] = self.model.n_solves - self.fea_start
        r["wall_time"] = time.perf_counter() - self.t_start
        return r

    def run(self) -> tuple[DesignState, RunRecord]:
        cfg = self.config
        problem = self.problem
        N = problem.design.n_elements
        record = RunRecord()
        design = problem.design.with_solid(np.ones(N, dtype=bool))
        fields = self.analyze(design)
        self.J0 = fields.compliance
        self.sigma0 = q.pnorm_stress(fields.stress[fields.solid], cfg.p)
        record.J0, record.sigma0 = self.J0, self.sigma0

        self.states = []
        names: dict[str, int] = {}
        for spec in problem.constraints:
            qoi = self.qoi_for(spec)
            q0 = q.evaluate(qoi, self.model, fields)
            if q0 == 0.0:
                raise ValueError(f"{spec.kind} constraint has zero reference value; cannot normalize")
            name = spec.kind if spec.kind not in names else f"{spec.kind}{names[spec.kind] + 1}"
            names[spec.kind] = names.get(spec.kind, 0) + 1
            self.states.append(ConstraintState(name, qoi, spec.factor * q0, mu=cfg.mu0, gamma=cfg.gamma0))
            record.references[name] = q0

        target_count = int(round(cfg.vf_target * N))
        vf_nominal = 1.0
        dv = cfg.dv
        last_good: tuple | None = None
        step = 0
        k = 0
        inner, tau = 0, float("nan")
        recorded = None
        restored = False
        while True:
            if not restored:
                # multipliers and penalties move once per new topology
                k += 1
                for s in self.states:
                    s.update(q.evaluate(s.qoi, self.model, fields), k, cfg.zeta, cfg.eta)
            restored = False
            if any(s.g > 0 for s in self.states):
                if last_good is None:
                    record.termination = "constraint_violated_at_floor"
                    record.message = "constraints violated on the full domain"
                    break
                design, fields, vf_nominal = last_good
                self.prev_field = good_field
                dv /= 2.0
                log.info("constraint violated; restoring vf=%.4f, dv=%.5f", design.volume_fraction, dv)
                if dv < cfg.dv_min:
                    record.termination = "constraint_violated_at_floor"
                    break
                for s in self.states:
                    s.value = q.evaluate(s.qoi, self.model, fields)
                restored = True
                continue

            last_good = (design, fields, vf_nominal)
            good_field = self.prev_field
            if recorded is not design:
                r = self.row(step, design, fields, vf_nominal, dv, inner, tau)
                record.rows.append(r)
                recorded = design
                if self.callback is not None:
                    self.callback(r, design)
                if cfg.dv_recover and step > 0:
                    # recover only once the new design has passed the constraint check
                    dv = min(2.0 * dv, cfg.dv)
            if design.n_solid <= target_count:
                record.termination = "vf_reached"
                break

            next_vf = max(vf_nominal - dv, cfg.vf_target)
            next_vf = min(next_vf, (design.n_solid - 1) / N)
            try:
                fp = fixed_point(
                    design,
                    fields,
                    next_vf,
                    self.augmented_field,
                    self.analyze,
                    tol=cfg.inner_tol,
                    max_inner=cfg.inner_max,
                    postprocess=self.postprocess,
                    **self.tie_options(),
                )
            except SolverError as exc:
                record.termination = "fea_failure"
                record.message = str(exc)
                log.warning("analysis failed: %s", exc)
                design, fields, vf_nominal = last_good
                break
            except LoadPathError as exc:
                # a topology that cuts the load path has unbounded compliance
                log.info("rejected step to vf=%.4f: %s", next_vf, exc)
                fp = None
            if fp is None or not fp.converged:
                self.prev_field = good_field
                dv /= 2.0
                if fp is not None:
                    log.info("fixed point not converged at vf=%.4f; dv=%.5f", next_vf, dv)
                if dv < cfg.dv_min:
                    record.termination = "constraint_violated_at_floor"
                    break
                restored = True
                continue
            step += 1
            design, fields, vf_nominal = fp.design, fp.fields, next_vf
            inner, tau = fp.iterations, fp.tau

        design, fields, _ = last_good if last_good is not None else (design, fields, vf_nominal)
        record.final_fields = fields
        if record.rows:
            record.rows[-1]["fea_count"] = self.model.n_solves - self.fea_start
        return design, record


def run(problem: Problem, config: OptimizerConfig | None = None, callback: Callable | None = None):
    """Optimize ``problem``; returns the final design and its run record.

    ``callback(row, design)`` is called once per accepted volume step.
    """
    config = config or OptimizerConfig()
    problem.model.solver.tol = config.cg_tol
    problem.model.solver.preconditioner = config.preconditioner
    return _Run(problem, config, callback).run()
