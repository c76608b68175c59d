import math

import numpy as np
import pytest

from thermotop import driver
from thermotop import qoi as q
from thermotop.auglag import ConstraintState
from thermotop.driver import ConstraintSpec, OptimizerConfig, Problem, compute_references, run
from thermotop.fea import ConvergenceError
from thermotop.problem import parse_problem
from thermotop.sensitivity import element_sensitivity, normalize

BEAM = """\
dims = 0.16 0.08 0.01
resolution = 32 16 1
fix = x=min
fix = x=max
load = x=0.08 y=min force=0,-1e5,0
thermal = uniform 1
constraint = compliance 5
vf_target = 0.5
history = true
smooth = true
"""


def optimize(*overrides):
    defn = parse_problem(BEAM, list(overrides))
    problem = defn.build()
    designs = []
    design, record = run(problem, defn.optimizer_config(), callback=lambda row, d: designs.append(d))
    return problem, design, record, designs


@pytest.fixture(scope="module")
def loose():
    return optimize()


@pytest.fixture(scope="module")
def binding():
    return optimize("resolution=24 12 1", "constraint=compliance 1.5", "constraint=stress 1.3")


def test_loose_constraints_stop_exactly_at_target(loose) -> None:
    problem, design, record, _ = loose
    assert record.termination == "vf_reached"
    assert design.n_solid == round(0.5 * design.n_elements)
    assert record.final["vf"] == 0.5
    assert all(r["compliance_g"] <= 0 for r in record.rows)


def test_active_constraint_stops_above_target(binding) -> None:
    _, design, record, _ = binding
    assert record.termination == "constraint_violated_at_floor"
    assert design.volume_fraction > 0.5
    final = record.final
    assert -0.05 < final["compliance_g"] <= 0.0
    assert final["J_ratio"] <= 1.5
    assert all(r["compliance_g"] <= 0 and r["stress_g"] <= 0 for r in record.rows)


@pytest.mark.parametrize("name", ["loose", "binding"])
def test_volume_fraction_strictly_decreases(name, request) -> None:
    _, _, record, designs = request.getfixturevalue(name)
    vf = [r["vf"] for r in record.rows]
    assert vf[0] == 1.0
    assert all(a > b for a, b in zip(vf, vf[1:]))
    assert [d.volume_fraction for d in designs] == vf


def test_returned_design_is_last_accepted(binding) -> None:
    problem, design, record, designs = binding
    assert np.array_equal(design.solid, designs[-1].solid)
    assert record.final_fields.compliance / record.J0 == pytest.approx(record.final["J_ratio"], rel=1e-12)
    assert np.array_equal(record.final_fields.solid, design.solid)
    assert design.protected.sum() > 0 and design.solid[design.protected].all()


def strip(rows):
    """Rows without wall time, NaN replaced so equal rows compare equal."""
    clean = lambda v: None if isinstance(v, float) and math.isnan(v) else v  # noqa: E731
    return [{k: clean(v) for k, v in r.items() if k != "wall_time"} for r in rows]


def test_run_is_deterministic(binding) -> None:
    _, design, record, _ = optimize("resolution=24 12 1", "constraint=compliance 1.5", "constraint=stress 1.3")
    assert strip(record.rows) == strip(binding[2].rows)
    assert design == binding[1]


def test_references_are_full_domain_values(loose) -> None:
    problem, _, record, _ = loose
    J0, sigma0 = compute_references(problem)
    assert record.J0 == pytest.approx(J0, rel=1e-8)
    assert record.sigma0 == pytest.approx(sigma0, rel=1e-8)
    assert record.references["compliance"] == record.J0
    assert record.rows[0]["J_ratio"] == 1.0


def test_multipliers_logged_per_constraint(binding) -> None:
    record = binding[2]
    for key in ("compliance_g", "compliance_mu", "compliance_gamma", "stress_g", "stress_mu", "stress_gamma"):
        assert key in record.columns()
    assert all(r["compliance_mu"] >= 0.0 and r["stress_mu"] >= 0.0 for r in record.rows)
    assert all(r["compliance_gamma"] >= 10.0 for r in record.rows)
    assert record.fea_count == record.rows[-1]["fea_count"] > len(record.rows)


def test_material_is_reintroduced(binding) -> None:
    designs = binding[3]
    revived = [
        (i, j) for i in range(len(designs)) for j in range(i + 1, len(designs)) if np.any(~designs[i].solid & designs[j].solid)
    ]
    assert revived


def test_doubling_the_load_quadruples_reference_compliance() -> None:
    base = parse_problem(BEAM, ["thermal=uniform 0"]).build()
    double = parse_problem(BEAM, ["thermal=uniform 0", "load=x=0.08 y=min force=0,-2e5,0"]).build()
    assert compute_references(double)[0] == pytest.approx(4 * compute_references(base)[0], rel=1e-8)


def test_infeasible_full_domain_stops_without_steps() -> None:
    problem, design, record, designs = optimize("resolution=8 4 1", "constraint=compliance 0.5")
    assert record.termination == "constraint_violated_at_floor"
    assert record.rows == [] and designs == []
    assert design.volume_fraction == 1.0
    assert "full domain" in record.message


def test_zero_reference_is_rejected() -> None:
    problem = parse_problem(BEAM, ["resolution=8 4 1"]).build()
    problem.constraints = [ConstraintSpec("displacement", 2.0, dof=0)]
    with pytest.raises(ValueError, match="zero reference"):
        run(problem)


def test_analysis_failure_keeps_last_accepted_design(monkeypatch) -> None:
    real = driver.analyze
    calls = []

    def flaky(model, design, guess=None):
        calls.append(1)
        if len(calls) > 4:
            raise ConvergenceError("CG did not converge", [1.0])
        return real(model, design, guess)

    monkeypatch.setattr(driver, "analyze", flaky)
    defn = parse_problem(BEAM, ["resolution=16 8 1"])
    design, record = run(defn.build(), defn.optimizer_config())
    assert record.termination == "fea_failure"
    assert "did not converge" in record.message
    assert math.isclose(design.volume_fraction, record.final["vf"])


@pytest.mark.parametrize(
    "kwargs,message",
    [
        ({"vf_target": 1.0}, "vf_target"),
        ({"dv": 0.01, "dv_min": 0.02}, "dv_min"),
        ({"p": 1.5}, "p must"),
        ({"zeta": 1.0}, "zeta"),
        ({"eta": 0.0}, "eta"),
        ({"inner_max": 0}, "inner_max"),
    ],
)
def test_config_validation(kwargs, message) -> None:
    with pytest.raises(ValueError, match=message):
        OptimizerConfig(**kwargs)


def test_default_floor_is_an_eighth_of_the_step() -> None:
    assert OptimizerConfig(dv=0.04).dv_min == 0.005


@pytest.mark.parametrize("kwargs", [{"kind": "volume", "factor": 1.0}, {"kind": "stress", "factor": 0.0}, {"kind": "displacement", "factor": 1.0}])
def test_constraint_spec_validation(kwargs) -> None:
    with pytest.raises(ValueError):
        ConstraintSpec(**kwargs)


def test_problem_defaults_to_protected_design() -> None:
    model = parse_problem(BEAM, ["resolution=8 4 1"]).build().model
    problem = Problem(model, [ConstraintSpec("compliance", 2.0)])
    assert problem.design.solid.all()
    assert problem.design.protected.sum() == 4 + 4 + 2


def test_inactive_constraints_order_by_their_own_field() -> None:
    defn = parse_problem(BEAM, ["constraint=stress 2"])
    problem = defn.build()
    state = driver._Run(problem, defn.optimizer_config(), None)
    design = problem.design.with_solid(np.ones(problem.design.n_elements, dtype=bool))
    fields = state.analyze(design)
    qoi = q.PNormStress(6.0)
    # g = -0.5 and mu = 0, so the Lagrangian coefficient mu + gamma * g is clipped to 0
    limit = 2.0 * q.evaluate(qoi, problem.model, fields)
    state.states = [ConstraintState("stress", qoi, limit, mu=0.0, gamma=10.0)]
    combined = state._augmented_field(design, fields)
    stress_field = state.importance(state.states[0], fields).normalized
    compliance_field = normalize(element_sensitivity(q.Compliance(), problem.model, fields, smooth=True).values)
    assert combined == pytest.approx(stress_field, rel=1e-12, abs=1e-15)
    assert not np.allclose(combined, compliance_field)


@pytest.mark.parametrize("recover", [False, True])
def test_halved_decrement_recovers_only_when_enabled(recover) -> None:
    _, _, record, _ = optimize("thermal=uniform 10", f"dv_recover={str(recover).lower()}")
    dvs = [r["dv"] for r in record.rows]
    first = next(i for i, dv in enumerate(dvs) if dv < 0.025)
    if recover:
        assert dvs[first + 1] == 0.025
    else:
        assert all(dv <= dvs[first] for dv in dvs[first:])


def test_symmetric_ties_give_a_mirror_symmetric_design() -> None:
    problem, design, record, _ = optimize("symmetric_ties=true")
    nx, ny, nz = problem.model.grid.shape
    solid = design.solid.reshape(nz, ny, nx)
    assert record.termination == "vf_reached"
    assert np.array_equal(solid, solid[:, :, ::-1])
