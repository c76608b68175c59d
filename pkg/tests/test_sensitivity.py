import numpy as np
import pytest
from conftest import cantilever

from thermotop import qoi as q
from thermotop.checks import check_design, check_model, tip_dof
from thermotop.fea import analyze
from thermotop.grid import BoundaryConditions, Dirichlet, MaterialModel, UniformDelta
from thermotop.sensitivity import (
    displacement_sensitivity_crosscheck,
    element_sensitivity,
    extend_to_void,
    finite_difference_sensitivity,
    normalize,
    raw_sensitivity,
    smooth_field,
    solve_adjoints,
)


@pytest.fixture(scope="module", params=["uniform", "dirichlet"])
def solved(request):
    model = check_model(request.param)
    solid = check_design(model)
    return model, solid, analyze(model, solid)


@pytest.mark.parametrize("name", ["compliance", "displacement", "stress"])
def test_adjoint_matches_central_differences(solved, name) -> None:
    model, solid, fields = solved
    qoi = q.qoi_from_name(name, 6.0, tip_dof(model))
    raw = raw_sensitivity(qoi, model, fields, solve_adjoints(qoi, model, fields, shortcut=False))
    rng = np.random.default_rng(7)
    for e in rng.choice(np.flatnonzero(solid), 10, replace=False):
        fd = finite_difference_sensitivity(qoi, model, solid, int(e))
        assert raw[e] == pytest.approx(fd, rel=0.02)


def test_compliance_adjoint_is_negative_displacement(solved) -> None:
    model, _, fields = solved
    adj = solve_adjoints(q.Compliance(), model, fields, shortcut=False)
    assert np.linalg.norm(adj.lam + fields.d) <= 1e-6 * np.linalg.norm(fields.d)
    assert adj.residual <= 1e-10


def test_displacement_crosscheck_agrees() -> None:
    model = check_model("dirichlet")
    fields = analyze(model, check_design(model))
    report = displacement_sensitivity_crosscheck(model, fields, tip_dof(model))
    assert report.max_relative <= 1e-8
    assert report.normwise_relative <= 1e-10


def test_zero_expansion_reduces_to_elastic_sensitivities() -> None:
    elastic = check_model("uniform")
    elastic.bc.thermal = UniformDelta(0.0)
    coupled = check_model("dirichlet", material=MaterialModel(alpha=0.0))
    solid = check_design(elastic)
    fe, fc = analyze(elastic, solid), analyze(coupled, solid)
    np.testing.assert_array_equal(fc.f_th, 0.0)
    Ke = elastic.kernels.Ke
    d_e = fe.d[elastic.grid.element_dofs]
    closed_form = -np.einsum("ei,ij,ej->e", d_e, Ke, d_e)
    for name in ("compliance", "displacement", "stress"):
        qoi = q.qoi_from_name(name, 6.0, tip_dof(elastic))
        a = element_sensitivity(qoi, elastic, fe).raw[solid]
        b = element_sensitivity(qoi, coupled, fc).raw[solid]
        assert np.max(np.abs(a - b)) <= 1e-12 * np.max(np.abs(a))
        if name == "compliance":
            assert np.max(np.abs(a - closed_form[solid])) <= 1e-12 * np.max(np.abs(a))


def test_uniform_and_constant_dirichlet_give_same_sensitivities() -> None:
    uni = cantilever(res=(4, 2, 2), dt=7.0)
    grid = uni.grid
    const = cantilever(res=(4, 2, 2))
    const.bc = BoundaryConditions(uni.bc.fixed_dofs, uni.bc.point_loads, thermal=Dirichlet(np.arange(grid.n_nodes), np.full(grid.n_nodes, 30.0)))
    solid = np.ones(grid.n_elements, bool)
    for qoi in (q.Compliance(), q.PNormStress()):
        a = element_sensitivity(qoi, uni, analyze(uni, solid)).raw
        b = element_sensitivity(qoi, const, analyze(const, solid)).raw
        np.testing.assert_allclose(b, a, rtol=1e-6, atol=1e-8 * np.abs(a).max())


@pytest.mark.parametrize("dt", [0.0, 2.0, 10.0, -5.0])
def test_removal_sign_agrees_with_sensitivity(dt) -> None:
    model = cantilever(res=(4, 4, 4), dims=(0.04, 0.04, 0.04), dt=dt)
    solid = np.ones(model.grid.n_elements, bool)
    fields = analyze(model, solid)
    raw = element_sensitivity(q.Compliance(), model, fields).raw
    agree = 0
    for e in range(model.grid.n_elements):
        trial = solid.copy()
        trial[e] = False
        dJ = analyze(model, trial).compliance - fields.compliance
        agree += np.sign(dJ) == np.sign(-raw[e])
    assert agree / model.grid.n_elements >= 0.95


def test_displacement_removal_sign_on_free_elements() -> None:
    model = cantilever(res=(3, 2, 1), dims=(0.03, 0.02, 0.01), dt=5.0)
    grid = model.grid
    qoi = q.PointDisplacement(3 * int(grid.select_nodes({0: 0.03, 1: 0.0})[0]) + 1)
    protected = grid.elements_touching(np.r_[model.bc.anchor_nodes(), model.bc.loaded_nodes(grid)])
    solid = np.ones(grid.n_elements, bool)
    fields = analyze(model, solid)
    raw = element_sensitivity(qoi, model, fields).raw
    for e in np.flatnonzero(~protected):
        trial = solid.copy()
        trial[e] = False
        change = analyze(model, trial).d[qoi.dof] - fields.d[qoi.dof]
        assert np.sign(change) == np.sign(-raw[e])


def test_importance_field_on_voids() -> None:
    model = check_model("uniform")
    solid = check_design(model)
    sf = element_sensitivity(q.Compliance(), model, analyze(model, solid))
    assert np.isnan(sf.raw[~solid]).all()
    assert np.isfinite(sf.values).all()
    np.testing.assert_array_equal(sf.values[solid], -sf.raw[solid])
    assert sf.normalized.min() == 0.0 and sf.normalized.max() == 1.0


def test_extend_to_void_rules() -> None:
    model = cantilever(res=(4, 1, 1))
    solid = np.array([True, False, False, True])
    values = np.array([2.0, np.nan, np.nan, 6.0])
    out = extend_to_void(model.grid, values, solid)
    assert out.tolist() == [2.0, 2.0, 6.0, 6.0]
    isolated = np.array([True, False, False, False])
    out = extend_to_void(model.grid, np.array([5.0, 0, 0, 0]), isolated)
    assert out.tolist() == [5.0, 5.0, 5.0, 5.0]
    with pytest.raises(ValueError):
        extend_to_void(model.grid, values, np.zeros(4, bool))


def test_normalize_and_smoothing() -> None:
    np.testing.assert_array_equal(normalize(np.array([3.0, 3.0])), [0.0, 0.0])
    np.testing.assert_allclose(normalize(np.array([1.0, 2.0, 5.0])), [0.0, 0.25, 1.0])
    model = cantilever(res=(3, 1, 1))
    np.testing.assert_allclose(smooth_field(model.grid, np.array([0.0, 3.0, 6.0])), [1.5, 3.0, 4.5])
