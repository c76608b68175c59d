import numpy as np
import pytest

from thermotop.grid import (
    BoundaryConditions,
    DesignState,
    Dirichlet,
    FacePressure,
    MaterialModel,
    UniformDelta,
    build_grid,
    mark_protected,
)


def test_counts_and_spacing() -> None:
    g = build_grid((0.5, 0.25, 0.02), (100, 50, 3))
    assert g.n_elements == 15000
    assert g.n_nodes == 101 * 51 * 4
    assert g.n_dofs == 3 * g.n_nodes
    assert g.spacing == pytest.approx((0.005, 0.005, 0.02 / 3))
    assert g.dims == pytest.approx((0.5, 0.25, 0.02))


@pytest.mark.parametrize("dims,res", [((1, 1, 0), (1, 1, 1)), ((1, 1, 1), (0, 1, 1)), ((1, -1, 1), (1, 1, 1))])
def test_build_grid_rejects_degenerate_input(dims, res) -> None:
    with pytest.raises(ValueError):
        build_grid(dims, res)


def test_element_nodes_follow_hex_ordering() -> None:
    g = build_grid((3.0, 2.0, 1.0), (3, 2, 1))
    corners = g.node_coords[g.element_nodes[0]]
    expected = [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]]
    np.testing.assert_allclose(corners, expected)
    np.testing.assert_allclose(g.element_centroids[g.element_index(2, 1, 0)], [2.5, 1.5, 0.5])


def test_every_node_belongs_to_its_elements() -> None:
    g = build_grid((1, 1, 1), (3, 2, 2))
    for n, elems in enumerate(g.node_elements):
        assert all(n in g.element_nodes[e] for e in elems)
    assert sum(len(e) for e in g.node_elements) == 8 * g.n_elements


def test_neighbor_tables() -> None:
    g = build_grid((1, 1, 1), (3, 3, 3))
    centre = g.element_index(1, 1, 1)
    assert np.all(g.neighbors[centre] >= 0)
    assert sorted(g.neighbors[centre]) == sorted(set(range(27)) - {centre})
    corner = g.element_index(0, 0, 0)
    assert np.count_nonzero(g.neighbors[corner] >= 0) == 7
    assert np.count_nonzero(g.face_neighbors[corner] >= 0) == 3
    assert np.count_nonzero(g.face_neighbors[centre] >= 0) == 6


def test_select_nodes_and_out_of_domain() -> None:
    g = build_grid((0.5, 0.25, 0.02), (10, 5, 1))
    assert g.select_nodes({0: 0.0}).size == 6 * 2
    assert g.select_nodes({0: 0.25, 1: 0.0}).size == 2
    with pytest.raises(ValueError, match="outside the domain"):
        g.select_nodes({0: 0.6})


def test_material_validation() -> None:
    with pytest.raises(ValueError, match="Poisson"):
        MaterialModel(nu=0.5)
    with pytest.raises(ValueError):
        MaterialModel(E=0.0)
    assert MaterialModel().t0 == 23.0


def test_pressure_load_sums_to_force() -> None:
    g = build_grid((0.5, 0.28, 0.01), (10, 4, 2))
    bc = BoundaryConditions([0, 1, 2], face_pressures=[FacePressure(1, 4, 6e5, (0.0, -1.0, 0.0))])
    f = bc.structural_load(g)
    assert f[1::3].sum() == pytest.approx(-6e5 * 0.5 * 0.01)
    assert np.abs(f[0::3]).sum() == 0.0
    with pytest.raises(ValueError, match="boundary plane"):
        BoundaryConditions([0], face_pressures=[FacePressure(1, 2, 1.0, (0, -1, 0))]).structural_load(g)


def test_design_state_keeps_protected_solid() -> None:
    protected = np.array([True, False, False])
    d = DesignState(np.zeros(3, bool), protected)
    assert d.solid.tolist() == [True, False, False]
    assert d.volume_fraction == pytest.approx(1 / 3)
    assert d == d.copy()
    assert d != d.with_solid(np.ones(3, bool))


def test_mark_protected_covers_supports_loads_and_temperatures() -> None:
    g = build_grid((1, 1, 1), (4, 4, 1))
    fixed = 3 * g.select_nodes({0: 0.0})
    load_node = int(g.select_nodes({0: 1.0, 1: 1.0})[0])
    t_nodes = g.select_nodes({1: 0.0, 0: 1.0})
    bc = BoundaryConditions(fixed, [(load_node, np.array([0, -1.0, 0]))], thermal=Dirichlet(t_nodes, np.full(t_nodes.size, 30.0)))
    d = mark_protected(g, bc)
    assert d.solid.all()
    assert d.protected[g.element_index(0, 2, 0)]
    assert d.protected[g.element_index(3, 3, 0)]
    assert d.protected[g.element_index(3, 0, 0)]
    assert not d.protected[g.element_index(2, 2, 0)]


def test_mark_protected_requires_supports() -> None:
    g = build_grid((1, 1, 1), (2, 2, 2))
    with pytest.raises(ValueError, match="neither supports nor loads"):
        mark_protected(g, BoundaryConditions())
    with pytest.raises(ValueError, match="fixed DOF"):
        mark_protected(g, BoundaryConditions(point_loads=[(0, np.ones(3))]))


def test_uniform_flag() -> None:
    assert BoundaryConditions(thermal=UniformDelta(3.0)).is_uniform
    with pytest.raises(ValueError):
        Dirichlet(np.array([], int), np.array([]))
