import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermotop import qoi as q
from thermotop.auglag import (
    HAND_CASES,
    ConstraintState,
    aux_grad_coeff,
    aux_value,
    combine_fields,
    normalized_violation,
    update_multiplier,
    update_penalty,
)
from thermotop.sensitivity import SensitivityField

HAND = [(fn.__name__, args, expected) for fn, cases in HAND_CASES.items() for args, expected in cases]


@pytest.mark.parametrize("name,args,expected", HAND)
def test_hand_cases_exact(name, args, expected) -> None:
    fn = {f.__name__: f for f in HAND_CASES}[name]
    assert fn(*args) == expected


def test_hand_cases_cover_every_update() -> None:
    assert set(HAND_CASES) == {aux_value, aux_grad_coeff, update_multiplier, update_penalty}


def test_aux_value_inactive_branch_is_constant() -> None:
    assert aux_value(-0.2, 1.0, 10.0) == aux_value(-0.9, 1.0, 10.0) == -1.0 / 20.0


def test_update_penalty_rejects_iteration_zero() -> None:
    with pytest.raises(ValueError):
        update_penalty(10.0, -0.1, -0.1, 0)


def test_normalized_violation() -> None:
    assert normalized_violation(6.0, 5.0) == pytest.approx(0.2)
    assert normalized_violation(5.0, 5.0) == 0.0


def test_aux_grad_coeff_continuous_at_switch() -> None:
    mu, gamma = 2.0, 10.0
    g0 = -mu / gamma
    for eps in (1e-3, 1e-6, 1e-9):
        assert aux_grad_coeff(g0 + eps, mu, gamma) == pytest.approx(0.0, abs=20 * eps)
        assert aux_grad_coeff(g0 - eps, mu, gamma) == 0.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-2.0, 2.0), min_size=1, max_size=30), st.floats(0.0, 500.0), st.floats(0.1, 100.0))
def test_multiplier_nonnegative_and_penalty_monotone(gs, mu0, gamma0) -> None:
    state = ConstraintState("c", q.Compliance(), 1.0, mu=mu0, gamma=gamma0)
    last_gamma = gamma0
    for k, g in enumerate(gs, start=1):
        state.update(1.0 + g, k)
        assert state.mu >= 0.0
        assert state.gamma >= last_gamma
        last_gamma = state.gamma


def test_constraint_state_update_sequence() -> None:
    s = ConstraintState("stress", q.PNormStress(), limit=2.0)
    s.update(1.2, k=1)  # g = -0.4
    assert s.g == pytest.approx(-0.4)
    assert (s.mu, s.gamma) == (pytest.approx(96.0), 10.0)
    s.update(1.9, k=2)  # g = -0.05: shrank by less than zeta -> penalty grows
    assert s.mu == pytest.approx(95.5)
    assert s.gamma == 100.0
    assert s.coeff == pytest.approx(95.5 - 5.0)


def _field(values):
    return SensitivityField(np.asarray(values, dtype=float))


def test_combine_fields_linear_in_active_coefficients() -> None:
    a = ConstraintState("a", q.Compliance(), 1.0, value=0.8, mu=100.0, gamma=10.0)  # coeff 98
    b = ConstraintState("b", q.PNormStress(), 1.0, value=0.5, mu=1.0, gamma=10.0)  # coeff 0
    fa, fb = _field([1.0, 3.0, 5.0]), _field([9.0, 0.0, 4.0])
    out = combine_fields([a, b], [fa, fb])
    np.testing.assert_allclose(out.values, 98.0 * fa.normalized)
    inactive = combine_fields([b], [fb])
    assert not inactive.values.any()


def test_combine_fields_rejects_mismatch() -> None:
    a = ConstraintState("a", q.Compliance(), 1.0, value=0.8)
    with pytest.raises(ValueError):
        combine_fields([a], [])
    with pytest.raises(ValueError):
        combine_fields([a, a], [_field([1, 2]), _field([1, 2, 3])])
