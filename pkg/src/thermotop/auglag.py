"""Augmented Lagrangian bookkeeping for the constraints ``g_i <= 0``.

Constraints are normalized as ``g = Q / limit - 1``.  Only the gradient
coefficient reaches the level-set; the auxiliary values are logged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sensitivity import SensitivityField

ZETA = 0.25
ETA = 10.0
MU0 = 100.0
GAMMA0 = 10.0


@dataclass
class ConstraintState:
    """One constraint ``Q <= limit`` with its multiplier and penalty."""

    name: str
    qoi: object
    limit: float
    value: float = float("nan")
    mu: float = MU0
    gamma: float = GAMMA0
    g_prev: float | None = None

    @property
    def g(self) -> float:
        return normalized_violation(self.value, self.limit)

    @property
    def aux(self) -> float:
        return aux_value(self.g, self.mu, self.gamma)

    @property
    def coeff(self) -> float:
        return aux_grad_coeff(self.g, self.mu, self.gamma)

    def update(self, value: float, k: int, zeta: float = ZETA, eta: float = ETA) -> None:
        """Record a new value and apply the multiplier and penalty updates."""
        g_old = self.g_prev
        self.value = value
        g = self.g
        self.mu = update_multiplier(self.mu, self.gamma, g)
        if g_old is not None:
            self.gamma = update_penalty(self.gamma, g_old, g, k, zeta, eta)
        self.g_prev = g


def normalized_violation(value: float, limit: float) -> float:
    return value / limit - 1.0


def aux_value(g: float, mu: float, gamma: float) -> float:
    """Auxiliary Lagrangian of one constraint.

    The inactive branch is ``-mu^2 / (2 gamma)``, the usual constant of the
    bound-constrained augmented Lagrangian.
    """
    if mu + gamma * g > 0:
        return mu * g + 0.5 * gamma * g * g
    return -0.5 * mu * mu / gamma


def aux_grad_coeff(g: float, mu: float, gamma: float) -> float:
    """Factor multiplying the constraint's sensitivity: ``max(mu + gamma g, 0)``."""
    c = mu + gamma * g
    return c if c > 0 else 0.0


def update_multiplier(mu: float, gamma: float, g: float) -> float:
    return max(mu + gamma * g, 0.0)


def update_penalty(gamma: float, g_prev: float, g_curr: float, k: int, zeta: float = ZETA, eta: float = ETA) -> float:
    """Grow the penalty when the violation measure did not shrink by ``zeta``."""
    if k < 1:
        raise ValueError("outer iteration index starts at 1")
    if min(g_curr, 0.0) <= zeta * min(g_prev, 0.0):
        return gamma
    return max(eta * gamma, float(k * k))


def combine_fields(constraints: list[ConstraintState], fields: list[SensitivityField]) -> SensitivityField:
    """Augmented field ``sum_i coeff_i * normalized(field_i)``.

    The volume objective contributes a uniform constant and is left out.
    Returns an all-zero field when every constraint is inactive.
    """
    if len(constraints) != len(fields):
        raise ValueError("one sensitivity field per constraint expected")
    if not fields:
        raise ValueError("no constraint fields to combine")
    n = fields[0].values.shape
    if any(f.values.shape != n for f in fields):
        raise ValueError("sensitivity fields are defined on different element sets")
    total = np.zeros(n)
    for c, f in zip(constraints, fields):
        coeff = c.coeff
        if coeff > 0:
            total += coeff * f.normalized
    return SensitivityField(total)


# Worked examples with exactly representable inputs and results.  Each entry
# maps a function to (arguments, expected) pairs; the values are checked with
# ``==`` by the test suites.
HAND_CASES = {
    aux_value: [
        ((0.5, 100.0, 10.0), 51.25),
        ((0.0, 100.0, 10.0), 0.0),
        ((-0.2, 1.0, 10.0), -0.05),
        ((-0.5, 1.0, 10.0), -0.05),
    ],
    aux_grad_coeff: [
        ((-0.2, 100.0, 10.0), 98.0),
        ((-0.2, 1.0, 10.0), 0.0),
        ((0.0, 0.0, 10.0), 0.0),
        ((0.5, 100.0, 10.0), 105.0),
    ],
    update_multiplier: [
        ((100.0, 10.0, -0.2), 98.0),
        ((1.0, 10.0, -0.5), 0.0),
        ((100.0, 10.0, 0.3), 103.0),
    ],
    update_penalty: [
        ((10.0, -0.4, -0.05, 2), 100.0),
        ((10.0, -0.4, -0.2, 2), 10.0),
        ((10.0, 0.1, 0.3, 5), 10.0),
        ((10.0, -0.4, -0.05, 40), 1600.0),
    ],
}
