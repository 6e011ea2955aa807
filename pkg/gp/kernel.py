"""
Squared-exponential kernel, its mixed partial derivatives and the
cross-covariances between the six Euler-Bernoulli beam fields.

With tau = (x - x') / ell and g(tau) = exp(-tau**2 / 2):

    d^(m+n) k / dx^m dx'^n = sigma_s**2 * (-1)**n * ell**-(m+n) * g^(m+n)(tau)
    g^(k)(tau)             = (-1)**k * He_k(tau) * g(tau)

where He_k are the probabilists' Hermite polynomials, tabulated below as
exact integer coefficients. Every field is a linear operator applied to the
deflection u, so any cross-covariance is one table lookup times a constant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

import numpy as np
from numpy.polynomial import polynomial as P

from core.exceptions import ContractViolationError, DomainError, InvalidArgumentError

MAX_ORDER = 4

# He_k coefficients in ascending powers of tau, k = 0..8.
HERMITE_COEFFICIENTS: tuple[tuple[int, ...], ...] = (
    (1,),
    (0, 1),
    (-1, 0, 1),
    (0, -3, 0, 1),
    (3, 0, -6, 0, 1),
    (0, 15, 0, -10, 0, 1),
    (-15, 0, 45, 0, -15, 0, 1),
    (0, -105, 0, 105, 0, -21, 0, 1),
    (105, 0, -420, 0, 210, 0, -28, 0, 1),
)
_HERMITE = tuple(np.array(c, dtype=float) for c in HERMITE_COEFFICIENTS)


@dataclass(frozen=True)
class KernelParams:
    """Squared-exponential hyperparameters: amplitude sigma_s (m) and length scale ell (m)."""
    sigma_s: float
    ell: float

    def __post_init__(self) -> None:
        for name in ('sigma_s', 'ell'):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise InvalidArgumentError(f"{name} must be finite, got {value}")
            if value <= 0:
                raise DomainError(f"{name} must be positive, got {value}")


class QuantityKind(str, Enum):
    DEFLECTION = 'u'
    ROTATION = 'r'
    STRAIN = 'eps'
    MOMENT = 'm'
    SHEAR = 'v'
    LOAD = 'q'

    @property
    def tag(self) -> str:
        return self.value

    @classmethod
    def from_tag(cls, tag: str) -> QuantityKind:
        try:
            return cls(tag.strip())
        except ValueError:
            valid = ', '.join(k.value for k in cls)
            raise ValueError(f"unknown quantity kind '{tag}' (expected one of {valid})") from None


class Scale(str, Enum):
    ONE = 'one'
    FIBER = 'c'
    STIFFNESS = 'ei'


@dataclass(frozen=True)
class FieldOperator:
    """`sign * scale * d^order/dx^order` applied to the deflection."""
    derivative_order: int
    sign: int
    scale: Scale

    def coefficient(self, ei: float, c: float | None = None) -> float:
        if self.scale is Scale.ONE:
            return float(self.sign)
        if self.scale is Scale.STIFFNESS:
            return self.sign * ei
        if c is None:
            raise DomainError("fiber distance c is required for strain")
        return self.sign * c

    def apply(self, derivatives: Mapping[int, float], ei: float, c: float | None = None) -> float:
        """Evaluate the field from a map of deflection derivatives {order: value}."""
        return self.coefficient(ei, c) * derivatives[self.derivative_order]


# r = u', eps = -c u'', m = -EI u'', v = -EI u''', q = EI u''''
DEFAULT_SIGNS: dict[QuantityKind, int] = {
    QuantityKind.DEFLECTION: 1,
    QuantityKind.ROTATION: 1,
    QuantityKind.STRAIN: -1,
    QuantityKind.MOMENT: -1,
    QuantityKind.SHEAR: -1,
    QuantityKind.LOAD: 1,
}

_ORDERS_AND_SCALES: dict[QuantityKind, tuple[int, Scale]] = {
    QuantityKind.DEFLECTION: (0, Scale.ONE),
    QuantityKind.ROTATION: (1, Scale.ONE),
    QuantityKind.STRAIN: (2, Scale.FIBER),
    QuantityKind.MOMENT: (2, Scale.STIFFNESS),
    QuantityKind.SHEAR: (3, Scale.STIFFNESS),
    QuantityKind.LOAD: (4, Scale.STIFFNESS),
}


@dataclass(frozen=True)
class SignConvention:
    """Per-kind +/-1 applied to each field operator."""
    signs: Mapping[QuantityKind, int] = field(default_factory=lambda: dict(DEFAULT_SIGNS))

    def __post_init__(self) -> None:
        for kind in QuantityKind:
            if self.signs.get(kind) not in (1, -1):
                raise ContractViolationError(f"sign for {kind.tag} must be +1 or -1")

    def operator(self, kind: QuantityKind) -> FieldOperator:
        order, scale = _ORDERS_AND_SCALES[kind]
        return FieldOperator(derivative_order=order, sign=self.signs[kind], scale=scale)


DEFAULT_CONVENTION = SignConvention()


def field_operator(kind: QuantityKind, convention: SignConvention = DEFAULT_CONVENTION) -> FieldOperator:
    return convention.operator(kind)


def _check_order(order: int) -> None:
    if not isinstance(order, (int, np.integer)) or not 0 <= order <= MAX_ORDER:
        raise ContractViolationError(f"derivative order must be an integer in [0, {MAX_ORDER}], got {order}")


def _check_finite(*values) -> None:
    for value in values:
        if not np.all(np.isfinite(value)):
            raise InvalidArgumentError("kernel positions must be finite")


def _deriv_from_tau(params: KernelParams, m: int, n: int, tau: np.ndarray) -> np.ndarray:
    k = m + n
    # (-1)**n from the x' chain rule times (-1)**k from g^(k) collapses to (-1)**m.
    sign = -1.0 if m % 2 else 1.0
    hermite = P.polyval(tau, _HERMITE[k])
    return sign * params.sigma_s ** 2 * params.ell ** (-k) * hermite * np.exp(-0.5 * tau * tau)


def se_kernel_deriv(params: KernelParams, m: int, n: int, x, x_prime):
    """Closed-form d^(m+n) k_uu / dx^m dx'^n; broadcasts over array positions."""
    _check_order(m)
    _check_order(n)
    _check_finite(x, x_prime)
    tau = (np.asarray(x, dtype=float) - np.asarray(x_prime, dtype=float)) / params.ell
    value = _deriv_from_tau(params, m, n, tau)
    return float(value) if np.ndim(value) == 0 else value


def cross_kernel(
    params: KernelParams,
    ei: float,
    c: float | None,
    kind_a: QuantityKind,
    kind_b: QuantityKind,
    x,
    x_prime,
    convention: SignConvention = DEFAULT_CONVENTION,
):
    """Covariance between field `kind_a` at x and field `kind_b` at x'."""
    if not ei > 0:
        raise DomainError(f"bending stiffness must be positive, got {ei}")
    if QuantityKind.STRAIN in (kind_a, kind_b) and not (c is not None and c > 0):
        raise DomainError("a positive fiber distance c is required when strain is involved")
    op_a = convention.operator(kind_a)
    op_b = convention.operator(kind_b)
    scale = op_a.coefficient(ei, c) * op_b.coefficient(ei, c)
    return scale * se_kernel_deriv(params, op_a.derivative_order, op_b.derivative_order, x, x_prime)


def cross_kernel_matrix(
    params: KernelParams,
    ei: float,
    c: float | None,
    kind_a: QuantityKind,
    kind_b: QuantityKind,
    xa: np.ndarray,
    xb: np.ndarray,
    convention: SignConvention = DEFAULT_CONVENTION,
) -> np.ndarray:
    """Block of cross_kernel values, rows over `xa`, columns over `xb`."""
    xa = np.asarray(xa, dtype=float).reshape(-1)
    xb = np.asarray(xb, dtype=float).reshape(-1)
    return np.asarray(
        cross_kernel(params, ei, c, kind_a, kind_b, xa[:, None], xb[None, :], convention)
    )
