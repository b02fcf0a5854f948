"""Polynomial control systems and admissible control sets.

Dynamics are finite sums of monomials in (t, x, u), so Jacobians in x are
exact and cheap.  Control sets come in three kinds: a finite list of points,
the unit sphere, and an axis-aligned box.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class UnsupportedConfiguration(Exception):
    """Requested operation is not defined for this system/control-set combination."""


@dataclass(frozen=True)
class PolyTerm:
    """One monomial: coeff * t^t_exponent * prod x_i^x_exponents[i] * prod u_j^u_exponents[j]."""

    coeff: float
    x_exponents: tuple[int, ...]
    u_exponents: tuple[int, ...]
    t_exponent: int = 0

    def __post_init__(self) -> None:
        if any(e < 0 for e in self.x_exponents) or any(e < 0 for e in self.u_exponents):
            raise ValueError("exponents must be nonnegative")
        if self.t_exponent < 0:
            raise ValueError("exponents must be nonnegative")

    @property
    def u_degree(self) -> int:
        return sum(self.u_exponents)


def _pow(base: float, exp: int) -> float:
    # integer powers only; 0**0 == 1 by convention
    if exp == 0:
        return 1.0
    return base**exp


@dataclass(frozen=True)
class DynamicsSpec:
    """Right-hand side of x' = f(t, x, u), one list of terms per state component."""

    n: int
    r: int
    components: tuple[tuple[PolyTerm, ...], ...]

    def __post_init__(self) -> None:
        if len(self.components) != self.n:
            raise ValueError("need exactly one term list per state component")
        for terms in self.components:
            for term in terms:
                if len(term.x_exponents) != self.n or len(term.u_exponents) != self.r:
                    raise ValueError("term exponent tuples must match (n, r)")

    def eval(self, t: float, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        out = np.zeros(self.n)
        for i, terms in enumerate(self.components):
            acc = 0.0
            for term in terms:
                v = term.coeff * _pow(t, term.t_exponent)
                for k, e in enumerate(term.x_exponents):
                    if e:
                        v *= _pow(x[k], e)
                for j, e in enumerate(term.u_exponents):
                    if e:
                        v *= _pow(u[j], e)
                acc += v
            out[i] = acc
        return out

    def jacobian_x(self, t: float, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Exact d f_i / d x_k, differentiating each monomial."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        jac = np.zeros((self.n, self.n))
        for i, terms in enumerate(self.components):
            for term in terms:
                base = term.coeff * _pow(t, term.t_exponent)
                for j, e in enumerate(term.u_exponents):
                    if e:
                        base *= _pow(u[j], e)
                for k, ek in enumerate(term.x_exponents):
                    if ek == 0:
                        continue
                    v = base * ek * _pow(x[k], ek - 1)
                    for m, em in enumerate(term.x_exponents):
                        if em and m != k:
                            v *= _pow(x[m], em)
                    jac[i, k] += v
        return jac

    def affine_control_decomposition(
        self, t: float, x: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray] | None:
        """Split f(t,x,u) = g0(t,x) + G(t,x) u when every term is affine in u.

        Returns (g0, G) with G of shape (n, r), or None if some term has
        total u-degree above one.
        """
        x = np.asarray(x, dtype=float)
        g0 = np.zeros(self.n)
        G = np.zeros((self.n, self.r))
        for i, terms in enumerate(self.components):
            for term in terms:
                if term.u_degree > 1:
                    return None
                v = term.coeff * _pow(t, term.t_exponent)
                for k, e in enumerate(term.x_exponents):
                    if e:
                        v *= _pow(x[k], e)
                if term.u_degree == 0:
                    g0[i] += v
                else:
                    j = next(j for j, e in enumerate(term.u_exponents) if e)
                    G[i, j] += v
        return g0, G


### control sets ###############################################################


@dataclass(frozen=True)
class FiniteSet:
    """Finite list of admissible control points, order is canonical."""

    points: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        if not self.points:
            raise ValueError("finite control set needs at least one point")
        dims = {len(p) for p in self.points}
        if len(dims) != 1:
            raise ValueError("all control points must share one dimension")

    @property
    def dim(self) -> int:
        return len(self.points[0])

    def contains(self, u: np.ndarray, tol: float = 1e-12) -> bool:
        u = np.asarray(u, dtype=float)
        return any(
            np.max(np.abs(u - np.asarray(p))) <= tol for p in self.points
        )

    def point_array(self) -> np.ndarray:
        return np.array(self.points, dtype=float)


@dataclass(frozen=True)
class UnitSphere:
    """Controls on the Euclidean unit sphere in R^dim."""

    dim: int

    def contains(self, u: np.ndarray, tol: float = 1e-12) -> bool:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dim,):
            return False
        return abs(float(np.linalg.norm(u)) - 1.0) <= tol


@dataclass(frozen=True)
class Box:
    """Axis-aligned box lower[j] <= u_j <= upper[j]."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.lower) != len(self.upper):
            raise ValueError("box bounds must share one dimension")
        if any(lo > hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("box lower bound exceeds upper bound")

    @property
    def dim(self) -> int:
        return len(self.lower)

    def contains(self, u: np.ndarray, tol: float = 1e-12) -> bool:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dim,):
            return False
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        return bool(np.all(u >= lo - tol) and np.all(u <= hi + tol))


ControlSet = FiniteSet | UnitSphere | Box


@dataclass(frozen=True)
class ControlSystem:
    """Dynamics together with the admissible control set."""

    dynamics: DynamicsSpec
    control_set: ControlSet

    def __post_init__(self) -> None:
        if self.control_set.dim != self.dynamics.r:
            raise ValueError("control set dimension must equal dynamics.r")
