"""Mesh-indexed relaxed controls, piecewise-constant controls, admissibility audit.

A relaxed control assigns each mesh cell a finite convex combination of
control points.  Cells are right-open; the last cell also owns the right
endpoint, and a time sitting exactly on an interior node belongs to the later
cell.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass

import numpy as np

from .systems import ControlSystem

WEIGHT_SUM_TOL = 1e-12
MEMBERSHIP_TOL = 1e-12

# relative slack when deciding whether a query time sits on a cell boundary
_NODE_SNAP = 1e-9


class DomainError(Exception):
    """Query time outside the control's mesh span."""


@dataclass(frozen=True)
class Mesh:
    """Uniform grid of `cells` cells over [t1, t2]."""

    t1: float
    t2: float
    cells: int

    def __post_init__(self) -> None:
        if not self.t2 > self.t1:
            raise ValueError("mesh needs t2 > t1")
        if self.cells < 1:
            raise ValueError("mesh needs at least one cell")

    @property
    def h(self) -> float:
        return (self.t2 - self.t1) / self.cells

    def nodes(self) -> np.ndarray:
        return self.t1 + self.h * np.arange(self.cells + 1)

    def node(self, i: int) -> float:
        return self.t1 + self.h * i

    def cell_index(self, t: float, extend: bool = False) -> int:
        """Cell owning time t.  Boundary times go to the later cell, t2 to the last.

        With extend=True, times beyond the span map to the nearest end cell
        instead of raising.
        """
        y = (t - self.t1) / self.h
        i = math.floor(y)
        if y - i > 1.0 - _NODE_SNAP:
            i += 1
        if i < 0 or i > self.cells:
            if extend:
                return min(max(i, 0), self.cells - 1)
            raise DomainError(f"time {t} outside mesh span [{self.t1}, {self.t2}]")
        return min(i, self.cells - 1)


@dataclass(frozen=True)
class RelaxedControl:
    """Per-cell convex combinations of control points.

    weights[i] and points[i] describe cell i; weights[i] sums to one within
    1e-12 and every weight is nonnegative.  Membership of the points in the
    control set and the atom-count cap are checked against a system via
    validate(), since the control alone knows neither.
    """

    mesh: Mesh
    weights: tuple[tuple[float, ...], ...]
    points: tuple[tuple[tuple[float, ...], ...], ...]

    def __post_init__(self) -> None:
        if len(self.weights) != self.mesh.cells or len(self.points) != self.mesh.cells:
            raise ValueError("need one atom family per mesh cell")
        for ws, ps in zip(self.weights, self.points):
            if len(ws) != len(ps) or not ws:
                raise ValueError("each cell needs matching nonempty weights and points")
            if any(w < 0.0 for w in ws):
                raise ValueError("atom weights must be nonnegative")
            if abs(sum(ws) - 1.0) > WEIGHT_SUM_TOL:
                raise ValueError("atom weights must sum to one")

    @classmethod
    def single_atom(cls, mesh: Mesh, point: tuple[float, ...] | list[float]) -> "RelaxedControl":
        pt = tuple(float(v) for v in point)
        return cls(
            mesh=mesh,
            weights=((1.0,),) * mesh.cells,
            points=((pt,),) * mesh.cells,
        )

    @classmethod
    def constant(
        cls, mesh: Mesh, weights: list[float], points: list[tuple[float, ...]]
    ) -> "RelaxedControl":
        """Same atom family on every cell."""
        ws = tuple(float(w) for w in weights)
        ps = tuple(tuple(float(v) for v in p) for p in points)
        return cls(mesh=mesh, weights=(ws,) * mesh.cells, points=(ps,) * mesh.cells)

    def cell_atoms(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Weights (k,) and points (k, r) of cell i."""
        return np.asarray(self.weights[i], dtype=float), np.asarray(self.points[i], dtype=float)

    def atoms_at(self, t: float, extend: bool = False) -> tuple[np.ndarray, np.ndarray]:
        return self.cell_atoms(self.mesh.cell_index(t, extend=extend))

    def max_atom_count(self) -> int:
        return max(len(ws) for ws in self.weights)

    def validation_flags(self, system: ControlSystem) -> tuple[bool, bool]:
        """(membership_ok, atom_count_ok) against a concrete system."""
        cap = system.dynamics.n + 1
        membership_ok = all(
            system.control_set.contains(np.asarray(p), tol=MEMBERSHIP_TOL)
            for ps in self.points
            for p in ps
        )
        atom_count_ok = all(len(ws) <= cap for ws in self.weights)
        return membership_ok, atom_count_ok

    def validate(self, system: ControlSystem) -> None:
        """Raise if atoms leave the control set or a cell has more than n+1 atoms."""
        membership_ok, atom_count_ok = self.validation_flags(system)
        if not atom_count_ok:
            raise ValueError(f"a cell carries more than {system.dynamics.n + 1} atoms")
        if not membership_ok:
            raise ValueError("an atom point lies outside the control set")

    def to_json_dict(self) -> dict:
        return {
            "mesh": {"t1": self.mesh.t1, "t2": self.mesh.t2, "cells": self.mesh.cells},
            "atoms": [
                [{"w": w, "u": list(p)} for w, p in zip(ws, ps)]
                for ws, ps in zip(self.weights, self.points)
            ],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "RelaxedControl":
        mesh = Mesh(
            t1=float(data["mesh"]["t1"]),
            t2=float(data["mesh"]["t2"]),
            cells=int(data["mesh"]["cells"]),
        )
        weights = tuple(
            tuple(float(a["w"]) for a in cell) for cell in data["atoms"]
        )
        points = tuple(
            tuple(tuple(float(v) for v in a["u"]) for a in cell) for cell in data["atoms"]
        )
        return cls(mesh=mesh, weights=weights, points=points)


@dataclass(frozen=True)
class OrdinaryControl:
    """Piecewise-constant control: value values[k] on [breakpoints[k], breakpoints[k+1])."""

    breakpoints: tuple[float, ...]
    values: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        if len(self.breakpoints) != len(self.values) + 1:
            raise ValueError("need one more breakpoint than pieces")
        if len(self.values) < 1:
            raise ValueError("need at least one piece")
        bp = self.breakpoints
        if any(b1 >= b2 for b1, b2 in zip(bp, bp[1:])):
            raise ValueError("breakpoints must be strictly increasing")

    @property
    def t_start(self) -> float:
        return self.breakpoints[0]

    @property
    def t_end(self) -> float:
        return self.breakpoints[-1]

    def value_at(self, t: float) -> np.ndarray:
        bp = self.breakpoints
        if t < bp[0] or t > bp[-1]:
            raise DomainError(f"time {t} outside control span [{bp[0]}, {bp[-1]}]")
        # right-open pieces, last piece owns the right endpoint
        k = bisect.bisect_right(bp, t) - 1
        k = min(max(k, 0), len(self.values) - 1)
        return np.asarray(self.values[k], dtype=float)


### field evaluation ###########################################################


def relaxed_field(
    system: ControlSystem,
    mu: RelaxedControl,
    t: float,
    x: np.ndarray,
    extend: bool = False,
) -> np.ndarray:
    """Averaged velocity sum_i w_i f(t, x, u_i) using the atoms of t's cell."""
    ws, ps = mu.atoms_at(t, extend=extend)
    out = np.zeros(system.dynamics.n)
    for w, p in zip(ws, ps):
        if w == 0.0:
            continue
        out += w * system.dynamics.eval(t, x, p)
    return out


def relaxed_jacobian(
    system: ControlSystem,
    mu: RelaxedControl,
    t: float,
    x: np.ndarray,
    extend: bool = False,
) -> np.ndarray:
    """Averaged state Jacobian sum_i w_i f_x(t, x, u_i)."""
    ws, ps = mu.atoms_at(t, extend=extend)
    out = np.zeros((system.dynamics.n, system.dynamics.n))
    for w, p in zip(ws, ps):
        if w == 0.0:
            continue
        out += w * system.dynamics.jacobian_x(t, x, p)
    return out


### admissibility audit ########################################################


@dataclass(frozen=True)
class AdmissibilityReport:
    """Outcome of checking a trajectory/relaxed-control pair against the field."""

    sup_residual: float
    residual_profile: tuple[float, ...]
    argmax_node: int
    passed: bool
    residual_tol: float

    def to_json_dict(self) -> dict:
        return {
            "sup_residual": self.sup_residual,
            "residual_profile": list(self.residual_profile),
            "argmax_node": self.argmax_node,
            "passed": self.passed,
            "residual_tol": self.residual_tol,
        }


def audit_admissibility(
    system: ControlSystem,
    trajectory,
    mu: RelaxedControl,
    residual_tol: float,
) -> AdmissibilityReport:
    """Compare finite differences of the sampled path against the relaxed field.

    `trajectory` is any object with `.mesh` and node `.samples` of shape
    (cells+1, n).  Interior nodes use centered differences, the two ends
    one-sided ones, so an exactly consistent pair shows only floating-point
    residue.
    """
    mesh = trajectory.mesh
    samples = np.asarray(trajectory.samples, dtype=float)
    if samples.shape != (mesh.cells + 1, system.dynamics.n):
        raise ValueError("trajectory samples must sit on the mesh nodes")
    if mu.mesh != mesh:
        raise ValueError("control and trajectory must share one mesh")

    h = mesh.h
    nodes = mesh.nodes()
    m = mesh.cells
    deriv = np.empty_like(samples)
    deriv[0] = (samples[1] - samples[0]) / h
    deriv[m] = (samples[m] - samples[m - 1]) / h
    if m > 1:
        deriv[1:m] = (samples[2:] - samples[: m - 1]) / (2.0 * h)

    residuals = np.empty(m + 1)
    for i in range(m + 1):
        field = relaxed_field(system, mu, float(nodes[i]), samples[i])
        residuals[i] = float(np.linalg.norm(deriv[i] - field))

    argmax = int(np.argmax(residuals))
    sup = float(residuals[argmax])
    return AdmissibilityReport(
        sup_residual=sup,
        residual_profile=tuple(float(v) for v in residuals),
        argmax_node=argmax,
        passed=sup <= residual_tol,
        residual_tol=residual_tol,
    )
