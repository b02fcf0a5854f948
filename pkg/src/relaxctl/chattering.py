"""Chattering synthesis: trade a relaxed control for rapid switching.

Each mesh cell is cut into p sub-cycles; inside a sub-cycle every atom gets a
dwell time proportional to its weight, in the input atom order.  The induced
trajectories converge to the relaxed one at first order in 1/p.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .integrate import merge_times, _rk4_walk
from .relaxed import Mesh, OrdinaryControl, RelaxedControl
from .systems import ControlSystem


@dataclass(frozen=True)
class ChatterPlan:
    """Source control plus the per-cell sub-cycle count p (atom order = input order)."""

    source: RelaxedControl
    p: int

    def __post_init__(self) -> None:
        if self.p < 1:
            raise ValueError("need at least one sub-cycle per cell")


@dataclass(frozen=True)
class ConvergenceRow:
    p: int
    sup_deviation: float
    excursion_bound: float


def chatter(plan: ChatterPlan) -> OrdinaryControl:
    """Piecewise-constant control whose dwell times realize the atom weights."""
    return chatter_until(plan, plan.source.mesh.t2)


def chatter_until(plan: ChatterPlan, t_end: float) -> OrdinaryControl:
    """Chatter over [t1, t_end], t_end inside or at the end of the source span.

    A trailing partial cell is sliced with the same sub-cycle count, scaled to
    its width, so every sub-cycle stays internally balanced.
    """
    mu = plan.source
    mesh = mu.mesh
    p = plan.p
    if not mesh.t1 < t_end <= mesh.t2 + 1e-9 * max(1.0, abs(mesh.t2)):
        raise ValueError("chatter end time must lie inside the source span")

    breakpoints: list[float] = [mesh.t1]
    values: list[tuple[float, ...]] = []

    def emit(piece_end: float, value: tuple[float, ...]) -> None:
        # merge adjacent pieces carrying the same value
        if values and values[-1] == value:
            breakpoints[-1] = piece_end
        else:
            breakpoints.append(piece_end)
            values.append(value)

    for i in range(mesh.cells):
        a = mesh.node(i)
        b = min(mesh.node(i + 1), t_end)
        if b <= a:
            break
        width = b - a
        sub = width / p
        ws, _ = mu.cell_atoms(i)
        cum = np.concatenate([[0.0], np.cumsum(ws)])
        for c in range(p):
            cycle_start = a + c * sub
            for k, w in enumerate(mu.weights[i]):
                if w == 0.0:
                    continue
                piece_end = cycle_start + sub * cum[k + 1]
                emit(piece_end, mu.points[i][k])
        # pin the cycle ladder to the exact cell end to stop float drift
        breakpoints[-1] = b
        if b < mesh.node(i + 1):
            break

    return OrdinaryControl(breakpoints=tuple(breakpoints), values=tuple(values))


### convergence measurement ####################################################


def _walk_times(control: OrdinaryControl, mu_mesh: Mesh) -> np.ndarray:
    """Breakpoints of the chattered control unioned with the source cell nodes."""
    nodes = mu_mesh.nodes()
    bp = np.asarray(control.breakpoints)
    inner = bp[(bp > nodes[0]) & (bp < nodes[-1])]
    span = float(nodes[-1] - nodes[0])
    times, _ = merge_times(nodes, inner, span)
    extra = np.asarray([t for t in bp if t > nodes[-1]])
    if extra.size:
        times = np.concatenate([times, extra])
    return times


def _states_at(
    system: ControlSystem,
    rhs_picker: Callable[[float, float], Callable[[float, np.ndarray], np.ndarray]],
    times: np.ndarray,
    x1: np.ndarray,
) -> np.ndarray:
    return _rk4_walk(rhs_picker, times, np.asarray(x1, dtype=float))


def _ordinary_rhs(system: ControlSystem, control: OrdinaryControl):
    dyn = system.dynamics

    def picker(a: float, b: float):
        u = control.value_at((a + b) / 2.0)
        return lambda t, x: dyn.eval(t, x, u)

    return picker


def _relaxed_rhs(system: ControlSystem, mu: RelaxedControl, extend: bool = False):
    dyn = system.dynamics

    def picker(a: float, b: float):
        ws, ps = mu.atoms_at((a + b) / 2.0, extend=extend)
        pairs = [(float(w), p) for w, p in zip(ws, ps) if w > 0.0]

        def rhs(t: float, x: np.ndarray) -> np.ndarray:
            acc = np.zeros(dyn.n)
            for w, p in pairs:
                acc += w * dyn.eval(t, x, p)
            return acc

        return rhs

    return picker


def convergence_study(
    system: ControlSystem,
    mu: RelaxedControl,
    x1: np.ndarray,
    p_list: list[int],
) -> list[ConvergenceRow]:
    """Chatter at each p and measure sup deviation from the relaxed trajectory.

    Deviations are taken at the chattered control's breakpoints (which include
    every source cell boundary); the within-piece excursion is covered by the
    reported bound (h/p)*max‖f‖ instead of sampling.
    """
    if any(p2 <= p1 for p1, p2 in zip(p_list, p_list[1:])):
        raise ValueError("p_list must be strictly increasing")

    rows: list[ConvergenceRow] = []
    for p in p_list:
        control = chatter(ChatterPlan(source=mu, p=p))
        times = _walk_times(control, mu.mesh)
        chat_states = _states_at(system, _ordinary_rhs(system, control), times, x1)
        relax_states = _states_at(system, _relaxed_rhs(system, mu), times, x1)
        deviation = float(np.max(np.linalg.norm(chat_states - relax_states, axis=1)))

        speed = 0.0
        for t, x in zip(times, relax_states):
            _, ps = mu.atoms_at(float(t))
            for point in ps:
                speed = max(speed, float(np.linalg.norm(system.dynamics.eval(float(t), x, point))))
        bound = (mu.mesh.h / p) * speed

        rows.append(ConvergenceRow(p=p, sup_deviation=deviation, excursion_bound=bound))
    return rows


def study_to_csv(rows: list[ConvergenceRow]) -> str:
    lines = ["p,sup_deviation,excursion_bound"]
    for row in rows:
        lines.append(
            f"{row.p},{row.sup_deviation:.17g},{row.excursion_bound:.17g}"
        )
    return "\n".join(lines) + "\n"
