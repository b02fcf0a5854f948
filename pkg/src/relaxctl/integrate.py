"""Fixed-step classical RK4 transport for states and costates.

Steps never straddle a control discontinuity: every integration walks an
event grid built from the recording mesh plus any control breakpoints, with
one RK4 step per event interval.  Backward costate transport reuses the same
stepper with a negated step, which is the forward integration of the
time-reversed system.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .relaxed import Mesh, OrdinaryControl, RelaxedControl, relaxed_jacobian
from .systems import ControlSystem

DEFAULT_CELLS_PER_UNIT = 1000
DIVERGENCE_LIMIT = 1e12


class DivergenceError(Exception):
    """State norm blew past the divergence limit."""

    def __init__(self, t: float, norm: float):
        self.t = t
        self.norm = norm
        super().__init__(f"state norm {norm:.3e} exceeded limit at t={t}")


def default_mesh(t1: float, t2: float, cells_per_unit: int = DEFAULT_CELLS_PER_UNIT) -> Mesh:
    cells = max(1, round((t2 - t1) * cells_per_unit))
    return Mesh(t1=t1, t2=t2, cells=cells)


def _fmt(v: float) -> str:
    return f"{v:.17g}"


@dataclass(frozen=True)
class Trajectory:
    """State samples on the nodes of a uniform mesh."""

    mesh: Mesh
    samples: np.ndarray  # (cells+1, n)

    def __post_init__(self) -> None:
        if self.samples.shape[0] != self.mesh.cells + 1:
            raise ValueError("need one sample per mesh node")

    @property
    def n(self) -> int:
        return self.samples.shape[1]

    @property
    def endpoint(self) -> np.ndarray:
        return self.samples[-1]

    def interpolate(self, t: float) -> np.ndarray:
        """Linear interpolation between the two surrounding node samples."""
        h = self.mesh.h
        y = (t - self.mesh.t1) / h
        i = int(np.floor(y))
        i = min(max(i, 0), self.mesh.cells - 1)
        theta = y - i
        theta = min(max(theta, 0.0), 1.0)
        return (1.0 - theta) * self.samples[i] + theta * self.samples[i + 1]

    def to_csv(self) -> str:
        header = "t," + ",".join(f"x{i}" for i in range(self.n))
        nodes = self.mesh.nodes()
        lines = [header]
        for t, row in zip(nodes, self.samples):
            lines.append(",".join([_fmt(float(t))] + [_fmt(float(v)) for v in row]))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Costate:
    """Adjoint row-vector samples on the nodes of a uniform mesh."""

    mesh: Mesh
    samples: np.ndarray  # (cells+1, n)

    def __post_init__(self) -> None:
        if self.samples.shape[0] != self.mesh.cells + 1:
            raise ValueError("need one sample per mesh node")

    @property
    def n(self) -> int:
        return self.samples.shape[1]

    def to_csv(self) -> str:
        header = "t," + ",".join(f"psi{i}" for i in range(self.n))
        nodes = self.mesh.nodes()
        lines = [header]
        for t, row in zip(nodes, self.samples):
            lines.append(",".join([_fmt(float(t))] + [_fmt(float(v)) for v in row]))
        return "\n".join(lines) + "\n"


### event grids ################################################################


def merge_times(primary: np.ndarray, extra: np.ndarray, span: float) -> tuple[np.ndarray, np.ndarray]:
    """Sorted union keeping primary values verbatim.

    Extra values closer than a relative fuzz to an already accepted time are
    dropped, so zero-length steps never appear.  Returns (times, primary_pos)
    where times[primary_pos[k]] == primary[k].
    """
    tol = 1e-12 * max(1.0, abs(span))
    out: list[float] = []
    pos = np.empty(len(primary), dtype=int)
    i = j = 0
    extra = np.asarray(extra, dtype=float)
    while i < len(primary) or j < len(extra):
        take_primary = j >= len(extra) or (i < len(primary) and primary[i] <= extra[j] + tol)
        if take_primary:
            v = float(primary[i])
            if j < len(extra) and abs(extra[j] - v) <= tol:
                j += 1
            pos[i] = len(out)
            out.append(v)
            i += 1
        else:
            v = float(extra[j])
            if not out or v - out[-1] > tol:
                out.append(v)
            j += 1
    return np.asarray(out), pos


def _rk4_walk(
    rhs_for_interval: Callable[[float, float], Callable[[float, np.ndarray], np.ndarray]],
    times: np.ndarray,
    x0: np.ndarray,
    limit: float = DIVERGENCE_LIMIT,
) -> np.ndarray:
    """One classical RK4 step per interval of `times`; returns states at all times.

    `times` may be decreasing, in which case steps are negative and the walk
    realizes backward transport.
    """
    x = np.asarray(x0, dtype=float).copy()
    out = np.empty((len(times), x.size))
    out[0] = x
    for k in range(len(times) - 1):
        a = float(times[k])
        b = float(times[k + 1])
        h = b - a
        rhs = rhs_for_interval(a, b)
        k1 = rhs(a, x)
        k2 = rhs(a + h / 2.0, x + (h / 2.0) * k1)
        k3 = rhs(a + h / 2.0, x + (h / 2.0) * k2)
        k4 = rhs(b, x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        norm = float(np.linalg.norm(x))
        if not np.isfinite(norm) or norm > limit:
            raise DivergenceError(t=b, norm=norm)
        out[k + 1] = x
    return out


### public integrators #########################################################


def integrate_ordinary(
    system: ControlSystem,
    control: OrdinaryControl,
    x1: np.ndarray,
    mesh: Mesh,
) -> Trajectory:
    """Integrate under a piecewise-constant control, recording on the mesh nodes.

    Control breakpoints interior to the span become extra step boundaries, so
    each RK4 step sees one constant control value.
    """
    nodes = mesh.nodes()
    interior = [
        b for b in control.breakpoints if mesh.t1 < b < mesh.t2
    ]
    times, pos = merge_times(nodes, np.asarray(interior), span=mesh.t2 - mesh.t1)

    dyn = system.dynamics

    def rhs_for(a: float, b: float) -> Callable[[float, np.ndarray], np.ndarray]:
        u = control.value_at((a + b) / 2.0)
        return lambda t, x: dyn.eval(t, x, u)

    states = _rk4_walk(rhs_for, times, np.asarray(x1, dtype=float))
    return Trajectory(mesh=mesh, samples=states[pos])


def integrate_relaxed(
    system: ControlSystem,
    mu: RelaxedControl,
    x1: np.ndarray,
    mesh: Mesh,
    extend: bool = False,
) -> Trajectory:
    """Integrate the averaged field of a relaxed control.

    The step grid is the union of the recording mesh and the control's own
    cell boundaries; atom families are selected once per step by its midpoint.
    With extend=True, times outside the control's span reuse its end cells.
    """
    nodes = mesh.nodes()
    mu_nodes = mu.mesh.nodes()
    interior = mu_nodes[(mu_nodes > mesh.t1) & (mu_nodes < mesh.t2)]
    times, pos = merge_times(nodes, interior, span=mesh.t2 - mesh.t1)

    dyn = system.dynamics

    def rhs_for(a: float, b: float) -> Callable[[float, np.ndarray], np.ndarray]:
        ws, ps = mu.atoms_at((a + b) / 2.0, extend=extend)
        pairs = [(float(w), p) for w, p in zip(ws, ps) if w > 0.0]

        def rhs(t: float, x: np.ndarray) -> np.ndarray:
            acc = np.zeros(dyn.n)
            for w, p in pairs:
                acc += w * dyn.eval(t, x, p)
            return acc

        return rhs

    states = _rk4_walk(rhs_for, times, np.asarray(x1, dtype=float))
    return Trajectory(mesh=mesh, samples=states[pos])


def integrate_control_function(
    system: ControlSystem,
    u_of_t: Callable[[float], np.ndarray],
    x1: np.ndarray,
    mesh: Mesh,
) -> Trajectory:
    """Integrate under a control given as a function of time.

    The control is evaluated at the RK4 stage times, so a smooth control
    keeps the stepper at its full order.
    """
    dyn = system.dynamics

    def rhs_for(a: float, b: float) -> Callable[[float, np.ndarray], np.ndarray]:
        return lambda t, x: dyn.eval(t, x, u_of_t(t))

    states = _rk4_walk(rhs_for, mesh.nodes(), np.asarray(x1, dtype=float))
    return Trajectory(mesh=mesh, samples=states)


def integrate_adjoint(
    system: ControlSystem,
    trajectory: Trajectory,
    mu: RelaxedControl,
    psi_terminal: np.ndarray,
) -> Costate:
    """Transport a terminal covector backward along a reference pair.

    Solves psi' = -psi * A(t) with A the averaged state Jacobian along the
    (interpolated) reference trajectory.  Realized as forward RK4 in the
    reversed time variable; samples are stored in forward order.
    """
    mesh = trajectory.mesh
    nodes = mesh.nodes()
    mu_nodes = mu.mesh.nodes()
    interior = mu_nodes[(mu_nodes > mesh.t1) & (mu_nodes < mesh.t2)]
    times, pos = merge_times(nodes, interior, span=mesh.t2 - mesh.t1)
    times_back = times[::-1]

    def rhs_for(a: float, b: float) -> Callable[[float, np.ndarray], np.ndarray]:
        ws, ps = mu.atoms_at((a + b) / 2.0)
        jac_terms = [(float(w), p) for w, p in zip(ws, ps) if w > 0.0]

        def rhs(t: float, psi: np.ndarray) -> np.ndarray:
            x = trajectory.interpolate(t)
            A = np.zeros((system.dynamics.n, system.dynamics.n))
            for w, p in jac_terms:
                A += w * system.dynamics.jacobian_x(t, x, p)
            return -(psi @ A)

        return rhs

    states = _rk4_walk(rhs_for, times_back, np.asarray(psi_terminal, dtype=float))
    samples = states[::-1][pos]
    return Costate(mesh=mesh, samples=samples)


def fundamental_costate(
    system: ControlSystem,
    trajectory: Trajectory,
    mu: RelaxedControl,
) -> np.ndarray:
    """Matrices Phi with psi(t_i) = psi_terminal @ Phi[i] for every terminal covector.

    Row k of Phi[i] is the backward transport of the k-th canonical covector,
    so Phi[-1] is the identity.  Shape (cells+1, n, n).
    """
    n = system.dynamics.n
    mesh = trajectory.mesh
    phi = np.empty((mesh.cells + 1, n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        cost = integrate_adjoint(system, trajectory, mu, e)
        phi[:, k, :] = cost.samples
    return phi
