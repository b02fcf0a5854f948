"""Hamiltonian machinery and the first-order certificate set.

A certificate for side s is a nonzero costate path that satisfies the
adjoint equation along a reference pair, meets the maximum condition at the
sampled nodes, keeps the maximum function continuous, and has the right
endpoint sign s*M <= 0 (or M <= 0 under the alternative convention).  The
search scans terminal covectors on the unit sphere; scoring is positively
homogeneous of degree one in the covector, so the sphere is enough.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .integrate import Costate, Trajectory, fundamental_costate, integrate_adjoint
from .relaxed import RelaxedControl, audit_admissibility, relaxed_field, relaxed_jacobian
from .systems import Box, ControlSystem, FiniteSet, UnitSphere, UnsupportedConfiguration

_CONVENTIONS = ("definition", "theorem")


class InadmissiblePairError(Exception):
    """Reference pair failed its admissibility audit and no override was given."""


@dataclass(frozen=True)
class LambdaConfig:
    """Tolerances and conventions for certificate checks and sphere search."""

    s: int
    sphere_resolution: float = 1e-2
    residual_tol: float = 1e-6
    continuity_jump_tol: float = 1e-6
    transversality_convention: str = "definition"

    def __post_init__(self) -> None:
        if self.s not in (-1, 1):
            raise ValueError("side s must be -1 or +1")
        if self.sphere_resolution <= 0 or self.residual_tol <= 0 or self.continuity_jump_tol <= 0:
            raise ValueError("resolution and tolerances must be positive")
        if self.transversality_convention not in _CONVENTIONS:
            raise ValueError(f"transversality_convention must be one of {_CONVENTIONS}")


@dataclass(frozen=True)
class CertificateReport:
    """Residuals of the four membership conditions for one candidate costate."""

    max_condition_residual: float
    adjoint_residual: float
    continuity_jump: float
    transversality_value: float
    verdict: str  # "member" or "rejected"
    reason: str | None = None

    @property
    def is_member(self) -> bool:
        return self.verdict == "member"

    def to_json_dict(self) -> dict:
        out = {
            "max_condition_residual": self.max_condition_residual,
            "adjoint_residual": self.adjoint_residual,
            "continuity_jump": self.continuity_jump,
            "transversality_value": self.transversality_value,
            "verdict": self.verdict,
        }
        if self.reason is not None:
            out["reason"] = self.reason
        return out


@dataclass(frozen=True)
class LambdaVerdict:
    """Search outcome: Found carries the terminal covector, Empty the best score."""

    outcome: str  # "Found" or "EmptyUpToResolution"
    psi_terminal: np.ndarray | None = None
    report: CertificateReport | None = None
    min_over_scan_of_max_residual: float | None = None
    scan_size: int | None = None

    @property
    def found(self) -> bool:
        return self.outcome == "Found"

    def to_json_dict(self) -> dict:
        if self.found:
            return {
                "outcome": "Found",
                "psi_terminal": [float(v) for v in self.psi_terminal],
                "report": self.report.to_json_dict(),
            }
        return {
            "outcome": "EmptyUpToResolution",
            "min_over_scan_of_max_residual": self.min_over_scan_of_max_residual,
            "scan_size": self.scan_size,
        }


### pointwise Hamiltonian and maximum function #################################


def hamiltonian(
    system: ControlSystem, t: float, x: np.ndarray, psi: np.ndarray, u: np.ndarray
) -> float:
    psi = np.asarray(psi, dtype=float)
    if psi.shape != (system.dynamics.n,):
        raise ValueError("costate dimension must equal the state dimension")
    return float(psi @ system.dynamics.eval(t, x, u))


def max_function(
    system: ControlSystem, t: float, x: np.ndarray, psi: np.ndarray
) -> tuple[float, np.ndarray]:
    """Supremum of the Hamiltonian over the control set, with an argmax witness.

    Finite sets get the exact maximum with lowest-index tie-break.  For the
    sphere and box the dynamics must be affine in the control; the sphere
    maximizer is the normalized coefficient vector (first canonical direction
    when the coefficients vanish), the box maximizer follows the sign of each
    coefficient, lower bound on ties.
    """
    psi = np.asarray(psi, dtype=float)
    cs = system.control_set
    dyn = system.dynamics
    if isinstance(cs, FiniteSet):
        best_val = -np.inf
        best_point = None
        for p in cs.points:
            v = float(psi @ dyn.eval(t, x, np.asarray(p)))
            if v > best_val:
                best_val = v
                best_point = p
        return best_val, np.asarray(best_point, dtype=float)

    decomp = dyn.affine_control_decomposition(t, x)
    if decomp is None:
        raise UnsupportedConfiguration(
            "maximum over a continuum control set needs control-affine dynamics"
        )
    g0, G = decomp
    c = psi @ G  # (r,) coefficient covector of the control
    if isinstance(cs, UnitSphere):
        norm = float(np.linalg.norm(c))
        if norm == 0.0:
            witness = np.zeros(dyn.r)
            witness[0] = 1.0
        else:
            witness = c / norm
        return float(psi @ g0) + norm, witness
    if isinstance(cs, Box):
        lo = np.asarray(cs.lower)
        hi = np.asarray(cs.upper)
        witness = np.where(c > 0.0, hi, lo)
        return float(psi @ g0 + c @ witness), witness.astype(float)
    raise UnsupportedConfiguration(f"unknown control set {type(cs).__name__}")


### candidate checking #########################################################


def _reference_velocities(
    system: ControlSystem,
    trajectory: Trajectory,
    mu: RelaxedControl,
    admissible: bool,
) -> np.ndarray:
    """Node velocities of the reference path.

    Admissible pairs use the relaxed field (exact along a true solution);
    otherwise fall back to finite differences of the samples so inconsistent
    pairs can still be studied.
    """
    mesh = trajectory.mesh
    nodes = mesh.nodes()
    xs = trajectory.samples
    if admissible:
        out = np.empty_like(xs)
        for i in range(mesh.cells + 1):
            out[i] = relaxed_field(system, mu, float(nodes[i]), xs[i])
        return out
    h = mesh.h
    m = mesh.cells
    out = np.empty_like(xs)
    out[0] = (xs[1] - xs[0]) / h
    out[m] = (xs[m] - xs[m - 1]) / h
    if m > 1:
        out[1:m] = (xs[2:] - xs[: m - 1]) / (2.0 * h)
    return out


def _transversality(M_end: float, cfg: LambdaConfig) -> float:
    if cfg.transversality_convention == "definition":
        return cfg.s * M_end
    return M_end


def check_lambda_candidate(
    system: ControlSystem,
    trajectory: Trajectory,
    mu: RelaxedControl,
    psi_terminal: np.ndarray,
    cfg: LambdaConfig,
    admissible: bool | None = None,
) -> CertificateReport:
    """Evaluate the four membership conditions for one terminal covector.

    `admissible=None` runs the audit internally and raises on failure;
    passing True/False overrides that (False switches reference velocities to
    finite differences).
    """
    psi_terminal = np.asarray(psi_terminal, dtype=float)
    if float(np.linalg.norm(psi_terminal)) == 0.0:
        return CertificateReport(
            max_condition_residual=0.0,
            adjoint_residual=0.0,
            continuity_jump=0.0,
            transversality_value=0.0,
            verdict="rejected",
            reason="nonzero-violation",
        )

    if admissible is None:
        audit = audit_admissibility(system, trajectory, mu, cfg.residual_tol)
        if not audit.passed:
            raise InadmissiblePairError(
                f"reference pair fails admissibility (sup residual {audit.sup_residual:.3e}); "
                "pass admissible=False to study it anyway"
            )
        admissible = True

    costate = integrate_adjoint(system, trajectory, mu, psi_terminal)
    return _report_for_costate(system, trajectory, mu, costate, cfg, admissible)


def _report_for_costate(
    system: ControlSystem,
    trajectory: Trajectory,
    mu: RelaxedControl,
    costate: Costate,
    cfg: LambdaConfig,
    admissible: bool,
) -> CertificateReport:
    mesh = trajectory.mesh
    nodes = mesh.nodes()
    xs = trajectory.samples
    psis = costate.samples
    m = mesh.cells
    h = mesh.h

    xdot = _reference_velocities(system, trajectory, mu, admissible)

    M = np.empty(m + 1)
    max_field = np.empty_like(xs)  # f at the argmax witness, drives the jump allowance
    for i in range(m + 1):
        Mi, wit = max_function(system, float(nodes[i]), xs[i], psis[i])
        M[i] = Mi
        max_field[i] = system.dynamics.eval(float(nodes[i]), xs[i], wit)

    max_condition_residual = float(np.max(M - np.einsum("ij,ij->i", psis, xdot)))

    # condition 1, recomputed from the stored samples by finite differences
    A = np.empty((m + 1, system.dynamics.n, system.dynamics.n))
    for i in range(m + 1):
        A[i] = relaxed_jacobian(system, mu, float(nodes[i]), xs[i])
    rhs = -np.einsum("ij,ijk->ik", psis, A)
    dpsi = np.empty_like(psis)
    dpsi[0] = (psis[1] - psis[0]) / h
    dpsi[m] = (psis[m] - psis[m - 1]) / h
    if m > 1:
        dpsi[1:m] = (psis[2:] - psis[: m - 1]) / (2.0 * h)
    adjoint_residual = float(np.max(np.linalg.norm(dpsi - rhs, axis=1)))
    # the finite-difference probe itself carries O(h^2) truncation error
    psi_scale = float(np.max(np.linalg.norm(psis, axis=1)))
    A_scale = float(np.max(np.linalg.norm(A, axis=(1, 2))))
    adjoint_allowance = h * h * psi_scale * (1.0 + A_scale) ** 3 + 1e-12

    # condition 3: inter-node jumps of M, minus the drift a Lipschitz bound allows
    jumps = np.abs(np.diff(M))
    f_norm = np.linalg.norm(max_field, axis=1)
    dpsi_norm = np.linalg.norm(rhs, axis=1)
    df = np.linalg.norm(np.diff(max_field, axis=0), axis=1) / h
    psi_norm = np.linalg.norm(psis, axis=1)
    lipschitz = float(np.max(f_norm * dpsi_norm)) + float(
        np.max(psi_norm[:-1] * df) if m >= 1 else 0.0
    )
    continuity_jump = float(np.max(jumps) - lipschitz * h) if m >= 1 else 0.0

    transversality_value = _transversality(float(M[m]), cfg)

    reason = None
    if adjoint_residual > cfg.residual_tol + adjoint_allowance:
        reason = "adjoint-equation"
    elif max_condition_residual > cfg.residual_tol:
        reason = "max-condition"
    elif continuity_jump > cfg.continuity_jump_tol:
        reason = "continuity"
    elif transversality_value > cfg.residual_tol:
        reason = "transversality"

    return CertificateReport(
        max_condition_residual=max_condition_residual,
        adjoint_residual=adjoint_residual,
        continuity_jump=continuity_jump,
        transversality_value=transversality_value,
        verdict="member" if reason is None else "rejected",
        reason=reason,
    )


### sphere scan ################################################################


def _sphere_grid(n: int, resolution: float) -> np.ndarray:
    """Deterministic covering of the unit sphere at the given angular step."""
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        count = int(np.ceil(2.0 * np.pi / resolution))
        angles = resolution * np.arange(count)
        return np.column_stack([np.cos(angles), np.sin(angles)])
    if n == 3:
        size = int(np.ceil(4.0 * np.pi / resolution**2))
        i = np.arange(size, dtype=float)
        z = 1.0 - 2.0 * (i + 0.5) / size
        rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        golden = (1.0 + np.sqrt(5.0)) / 2.0
        phi = 2.0 * np.pi * i / golden
        return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
    raise UnsupportedConfiguration(
        f"sphere scan supports state dimension up to 3, got {n}"
    )


def _refinement_patch(center: np.ndarray, resolution: float) -> np.ndarray:
    """Local grid of directions around `center` at resolution/100, center included."""
    n = center.size
    if n == 1:
        return center.reshape(1, 1).copy()
    step = resolution / 100.0
    if n == 2:
        theta = float(np.arctan2(center[1], center[0]))
        offsets = step * np.arange(-100, 101)
        angles = theta + offsets
        return np.column_stack([np.cos(angles), np.sin(angles)])
    # n == 3: walk a tangent-plane grid and project back to the sphere
    axis = np.zeros(3)
    axis[int(np.argmin(np.abs(center)))] = 1.0
    e1 = np.cross(center, axis)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(center, e1)
    coeffs = step * np.arange(-100, 101)
    aa, bb = np.meshgrid(coeffs, coeffs, indexing="ij")
    pts = (
        center[None, :]
        + aa.reshape(-1, 1) * e1[None, :]
        + bb.reshape(-1, 1) * e2[None, :]
    )
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return pts


class _ScanEvaluator:
    """Vectorized max-condition residual + transversality scoring via the
    fundamental costate matrices."""

    def __init__(
        self,
        system: ControlSystem,
        trajectory: Trajectory,
        mu: RelaxedControl,
        cfg: LambdaConfig,
    ):
        self.system = system
        self.cfg = cfg
        self.phi = fundamental_costate(system, trajectory, mu)
        mesh = trajectory.mesh
        self.nodes = mesh.nodes()
        self.xs = trajectory.samples
        self.xdot = _reference_velocities(system, trajectory, mu, admissible=True)

        cs = system.control_set
        dyn = system.dynamics
        m = mesh.cells
        if isinstance(cs, FiniteSet):
            pts = cs.point_array()
            F = np.empty((m + 1, len(pts), dyn.n))
            for i in range(m + 1):
                for q, p in enumerate(pts):
                    F[i, q] = dyn.eval(float(self.nodes[i]), self.xs[i], p)
            self._finite_F = F
            self._affine = None
        else:
            g0 = np.empty((m + 1, dyn.n))
            G = np.empty((m + 1, dyn.n, dyn.r))
            for i in range(m + 1):
                decomp = dyn.affine_control_decomposition(float(self.nodes[i]), self.xs[i])
                if decomp is None:
                    raise UnsupportedConfiguration(
                        "maximum over a continuum control set needs control-affine dynamics"
                    )
                g0[i], G[i] = decomp
            self._finite_F = None
            self._affine = (g0, G)

    def scores(self, directions: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(residuals, transversality values, scores) for a block of unit covectors."""
        cs = self.system.control_set
        # psi[d, i, :] via superposition from the canonical transports
        psi = np.einsum("dk,ikm->dim", directions, self.phi)
        if self._finite_F is not None:
            H = np.einsum("dim,iqm->diq", psi, self._finite_F)
            M = H.max(axis=2)
        else:
            g0, G = self._affine
            drift = np.einsum("dim,im->di", psi, g0)
            coeff = np.einsum("dim,imr->dir", psi, G)
            if isinstance(cs, UnitSphere):
                M = drift + np.linalg.norm(coeff, axis=2)
            elif isinstance(cs, Box):
                lo = np.asarray(cs.lower)
                hi = np.asarray(cs.upper)
                M = drift + np.sum(np.maximum(coeff * lo, coeff * hi), axis=2)
            else:
                raise UnsupportedConfiguration(f"unknown control set {type(cs).__name__}")
        along = np.einsum("dim,im->di", psi, self.xdot)
        residuals = np.max(M - along, axis=1)
        M_end = M[:, -1]
        if self.cfg.transversality_convention == "definition":
            trans = self.cfg.s * M_end
        else:
            trans = M_end
        scores = residuals + np.maximum(trans, 0.0)
        return residuals, trans, scores

    def passes(self, residual: float, trans: float) -> bool:
        return residual <= self.cfg.residual_tol and trans <= self.cfg.residual_tol


def search_lambda(
    system: ControlSystem,
    trajectory: Trajectory,
    mu: RelaxedControl,
    cfg: LambdaConfig,
    admissible: bool | None = None,
) -> LambdaVerdict:
    """Scan terminal covectors on the unit sphere for a certificate.

    The fundamental costate matrices are computed once; every direction is
    scored by its max-condition residual plus the positive part of the
    transversality value.  The first direction passing both screens (in
    canonical grid order) gets one local refinement pass at resolution/100
    and a full four-condition check; if nothing passes, the best scorer gets
    the same refinement before the emptiness verdict is issued.
    """
    if admissible is None:
        audit = audit_admissibility(system, trajectory, mu, cfg.residual_tol)
        if not audit.passed:
            raise InadmissiblePairError(
                f"reference pair fails admissibility (sup residual {audit.sup_residual:.3e})"
            )
        admissible = True

    n = system.dynamics.n
    grid = _sphere_grid(n, cfg.sphere_resolution)
    ev = _ScanEvaluator(system, trajectory, mu, cfg)

    scanned = 0
    min_score = np.inf
    candidate_idx: int | None = None
    block = 2048
    residuals_all = np.empty(len(grid))
    trans_all = np.empty(len(grid))
    for start in range(0, len(grid), block):
        sl = slice(start, min(start + block, len(grid)))
        res, trans, scores = ev.scores(grid[sl])
        residuals_all[sl] = res
        trans_all[sl] = trans
        scanned += sl.stop - sl.start
        min_score = min(min_score, float(scores.min()))
        if candidate_idx is None:
            ok = np.nonzero((res <= cfg.residual_tol) & (trans <= cfg.residual_tol))[0]
            if ok.size:
                candidate_idx = start + int(ok[0])
                break

    if candidate_idx is None:
        scores_all = residuals_all + np.maximum(trans_all, 0.0)
        candidate_idx = int(np.argmin(scores_all))
        candidate_passes = False
    else:
        candidate_passes = True

    # one local refinement pass around the candidate
    center = grid[candidate_idx]
    patch = _refinement_patch(center, cfg.sphere_resolution)
    p_res, p_trans, p_scores = ev.scores(patch)
    scanned += len(patch)
    min_score = min(min_score, float(p_scores.min()))
    ok = (p_res <= cfg.residual_tol) & (p_trans <= cfg.residual_tol)

    chosen: np.ndarray | None = None
    if np.any(ok):
        best_in_patch = int(np.argmin(np.where(ok, p_scores, np.inf)))
        chosen = patch[best_in_patch]
    elif candidate_passes:
        chosen = center

    if chosen is not None:
        report = check_lambda_candidate(
            system, trajectory, mu, chosen, cfg, admissible=admissible
        )
        if report.is_member:
            return LambdaVerdict(outcome="Found", psi_terminal=chosen, report=report)
        # screening passed but a full condition failed; fall through to emptiness

    return LambdaVerdict(
        outcome="EmptyUpToResolution",
        min_over_scan_of_max_residual=float(min_score),
        scan_size=scanned,
    )
