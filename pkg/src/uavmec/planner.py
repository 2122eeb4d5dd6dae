"""Alternating planner and benchmark flight paths.

The full joint problem is nonconvex, so the planner alternates its two
convex halves from a feasible initial path: solve the offload/CPU schedule
at the current path, then refine the path at that schedule, and stop when
the mission energy settles.  Both half-steps can only lower the objective,
so the recorded energy trace is nonincreasing.

Two fixed benchmark paths ship with the planner: a constant-speed straight
dash between the endpoints, and a constant-speed semicircle whose diameter
is the endpoint separation (flown on the side of the user centroid).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .model import (
    Scenario,
    Plan,
    EnergyLedger,
    evaluate_ledger,
    propulsion_profile,
)
from .offload_solver import (
    solve_p2,
    probe_feasibility,
    InfeasibleTrajectoryError,
)
from .trajectory_solver import solve_p3

__all__ = [
    "PlannerResult",
    "SweepCell",
    "InfeasibleScenarioError",
    "BaselineSpeedError",
    "SCHEMES",
    "straight_line_trajectory",
    "semicircle_trajectory",
    "run_algorithm1",
    "run_baseline",
    "sweep_T",
]

SCHEMES = ("proposed", "straight-line", "semi-circle")


class InfeasibleScenarioError(RuntimeError):
    """The workload cannot be met from the initial path's harvest."""


class BaselineSpeedError(RuntimeError):
    """Baseline violates V_max."""


@dataclass(frozen=True)
class PlannerResult:
    plan: Plan
    ledger: EnergyLedger
    outer_trace: tuple       # ((iteration, mission energy [J]), ...)
    scheme: str
    status: str              # "converged" | "iteration-limit" | "infeasible"
    # last schedule solve's (iteration, dual value, max violation) rows
    p2_trace: tuple = ()

    @property
    def uav_total(self) -> float:
        return self.ledger.uav_total

    @property
    def iterations(self) -> int:
        return len(self.outer_trace)


@dataclass(frozen=True)
class SweepCell:
    T: float
    scheme: str
    result: PlannerResult | None
    error: str | None = None

    @property
    def converged(self) -> bool:
        return self.result is not None and self.result.status == "converged"


def straight_line_trajectory(s: Scenario) -> np.ndarray:
    """Constant-speed straight dash from q0 to qF, N+1 points."""
    t = np.linspace(0.0, 1.0, s.N + 1)[:, None]
    return s.q0[None, :] + t * (s.qF - s.q0)[None, :]


def semicircle_trajectory(s: Scenario) -> np.ndarray:
    """Constant-speed semicircle over the q0-qF diameter, N+1 points.

    The arc bulges into the half-plane containing the user centroid (ties
    go to the left of the flight direction).  Raises
    :class:`BaselineSpeedError` when the chord speed exceeds V_max.
    """
    chord = s.qF - s.q0
    length = float(np.linalg.norm(chord))
    if length == 0.0:
        return np.tile(s.q0, (s.N + 1, 1))
    e1 = chord / length
    left = np.array([-e1[1], e1[0]])
    centroid = s.user_pos.mean(axis=0)
    side = float(left @ (centroid - 0.5 * (s.q0 + s.qF)))
    e2 = left if side >= 0.0 else -left
    radius = 0.5 * length
    center = 0.5 * (s.q0 + s.qF)
    phi = np.pi * np.arange(s.N + 1) / s.N
    traj = (center[None, :]
            - radius * np.cos(phi)[:, None] * e1[None, :]
            + radius * np.sin(phi)[:, None] * e2[None, :])
    traj[0] = s.q0
    traj[-1] = s.qF
    step = 2.0 * radius * np.sin(np.pi / (2.0 * s.N))
    if step / s.slot > s.V_max * (1.0 + 1e-12):
        raise BaselineSpeedError(
            f"baseline violates V_max: semicircle needs {step / s.slot:.4g} m/s")
    return traj


def _initial_trajectory(s: Scenario, init) -> np.ndarray:
    if isinstance(init, str):
        if init == "straight":
            return straight_line_trajectory(s)
        if init == "semi-circle":
            return semicircle_trajectory(s)
        raise ValueError(f"unknown initialization {init!r}")
    traj = np.asarray(init, dtype=float)
    if traj.shape != (s.N + 1, 2):
        raise ValueError(f"initial trajectory must be {(s.N + 1, 2)}, got {traj.shape}")
    return traj.copy()


def run_algorithm1(s: Scenario, init="straight", xi: float | None = None,
                   xi1: float | None = None, max_outer: int = 50,
                   tol: float = 1e-6) -> PlannerResult:
    """Alternate the two subproblem solvers until the energy settles.

    ``init`` selects the starting path ("straight", "semi-circle", or an
    explicit (N+1, 2) array).  Convergence: successive mission energies
    within ``xi1``.  Hitting ``max_outer`` returns the best iterate with
    status "iteration-limit" rather than failing.
    """
    xi1 = s.xi1 if xi1 is None else float(xi1)
    traj = _initial_trajectory(s, init)
    margins = probe_feasibility(s, traj)
    if np.any(margins < 0.0):
        k = int(np.argmin(margins))
        raise InfeasibleScenarioError(
            f"infeasible scenario: user {k} short by {-margins[k]:.4g} bits "
            f"on the initial path")

    trace: list[tuple[int, float]] = []
    status = "iteration-limit"
    sol = None
    for i in range(1, max_outer + 1):
        sol = solve_p2(s, traj, tol=tol)
        traj, _ = solve_p3(s, sol.plan_part, traj, xi=xi)
        energy = float(np.sum(propulsion_profile(s, traj))) + s.T * s.P_u + sol.objective
        trace.append((i, energy))
        if i >= 2 and abs(trace[-1][1] - trace[-2][1]) <= xi1:
            status = "converged"
            break

    plan = Plan(traj=traj, l=sol.l, f_user=sol.f_user, f_uav=sol.f_uav)
    ledger = evaluate_ledger(s, plan)
    return PlannerResult(plan=plan, ledger=ledger, outer_trace=tuple(trace),
                         scheme="proposed", status=status, p2_trace=sol.trace)


def run_baseline(s: Scenario, scheme: str, tol: float = 1e-6) -> PlannerResult:
    """Fix the path to a benchmark shape and solve the schedule once."""
    if scheme == "straight-line":
        traj = straight_line_trajectory(s)
    elif scheme == "semi-circle":
        traj = semicircle_trajectory(s)
    else:
        raise ValueError(f"unknown baseline scheme {scheme!r}")
    speeds = np.linalg.norm(np.diff(traj, axis=0), axis=1) / s.slot
    if np.max(speeds) > s.V_max * (1.0 + 1e-12):
        raise BaselineSpeedError(f"baseline violates V_max: {np.max(speeds):.4g} m/s")
    sol = solve_p2(s, traj, tol=tol)
    plan = Plan(traj=traj, l=sol.l, f_user=sol.f_user, f_uav=sol.f_uav)
    ledger = evaluate_ledger(s, plan)
    return PlannerResult(plan=plan, ledger=ledger,
                         outer_trace=((1, ledger.uav_total),),
                         scheme=scheme, status="converged", p2_trace=sol.trace)


def _run_scheme(s: Scenario, scheme: str, xi, xi1, tol) -> PlannerResult:
    if scheme == "proposed":
        return run_algorithm1(s, xi=xi, xi1=xi1, tol=tol)
    return run_baseline(s, scheme, tol=tol)


def sweep_T(s: Scenario, T_values: Iterable[float],
            schemes: Sequence[str] = SCHEMES, xi: float | None = None,
            xi1: float | None = None, tol: float = 1e-6) -> list[SweepCell]:
    """Re-derive the timing for each mission duration and run every scheme.

    Output is ordered by T (ascending), then by the given scheme order.
    Per-cell failures are captured in the cell instead of aborting the
    sweep.
    """
    cells: list[SweepCell] = []
    for T in sorted(float(t) for t in T_values):
        try:
            st = s.with_T(T)
        except Exception as exc:  # scenario invariant broke for this T
            for scheme in schemes:
                cells.append(SweepCell(T=T, scheme=scheme, result=None, error=str(exc)))
            continue
        for scheme in schemes:
            try:
                cells.append(SweepCell(T=T, scheme=scheme,
                                       result=_run_scheme(st, scheme, xi, xi1, tol)))
            except (InfeasibleScenarioError, InfeasibleTrajectoryError,
                    BaselineSpeedError) as exc:
                cells.append(SweepCell(T=T, scheme=scheme, result=None, error=str(exc)))
    return cells
