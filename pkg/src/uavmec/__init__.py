"""Energy-minimal planning for a UAV-carried wireless-powered edge server.

The package alternates two subproblem solvers: a Lagrangian-dual solver for
the offloading / CPU-frequency schedule at a fixed flight path, and a
sequential convex refinement of the flight path at a fixed schedule (each
convex step handled by a dense interior-point QCQP solver).  Two fixed
benchmark paths (straight dash and semicircle) are included for comparison.
"""

from .model import (
    Scenario,
    Plan,
    EnergyLedger,
    ConstraintReport,
    ScenarioError,
    DimensionError,
    OffloadRangeError,
    channel_gain,
    harvested_energy_prefix,
    offload_tx_power,
    compute_energy,
    propulsion_energy,
    evaluate_ledger,
    check_constraints,
)
from .qcqp import QcqpProblem, QcqpSolution, solve as qcqp_solve, phase1, kkt_residuals
from .offload_solver import (
    DualState,
    OffloadSolution,
    recover_primal,
    dual_subgradient_step,
    solve_p2,
    primal_oracle_p2,
    probe_feasibility,
)
from .trajectory_solver import (
    HarvestLowerBound,
    ScaState,
    sca_lower_bound,
    assemble_p4,
    solve_p3,
)
from .planner import (
    PlannerResult,
    SweepCell,
    straight_line_trajectory,
    semicircle_trajectory,
    run_algorithm1,
    run_baseline,
    sweep_T,
)
from .config import load_scenario, parse_scenario_text, write_scenario, bundled_scenario

__version__ = "0.1.0"
