"""Physical model of a UAV-carried wireless-powered edge-computing system.

A single rotary UAV flies a fixed-altitude mission of duration ``T`` over
``K`` ground users.  It radiates RF power continuously (the users harvest
it), receives offloaded computation bits over TDMA subslots, computes them
on board, and spends propulsion energy proportional to squared speed.

This module holds the scenario description, the candidate plan (offloaded
bits, CPU frequencies, trajectory), all per-slot energy formulas, the full
feasibility checker for the joint planning problem, and the energy ledger
used as the planner objective.  Everything here is a pure function of its
inputs; :class:`Scenario` and :class:`Plan` are immutable after
construction.

Conventions
-----------
* positions are 2-D horizontal coordinates in meters, altitude is ``H``;
* slot ``n`` (0-based in code) occupies wall time ``T/N`` and uses the
  trajectory point ``traj[n]``; ``traj`` has ``N + 1`` points;
* each slot is split into ``K`` TDMA subslots of duration
  ``lam = T / (N K)``, one per user, so TX energy in a slot is
  ``lam * P_k``;
* users cannot offload in the last slot and the UAV cannot compute in the
  first one (the pipeline needs one slot of latency).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "Scenario",
    "Plan",
    "EnergyLedger",
    "ConstraintReport",
    "ScenarioError",
    "DimensionError",
    "OffloadRangeError",
    "EXPONENT_CAP",
    "channel_gain",
    "channel_gains",
    "harvest_increments",
    "harvested_energy_prefix",
    "offload_tx_power",
    "tx_energy",
    "compute_energy",
    "propulsion_energy",
    "propulsion_profile",
    "evaluate_ledger",
    "check_constraints",
]

# Spectral-efficiency cap: loads above 64 bit/s/Hz would overflow the
# power formula long before they are physically meaningful.
EXPONENT_CAP = 64.0


class ScenarioError(ValueError):
    """A scenario field violates its physical range or an invariant."""


class DimensionError(ValueError):
    """Array shapes do not match the scenario dimensions."""


class OffloadRangeError(ValueError):
    """Offload load out of numeric range (spectral efficiency over cap)."""


def _as_array(x, shape, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.shape != shape:
        raise DimensionError(f"{name}: expected shape {shape}, got {a.shape}")
    a = a.copy()
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Scenario:
    """Full physical and timing description of one mission.

    Attributes
    ----------
    K         : number of ground users (>= 1)
    user_pos  : (K, 2) user coordinates [m]
    R         : (K,) total computation demand per user [bits]
    H         : UAV altitude [m]
    T         : mission duration [s]
    N         : number of time slots (>= 2)
    P_u       : UAV RF transmit power [W]
    eta       : energy conversion efficiency, 0 < eta <= 1
    B         : offload bandwidth [Hz]
    sigma2    : receiver noise power [W]
    Gamma     : capacity gap of the modulation/coding scheme (>= 1 typical)
    beta0     : reference channel power gain at 1 m [linear]
    M         : CPU cycles per bit
    gamma_c   : effective switched capacitance [J s^2 / cycle^3]
    W_mass    : UAV mass [kg]
    V_max     : maximum horizontal speed [m/s]
    q0, qF    : required initial / final horizontal positions [m]
    xi        : trajectory-refinement displacement tolerance
    xi1       : outer-loop energy tolerance [J]
    """

    K: int
    user_pos: np.ndarray
    R: np.ndarray
    H: float
    T: float
    N: int
    P_u: float
    eta: float
    B: float
    sigma2: float
    Gamma: float
    beta0: float
    M: float
    gamma_c: float
    W_mass: float
    V_max: float
    q0: np.ndarray
    qF: np.ndarray
    xi: float = 1e-4
    xi1: float = 1e-4

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise ScenarioError(f"K must be a positive integer, got {self.K}")
        object.__setattr__(self, "K", int(self.K))
        if int(self.N) != self.N or self.N < 2:
            raise ScenarioError(f"N must be an integer >= 2, got {self.N}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "user_pos",
                           _as_array(self.user_pos, (self.K, 2), "user_pos"))
        object.__setattr__(self, "R", _as_array(self.R, (self.K,), "R"))
        object.__setattr__(self, "q0", _as_array(self.q0, (2,), "q0"))
        object.__setattr__(self, "qF", _as_array(self.qF, (2,), "qF"))
        positive = {
            "H": self.H, "T": self.T, "P_u": self.P_u, "B": self.B,
            "sigma2": self.sigma2, "Gamma": self.Gamma, "beta0": self.beta0,
            "M": self.M, "gamma_c": self.gamma_c, "W_mass": self.W_mass,
            "V_max": self.V_max, "xi": self.xi, "xi1": self.xi1,
        }
        for name, value in positive.items():
            if not (value > 0) or not math.isfinite(value):
                raise ScenarioError(f"{name} must be positive and finite, got {value}")
        if not (0.0 < self.eta <= 1.0):
            raise ScenarioError(f"eta must lie in (0, 1], got {self.eta}")
        if np.any(self.R < 0):
            raise ScenarioError("R entries must be nonnegative")
        # The endpoint dash must be flyable at all; otherwise no trajectory
        # can satisfy both the speed cap and the endpoint pins.
        dash = float(np.linalg.norm(self.qF - self.q0)) / self.T
        if dash > self.V_max * (1 + 1e-12):
            raise ScenarioError(
                f"endpoints require average speed {dash:.3g} m/s > V_max={self.V_max}")

    # Derived timing quantities -------------------------------------------------

    @property
    def lam(self) -> float:
        """TDMA subslot duration T/(N K) [s]."""
        return self.T / (self.N * self.K)

    @property
    def slot(self) -> float:
        """Slot duration T/N [s]."""
        return self.T / self.N

    @property
    def kappa(self) -> float:
        """Propulsion coefficient 0.5 * W_mass * T / N [J s^2 / m^2]."""
        return 0.5 * self.W_mass * self.T / self.N

    def with_T(self, T: float) -> "Scenario":
        """Same mission with a different duration (lam/kappa re-derive)."""
        return replace(self, T=float(T))


# ---------------------------------------------------------------------------
# Per-slot physics
# ---------------------------------------------------------------------------

def channel_gain(s: Scenario, q_u, k: int) -> float:
    """LoS channel power gain between the UAV at ``q_u`` and user ``k``.

    Inverse-square law in 3-D distance: beta0 / (H^2 + ||q_u - q_k||^2).
    ``k`` is a 0-based user index.
    """
    if not 0 <= k < s.K:
        raise IndexError(f"user index {k} out of range [0, {s.K})")
    q_u = np.asarray(q_u, dtype=float)
    d2 = float(np.sum((q_u - s.user_pos[k]) ** 2))
    return s.beta0 / (s.H ** 2 + d2)


def channel_gains(s: Scenario, traj) -> np.ndarray:
    """(K, N) channel gains; slot n uses trajectory point n."""
    traj = np.asarray(traj, dtype=float)
    if traj.shape[0] < s.N:
        raise DimensionError(f"trajectory has {traj.shape[0]} points, need >= {s.N}")
    d2 = np.sum((traj[None, : s.N, :] - s.user_pos[:, None, :]) ** 2, axis=2)
    return s.beta0 / (s.H ** 2 + d2)


def harvest_increments(s: Scenario, traj) -> np.ndarray:
    """(K, N) per-slot harvested energy (T/N) * eta * h * P_u [J]."""
    return s.slot * s.eta * s.P_u * channel_gains(s, traj)


def harvested_energy_prefix(s: Scenario, traj, k: int, n: int) -> float:
    """Total energy harvested by user ``k`` over the first ``n`` slots [J].

    ``n`` is a slot count in 1..N.  Nondecreasing in ``n``.
    """
    if not 1 <= n <= s.N:
        raise ValueError(f"slot count n={n} outside 1..{s.N}")
    if not 0 <= k < s.K:
        raise IndexError(f"user index {k} out of range [0, {s.K})")
    traj = np.asarray(traj, dtype=float)
    if traj.shape[0] < n:
        raise DimensionError(f"trajectory has {traj.shape[0]} points, need >= {n}")
    d2 = np.sum((traj[:n] - s.user_pos[k]) ** 2, axis=1)
    h = s.beta0 / (s.H ** 2 + d2)
    return float(s.slot * s.eta * s.P_u * np.sum(h))


def offload_tx_power(s: Scenario, gain: float, l_bits: float) -> float:
    """User TX power needed to push ``l_bits`` through one subslot [W].

    Inverts the capacity formula at gap ``Gamma``:
    P = Gamma * sigma2 * (2^(l/(B lam)) - 1) / gain.
    Zero iff ``l_bits`` is zero; strictly convex and increasing in the load.
    """
    if gain <= 0:
        raise ValueError("channel gain must be positive")
    if l_bits < 0:
        raise ValueError("offloaded bits must be nonnegative")
    ratio = l_bits / (s.B * s.lam)
    if ratio > EXPONENT_CAP:
        raise OffloadRangeError(
            f"offload load out of numeric range: l/(B lam) = {ratio:.3g} > {EXPONENT_CAP}")
    return s.Gamma * s.sigma2 * (2.0 ** ratio - 1.0) / gain


def tx_energy(s: Scenario, gains: np.ndarray, l: np.ndarray) -> np.ndarray:
    """Vectorized per-slot TX energy lam * P_k for a (K, N) load matrix [J]."""
    ratio = np.asarray(l, dtype=float) / (s.B * s.lam)
    if np.any(ratio > EXPONENT_CAP):
        raise OffloadRangeError("offload load out of numeric range")
    return s.lam * s.Gamma * s.sigma2 * (np.exp2(ratio) - 1.0) / gains


def compute_energy(s: Scenario, f) -> float | np.ndarray:
    """CMOS compute energy for one slot at CPU frequency ``f`` [J].

    gamma_c * (T/N) * f^3; the same law applies to users and to the UAV.
    """
    f = np.asarray(f, dtype=float)
    if np.any(f < 0):
        raise ValueError("CPU frequency must be nonnegative")
    out = s.gamma_c * s.slot * f ** 3
    return float(out) if out.ndim == 0 else out


def propulsion_energy(s: Scenario, q_a, q_b) -> float:
    """Propulsion energy for one slot moving from q_a to q_b [J].

    kappa * v^2 with v = ||q_b - q_a|| / (T/N).
    """
    q_a = np.asarray(q_a, dtype=float)
    q_b = np.asarray(q_b, dtype=float)
    v = float(np.linalg.norm(q_b - q_a)) / s.slot
    return s.kappa * v * v


def propulsion_profile(s: Scenario, traj) -> np.ndarray:
    """(N,) per-slot propulsion energies along a trajectory [J]."""
    traj = np.asarray(traj, dtype=float)
    if traj.shape != (s.N + 1, 2):
        raise DimensionError(f"trajectory: expected {(s.N + 1, 2)}, got {traj.shape}")
    seg = np.linalg.norm(np.diff(traj, axis=0), axis=1)
    return s.kappa * (seg / s.slot) ** 2


# ---------------------------------------------------------------------------
# Plan and ledger
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Plan:
    """One candidate joint decision: trajectory, loads and CPU schedules.

    traj   : (N+1, 2) UAV horizontal positions [m]
    l      : (K, N) offloaded bits per user and slot (last column zero)
    f_user : (K, N) user CPU frequencies [cycles/s]
    f_uav  : (N,) UAV CPU frequencies [cycles/s] (first entry zero)
    """

    traj: np.ndarray
    l: np.ndarray
    f_user: np.ndarray
    f_uav: np.ndarray

    def __post_init__(self):
        traj = np.asarray(self.traj, dtype=float)
        if traj.ndim != 2 or traj.shape[1] != 2 or traj.shape[0] < 3:
            raise DimensionError(f"traj: expected (N+1, 2) with N >= 2, got {traj.shape}")
        n = traj.shape[0] - 1
        object.__setattr__(self, "traj", _as_array(traj, (n + 1, 2), "traj"))
        k = np.asarray(self.l, dtype=float).shape[0]
        object.__setattr__(self, "l", _as_array(self.l, (k, n), "l"))
        object.__setattr__(self, "f_user", _as_array(self.f_user, (k, n), "f_user"))
        object.__setattr__(self, "f_uav", _as_array(self.f_uav, (n,), "f_uav"))

    @property
    def K(self) -> int:
        return self.l.shape[0]

    @property
    def N(self) -> int:
        return self.l.shape[1]

    def validate_shapes(self, s: Scenario) -> None:
        if (self.K, self.N) != (s.K, s.N):
            raise DimensionError(
                f"plan is {self.K} users x {self.N} slots, scenario wants {s.K} x {s.N}")


def zero_plan(s: Scenario, traj=None) -> Plan:
    """All-zero decisions on the given (or endpoint-interpolated) trajectory."""
    if traj is None:
        t = np.linspace(0.0, 1.0, s.N + 1)[:, None]
        traj = s.q0[None, :] + t * (s.qF - s.q0)[None, :]
    return Plan(traj=np.asarray(traj, dtype=float),
                l=np.zeros((s.K, s.N)),
                f_user=np.zeros((s.K, s.N)),
                f_uav=np.zeros(s.N))


@dataclass(frozen=True)
class EnergyLedger:
    """Per-slot, per-party energy accounting for one plan [J].

    harvested   : (K, N) per-slot harvested increments
    local       : (K, N) user compute energy
    tx          : (K, N) user TX energy (lam * P_k)
    uav_compute : (N,) UAV compute energy (first entry zero)
    propulsion  : (N,) per-slot propulsion energy
    uav_total   : scalar planner objective:
                  sum(propulsion) + T * P_u + sum(uav_compute)
    """

    harvested: np.ndarray
    local: np.ndarray
    tx: np.ndarray
    uav_compute: np.ndarray
    propulsion: np.ndarray
    uav_total: float


def evaluate_ledger(s: Scenario, p: Plan) -> EnergyLedger:
    """Price every energy flow of a plan and total the UAV side."""
    p.validate_shapes(s)
    gains = channel_gains(s, p.traj)
    harvested = harvest_increments(s, p.traj)
    local = s.gamma_c * s.slot * p.f_user ** 3
    tx = tx_energy(s, gains, p.l)
    uav_compute = s.gamma_c * s.slot * p.f_uav ** 3
    propulsion = propulsion_profile(s, p.traj)
    total = float(np.sum(propulsion) + s.T * s.P_u + np.sum(uav_compute[1:]))
    return EnergyLedger(harvested=harvested, local=local, tx=tx,
                        uav_compute=uav_compute, propulsion=propulsion,
                        uav_total=total)


# ---------------------------------------------------------------------------
# Constraint checker
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstraintCheck:
    """Worst absolute violation of one constraint family and its scale."""

    violation: float
    scale: float

    @property
    def relative(self) -> float:
        return self.violation / self.scale if self.scale > 0 else self.violation

    def ok(self, tol: float) -> bool:
        return self.relative <= tol


@dataclass(frozen=True)
class ConstraintReport:
    """Worst violations of the eight joint-planning constraint families.

    demand        : per-user bit balance (equality, scaled by R_k)
    energy_causal : user prefix spending vs prefix harvest (scaled by the
                    user's total harvest)
    uav_causal    : UAV compute prefix vs offloaded prefix (bits, scaled by
                    total demand)
    uav_balance   : total UAV compute vs total offloaded bits (equality)
    pipeline      : last-slot offload and first-slot UAV compute pins
    speed         : per-slot speed vs V_max
    endpoints     : initial/final position pins
    signs         : nonnegativity of l, f_user, f_uav
    """

    demand: ConstraintCheck
    energy_causal: ConstraintCheck
    uav_causal: ConstraintCheck
    uav_balance: ConstraintCheck
    pipeline: ConstraintCheck
    speed: ConstraintCheck
    endpoints: ConstraintCheck
    signs: ConstraintCheck

    def entries(self) -> dict[str, ConstraintCheck]:
        return {
            "demand": self.demand,
            "energy_causal": self.energy_causal,
            "uav_causal": self.uav_causal,
            "uav_balance": self.uav_balance,
            "pipeline": self.pipeline,
            "speed": self.speed,
            "endpoints": self.endpoints,
            "signs": self.signs,
        }

    def feasible(self, tol: float = 1e-6) -> bool:
        return all(c.ok(tol) for c in self.entries().values())

    def worst(self) -> tuple[str, float]:
        name = max(self.entries(), key=lambda k: self.entries()[k].relative)
        return name, self.entries()[name].relative

    def summary(self) -> str:
        lines = []
        for name, c in self.entries().items():
            lines.append(f"{name:14s} worst {c.violation:.3e} (rel {c.relative:.3e})")
        return "\n".join(lines)


def check_constraints(s: Scenario, p: Plan) -> ConstraintReport:
    """Measure the worst violation of every constraint family for a plan.

    Equality constraints report absolute residuals; inequalities report
    only the violating side (negative slack clamped at zero).  Each family
    carries a natural scale so callers can apply a single relative
    tolerance across mixed units.
    """
    p.validate_shapes(s)
    gains = channel_gains(s, p.traj)
    harvested = harvest_increments(s, p.traj)
    local = s.gamma_c * s.slot * p.f_user ** 3
    tx = tx_energy(s, gains, p.l)

    # Per-user bit balance: local bits over all N slots plus offloaded bits
    # over the first N-1 slots must equal the demand exactly.
    local_bits = s.slot * np.sum(p.f_user, axis=1) / s.M
    off_bits = np.sum(p.l[:, : s.N - 1], axis=1)
    demand_res = np.abs(local_bits + off_bits - s.R)
    demand = ConstraintCheck(float(np.max(demand_res)),
                             float(np.max(np.maximum(s.R, 1.0))))

    # Energy causality: cumulative spending can never exceed cumulative
    # harvest, for every user and every prefix.
    spend_prefix = np.cumsum(local + tx, axis=1)
    harv_prefix = np.cumsum(harvested, axis=1)
    gap = spend_prefix - harv_prefix
    energy_causal = ConstraintCheck(float(np.max(np.maximum(gap, 0.0))),
                                    float(np.max(harv_prefix[:, -1])))

    # UAV compute causality: bits computed through slot n are bounded by
    # bits offloaded through slot n-1, for n = 1..N-1 (equality at N below).
    uav_bits_prefix = np.cumsum(s.slot * p.f_uav / s.M)
    off_prefix = np.concatenate([[0.0], np.cumsum(np.sum(p.l, axis=0))])
    causal_gap = uav_bits_prefix[: s.N - 1] - off_prefix[: s.N - 1]
    bit_scale = float(max(np.sum(s.R), 1.0))
    uav_causal = ConstraintCheck(float(np.max(np.maximum(causal_gap, 0.0), initial=0.0)),
                                 bit_scale)

    # Total balance: the UAV must compute exactly what was offloaded.
    balance_res = abs(float(uav_bits_prefix[-1] - off_prefix[s.N - 1]))
    uav_balance = ConstraintCheck(balance_res, bit_scale)

    # Pipeline pins: no offload in the last slot, no UAV compute in the first.
    f_scale = float(max(np.max(p.f_uav), np.max(p.f_user), 1.0))
    pipeline_rel = max(float(np.max(np.abs(p.l[:, -1]))) / bit_scale,
                       abs(float(p.f_uav[0])) / f_scale)
    pipeline = ConstraintCheck(pipeline_rel, 1.0)

    # Speed cap per slot.
    seg_speed = np.linalg.norm(np.diff(p.traj, axis=0), axis=1) / s.slot
    speed = ConstraintCheck(float(np.max(np.maximum(seg_speed - s.V_max, 0.0))),
                            s.V_max)

    # Endpoint pins.
    end_res = max(float(np.linalg.norm(p.traj[0] - s.q0)),
                  float(np.linalg.norm(p.traj[-1] - s.qF)))
    endpoints = ConstraintCheck(end_res,
                                float(max(np.linalg.norm(s.qF - s.q0), 1.0)))

    # Sign constraints.
    neg_bits = float(max(0.0, -np.min(p.l, initial=0.0)))
    neg_f = float(max(0.0, -min(np.min(p.f_user, initial=0.0),
                                np.min(p.f_uav, initial=0.0))))
    signs = ConstraintCheck(max(neg_bits / bit_scale, neg_f / f_scale), 1.0)

    return ConstraintReport(demand=demand, energy_causal=energy_causal,
                            uav_causal=uav_causal, uav_balance=uav_balance,
                            pipeline=pipeline, speed=speed,
                            endpoints=endpoints, signs=signs)
