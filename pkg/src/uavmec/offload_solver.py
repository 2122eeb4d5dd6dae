"""Offloading and CPU-frequency optimization at a fixed flight path.

With the trajectory held fixed, the joint plan reduces to a convex program
in the offloaded bits ``l``, the user CPU frequencies ``f_user`` and the
UAV CPU frequencies ``f_uav`` whose objective is the UAV compute energy.
This module solves it by Lagrangian duality: the inner minimization has
closed forms per variable (exponential TX cost against linear bit prices,
cubic compute cost against linear bit and energy prices), so the dual is
maximized over the multipliers directly, first with a diminishing-step
subgradient warmup and then with a projected quasi-Newton polish.

An independent primal solver (augmented-Lagrangian penalties on the
coupling constraints, bound-constrained descent over the nonnegativity
box) doubles as a ground-truth oracle for small instances.

All public interfaces take and return SI units.  Internally the solver
works in Mbit / GHz / mJ, which conditions the multipliers to order one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .model import (
    Scenario,
    channel_gains,
    harvest_increments,
    EXPONENT_CAP,
)

__all__ = [
    "DualState",
    "OffloadSolution",
    "OffloadKkt",
    "InfeasibleTrajectoryError",
    "DualIterationLimitError",
    "DualRecoveryError",
    "recover_primal",
    "dual_subgradient_step",
    "dual_value",
    "lagrangian_value",
    "solve_p2",
    "primal_oracle_p2",
    "probe_feasibility",
]

# Internal unit scales: bits -> Mbit, Hz -> GHz, J -> mJ.
_BIT = 1e6
_FREQ = 1e9
_EN = 1e-3
# Bit-price multipliers (per-bit prices) scale by mJ/Mbit over J/bit.
_PRICE = _BIT / _EN


class InfeasibleTrajectoryError(RuntimeError):
    """The demand cannot be met with the energy this trajectory delivers."""


class DualIterationLimitError(RuntimeError):
    """Dual ascent stalled before reaching the requested KKT tolerance."""


class DualRecoveryError(ValueError):
    """Dual iterate outside recoverable region (caller must project)."""


@dataclass(frozen=True)
class DualState:
    """Multipliers of the fixed-trajectory subproblem (SI units).

    mu       : (K,) bit-balance prices [J/bit]
    nu       : (K, N) energy-causality prices [dimensionless]
    theta    : (N,) UAV-causality prices; the last entry prices the total
               compute balance [J/bit]
    rho      : (K,) prices of the last-slot offload pins (kept at zero; the
               pins are enforced by construction)
    vartheta : price of the first-slot UAV compute pin (kept at zero)
    """

    mu: np.ndarray
    nu: np.ndarray
    theta: np.ndarray
    rho: np.ndarray = None
    vartheta: float = 0.0

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).copy()
        nu = np.asarray(self.nu, dtype=float).copy()
        theta = np.asarray(self.theta, dtype=float).copy()
        if nu.ndim != 2 or mu.shape != (nu.shape[0],) or theta.shape != (nu.shape[1],):
            raise ValueError(
                f"inconsistent dual shapes mu={mu.shape} nu={nu.shape} theta={theta.shape}")
        rho = self.rho
        rho = np.zeros(nu.shape[0]) if rho is None else np.asarray(rho, dtype=float).copy()
        for name, arr in (("mu", mu), ("nu", nu), ("theta", theta)):
            if np.any(arr < -1e-12 * max(1.0, np.abs(arr).max(initial=0.0))):
                raise ValueError(f"{name} must be entrywise nonnegative")
        for arr in (mu, nu, theta, rho):
            arr.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "vartheta", float(self.vartheta))

    @classmethod
    def zeros(cls, K: int, N: int) -> "DualState":
        return cls(mu=np.zeros(K), nu=np.zeros((K, N)), theta=np.zeros(N))

    @property
    def recovery_feasible(self) -> bool:
        """The last price must dominate the mid-horizon prefix prices,
        otherwise the UAV-frequency closed form has no real root."""
        n = self.theta.shape[0]
        mid = float(np.sum(self.theta[1 : n - 1]))
        return self.theta[n - 1] >= mid - 1e-12 * max(1.0, mid)


@dataclass(frozen=True)
class OffloadKkt:
    """Scaled KKT residual norms of an offload solution."""

    stationarity: float
    primal: float
    complementarity: float
    dual: float

    def max(self) -> float:
        return max(self.stationarity, self.primal, self.complementarity, self.dual)


@dataclass(frozen=True)
class OffloadSolution:
    l: np.ndarray            # (K, N) offloaded bits
    f_user: np.ndarray       # (K, N) user CPU frequencies [Hz]
    f_uav: np.ndarray        # (N,) UAV CPU frequencies [Hz]
    duals: DualState
    objective: float         # UAV compute energy [J]
    dual_objective: float    # best dual lower bound [J]
    kkt: OffloadKkt
    # (iteration, dual value [J], max scaled violation) rows
    trace: tuple = ()

    @property
    def plan_part(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.l, self.f_user, self.f_uav


# ---------------------------------------------------------------------------
# Scaled problem data
# ---------------------------------------------------------------------------

class _ScaledP2:
    """Per-trajectory constants in Mbit / GHz / mJ units.

    ``users`` restricts the instance to a subset of user indices (the
    pricing problem after provably self-sufficient users are presolved).
    """

    def __init__(self, s: Scenario, traj, users=None):
        sel = np.arange(s.K) if users is None else np.asarray(users, dtype=int)
        self.K, self.N = sel.size, s.N
        self.h = channel_gains(s, traj)[sel]                       # (K, N)
        self.eharv = harvest_increments(s, traj)[sel] / _EN        # (K, N) mJ
        self.a_tx = s.lam * s.Gamma * s.sigma2 / self.h / _EN      # (K, N) mJ
        self.bl = s.B * s.lam / _BIT                               # Mbit per subslot
        self.bits_f = s.slot * _FREQ / s.M / _BIT                  # Mbit per GHz-slot
        self.c_f = s.gamma_c * s.slot * _FREQ ** 3 / _EN           # mJ per GHz^3-slot
        self.R = s.R[sel] / _BIT                                   # Mbit
        self.l_cap = EXPONENT_CAP * self.bl
        self.f_cap = np.maximum(self.R / self.bits_f, 1.0)         # (K,) GHz

    def tx_energy(self, l: np.ndarray) -> np.ndarray:
        return self.a_tx * (np.exp2(np.minimum(l, self.l_cap) / self.bl) - 1.0)

    def violations(self, l, f, fu):
        """Signed constraint gaps at a scaled primal point.

        Returns (c1, c2, c3, c4): bit deficit per user, energy-causality
        prefix gaps, UAV-causality prefix gaps, and the signed compute
        balance (offloaded minus computed).
        """
        local_e = self.c_f * f ** 3
        tx_e = self.tx_energy(l)
        c2 = np.cumsum(local_e + tx_e, axis=1) - np.cumsum(self.eharv, axis=1)
        bits = self.bits_f * f.sum(axis=1) + l[:, : self.N - 1].sum(axis=1)
        c1 = self.R - bits
        cum_fu = np.cumsum(fu)
        cum_l = np.cumsum(l.sum(axis=0))
        c3 = self.bits_f * cum_fu[: self.N - 1]
        c3[1:] -= cum_l[: self.N - 2]
        c4 = float(l[:, : self.N - 1].sum() - self.bits_f * fu.sum())
        return c1, c2, c3, c4


def _theta_tail(theta: np.ndarray) -> np.ndarray:
    """tail[i] = sum of theta[i .. N-2]; tail[N-1] = 0."""
    n = theta.shape[0]
    return np.append(np.cumsum(theta[: n - 1][::-1])[::-1], 0.0)


def _recover_scaled(sp: _ScaledP2, mu, nu, theta, fill: str):
    """Closed-form minimizer of the Lagrangian at the given prices.

    ``fill`` selects the behaviour on slots whose remaining energy price is
    exactly zero (the closed forms degenerate there): "cap" returns the
    true box-constrained minimizer (variables at their caps), used for the
    dual value and gradient; "demand" fills the offload with the user's
    remaining bit demand, a more useful primal guess.  The two agree
    whenever no price tail vanishes, which holds at any dual optimum of a
    bound-energy instance.
    """
    K, N = sp.K, sp.N
    V = np.flip(np.cumsum(np.flip(nu, axis=1), axis=1), axis=1)   # (K, N)
    tail = _theta_tail(theta)                                     # (N,)
    theta_last = theta[N - 1]

    # UAV frequencies: zero in the first slot, then a square-root ladder of
    # the remaining price mass.
    gap = theta_last - tail[1:N]
    fu = np.zeros(N)
    fu[1:] = np.sqrt(sp.bits_f * np.maximum(gap, 0.0) / (3.0 * sp.c_f))

    # Offloaded bits: price per bit for slot n is w = mu + tail[n+1] - theta_N.
    w = mu[:, None] + tail[None, 1:N] - theta_last                # (K, N-1)
    l = np.zeros((K, N))
    V_off = V[:, : N - 1]
    ok = (V_off > 0.0) & (w > 0.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        arg = np.where(ok, w * sp.bl / (sp.a_tx[:, : N - 1] * math.log(2.0)
                                        * np.where(V_off > 0, V_off, 1.0)), 0.0)
        l_closed = np.where(arg > 1.0, sp.bl * np.log2(np.maximum(arg, 1.0)), 0.0)
    l[:, : N - 1] = np.clip(np.where(ok, l_closed, 0.0), 0.0, sp.l_cap)

    # User frequencies (clipped at the whole-demand cap so that the dual
    # stays finite when an energy-price tail vanishes).
    pos = V > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        f_closed = np.sqrt(mu[:, None] * sp.bits_f / (3.0 * sp.c_f *
                                                      np.where(pos, V, 1.0)))
    f = np.where(pos, np.minimum(f_closed, sp.f_cap[:, None]), 0.0)

    # Degenerate slots: no remaining energy price.  Without bit-price
    # pressure (mu = 0) there is nothing to fill; both variants then agree
    # with the clamped closed forms and return zeros.
    deg = ~pos
    if np.any(deg & (mu[:, None] > 0.0)):
        if fill == "cap":
            f = np.where(deg & (mu[:, None] > 0.0), sp.f_cap[:, None], f)
            l_deg = deg[:, : N - 1] & (w > 0.0)
            l[:, : N - 1] = np.where(l_deg, sp.l_cap, l[:, : N - 1])
        elif fill == "demand":
            for k in range(K):
                if mu[k] <= 0.0 or not deg[k].any():
                    continue
                have = sp.bits_f * f[k].sum() + l[k, : N - 1].sum()
                rem = max(0.0, sp.R[k] - have)
                for n in range(N - 1):
                    if deg[k, n] and rem > 0.0:
                        take = min(rem, sp.l_cap)
                        l[k, n] = take
                        rem -= take
        else:
            raise ValueError(f"unknown fill mode {fill!r}")
    elif fill not in ("cap", "demand"):
        raise ValueError(f"unknown fill mode {fill!r}")
    return l, f, fu


def _dual_value_scaled(sp: _ScaledP2, mu, nu, theta) -> tuple[float, tuple]:
    """Dual function value (mJ) and the constraint gaps at its argmin."""
    l, f, fu = _recover_scaled(sp, mu, nu, theta, fill="cap")
    c1, c2, c3, c4 = sp.violations(l, f, fu)
    obj = sp.c_f * float(np.sum(fu ** 3))
    g = (obj + float(mu @ c1) + float(np.sum(nu * c2))
         + float(theta[: sp.N - 1] @ c3) + theta[sp.N - 1] * c4)
    return g, (c1, c2, c3, c4)


def _duals_to_scaled(d: DualState):
    return d.mu * _PRICE, d.nu.copy(), d.theta * _PRICE


def _duals_from_scaled(mu, nu, theta) -> DualState:
    return DualState(mu=mu / _PRICE, nu=nu, theta=theta / _PRICE)


def _primal_from_scaled(l, f, fu):
    return l * _BIT, f * _FREQ, fu * _FREQ


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def recover_primal(s: Scenario, traj, d: DualState):
    """Closed-form plan slice (l, f_user, f_uav) at the given prices (SI).

    Raises :class:`DualRecoveryError` when the price state is outside the
    recoverable cone (the UAV-frequency root would be imaginary).
    """
    if not d.recovery_feasible:
        raise DualRecoveryError("dual iterate outside recoverable region")
    sp = _ScaledP2(s, traj)
    mu, nu, theta = _duals_to_scaled(d)
    l, f, fu = _recover_scaled(sp, mu, nu, theta, fill="demand")
    return _primal_from_scaled(l, f, fu)


def dual_value(s: Scenario, traj, d: DualState) -> float:
    """Lagrangian dual lower bound on the UAV compute energy [J]."""
    sp = _ScaledP2(s, traj)
    mu, nu, theta = _duals_to_scaled(d)
    g, _ = _dual_value_scaled(sp, mu, nu, theta)
    return g * _EN


def lagrangian_value(s: Scenario, traj, plan_part, d: DualState) -> float:
    """Lagrangian of the fixed-trajectory subproblem at an SI primal point [J]."""
    sp = _ScaledP2(s, traj)
    mu, nu, theta = _duals_to_scaled(d)
    l, f, fu = plan_part
    l, f, fu = l / _BIT, np.asarray(f) / _FREQ, np.asarray(fu) / _FREQ
    c1, c2, c3, c4 = sp.violations(np.asarray(l, dtype=float), f, fu)
    obj = sp.c_f * float(np.sum(fu ** 3))
    g = (obj + float(mu @ c1) + float(np.sum(nu * c2))
         + float(theta[: sp.N - 1] @ c3) + theta[sp.N - 1] * c4)
    return g * _EN


def _project_theta(theta: np.ndarray, cycles: int = 50) -> np.ndarray:
    """Floor at zero, then shrink the mid prices until the last dominates."""
    theta = np.maximum(theta, 0.0)
    n = theta.shape[0]
    for _ in range(cycles):
        mid = float(np.sum(theta[1 : n - 1]))
        if mid <= theta[n - 1] or mid == 0.0:
            break
        theta[1 : n - 1] *= theta[n - 1] / mid
    return theta


def dual_subgradient_step(s: Scenario, traj, d: DualState, step: float) -> DualState:
    """One projected subgradient ascent step on all multipliers.

    ``step`` is measured in the solver's internal scaled units.  Each
    multiplier moves along its own constraint gap evaluated at the
    recovered primal, then is projected back onto the admissible cone.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    sp = _ScaledP2(s, traj)
    mu, nu, theta = _duals_to_scaled(d)
    l, f, fu = _recover_scaled(sp, mu, nu, theta, fill="demand")
    c1, c2, c3, c4 = sp.violations(l, f, fu)
    mu = np.maximum(mu + step * c1, 0.0)
    nu = np.maximum(nu + step * c2, 0.0)
    g_theta = np.append(c3, c4)
    theta = _project_theta(theta + step * g_theta)
    return _duals_from_scaled(mu, nu, theta)


# ---------------------------------------------------------------------------
# Feasibility probe
# ---------------------------------------------------------------------------

def _policy_split_scaled(sp: _ScaledP2):
    """Spend-as-harvested policy: each slot's harvest increment is spent in
    the same slot, split to maximize bits (no TX in the last slot).

    Returns (local bits, TX bits, local energy) as (K, N) scaled arrays.
    The policy is feasible by construction, so its totals lower-bound the
    deliverable bits per user.
    """
    e = sp.eharv
    can_tx = np.ones((sp.K, sp.N), dtype=bool)
    can_tx[:, -1] = False

    def parts_for_split(x):
        # x = energy given to local compute; the rest goes to TX
        f = np.cbrt(np.maximum(x, 0.0) / sp.c_f)
        loc = sp.bits_f * f
        rest = np.maximum(e - x, 0.0)
        tx = np.where(can_tx, sp.bl * np.log2(1.0 + rest / sp.a_tx), 0.0)
        return loc, tx

    lo = np.zeros_like(e)
    hi = e.copy()
    for _ in range(70):
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        b1 = sum(parts_for_split(m1))
        b2 = sum(parts_for_split(m2))
        better_hi = b1 < b2
        lo = np.where(better_hi, m1, lo)
        hi = np.where(better_hi, hi, m2)
    x = 0.5 * (lo + hi)
    loc, tx = parts_for_split(x)
    return loc, tx, x


def probe_feasibility(s: Scenario, traj) -> np.ndarray:
    """Deliverable-bit margin per user under the spend-as-harvested policy.

    A nonnegative margin for every user certifies the fixed-trajectory
    subproblem feasible.  Returns deliverable bits minus demand [bits].
    """
    sp = _ScaledP2(s, traj)
    loc, tx, _ = _policy_split_scaled(sp)
    return ((loc + tx).sum(axis=1) - sp.R) * _BIT


def _warm_start(sp: _ScaledP2):
    """Price estimates derived from the spend-as-harvested policy.

    The policy's budget split fixes the local-compute marginal price per
    bit; the offloaded remainder sizes the UAV frequency ladder and with
    it the compute-balance price.  Only orders of magnitude matter here:
    the ascent phases refine everything.
    """
    K, N = sp.K, sp.N
    loc, tx, loc_e = _policy_split_scaled(sp)
    loc_bits = loc.sum(axis=1)
    off = np.maximum(sp.R - loc_bits, 0.02 * sp.R)
    fu_bar = max(float(off.sum()) / (sp.bits_f * (N - 1)), 1e-9)
    theta_last = 3.0 * sp.c_f * fu_bar ** 2 / sp.bits_f
    f_bar = np.maximum(np.cbrt(loc_e.sum(axis=1) / (N * sp.c_f)), 1e-9)
    p_loc = 3.0 * sp.c_f * f_bar ** 2 / sp.bits_f
    v_bar = np.minimum(theta_last / (0.5 * p_loc), 1e12)
    mu = np.full(K, 2.0 * theta_last)
    nu = np.repeat((v_bar / N)[:, None], N, axis=1)
    theta = np.zeros(N)
    theta[N - 1] = theta_last
    return mu, nu, theta


# ---------------------------------------------------------------------------
# Main dual solver
# ---------------------------------------------------------------------------

def _pack(mu, nu, theta_mid, slack):
    return np.concatenate([mu, nu.ravel(), theta_mid, [slack]])


def _unpack(z, K, N):
    mu = z[:K]
    nu = z[K : K + K * N].reshape(K, N)
    theta_mid = z[K + K * N : K + K * N + (N - 2)]
    slack = z[-1]
    theta = np.zeros(N)
    theta[1 : N - 1] = theta_mid
    theta[N - 1] = slack + theta_mid.sum()
    return mu, nu, theta


def _neg_dual_and_grad(z, sp: _ScaledP2):
    K, N = sp.K, sp.N
    mu, nu, theta = _unpack(z, K, N)
    g, (c1, c2, c3, c4) = _dual_value_scaled(sp, mu, nu, theta)
    # Reparametrized theta: mid prices also feed the last (dominating) one.
    g_mid = c3[1 : N - 1] + c4
    grad = np.concatenate([c1, c2.ravel(), g_mid, [c4]])
    return -g, -grad


def _residuals_scaled(sp: _ScaledP2, mu, nu, theta, l, f, fu) -> OffloadKkt:
    """Scaled KKT residuals at a recovered primal/dual pair."""
    K, N = sp.K, sp.N
    c1, c2, c3, c4 = sp.violations(l, f, fu)
    primal = max(float(np.abs(c1).max(initial=0.0)),
                 float(np.max(c2, initial=0.0)),
                 float(np.max(c3, initial=0.0)),
                 abs(c4))
    comp = max(float(np.abs(nu * c2).max(initial=0.0)),
               float(np.abs(theta[: N - 1] * c3).max(initial=0.0)))

    # Stationarity: the closed forms zero the interior gradients by
    # construction; report the projected gradient to catch cap clipping.
    V = np.flip(np.cumsum(np.flip(nu, axis=1), axis=1), axis=1)
    tail = _theta_tail(theta)
    w = mu[:, None] + tail[None, 1:N] - theta[N - 1]
    dl = (sp.a_tx[:, : N - 1] * math.log(2.0) / sp.bl
          * np.exp2(l[:, : N - 1] / sp.bl) * V[:, : N - 1]) - w
    dl_proj = np.where(l[:, : N - 1] <= 0.0, np.minimum(dl, 0.0), dl)
    df = 3.0 * sp.c_f * f ** 2 * V - mu[:, None] * sp.bits_f
    df_proj = np.where(f <= 0.0, np.minimum(df, 0.0), df)
    dfu = 3.0 * sp.c_f * fu[1:] ** 2 - sp.bits_f * (theta[N - 1] - tail[1:N])
    dfu_proj = np.where(fu[1:] <= 0.0, np.minimum(dfu, 0.0), dfu)
    stat = max(float(np.abs(dl_proj).max(initial=0.0)),
               float(np.abs(df_proj).max(initial=0.0)),
               float(np.abs(dfu_proj).max(initial=0.0)))
    return OffloadKkt(stationarity=stat, primal=primal,
                      complementarity=comp, dual=0.0)


def _subgradient_chunk(sp: _ScaledP2, mu, nu, theta, iters: int, start_it: int,
                       best, trace, collect_trace: bool):
    """Run the diminishing-step schedule, tracking the best dual iterate."""
    for it in range(start_it, start_it + iters):
        step = 1.0 / math.sqrt(it)
        l, f, fu = _recover_scaled(sp, mu, nu, theta, fill="demand")
        c1, c2, c3, c4 = sp.violations(l, f, fu)
        g, _ = _dual_value_scaled(sp, mu, nu, theta)
        if g > best[0]:
            best = (g, mu.copy(), nu.copy(), theta.copy())
        if collect_trace:
            viol = max(float(np.abs(c1).max(initial=0.0)),
                       float(np.max(c2, initial=0.0)),
                       float(np.max(c3, initial=0.0)), abs(c4))
            trace.append((it, g * _EN, viol))
        mu = np.maximum(mu + step * c1, 0.0)
        nu = np.maximum(nu + step * c2, 0.0)
        theta = _project_theta(theta + step * np.append(c3, c4))
    return mu, nu, theta, best


def _newton_finish(sp: _ScaledP2, z: np.ndarray, rounds: int = 12):
    """Newton refinement of the dual on its active manifold.

    At a dual maximum every positive multiplier has zero constraint gap, so
    the gaps of the active coordinates form a square nonlinear system; a
    damped Newton iteration with a finite-difference Jacobian sharpens the
    quasi-Newton iterate to near machine precision.  Safe: steps are only
    kept while the active gap norm shrinks.
    """
    def grad(zv):
        return -_neg_dual_and_grad(zv, sp)[1]

    g = grad(z)
    for _ in range(rounds):
        act = np.where((z > 1e-9) | (g > 1e-9))[0]
        if act.size == 0 or np.abs(g[act]).max() < 1e-13:
            break
        jac = np.zeros((act.size, act.size))
        h = 1e-6 * np.maximum(np.abs(z[act]), 1.0)
        for j, idx in enumerate(act):
            zp = z.copy()
            zp[idx] += h[j]
            zm = z.copy()
            zm[idx] = max(zm[idx] - h[j], 0.0)
            jac[:, j] = (grad(zp)[act] - grad(zm)[act]) / (zp[idx] - zm[idx])
        try:
            dz = np.linalg.solve(jac + 1e-12 * np.eye(act.size), -g[act])
        except np.linalg.LinAlgError:
            dz = np.linalg.lstsq(jac, -g[act], rcond=None)[0]
        base = np.abs(g[act]).max()
        step = 1.0
        for _ in range(30):
            z_try = z.copy()
            z_try[act] = np.maximum(z[act] + step * dz, 0.0)
            g_try = grad(z_try)
            act_try = np.where((z_try > 1e-9) | (g_try > 1e-9))[0]
            if np.abs(g_try[act_try]).max(initial=0.0) < base:
                z, g = z_try, g_try
                break
            step *= 0.5
        else:
            break
    return z


def solve_p2(s: Scenario, traj, tol: float = 1e-6,
             subgrad_iters: int = 500, max_restarts: int = 4,
             collect_trace: bool = True) -> OffloadSolution:
    """Optimal offload/CPU schedule for a fixed trajectory.

    Pipeline: policy-derived warm start for the multipliers, a
    diminishing-step subgradient phase, bound-constrained quasi-Newton
    ascent of the dual (the dominating last price becomes a slack
    variable, turning the admissible cone into a box), and a Newton
    finisher on the active dual manifold.  On a failed polish the
    subgradient phase resumes from the polished point with the energy
    prices nudged off the degenerate boundary.  ``tol`` bounds the scaled
    primal-feasibility and complementarity residuals.

    Raises :class:`InfeasibleTrajectoryError` when the feasibility probe
    fails and :class:`DualIterationLimitError` when ascent stalls.
    """
    N = s.N

    margins = probe_feasibility(s, traj)
    if np.any(margins < 0.0):
        k = int(np.argmin(margins))
        raise InfeasibleTrajectoryError(
            f"infeasible for this trajectory: user {k} short by "
            f"{-margins[k]:.4g} bits under the spend-as-harvested policy")

    # Presolve: a user whose whole demand fits a constant-frequency local
    # schedule inside its causal budget never offloads and prices at zero.
    # Left in the pricing problem such users make the bit price, and with
    # it the closed-form recovery, degenerate.
    l_full = np.zeros((s.K, N))
    f_full = np.zeros((s.K, N))
    f_const = s.R * s.M / (N * s.slot)
    e_slot = s.gamma_c * s.slot * f_const ** 3
    harv_prefix = np.cumsum(harvest_increments(s, traj), axis=1)
    slots = np.arange(1, N + 1)
    rich = np.all(e_slot[:, None] * slots[None, :]
                  <= harv_prefix * (1.0 + 1e-12), axis=1)
    f_full[rich] = f_const[rich, None]
    poor = np.where(~rich)[0]

    if poor.size == 0:
        zero = DualState.zeros(s.K, N)
        kkt = OffloadKkt(0.0, 0.0, 0.0, 0.0)
        return OffloadSolution(l=l_full, f_user=f_full, f_uav=np.zeros(N),
                               duals=zero, objective=0.0, dual_objective=0.0,
                               kkt=kkt, trace=())

    sp = _ScaledP2(s, traj, users=poor)
    K = sp.K

    trace: list[tuple[int, float, float]] = []
    bounds = [(0.0, None)] * (K + K * N + (N - 2) + 1)
    mu, nu, theta = _warm_start(sp)
    best = (-np.inf, mu, nu, theta)
    it0 = 1
    sol = None
    for attempt in range(max_restarts):
        mu, nu, theta, best = _subgradient_chunk(
            sp, mu, nu, theta, subgrad_iters, it0, best, trace, collect_trace)
        it0 += subgrad_iters
        _, bmu, bnu, btheta = best
        mid = btheta[1 : N - 1]
        slack = max(btheta[N - 1] - mid.sum(), 0.0)
        z0 = _pack(bmu, bnu, mid, slack)
        res = minimize(_neg_dual_and_grad, z0, args=(sp,), jac=True,
                       method="L-BFGS-B", bounds=bounds,
                       options=dict(maxiter=20000, maxfun=50000,
                                    ftol=1e-18, gtol=1e-14, maxls=100))
        z_fin = _newton_finish(sp, res.x)
        pmu, pnu, ptheta = _unpack(z_fin, K, N)
        g_fin, _ = _dual_value_scaled(sp, pmu, pnu, ptheta)
        l, f, fu = _recover_scaled(sp, pmu, pnu, ptheta, fill="demand")
        kkt = _residuals_scaled(sp, pmu, pnu, ptheta, l, f, fu)
        if collect_trace:
            trace.append((it0, g_fin * _EN, kkt.max()))
        if kkt.max() <= tol:
            sol = (g_fin, pmu, pnu, ptheta, l, f, fu, kkt)
            break
        if g_fin > best[0]:
            best = (g_fin, pmu.copy(), pnu.copy(), ptheta.copy())
        # Resume the warmup from the polished point, nudged off the boundary.
        mu = pmu
        nu = pnu + 10.0 ** (-4 + attempt)
        theta = ptheta
    if sol is None:
        raise DualIterationLimitError(
            f"dual iteration limit: residuals {kkt} above tol {tol}")

    g_fin, mu, nu, theta, l, f, fu, kkt = sol
    l_full[poor] = l * _BIT
    f_full[poor] = f * _FREQ
    mu_full = np.zeros(s.K)
    mu_full[poor] = mu / _PRICE
    nu_full = np.zeros((s.K, N))
    nu_full[poor] = nu
    duals = DualState(mu=mu_full, nu=nu_full, theta=theta / _PRICE)
    objective = sp.c_f * float(np.sum(fu ** 3)) * _EN
    return OffloadSolution(l=l_full, f_user=f_full, f_uav=fu * _FREQ,
                           duals=duals, objective=objective,
                           dual_objective=g_fin * _EN,
                           kkt=kkt, trace=tuple(trace))


# ---------------------------------------------------------------------------
# Independent primal oracle
# ---------------------------------------------------------------------------

def primal_oracle_p2(s: Scenario, traj, tol: float = 1e-10,
                     max_rounds: int = 30, descent_log: list | None = None):
    """Ground-truth solver for small instances, independent of the duals.

    Works directly on the primal block (l, f_user, f_uav): an exact
    (finite-weight) penalty on the coupling constraints via the augmented
    Lagrangian, with each inner minimization done by bound-constrained
    quasi-Newton descent over the nonnegativity box, then an exact snap
    onto the bit-balance hyperplanes.  Deterministic initialization, so
    repeated runs agree to machine precision.

    ``descent_log``, when given, collects the accepted inner objective
    values of the first round (they are nonincreasing).

    Returns ((l, f_user, f_uav) in SI, objective [J]).
    """
    sp = _ScaledP2(s, traj)
    K, N = sp.K, sp.N

    if np.all(s.R == 0.0):
        return (np.zeros((K, N)), np.zeros((K, N)), np.zeros(N)), 0.0

    # Deterministic start: even offload split meeting the bit balance, with
    # the UAV computing the total spread over its allowed slots.
    l = np.zeros((K, N))
    l[:, : N - 1] = sp.R[:, None] / (N - 1)
    f = np.zeros((K, N))
    fu = np.zeros(N)
    fu[1:] = sp.R.sum() / sp.bits_f / (N - 1)

    n_l, n_f, n_fu = K * N, K * N, N

    def split(x):
        return (x[:n_l].reshape(K, N), x[n_l : n_l + n_f].reshape(K, N),
                x[n_l + n_f :])

    def alm_value_grad(x, lam1, lam2, lam3, lam4, w):
        l, f, fu = split(x)
        c1, c2, c3, c4 = sp.violations(l, f, fu)
        m2 = np.maximum(0.0, lam2 + w * c2)
        m3 = np.maximum(0.0, lam3 + w * c3)
        e1 = lam1 + w * c1
        e4 = lam4 + w * c4
        obj = sp.c_f * float(np.sum(fu[1:] ** 3))
        val = (obj + float(lam1 @ c1) + 0.5 * w * float(c1 @ c1)
               + lam4 * c4 + 0.5 * w * c4 * c4
               + (float(m2.ravel() @ m2.ravel()) - float(lam2.ravel() @ lam2.ravel())) / (2 * w)
               + (float(m3 @ m3) - float(lam3 @ lam3)) / (2 * w))
        # Suffix sums turn the prefix-constraint terms into per-slot weights.
        s2 = np.flip(np.cumsum(np.flip(m2, axis=1), axis=1), axis=1)
        s3 = np.append(np.flip(np.cumsum(np.flip(m3))), 0.0)[:N]
        dtx = sp.a_tx * math.log(2.0) / sp.bl * np.exp2(l / sp.bl)
        g_l = s2 * dtx
        g_l[:, : N - 1] += -e1[:, None] + e4 - s3[None, 1:N]
        g_l[:, N - 1] = 0.0
        g_f = s2 * 3.0 * sp.c_f * f ** 2 - e1[:, None] * sp.bits_f
        g_fu = 3.0 * sp.c_f * fu ** 2 + sp.bits_f * (s3 - e4)
        g_fu[0] = 0.0
        return val, np.concatenate([g_l.ravel(), g_f.ravel(), g_fu])

    bounds = []
    for k in range(K):
        bounds += [(0.0, None)] * (N - 1) + [(0.0, 0.0)]   # l, last slot pinned
    bounds += [(0.0, None)] * n_f                          # f_user
    bounds += [(0.0, 0.0)] + [(0.0, None)] * (N - 1)       # f_uav, first pinned

    lower = np.array([b[0] for b in bounds])
    upper = np.array([np.inf if b[1] is None else b[1] for b in bounds])

    def projected_gradient_steps(x, state, steps=200, step0=1e-4):
        """Armijo projected-gradient walk; robust at the penalty kinks
        where the quasi-Newton line search can jam."""
        val, grad = alm_value_grad(x, *state)
        step = step0
        for _ in range(steps):
            moved = False
            for _ in range(40):
                cand = np.clip(x - step * grad, lower, upper)
                v_cand, g_cand = alm_value_grad(cand, *state)
                dx2 = float((cand - x) @ (cand - x))
                if v_cand <= val - 1e-4 * dx2 / max(step, 1e-300):
                    x, val, grad = cand, v_cand, g_cand
                    step *= 1.5
                    moved = True
                    break
                step *= 0.5
            if not moved:
                break
        return x

    lam1 = np.zeros(K)
    lam2 = np.zeros((K, N))
    lam3 = np.zeros(N - 1)
    lam4 = 0.0
    w = 1e2
    x = np.concatenate([l.ravel(), f.ravel(), fu])
    prev_viol = np.inf
    for _ in range(max_rounds):
        cb = None
        if descent_log is not None and not descent_log:
            log = descent_log

            def cb(xk, log=log, state=(lam1.copy(), lam2.copy(), lam3.copy(), lam4, w)):
                log.append(alm_value_grad(xk, *state)[0])
        state = (lam1, lam2, lam3, lam4, w)
        inner_ok = False
        for _ in range(4):
            res = minimize(alm_value_grad, x, args=state, jac=True,
                           method="L-BFGS-B", bounds=bounds, callback=cb,
                           options=dict(maxiter=4000, maxfun=8000, ftol=1e-18,
                                        gtol=1e-14))
            x = res.x
            if res.status != 2:
                inner_ok = True
                break
            cb = None
            x = projected_gradient_steps(x, state)
        l, f, fu = split(x)
        c1, c2, c3, c4 = sp.violations(l, f, fu)
        viol = max(float(np.abs(c1).max()), float(np.max(c2, initial=0.0)),
                   float(np.max(c3, initial=0.0)), abs(c4))
        if viol <= tol:
            break
        lam1 = lam1 + w * c1
        lam2 = np.maximum(0.0, lam2 + w * c2)
        lam3 = np.maximum(0.0, lam3 + w * c3)
        lam4 = lam4 + w * c4
        # Raise the weight only after a clean inner solve whose violation
        # stopped contracting; stiffening a jammed subproblem makes the
        # kinks worse.
        if inner_ok and viol > 0.25 * prev_viol:
            w = min(w * 10.0, 1e9)
        prev_viol = viol

    # Exact snap onto the bit-balance hyperplanes (mutually orthogonal:
    # each touches one user's variables; the compute balance touches fu).
    for _ in range(4):
        c1, c2, c3, c4 = sp.violations(l, f, fu)
        for k in range(K):
            a_l = np.ones(N - 1)
            a_f = np.full(N, sp.bits_f)
            denom = float(a_l @ a_l + a_f @ a_f)
            corr = c1[k] / denom
            l[k, : N - 1] += corr * a_l
            f[k] += corr * a_f
        a_fu = np.full(N - 1, sp.bits_f)
        fu[1:] += (c4 / float(a_fu @ a_fu)) * a_fu
        l = np.maximum(l, 0.0)
        l[:, N - 1] = 0.0
        f = np.maximum(f, 0.0)
        fu = np.maximum(fu, 0.0)
        fu[0] = 0.0

    objective = sp.c_f * float(np.sum(fu[1:] ** 3)) * _EN
    return _primal_from_scaled(l, f, fu), objective
