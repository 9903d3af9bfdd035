"""Short-time dispatch of a single router node.

Comfort-band penalties, buffer dynamics, horizon optimization via the
genetic algorithm (with a deterministic local polish), the uncomfortable
index, and the post-optimization shift of the buffer-energy reference.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import scipy.optimize

from . import ga as ga_mod
from .network import MASTER, BufferSpec, GerNode, NodeProfile

PENALTY_WEIGHT = 1e6   # quadratic weight on bound violations inside the GA fitness


class InfeasibleDispatchError(RuntimeError):
    """No admissible buffer trajectory exists (or the solver failed to
    produce one within the repair tolerance); never silently clamped."""

    def __init__(self, node_id: str, message: str, detail: dict | None = None):
        self.node_id = node_id
        self.detail = detail or {}
        super().__init__(f"dispatch infeasible for node {node_id}: {message}")


@dataclass(frozen=True, eq=False)
class HorizonPlan:
    """Dispatch decision over one optimization horizon.

    ``buffer_energy[k]`` is the stored energy at the end of step k,
    obtained by stepping the buffer dynamics from ``e_init``.
    """

    port_power: np.ndarray     # (T, n_ports) kW
    buffer_power: np.ndarray   # (T,) kW
    buffer_energy: np.ndarray  # (T,) kWh
    penalty: np.ndarray        # (T, n_ports) kW
    objective: float
    e_init: float

    @property
    def horizon(self) -> int:
        return len(self.buffer_power)

    def to_dict(self) -> dict:
        return {
            "port_power": self.port_power.tolist(),
            "buffer_power": self.buffer_power.tolist(),
            "buffer_energy": self.buffer_energy.tolist(),
            "penalty": self.penalty.tolist(),
            "objective": self.objective,
            "e_init": self.e_init,
        }


@dataclass(frozen=True, eq=False)
class ShiftResult:
    """Modified buffer-energy reference: the shift window and amount.

    ``t_a`` is None when no bound is touched over the horizon, in which
    case ``de_sh`` is 0 and ``me_ref`` equals the planned trajectory.
    ``de_sh`` is positive for an upward shift (minimum bound touched) and
    negative for a downward one.
    """

    t_a: int | None
    t_b: int | None
    de_res: float
    de_sh: float
    me_ref: np.ndarray

    def to_dict(self) -> dict:
        return {
            "t_a": self.t_a,
            "t_b": self.t_b,
            "de_res": self.de_res,
            "de_sh": self.de_sh,
            "me_ref": self.me_ref.tolist(),
        }


def comfort_penalty(p, ref, alpha):
    """Signed distance of port power outside its comfort band.

    The band is [(1-alpha)*ref, (1+alpha)*ref] for positive references and
    the mirrored interval for negative ones; inside the band (and for a
    zero reference) the penalty is 0. Broadcasts over array inputs.
    """
    p = np.asarray(p, dtype=float)
    ref = np.asarray(ref, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    pos = ref > 0
    hi = np.where(pos, (1 + alpha) * ref, (1 - alpha) * ref)
    lo = np.where(pos, (1 - alpha) * ref, (1 + alpha) * ref)
    out = np.where(p > hi, p - hi, np.where(p < lo, p - lo, 0.0))
    out = np.where(ref == 0, 0.0, out)
    return out if out.ndim else float(out)


def buffer_step(e_prev: float, p_b: float, dt: float, spec: BufferSpec) -> float:
    """One step of the buffer dynamics; positive power discharges.

    Returns the raw next energy, which may lie outside [e_min, e_max] —
    the caller decides how to treat an out-of-bounds result (check with
    ``spec.in_bounds``); this function never clamps.
    """
    if p_b > 0:
        return e_prev - dt * p_b / spec.eta_dis
    return e_prev - dt * p_b * spec.eta_ch


def simulate_buffer(e_init: float, p_b, dt: float, spec: BufferSpec) -> np.ndarray:
    """Buffer trajectory for a power series; vectorizes over leading axes.

    Equivalent to repeated buffer_step along the last axis.
    """
    p_b = np.asarray(p_b, dtype=float)
    flow = dt * (np.clip(p_b, 0.0, None) / spec.eta_dis
                 + np.clip(p_b, None, 0.0) * spec.eta_ch)
    return e_init - np.cumsum(flow, axis=-1)


def objective_value(plan: HorizonPlan, node: GerNode, p_u) -> float:
    """Dispatch objective: weighted squared penalties plus (for slaves)
    the squared power-balance residual."""
    weights = node.port_weights()
    gamma = node.balance_weight
    p_u = np.asarray(p_u, dtype=float)
    obj = float(np.sum(weights * plan.penalty ** 2))
    if gamma != 0.0:
        resid = plan.port_power.sum(axis=1) + plan.buffer_power + p_u
        obj += gamma * float(np.sum(resid ** 2))
    return obj


def uc_index(penalties, refs) -> float:
    """Uncomfortable index: sum of squared penalty/reference ratios.

    Steps with a zero reference contribute nothing.
    """
    penalties = np.asarray(penalties, dtype=float)
    refs = np.asarray(refs, dtype=float)
    if penalties.shape != refs.shape:
        raise ValueError(f"shape mismatch {penalties.shape} vs {refs.shape}")
    mask = refs != 0
    ratio = np.zeros_like(penalties)
    ratio[mask] = penalties[mask] / refs[mask]
    return float(np.sum(ratio ** 2))


def uc_per_port(plan: HorizonPlan, profile: NodeProfile) -> np.ndarray:
    return np.array([uc_index(plan.penalty[:, i], profile.ref[:, i])
                     for i in range(plan.port_power.shape[1])])


def _check_feasibility(node: GerNode, p_u: np.ndarray, e_init: float, dt: float):
    """Exact reachability precheck for a master node.

    Propagates the interval of reachable buffer energies given the
    per-step range of achievable buffer powers; raises when a step has no
    admissible power or the energy interval empties.
    """
    spec = node.buffer
    rating_sum = float(node.port_ratings().sum())
    e_lo = e_hi = e_init
    for k, u in enumerate(p_u):
        pb_lo = max(-spec.p_rate, -rating_sum - u)
        pb_hi = min(spec.p_rate, rating_sum - u)
        if pb_lo > pb_hi:
            raise InfeasibleDispatchError(
                node.id,
                f"step {k}: no buffer power satisfies both the port ratings "
                f"and the buffer rating (U-layer power {u:.3f} kW)",
                {"step": k, "p_u": float(u)})
        # flow is monotone in power, so interval endpoints map to endpoints
        e_lo = buffer_step(e_lo, pb_hi, dt, spec)
        e_hi = buffer_step(e_hi, pb_lo, dt, spec)
        e_lo, e_hi = max(e_lo, spec.e_min), min(e_hi, spec.e_max)
        if e_lo > e_hi:
            raise InfeasibleDispatchError(
                node.id,
                f"step {k}: buffer energy cannot stay within "
                f"[{spec.e_min}, {spec.e_max}] kWh",
                {"step": k})


def _inverse_buffer_power(e_prev: float, e_next: float, dt: float,
                          spec: BufferSpec) -> float:
    """Buffer power that moves the stored energy from e_prev to e_next."""
    if e_next < e_prev:
        return (e_prev - e_next) * spec.eta_dis / dt
    return -(e_next - e_prev) / (dt * spec.eta_ch)


def _repair_master(node, ports, p_u, e_init, dt, repair_tol):
    """Clamp tiny buffer-bound slips, rebalancing through the ports.

    Walks the horizon; whenever the derived buffer power or the resulting
    energy exits its bounds by at most repair_tol, the buffer power is
    clamped and the difference redistributed over the ports (keeping the
    power balance exact). Larger slips mean the instance is not solvable
    to tolerance and raise.
    """
    spec = node.buffer
    ratings = node.port_ratings()
    ports = ports.copy()
    p_b = np.empty(len(p_u))
    energy = np.empty(len(p_u))
    e = e_init
    for k in range(len(p_u)):
        p_raw = -ports[k].sum() - p_u[k]
        p = float(np.clip(p_raw, -spec.p_rate, spec.p_rate))
        e_next = buffer_step(e, p, dt, spec)
        if e_next > spec.e_max:
            p = _inverse_buffer_power(e, spec.e_max, dt, spec)
            e_next = spec.e_max
        elif e_next < spec.e_min:
            p = _inverse_buffer_power(e, spec.e_min, dt, spec)
            e_next = spec.e_min
        delta = p - p_raw
        if abs(delta) > repair_tol:
            raise InfeasibleDispatchError(
                node.id,
                f"step {k}: solution violates buffer bounds by {abs(delta):.4g} kW "
                f"(> repair tolerance {repair_tol} kW)",
                {"step": k, "violation_kw": float(abs(delta))})
        if delta != 0.0:
            # balance needs the port sum to move by -delta
            ds = -delta
            head = (ratings - ports[k]) if ds > 0 else (ports[k] + ratings)
            total = head.sum()
            if total < abs(ds):
                raise InfeasibleDispatchError(
                    node.id, f"step {k}: no port headroom to absorb repair")
            ports[k] = ports[k] + np.sign(ds) * head * (abs(ds) / total)
        p_b[k] = p
        energy[k] = e_next
        e = e_next
    return ports, p_b, energy


def optimize_horizon(node: GerNode, profile: NodeProfile, e_init: float,
                     dt: float, cfg: ga_mod.GaConfig, *,
                     eq5_literal: bool = False,
                     repair_tol: float = 1e-2) -> HorizonPlan:
    """Solve the dispatch problem for one node over the horizon.

    Master nodes optimize their port powers (the buffer power is
    eliminated through the power balance, which therefore holds exactly);
    slave nodes hold their ports at the references and optimize only the
    buffer power, with the balance residual as the objective. Buffer
    bounds enter the GA fitness as quadratic penalties and are made exact
    by a tolerance-limited repair afterwards.
    """
    spec = node.buffer
    if not (spec.e_min <= e_init <= spec.e_max):
        raise InfeasibleDispatchError(
            node.id, f"e_init {e_init} outside [{spec.e_min}, {spec.e_max}]")
    T = len(profile)
    refs = profile.ref
    p_u = profile.u_series(literal=eq5_literal)
    weights = node.port_weights()
    alphas = node.port_alphas()
    ratings = node.port_ratings()
    n_s = len(node.ports)

    if node.is_master:
        _check_feasibility(node, p_u, e_init, dt)

        def fitness(X):
            P = X.reshape(-1, T, n_s)
            J = comfort_penalty(P, refs[None], alphas[None])
            p_b = -P.sum(axis=2) - p_u[None]
            energy = simulate_buffer(e_init, p_b, dt, spec)
            pen = (np.clip(np.abs(p_b) - spec.p_rate, 0.0, None) ** 2
                   + np.clip(spec.e_min - energy, 0.0, None) ** 2
                   + np.clip(energy - spec.e_max, 0.0, None) ** 2)
            return (np.einsum("ptj,j->p", J ** 2, weights)
                    + PENALTY_WEIGHT * pen.sum(axis=1))

        bounds = np.repeat(np.column_stack([-ratings, ratings]), T, axis=0)
        bounds = np.tile(np.column_stack([-ratings, ratings]), (T, 1))
        baseline = refs.reshape(-1)
        result = ga_mod.minimize(fitness, bounds, cfg, vectorized=True,
                                 seeds=[baseline])
        x = result.x
        if cfg.polish:
            res = scipy.optimize.minimize(
                lambda v: float(fitness(v[None])[0]), x, method="L-BFGS-B",
                bounds=bounds, options={"maxfun": 20000, "ftol": 1e-14})
            if res.fun <= result.fun:
                x = res.x
        ports = np.clip(x.reshape(T, n_s),
                        -ratings[None], ratings[None])
        ports, p_b, energy = _repair_master(node, ports, p_u, e_init, dt,
                                            repair_tol)
    else:
        ports = refs.copy()
        ref_sum = refs.sum(axis=1)
        required = -(ref_sum + p_u)

        def fitness(X):
            resid = ref_sum[None] + X + p_u[None]
            energy = simulate_buffer(e_init, X, dt, spec)
            pen = (np.clip(spec.e_min - energy, 0.0, None) ** 2
                   + np.clip(energy - spec.e_max, 0.0, None) ** 2)
            return (resid ** 2).sum(axis=1) + PENALTY_WEIGHT * pen.sum(axis=1)

        bounds = np.tile([[-spec.p_rate, spec.p_rate]], (T, 1))
        seed = np.clip(required, -spec.p_rate, spec.p_rate)
        result = ga_mod.minimize(fitness, bounds, cfg, vectorized=True,
                                 seeds=[seed])
        x = result.x
        if cfg.polish:
            res = scipy.optimize.minimize(
                lambda v: float(fitness(v[None])[0]), x, method="L-BFGS-B",
                bounds=bounds, options={"maxfun": 20000, "ftol": 1e-14})
            if res.fun <= result.fun:
                x = res.x
        # walk-forward clamp of the energy trajectory; the balance residual
        # this creates is exactly what the slave objective measures
        p_b = np.empty(T)
        energy = np.empty(T)
        e = e_init
        for k in range(T):
            p = float(np.clip(x[k], -spec.p_rate, spec.p_rate))
            e_next = buffer_step(e, p, dt, spec)
            if e_next > spec.e_max:
                p = _inverse_buffer_power(e, spec.e_max, dt, spec)
                e_next = spec.e_max
            elif e_next < spec.e_min:
                p = _inverse_buffer_power(e, spec.e_min, dt, spec)
                e_next = spec.e_min
            p_b[k] = p
            energy[k] = e_next
            e = e_next

    penalty = np.asarray(comfort_penalty(ports, refs, alphas[None]))
    plan = HorizonPlan(port_power=ports, buffer_power=p_b,
                       buffer_energy=energy, penalty=penalty,
                       objective=0.0, e_init=float(e_init))
    obj = objective_value(plan, node, p_u)
    return dataclasses.replace(plan, objective=obj)


def compute_shift(plan: HorizonPlan, spec: BufferSpec, dt: float, *,
                  bound_tol: float = 1e-3,
                  eq13_literal: bool = False) -> ShiftResult:
    """Shift of the buffer-energy reference over the binding prefix.

    Finds the earliest step t_a where the planned trajectory touches a
    bound (minimum wins a tie), the extreme point t_b of the trajectory
    over [0, t_a], the available headroom there, and the shift amount:
    the efficiency-scaled energy equivalent of the comfort violations in
    the bound-relevant direction over [0, t_a], capped by the headroom.
    ``eq13_literal`` measures the headroom of the maximum-bound case at
    t_a instead of t_b.
    """
    e = plan.buffer_energy
    touch_min = e <= spec.e_min + bound_tol
    touch_max = e >= spec.e_max - bound_tol
    touched = touch_min | touch_max
    if not touched.any():
        return ShiftResult(t_a=None, t_b=None, de_res=0.0, de_sh=0.0,
                           me_ref=e.copy())
    t_a = int(np.argmax(touched))
    me_ref = e.copy()
    if touch_min[t_a]:
        t_b = int(np.argmax(e[:t_a + 1]))
        de_res = spec.e_max - e[t_b]
        # violations curable by discharging more: ports above their bands
        viol = np.clip(plan.penalty[:t_a + 1], 0.0, None).sum()
        de_sh = min(dt * viol / spec.eta_dis, de_res)
    else:
        t_b = int(np.argmin(e[:t_a + 1]))
        anchor = e[t_a] if eq13_literal else e[t_b]
        de_res = spec.e_min - anchor
        # violations curable by charging more: ports below their bands
        viol = np.clip(-plan.penalty[:t_a + 1], 0.0, None).sum()
        de_sh = max(-spec.eta_ch * dt * viol, de_res)
    me_ref[:t_a + 1] += de_sh
    return ShiftResult(t_a=t_a, t_b=t_b, de_res=float(de_res),
                       de_sh=float(de_sh), me_ref=me_ref)
