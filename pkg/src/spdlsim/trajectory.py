"""Analytic trajectory planning for platoon leaders and the NGSIM
car-following update for everyone else.

A leader plan is at most three constant-acceleration segments. The passing
time window is bounded below by the full-throttle profile and above by the
full-braking profile; when the green window opens later than the earliest
possible arrival, the leader stretches its trajectory to hit the window
start exactly, choosing among nine (a1, cruise, a3) acceleration patterns
the one that maximizes the stop-line crossing speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import gipps_advance
from .domain import KinematicParams

_EPS_T = 1e-9       # time slack for feasibility checks
_EPS_D = 1e-6       # distance closure tolerance, m
_TIE_V = 1e-9       # crossing speeds closer than this tie-break


@dataclass(frozen=True)
class PhaseWindow:
    start: float   # seconds, absolute
    duration: float

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("window duration must be positive")

    @property
    def end(self) -> float:
        return self.start + self.duration


class InfeasibleWindow(Exception):
    """The vehicle cannot reach the stop line inside the green window:
    either the window closes before the earliest possible arrival (case
    'early') or opens after the latest possible arrival (case 'late')."""

    def __init__(self, case: str, detail: str = ""):
        self.case = case
        super().__init__(f"window infeasible ({case}): {detail}")


@dataclass(frozen=True)
class TrajectoryPlan:
    """Piecewise-constant-acceleration profile from passing-zone entry to
    the stop line. segments are (acceleration, absolute end time) pairs;
    the last end time equals t_f."""

    t0: float
    v0: float
    segments: tuple
    t_f: float
    v_f: float

    def state_at(self, t: float):
        """(position, speed) at absolute time t; clamps before t0 and
        extrapolates a cruise at v_f after t_f."""
        if t <= self.t0:
            return 0.0, self.v0
        x, v, tc = 0.0, self.v0, self.t0
        for a, te in self.segments:
            seg = min(t, te) - tc
            if seg > 0:
                x += v * seg + 0.5 * a * seg * seg
                v += a * seg
                tc += seg
            if tc >= t:
                return x, v
        return x + (t - tc) * v, v

    def position(self, t: float) -> float:
        return self.state_at(t)[0]

    def speed(self, t: float) -> float:
        return self.state_at(t)[1]

    def sample(self, times: np.ndarray) -> np.ndarray:
        return np.array([self.position(t) for t in np.asarray(times)])

    def pattern(self) -> tuple:
        return tuple(a for a, _ in self.segments)


def _segments_from(t0, v0, pieces):
    """Build a compressed segment tuple from (a, duration) pieces."""
    segs = []
    t = t0
    for a, dur in pieces:
        if dur <= _EPS_T:
            continue
        t += dur
        if segs and abs(segs[-1][0] - a) < 1e-12:
            segs[-1] = (a, t)
        else:
            segs.append((a, t))
    return tuple(segs)


def passing_time_bounds(v0: float, kin: KinematicParams):
    """Earliest and latest stop-line passing times relative to entry
    (Appendix A, Eqs. 43-44). The upper bound is math.inf whenever the
    vehicle can stop short of the line, i.e. v0 <= sqrt(2*|aL|*L)."""
    if not -1e-9 <= v0 <= kin.v_max + 1e-9:
        raise ValueError(f"entry speed {v0} outside [0, v_max]")
    v0 = min(max(v0, 0.0), kin.v_max)
    L, a, b, vm = (kin.passing_zone_length, kin.a_up, kin.a_low_mag,
                   kin.v_max)
    if L == 0.0:
        return 0.0, 0.0
    crit = vm * vm - 2.0 * a * L
    if crit >= 0.0 and v0 <= math.sqrt(crit):
        t_low = (math.sqrt(v0 * v0 + 2.0 * a * L) - v0) / a
    else:
        t_low = ((vm - v0) / a + L / vm
                 - (vm * vm - v0 * v0) / (2.0 * a * vm))
    if v0 * v0 > 2.0 * b * L:
        t_up = (v0 - math.sqrt(v0 * v0 - 2.0 * b * L)) / b
    else:
        t_up = math.inf
    return t_low, t_up


def _min_time_profile(t0, v0, kin):
    """Profile attaining the earliest passing time: full throttle, capped
    at v_max."""
    L, a, vm = kin.passing_zone_length, kin.a_up, kin.v_max
    vpeak_sq = v0 * v0 + 2.0 * a * L
    if vpeak_sq <= vm * vm + 1e-12:
        vf = math.sqrt(vpeak_sq)
        tau = (vf - v0) / a if a > 0 else 0.0
        return _segments_from(t0, v0, [(a, tau)]), vf
    tau_a = (vm - v0) / a
    d1 = (vm * vm - v0 * v0) / (2.0 * a)
    tau_c = (L - d1) / vm
    return _segments_from(t0, v0, [(a, tau_a), (0.0, tau_c)]), vm


def _case3_candidates(a1, a3, v0, T, L, vmax):
    """Solutions of the (a1, cruise, a3) pattern hitting distance L in
    exactly time T. Yields (tau1, tau2, tau3, u, vf) tuples; the caller
    filters feasibility."""
    out = []

    def push(t1, t2, t3, u, vf):
        out.append((t1, t2, t3, u, vf))

    if a1 == 0.0 and a3 == 0.0:
        if abs(v0 * T - L) <= _EPS_D:
            push(0.0, T, 0.0, v0, v0)
        return out
    if a1 == 0.0:
        rhs = 2.0 * (L - v0 * T) / a3
        if rhs >= -1e-12:
            t3 = math.sqrt(max(rhs, 0.0))
            push(0.0, T - t3, t3, v0, v0 + a3 * t3)
        return out
    if a3 == 0.0:
        disc = (v0 + a1 * T) ** 2 - v0 * v0 - 2.0 * a1 * L
        if disc >= -1e-12:
            rt = math.sqrt(max(disc, 0.0))
            for u in ((v0 + a1 * T) - rt, (v0 + a1 * T) + rt):
                t1 = (u - v0) / a1
                push(t1, T - t1, 0.0, u, u)
        return out

    # full pattern: pin vf at a speed bound, close the cruise, or pin u
    for vf_pin in ((vmax,) if a3 > 0 else (0.0,)):
        c2 = -1.0 / (2.0 * a1) + 1.0 / (2.0 * a3)
        c1 = T + v0 / a1 - vf_pin / a3
        c0 = -v0 * v0 / (2.0 * a1) + vf_pin * vf_pin / (2.0 * a3) - L
        for u in _roots(c2, c1, c0):
            t1 = (u - v0) / a1
            t3 = (vf_pin - u) / a3
            push(t1, T - t1 - t3, t3, u, vf_pin)
    # tau2 = 0 (pure bang-bang)
    c2 = 0.5 * (a3 - a1)
    c1 = (a1 - a3) * T
    c0 = v0 * T + 0.5 * a3 * T * T - L
    if abs(c2) < 1e-15 and abs(c1) < 1e-15:
        if abs(c0) <= _EPS_D:
            push(T, 0.0, 0.0, v0 + a1 * T, v0 + a1 * T)
    else:
        for t1 in _roots(c2, c1, c0):
            u = v0 + a1 * t1
            t3 = T - t1
            push(t1, 0.0, t3, u, u + a3 * t3)
    # u pinned at the speed floor/ceiling
    if a1 < 0.0:
        t1 = v0 / (-a1)
        rhs = 2.0 * (L + v0 * v0 / (2.0 * a1)) / a3
        if rhs >= -1e-12:
            t3 = math.sqrt(max(rhs, 0.0))
            push(t1, T - t1 - t3, t3, 0.0, a3 * t3)
    if a1 > 0.0 and a3 < 0.0:
        t1 = (vmax - v0) / a1
        rhs = 2.0 * (L - vmax * T + (vmax - v0) ** 2 / (2.0 * a1)) / a3
        if rhs >= -1e-12:
            t3 = math.sqrt(max(rhs, 0.0))
            push(t1, T - t1 - t3, t3, vmax, vmax + a3 * t3)
    return out


def _roots(c2, c1, c0):
    if abs(c2) < 1e-15:
        if abs(c1) < 1e-15:
            return ()
        return (-c0 / c1,)
    disc = c1 * c1 - 4.0 * c2 * c0
    if disc < -1e-12:
        return ()
    rt = math.sqrt(max(disc, 0.0))
    return ((-c1 - rt) / (2.0 * c2), (-c1 + rt) / (2.0 * c2))


def _distance(v0, t1, t2, t3, a1, a3):
    u = v0 + a1 * t1
    vf = u + a3 * t3
    return (0.5 * (v0 + u) * t1 + u * t2 + 0.5 * (u + vf) * t3), u, vf


def _solve_case3(v0, T, L, kin):
    """Best (max crossing speed) three-segment profile covering L in exactly
    T seconds. Returns (pattern, tau1, tau2, tau3, u, vf) or None."""
    vmax = kin.v_max
    rates = (kin.a_up, 0.0, -kin.a_low_mag)
    best = None
    for a1 in rates:
        for a3 in rates:
            for t1, t2, t3, u, vf in _case3_candidates(a1, a3, v0, T, L, vmax):
                if min(t1, t2, t3) < -1e-7:
                    continue
                t1, t2, t3 = max(t1, 0.0), max(t2, 0.0), max(t3, 0.0)
                if abs(t1 + t2 + t3 - T) > 1e-6:
                    continue
                if not (-1e-7 <= u <= vmax + 1e-7):
                    continue
                if not (-1e-7 <= vf <= vmax + 1e-7):
                    continue
                u = min(max(u, 0.0), vmax)
                vf = min(max(vf, 0.0), vmax)
                d, _, _ = _distance(v0, t1, t2, t3, a1, a3)
                if abs(d - L) > 1e-5:
                    continue
                accel_time = (t1 if a1 != 0.0 else 0.0) + \
                             (t3 if a3 != 0.0 else 0.0)
                cand = (vf, -accel_time, (a1, 0.0, a3), (a1, a3, t1, t2, t3, u))
                if best is None or _better(cand, best):
                    best = cand
    if best is None:
        return None
    a1, a3, t1, t2, t3, u = best[3]
    return (a1, 0.0, a3), t1, t2, t3, u, best[0]


def _better(cand, best):
    if cand[0] > best[0] + _TIE_V:
        return True
    if cand[0] < best[0] - _TIE_V:
        return False
    if cand[1] > best[1] + _EPS_T:
        return True
    if cand[1] < best[1] - _EPS_T:
        return False
    return cand[2] < best[2]


def plan_leader(t0: float, v0: float, window: PhaseWindow,
                kin: KinematicParams) -> TrajectoryPlan:
    """Plan a platoon-leading trajectory: earliest stop-line crossing within
    the green window, ties broken by maximal crossing speed.

    Raises InfeasibleWindow when the window closes before the earliest
    possible crossing or opens after the latest possible one; the vehicle
    is then deferred to a later barrier.
    """
    t_low, t_up = passing_time_bounds(v0, kin)
    v0 = min(max(v0, 0.0), kin.v_max)
    if t0 + t_low > window.end + _EPS_T:
        raise InfeasibleWindow("early",
                               f"earliest crossing {t0 + t_low:.3f}s after "
                               f"window end {window.end:.3f}s")
    if t0 + t_low >= window.start - _EPS_T:
        segments, vf = _min_time_profile(t0, v0, kin)
        return TrajectoryPlan(t0, v0, segments, t0 + t_low, vf)
    if t0 + t_up < window.start - _EPS_T:
        raise InfeasibleWindow("late",
                              f"latest crossing {t0 + t_up:.3f}s before "
                              f"window start {window.start:.3f}s")
    T = window.start - t0
    sol = _solve_case3(v0, T, kin.passing_zone_length, kin)
    if sol is None:
        raise InfeasibleWindow("late", "no feasible stretched profile")
    (a1, _, a3), t1, t2, t3, _, vf = sol
    segments = _segments_from(t0, v0, [(a1, t1), (0.0, t2), (a3, t3)])
    return TrajectoryPlan(t0, v0, segments, window.start, vf)


class LeaderTrace:
    """Position/speed lookup over a recorded or analytic leader trail."""

    def __init__(self, times: np.ndarray, positions: np.ndarray):
        self.times = np.asarray(times, dtype=float)
        self.positions = np.asarray(positions, dtype=float)

    def position_at(self, t: float) -> float:
        return float(np.interp(t, self.times, self.positions))

    def speed_at(self, t: float) -> float:
        dt = self.times[1] - self.times[0] if len(self.times) > 1 else 1.0
        return (self.position_at(t) - self.position_at(t - dt)) / dt


def follow_update(follower_pos: float, follower_speed: float,
                  leader: LeaderTrace, t_now: float, dt_sim: float,
                  kin: KinematicParams, gap: float, tau: float) -> float:
    """One NGSIM car-following step (Eqs. 38-41); returns the new position.

    gap is the leader length plus jam spacing. A leader closer than its own
    stopping envelope makes the braking-safety advance zero rather than
    imaginary; the never-reverse lower bound still applies.
    """
    x, v = follower_pos, follower_speed
    x_first = leader.position_at(t_now + dt_sim - tau) - gap
    x_acc = x + v * dt_sim + kin.a_up * dt_sim * dt_sim
    x_spd = x + kin.v_max * dt_sim
    gap_net = leader.position_at(t_now) - x - gap
    adv = gipps_advance(gap_net, max(leader.speed_at(t_now), 0.0),
                        dt_sim, kin.a_low_mag, tau)
    x_upper = min(x_first, x_acc, x_spd, x + adv)
    x_lower = max(x, x + v * dt_sim - kin.a_low_mag * dt_sim * dt_sim)
    return max(x_lower, x_upper)


def recommended_passing_length(kin: KinematicParams, x_min_steps: int,
                               dt: float) -> float:
    """Passing-zone length that lets the slowest-entering leader reach full
    speed and arrive with one minimal barrier of lead time (Eq. 42)."""
    ramp = (kin.v_max - kin.v0_low) / kin.a_up
    horizon = x_min_steps * dt
    if horizon < ramp - 1e-12:
        raise ValueError(
            f"X_min*dt = {horizon}s is shorter than the speed-up time "
            f"{ramp}s; no consistent passing-zone length exists")
    return ((kin.v_max ** 2 - kin.v0_low ** 2) / (2.0 * kin.a_up)
            + (horizon - ramp) * kin.v_max)


def trajectory_csv_rows(plan: TrajectoryPlan, sample_dt: float = 0.5):
    """(t, x, v, a) samples of a plan for plotting/export."""
    rows = []
    t = plan.t0
    while t < plan.t_f - 1e-12:
        x, v = plan.state_at(t)
        a = 0.0
        for acc, te in plan.segments:
            if t < te - 1e-12:
                a = acc
                break
        rows.append((t, x, v, a))
        t += sample_dt
    x, v = plan.state_at(plan.t_f)
    rows.append((plan.t_f, x, v, 0.0))
    return rows
