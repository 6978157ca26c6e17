"""CAV grouping per barrier, leader selection, and the crossing-time /
delay evaluation fed to the middle level.

Head-lag sequences (each slot serves one arm's left and through together)
keep CAVs in first-come-first-served order as one mixed platoon per arm.
Head-head and lag-lag sequences regroup each arm's CAVs into the leading
turn group followed by the trailing one; whether the trailing group rides
the same platoon or gets its own planned leader depends on whether its
first vehicle would otherwise hit the inter-phase red.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import chain_positions
from .domain import MOVEMENTS, KinematicParams, PhaseAssignment, Turn, \
    movement_for
from .trajectory import InfeasibleWindow, PhaseWindow, TrajectoryPlan, \
    plan_leader

_WINDOW_TOL = 1e-9


class PlatoonCase(enum.Enum):
    CASE1 = "head-lag"
    CASE2 = "head-head/lag-lag"


def classify_case(assignment: PhaseAssignment) -> PlatoonCase:
    """Case 1 when the two rings serve their left turns in opposite phase
    slots (head-lag); Case 2 when both lead or both lag."""
    if assignment.left_slot(1) != assignment.left_slot(2):
        return PlatoonCase.CASE1
    return PlatoonCase.CASE2


def case2_lead_turn(assignment: PhaseAssignment) -> Turn:
    """Which turn group enters first under Case 2: lefts lead when both
    rings serve them in phase 1 (head-head), throughs lead otherwise."""
    return Turn.LEFT if assignment.left_slot(1) == 1 else Turn.THROUGH


@dataclass(frozen=True)
class CavInfo:
    id: int
    arm: str
    turn: Turn
    arrival: float  # at the buffer upstream boundary, seconds


@dataclass(frozen=True)
class PlatoonMember:
    cav: CavInfo
    entry_time: float
    crossing_time: float


@dataclass(frozen=True)
class Platoon:
    leader_plan: TrajectoryPlan
    members: tuple  # PlatoonMember, leader first


@dataclass(frozen=True)
class ArmPlatoons:
    arm: str
    case: str  # "case1" | "case2-two" | "case2-one" | "empty"
    platoons: tuple


@dataclass(frozen=True)
class PlatoonAssignment:
    """Per-arm platoons for one barrier group plus which turn-group prefix
    of each arm's waiting queue was consumed."""

    barrier_index: int
    arms: dict                  # arm -> ArmPlatoons
    served: dict                # arm -> {Turn.LEFT: n, Turn.THROUGH: n}

    def all_members(self):
        for ap in self.arms.values():
            for p in ap.platoons:
                yield from p.members


def _snap_up(t: float, dt: float) -> float:
    return math.ceil(t / dt - 1e-9) * dt


def _extended_positions(plan: TrajectoryPlan, times: np.ndarray,
                        kin: KinematicParams) -> np.ndarray:
    """Leader positions over a grid, continuing past the stop line with
    full acceleration up to v_max (its run through the intersection box)."""
    segs = list(plan.segments)
    _, v_end = plan.state_at(plan.t_f)
    t_end = plan.t_f
    if v_end < kin.v_max - 1e-12:
        ramp = (kin.v_max - v_end) / kin.a_up
        segs.append((kin.a_up, t_end + ramp))
        t_end += ramp
    segs.append((0.0, max(times[-1], t_end) + 1.0))
    out = np.empty(len(times))
    x, v, tc = 0.0, plan.v0, plan.t0
    lo = 0
    for a, te in segs:
        hi = int(np.searchsorted(times, te + 1e-12, side="right"))
        if hi > lo:
            s = np.maximum(times[lo:hi] - tc, 0.0)
            out[lo:hi] = x + v * s + 0.5 * a * s * s
            lo = hi
        dur = te - tc
        if dur > 0:
            x += v * dur + 0.5 * a * dur * dur
            v += a * dur
            tc = te
    if lo < len(times):
        out[lo:] = x + v * (times[lo:] - tc)
    return out


@dataclass
class ChainResult:
    grid_t0: float
    dt: float
    crossings: np.ndarray       # absolute seconds per member (leader first)
    entries: np.ndarray         # snapped absolute entry times
    positions: np.ndarray       # (n_members, n_steps) trails


class ChainContext:
    """Everything a follower-chain simulation needs besides the members."""

    def __init__(self, kin: KinematicParams, gap: float, tau_cav: float,
                 dt_sim: float, buffer_free: float, v0_plan: float,
                 cache: dict | None = None):
        self.kin = kin
        self.gap = gap
        self.tau_cav = tau_cav
        self.dt_sim = dt_sim
        self.buffer_free = buffer_free
        self.v0_plan = v0_plan
        self.cache = cache if cache is not None else {}

    def entry_time(self, cav: CavInfo, release: float) -> float:
        return _snap_up(max(release, cav.arrival + self.buffer_free),
                        self.dt_sim)

    def leader_plan(self, entry: float, window: PhaseWindow) -> TrajectoryPlan:
        key = ("plan", round(entry / self.dt_sim), self.v0_plan,
               round(window.start / self.dt_sim),
               round(window.end / self.dt_sim))
        hit = self.cache.get(key)
        if hit is None:
            hit = plan_leader(entry, self.v0_plan, window, self.kin)
            self.cache[key] = hit
        return hit

    def chain(self, plan: TrajectoryPlan, entries: tuple,
              grid_end: float) -> ChainResult:
        dt = self.dt_sim
        key = ("chain", round(plan.t0 / dt), plan.v0,
               round(plan.t_f / dt), entries, round(grid_end / dt))
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        g0 = plan.t0
        n = int(round((grid_end - g0) / dt)) + 1
        times = g0 + dt * np.arange(n)
        lead = _extended_positions(plan, times, self.kin)
        e_idx = np.array([int(round((e - g0) / dt)) for e in entries],
                         dtype=np.int64)
        e_spd = np.full(len(entries), plan.v0)
        tau_steps = int(round(self.tau_cav / dt))
        pos, cross = chain_positions(lead, e_idx, e_spd, tau_steps, dt,
                                     self.kin.v_max, self.kin.a_up,
                                     self.kin.a_low_mag, self.gap,
                                     self.kin.passing_zone_length)
        res = ChainResult(g0, dt, g0 + cross * dt,
                          np.concatenate(([plan.t0], np.asarray(entries))),
                          pos)
        self.cache[key] = res
        return res


def _window_of(windows: dict, arm: str, turn: Turn) -> PhaseWindow:
    return windows[(arm, turn)]


def _in_window(t: float, w: PhaseWindow) -> bool:
    return w.start - _WINDOW_TOL <= t <= w.end + _WINDOW_TOL


def _chain_platoon(ctx: ChainContext, cavs: list, release: float,
                   windows: dict, arm: str, lead_window: PhaseWindow,
                   grid_end: float):
    """Plan the first vehicle and chain the rest; returns (plan, chain,
    entries) or None when the leader cannot cross in its window."""
    leader = cavs[0]
    e0 = ctx.entry_time(leader, release)
    try:
        plan = ctx.leader_plan(e0, lead_window)
    except InfeasibleWindow:
        return None
    entries = tuple(ctx.entry_time(c, release) for c in cavs[1:])
    chain = ctx.chain(plan, entries, grid_end)
    return plan, chain


def _truncate(cavs, chain, windows, arm, start_idx=0):
    """Longest prefix of members whose crossings fall inside their own
    movement's green window. Returns (members, n_taken)."""
    members = []
    for k, cav in enumerate(cavs):
        t_cross = chain.crossings[start_idx + k]
        if not np.isfinite(t_cross):
            break
        if not _in_window(t_cross, _window_of(windows, arm, cav.turn)):
            break
        members.append(PlatoonMember(cav, float(chain.entries[start_idx + k]),
                                     float(t_cross)))
    return members, len(members)


def build_platoons(candidates_by_arm: dict, barrier_index: int,
                   assignment: PhaseAssignment, windows: dict,
                   release: float, ctx: ChainContext) -> PlatoonAssignment:
    """Group each arm's unserved CAVs into platoons that cross during
    barrier group ``barrier_index``.

    candidates_by_arm maps arm -> arrival-sorted CavInfo lists (already
    excluding CAVs served in earlier barriers); windows maps (arm, turn)
    to the absolute green window of that movement in this barrier.
    """
    case = classify_case(assignment)
    arms = {}
    served = {}
    grid_end = max(w.end for w in windows.values()) + 10.0
    for arm, cands in candidates_by_arm.items():
        served[arm] = {Turn.LEFT: 0, Turn.THROUGH: 0}
        if not cands:
            arms[arm] = ArmPlatoons(arm, "empty", ())
            continue
        if case is PlatoonCase.CASE1:
            lead_w = _window_of(windows, arm, cands[0].turn)
            got = _chain_platoon(ctx, cands, release, windows, arm, lead_w,
                                 grid_end)
            if got is None:
                arms[arm] = ArmPlatoons(arm, "empty", ())
                continue
            plan, chain = got[0], got[1]
            members, n = _truncate(cands, chain, windows, arm)
            if not members:
                arms[arm] = ArmPlatoons(arm, "empty", ())
                continue
            for mb in members:
                served[arm][mb.cav.turn] += 1
            arms[arm] = ArmPlatoons(arm, "case1",
                                    (Platoon(plan, tuple(members)),))
            continue
        # Case 2: regroup into leading and trailing turn groups
        lead_turn = case2_lead_turn(assignment)
        trail_turn = Turn.THROUGH if lead_turn is Turn.LEFT else Turn.LEFT
        lead_group = [c for c in cands if c.turn is lead_turn]
        trail_group = [c for c in cands if c.turn is trail_turn]
        platoons = []
        tag = "empty"
        lead_members = []
        if lead_group:
            got = _chain_platoon(ctx, lead_group, release, windows, arm,
                                 _window_of(windows, arm, lead_turn),
                                 grid_end)
            if got is not None:
                plan, chain = got[0], got[1]
                lead_members, n_lead = _truncate(lead_group, chain, windows,
                                                 arm)
                if lead_members:
                    platoons.append(Platoon(plan, tuple(lead_members)))
                    tag = "case2-two"
        if trail_group:
            trail_w = _window_of(windows, arm, trail_turn)
            one_platoon_members = None
            if lead_members:
                combo = [mb.cav for mb in lead_members] + trail_group
                got = _chain_platoon(ctx, combo, release, windows, arm,
                                     _window_of(windows, arm, lead_turn),
                                     grid_end)
                plan, chain = got[0], got[1]
                t_first = chain.crossings[len(lead_members)]
                if np.isfinite(t_first) and _in_window(t_first, trail_w):
                    # Subcase 2-2: the trailing group rides the same platoon
                    trail_members, _ = _truncate(trail_group, chain, windows,
                                                 arm,
                                                 start_idx=len(lead_members))
                    one_platoon_members = trail_members
                    if trail_members:
                        platoons[0] = Platoon(
                            platoons[0].leader_plan,
                            platoons[0].members + tuple(trail_members))
                        tag = "case2-one"
                elif np.isfinite(t_first) and t_first > trail_w.end:
                    one_platoon_members = []  # blocked behind the lead group
            if one_platoon_members is None:
                # Subcase 2-1 (or no leading platoon): own planned leader
                got = _chain_platoon(ctx, trail_group, release, windows, arm,
                                     trail_w, grid_end)
                if got is not None:
                    plan, chain = got[0], got[1]
                    trail_members, _ = _truncate(trail_group, chain, windows,
                                                 arm)
                    if trail_members:
                        platoons.append(Platoon(plan, tuple(trail_members)))
                        tag = "case2-two"
        if not platoons:
            arms[arm] = ArmPlatoons(arm, "empty", ())
            continue
        if tag == "empty":
            tag = "case2-two"
        for p in platoons:
            for mb in p.members:
                served[arm][mb.cav.turn] += 1
        arms[arm] = ArmPlatoons(arm, tag, tuple(platoons))
    return PlatoonAssignment(barrier_index, arms, served)


def cav_delay(assignment: PlatoonAssignment, approach_free_time: float):
    """Total CAV delay of the barrier (Eqs. 13-14) and per-CAV stop-line
    crossing times. Non-crossing CAVs contribute zero by definition."""
    total = 0.0
    crossings = {}
    for mb in assignment.all_members():
        d = mb.crossing_time - mb.cav.arrival - approach_free_time
        if d < -1e-6:
            raise AssertionError(
                f"negative CAV delay {d} for cav {mb.cav.id}: crossing "
                f"{mb.crossing_time} arrival {mb.cav.arrival}")
        total += max(d, 0.0)
        crossings[mb.cav.id] = mb.crossing_time
    return total, crossings
