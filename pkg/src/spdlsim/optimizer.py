"""Three-level signal optimization: dynamic programming over barrier
durations, phase-plan enumeration with fluid-queue HV delay, and platoon
trajectory evaluation for CAV delay.

The DP has three stages; stage 3 only aggregates. Stage-1 evaluations
cover the first barrier group alone; stage-2 evaluations cover the second
barrier plus a repeated tail that alternately replays the two chosen
barrier plans until every predicted HV and every known CAV is discharged
(capped, with a flagged saturation-drain residual, under extreme load).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._kernels import hv_stage1_batch, hv_stage2_batch
from .domain import ARMS, MOVEMENTS, RING_ORIENTATION_MOVEMENTS, SLOTS, \
    KinematicParams, Orientation, PhaseAssignment, Turn, TimingParams
from .platoon import CavInfo, ChainContext, PlatoonAssignment, \
    build_platoons, cav_delay
from .queue_model import green_windows
from .trajectory import PhaseWindow

_QUEUE_EPS = 1e-6


class ConfigurationError(ValueError):
    pass


def decision_bounds(params: TimingParams) -> tuple:
    """Admissible barrier duration range in time steps (Eqs. 2-3)."""
    lo_rings, hi_rings = [], []
    for r in (1, 2):
        lo = sum(params.g_min_s[(p, r)] + params.green_interval_s[(p, r)]
                 for p in (1, 2))
        hi = sum(params.g_max_s[(p, r)] + params.green_interval_s[(p, r)]
                 for p in (1, 2))
        lo_rings.append(lo)
        hi_rings.append(hi)
    xmin = max(lo_rings) / params.dt
    xmax = max(hi_rings) / params.dt
    for name, v in (("X_min", xmin), ("X_max", xmax)):
        if abs(v - round(v)) > 1e-9:
            raise ConfigurationError(
                f"{name} = {v} is not an integer number of steps; "
                f"choose dt so the green-time bounds divide evenly")
    return int(round(xmin)), int(round(xmax))


def enumerate_phase_plans(x_j: int, orientation: Orientation,
                          params: TimingParams,
                          no_buffer: bool = False) -> list:
    """All phase assignments satisfying Eqs. (15)-(22) for one barrier of
    x_j steps serving the given orientation: both movement orders per ring
    crossed with every admissible integer split.

    With no_buffer the set collapses to head-lag sequences whose same-arm
    through and left windows are synchronized across rings.
    """
    ring_opts = {}
    for r in (1, 2):
        m_a, m_b = RING_ORIENTATION_MOVEMENTS[(r, orientation)]
        opts = []
        lo1, hi1 = params.g_step_range(1, r)
        lo2, hi2 = params.g_step_range(2, r)
        rsum = params.r_steps(1, r) + params.r_steps(2, r)
        for order in ((m_a, m_b), (m_b, m_a)):
            for g1 in range(lo1, hi1 + 1):
                g2 = x_j - g1 - rsum
                if lo2 <= g2 <= hi2:
                    opts.append((order, g1, g2))
        ring_opts[r] = opts
    plans = []
    for o1, g11, g21 in ring_opts[1]:
        for o2, g12, g22 in ring_opts[2]:
            a = PhaseAssignment(
                orientation,
                {(1, 1): o1[0], (2, 1): o1[1], (1, 2): o2[0], (2, 2): o2[1]},
                {(1, 1): g11, (2, 1): g21, (1, 2): g12, (2, 2): g22})
            if no_buffer:
                if a.left_slot(1) == a.left_slot(2):
                    continue
                if g11 != g12 or g21 != g22:
                    continue
            plans.append(a)
    plans.sort(key=lambda a: (a.alpha_key, -a.g[(1, 1)], -a.g[(1, 2)],
                              -a.g[(2, 1)], -a.g[(2, 2)]))
    return plans


@dataclass
class SolveContext:
    timing: TimingParams
    kin: KinematicParams
    plan_start: float                  # seconds; start of the planned cycle
    prev_orientation: Orientation      # live cycle's final barrier
    release_first: float               # buffer release for barrier 1's arms
    hv_rates: dict                     # movement id -> veh/s
    hv_queues: dict                    # movement id -> veh at plan_start
    hv_saturation: dict                # movement id -> veh/s
    arrivals_until: float              # absolute end of the demand horizon
    cavs_by_arm: dict                  # arm -> arrival-sorted [CavInfo]
    gap: float = 6.0
    tau_cav: float = 0.0
    dt_sim: float = 0.1
    buffer_length: float = 200.0
    no_buffer: bool = False
    tail_cap: int = 40
    workers: int = 1
    cav_model: object = None           # None selects platoon evaluation

    def __post_init__(self):
        for arm, lst in self.cavs_by_arm.items():
            self.cavs_by_arm[arm] = sorted(lst, key=lambda c: (c.arrival,
                                                               c.id))

    @property
    def buffer_free(self) -> float:
        return self.buffer_length / self.kin.v_max

    @property
    def approach_free(self) -> float:
        return (self.buffer_length + self.kin.passing_zone_length) \
            / self.kin.v_max


ARM_OF_ORIENT = {Orientation.EW: ("E", "W"), Orientation.NS: ("N", "S")}
_ARM_INDEX = {a: i for i, a in enumerate(ARMS)}

# lane progress is a flat tuple: (lefts, throughs) served per arm in ARMS
# order, eight ints total
LANE_STATE_ZERO = (0,) * 8


class PlatoonCavModel:
    """The shared-phase CAV evaluation: platoons + planned trajectories."""

    blue_steps = 0

    def __init__(self, ctx: SolveContext):
        self.ctx = ctx
        self.chain_ctx = ChainContext(ctx.kin, ctx.gap, ctx.tau_cav,
                                      ctx.dt_sim, ctx.buffer_free,
                                      ctx.kin.v0_up)
        self._merged = {}
        self._rank = {}
        full = []
        for arm in ARMS:
            cavs = sorted(ctx.cavs_by_arm.get(arm, ()),
                          key=lambda c: (c.arrival, c.id))
            nl = nt = 0
            for c in cavs:
                if c.turn is Turn.LEFT:
                    self._rank[c.id] = (0, nl)
                    nl += 1
                else:
                    self._rank[c.id] = (1, nt)
                    nt += 1
            self._merged[arm] = cavs
            full.extend((nl, nt))
        self._full = tuple(full)
        self._memo = {}
        self._win_cache = {}

    def complete(self, state: tuple) -> bool:
        # serve counts never exceed the waiting totals
        return state == self._full

    def _remaining(self, arm: str, state: tuple) -> list:
        i = 2 * _ARM_INDEX[arm]
        lim = (state[i], state[i + 1])
        return [c for c in self._merged[arm]
                if self._rank[c.id][1] >= lim[self._rank[c.id][0]]]

    def _windows(self, assignment: PhaseAssignment, barrier_start: float):
        key = (assignment.alpha_key, tuple(assignment.g[s] for s in SLOTS))
        rel = self._win_cache.get(key)
        if rel is None:
            rel = barrier_phase_windows(assignment, 0.0, self.ctx.timing)
            self._win_cache[key] = rel
        return {k: PhaseWindow(w.start + barrier_start, w.duration)
                for k, w in rel.items()}

    def evaluate(self, j: int, assignment: PhaseAssignment,
                 barrier_start: float, x: int, release: float, state: tuple):
        """CAV delay of one barrier occurrence; returns (d_c, new_state,
        PlatoonAssignment)."""
        if self.ctx.no_buffer:
            release = -math.inf
        dt = self.ctx.dt_sim
        rel_key = -1 if math.isinf(release) else round(release / dt)
        key = (round(barrier_start / dt), assignment.alpha_key,
               tuple(assignment.g[s] for s in SLOTS), rel_key, state)
        hit = self._memo.get(key)
        if hit is None:
            windows = self._windows(assignment, barrier_start)
            cands = {arm: self._remaining(arm, state)
                     for arm in ARM_OF_ORIENT[assignment.orientation]}
            pa = build_platoons(cands, j, assignment, windows, release,
                                self.chain_ctx)
            d_c, _ = cav_delay(pa, self.ctx.approach_free)
            hit = (d_c, pa)
            self._memo[key] = hit
        d_c, pa = hit
        new_state = list(state)
        for arm, cnt in pa.served.items():
            i = 2 * _ARM_INDEX[arm]
            new_state[i] += cnt[Turn.LEFT]
            new_state[i + 1] += cnt[Turn.THROUGH]
        return d_c, tuple(new_state), pa


def barrier_phase_windows(assignment: PhaseAssignment, barrier_start: float,
                          params: TimingParams) -> dict:
    """(arm, turn) -> absolute green PhaseWindow for one barrier."""
    lo, hi = green_windows(assignment, params)
    out = {}
    for k, slot in enumerate(SLOTS):
        m = MOVEMENTS[assignment.movement[slot]]
        start = barrier_start + (lo[k] - 1) * params.dt
        end = barrier_start + hi[k] * params.dt
        out[(m.arm, m.turn)] = PhaseWindow(start, end - start)
    return out


@dataclass
class StageEvaluation:
    j: int
    s: int
    x: int
    value: float
    hv_delay: float
    cav_delay: float
    assignment: PhaseAssignment
    final_queues: np.ndarray
    lane_state: dict
    platoons: PlatoonAssignment | None
    tail_barriers: int = 1      # J for stage 2, 1 for stage 1
    capped: bool = False


@dataclass
class DPTable:
    bounds: tuple
    stage2: dict = field(default_factory=dict)  # s2 -> (v2, x1)
    stage3: dict = field(default_factory=dict)  # s3 -> (v3, x2)


@dataclass
class SolveResult:
    x: tuple
    assignments: tuple
    value: float
    plan_start: float
    stage_evals: tuple
    table: DPTable
    capped: bool
    dt: float = 1.0
    blue_steps: int = 0

    def barrier_start(self, j: int) -> float:
        """Absolute start of planned barrier j (0-based)."""
        return self.plan_start + (sum(self.x[:j]) + j * self.blue_steps) \
            * self.dt

    def to_text(self) -> str:
        lines = [f"value {self.value:.9g}", f"x1 {self.x[0]} x2 {self.x[1]}"]
        for i, a in enumerate(self.assignments):
            g = " ".join(str(a.g[s]) for s in SLOTS)
            m = " ".join(str(a.movement[s]) for s in SLOTS)
            lines.append(f"barrier{i + 1} {a.orientation.value} m[{m}] g[{g}]")
        return "\n".join(lines) + "\n"


class Evaluator:
    """Memoized middle-level evaluation shared by the DP and by exhaustive
    verification."""

    def __init__(self, ctx: SolveContext):
        self.ctx = ctx
        self.bounds = decision_bounds(ctx.timing)
        self.cav_model = ctx.cav_model or PlatoonCavModel(ctx)
        self.blue_steps = getattr(self.cav_model, "blue_steps", 0)
        self._enum_cache = {}
        self._stage1 = {}
        self._stage2 = {}
        self._rates8 = np.array([ctx.hv_rates.get(m, 0.0) * ctx.timing.dt
                                 for m in range(1, 9)])
        self._qs8 = np.array([max(ctx.hv_saturation.get(m, 0.0), 1e-12)
                              * ctx.timing.dt for m in range(1, 9)])
        self._q0 = np.array([ctx.hv_queues.get(m, 0.0)
                             for m in range(1, 9)])
        h = (ctx.arrivals_until - ctx.plan_start) / ctx.timing.dt
        self._horizon_steps = int(math.floor(h + 1e-9))

    # -- enumeration ------------------------------------------------------
    def plans(self, x: int, orientation: Orientation):
        key = (x, orientation)
        hit = self._enum_cache.get(key)
        if hit is None:
            plans = enumerate_phase_plans(x, orientation, self.ctx.timing,
                                          self.ctx.no_buffer)
            if not plans:
                raise ConfigurationError(
                    f"no feasible split for x={x}; check Eqs. 2-3 bounds")
            n = len(plans)
            mov = np.zeros((n, 4), dtype=np.int64)
            wlo = np.zeros((n, 4), dtype=np.int64)
            whi = np.zeros((n, 4), dtype=np.int64)
            for i, a in enumerate(plans):
                lo, hi = green_windows(a, self.ctx.timing)
                wlo[i], whi[i] = lo, hi
                mov[i] = [a.movement[s] - 1 for s in SLOTS]
            hit = (plans, mov, wlo, whi)
            self._enum_cache[key] = hit
        return hit

    # -- stage 1 ----------------------------------------------------------
    def stage1(self, x1: int) -> StageEvaluation:
        hit = self._stage1.get(x1)
        if hit is not None:
            return hit
        ctx = self.ctx
        orient = ctx.prev_orientation.other
        plans, mov, wlo, whi = self.plans(x1, orient)
        dh, qfin = hv_stage1_batch(self._q0, self._rates8, self._qs8,
                                   mov, wlo, whi, x1, self.blue_steps, 0,
                                   self._horizon_steps)
        dh = dh * ctx.timing.dt
        state0 = LANE_STATE_ZERO
        best = None
        order = np.argsort(dh, kind="stable")
        for idx in order:
            i = int(idx)
            if best is not None and dh[i] > best[0]:
                break
            d_c, new_state, pa = self.cav_model.evaluate(
                1, plans[i], ctx.plan_start, x1, ctx.release_first, state0)
            total = dh[i] + d_c
            cand = (total, i, d_c, new_state, pa)
            if best is None or total < best[0] or \
                    (total == best[0] and i < best[1]):
                best = cand
        total, i, d_c, new_state, pa = best
        se = StageEvaluation(1, 0, x1, total, float(dh[i]), d_c, plans[i],
                             qfin[i].copy(), new_state, pa)
        self._stage1[x1] = se
        return se

    # -- stage 2 (barrier 2 + repeated tail) ------------------------------
    def stage2(self, s2: int, x2: int) -> StageEvaluation:
        key = (s2, x2)
        hit = self._stage2.get(key)
        if hit is not None:
            return hit
        ctx = self.ctx
        e1 = self.stage1(s2)
        orient = ctx.prev_orientation
        plans, mov, wlo, whi = self.plans(x2, orient)
        p1 = e1.assignment
        lo1, hi1 = green_windows(p1, ctx.timing)
        p1_mov = np.array([p1.movement[s] - 1 for s in SLOTS],
                          dtype=np.int64)
        dh, jhv, capped_hv = hv_stage2_batch(
            e1.final_queues, self._rates8, self._qs8,
            mov, wlo, whi, x2, self.blue_steps,
            p1_mov, lo1, hi1, s2, self.blue_steps,
            s2 + self.blue_steps, self._horizon_steps,
            ctx.tail_cap, _QUEUE_EPS)
        dh = dh * ctx.timing.dt
        best = None
        order = np.argsort(dh, kind="stable")
        for idx in order:
            i = int(idx)
            if best is not None and dh[i] > best[0]:
                break
            d_c, j_cav, cap_cav, pa = self._cav_tail(plans[i], s2, x2, e1)
            total = dh[i] + d_c
            if best is None or total < best[0] or \
                    (total == best[0] and i < best[1]):
                best = (total, i, d_c, j_cav, cap_cav, pa)
        total, i, d_c, j_cav, cap_cav, pa = best
        se = StageEvaluation(2, s2, x2, total, float(dh[i]), d_c, plans[i],
                             np.zeros(8), {}, pa,
                             tail_barriers=max(int(jhv[i]), j_cav),
                             capped=bool(capped_hv[i]) or cap_cav)
        self._stage2[key] = se
        return se

    def _cav_tail(self, plan2: PhaseAssignment, s2: int, x2: int,
                  e1: StageEvaluation):
        """CAV delay over barriers 2..J with the repeated-plan tail."""
        ctx = self.ctx
        dt = ctx.timing.dt
        state = e1.lane_state
        d_total = 0.0
        pa2 = None
        x1 = e1.x
        stride = self.blue_steps
        start = ctx.plan_start + (s2 + stride) * dt
        release = ctx.plan_start
        j = 2
        capped = False
        while True:
            plan, x = (plan2, x2) if j % 2 == 0 else (e1.assignment, x1)
            d_c, state, pa = self.cav_model.evaluate(j, plan, start, x,
                                                     release, state)
            if j == 2:
                pa2 = pa
            d_total += d_c
            if self.cav_model.complete(state):
                break
            if j - 1 >= ctx.tail_cap:
                capped = True
                break
            release = start
            start = start + (x + stride) * dt
            j += 1
        return d_total, j, capped, pa2

    # -- forward / backward ------------------------------------------------
    def all_stage2(self):
        xmin, xmax = self.bounds
        pairs = [(s2, x2) for s2 in range(xmin, xmax + 1)
                 for x2 in range(xmin, xmax + 1)]
        if self.ctx.workers > 1:
            with ThreadPoolExecutor(max_workers=self.ctx.workers) as pool:
                list(pool.map(lambda p: self.stage2(*p), pairs))
        else:
            for p in pairs:
                self.stage2(*p)


def evaluate_stage(j: int, s_j: int, x_j: int, evaluator: Evaluator
                   ) -> StageEvaluation:
    if j == 1:
        if s_j != 0:
            raise ValueError("stage 1 state is always 0")
        return evaluator.stage1(x_j)
    if j == 2:
        return evaluator.stage2(s_j, x_j)
    raise ValueError("only stages 1 and 2 carry decisions")


def forward_recursion(evaluator: Evaluator) -> DPTable:
    """Three-stage forward pass (value tables for stages 2 and 3)."""
    xmin, xmax = evaluator.bounds
    table = DPTable(bounds=(xmin, xmax))
    for s2 in range(xmin, xmax + 1):
        e1 = evaluator.stage1(s2)
        table.stage2[s2] = (e1.value, s2)
    evaluator.all_stage2()
    for s3 in range(2 * xmin, 2 * xmax + 1):
        best = None
        for x2 in range(xmin, xmax + 1):
            s2 = s3 - x2
            if not xmin <= s2 <= xmax:
                continue
            v = table.stage2[s2][0] + evaluator.stage2(s2, x2).value
            if best is None or v < best[0] or (v == best[0] and x2 < best[1]):
                best = (v, x2)
        table.stage3[s3] = best
    return table


def backward_recursion(table: DPTable, evaluator: Evaluator) -> SolveResult:
    """Retrieve the optimal barrier durations and their plans."""
    s3_star, v_star = None, None
    for s3 in sorted(table.stage3):
        v = table.stage3[s3][0]
        if v_star is None or v < v_star:
            s3_star, v_star = s3, v
    x2 = table.stage3[s3_star][1]
    s2 = s3_star - x2
    x1 = table.stage2[s2][1]
    e1 = evaluator.stage1(x1)
    e2 = evaluator.stage2(s2, x2)
    return SolveResult(x=(x1, x2),
                       assignments=(e1.assignment, e2.assignment),
                       value=v_star,
                       plan_start=evaluator.ctx.plan_start,
                       stage_evals=(e1, e2),
                       table=table,
                       capped=e2.capped,
                       dt=evaluator.ctx.timing.dt,
                       blue_steps=evaluator.blue_steps)


def solve(ctx: SolveContext) -> SolveResult:
    ev = Evaluator(ctx)
    table = forward_recursion(ev)
    return backward_recursion(table, ev)
