"""Core vocabulary for ring-barrier control of a four-arm intersection.

Movement numbering (NEMA-style, fixed for the whole package):

    ring 1 = movements 1..4, ring 2 = movements 5..8
    east-west street  = {1, 2, 5, 6},  north-south street = {3, 4, 7, 8}
    through = {1, 3, 6, 7},  left turn = {2, 4, 5, 8}

    m=1 W-arm through   m=2 E-arm left    m=3 S-arm through   m=4 N-arm left
    m=5 W-arm left      m=6 E-arm through m=7 N-arm through   m=8 S-arm left

Each arm has its through movement in one ring and its left in the other,
so any cross-ring pairing of concurrent phases is conflict-free. Right
turns are unsignalized and carry no movement number.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

RINGS = (1, 2)
PHASES = (1, 2)
# canonical slot order used for all per-slot vectors: (p, r)
SLOTS = ((1, 1), (2, 1), (1, 2), (2, 2))


class Orientation(enum.Enum):
    EW = "EW"
    NS = "NS"

    @property
    def other(self) -> "Orientation":
        return Orientation.NS if self is Orientation.EW else Orientation.EW


class Turn(enum.Enum):
    LEFT = "left"
    THROUGH = "through"
    RIGHT = "right"


class VehicleKind(enum.Enum):
    CAV = "CAV"
    HV = "HV"


ARMS = ("E", "W", "N", "S")
ARM_ORIENTATION = {"E": Orientation.EW, "W": Orientation.EW,
                   "N": Orientation.NS, "S": Orientation.NS}


@dataclass(frozen=True)
class Movement:
    """One signal-controlled movement, or an unsignalized right turn (id 0)."""

    id: int
    arm: str
    turn: Turn

    def __post_init__(self):
        if self.turn is Turn.RIGHT:
            if self.id != 0:
                raise ValueError("right turns are unsignalized and use id 0")
        elif not 1 <= self.id <= 8:
            raise ValueError(f"signalized movement id must be 1..8, got {self.id}")

    @property
    def signalized(self) -> bool:
        return self.turn is not Turn.RIGHT

    @property
    def ring(self) -> int:
        return 1 if self.id <= 4 else 2

    @property
    def orientation(self) -> Orientation:
        return ARM_ORIENTATION[self.arm]


MOVEMENTS = {
    1: Movement(1, "W", Turn.THROUGH),
    2: Movement(2, "E", Turn.LEFT),
    3: Movement(3, "S", Turn.THROUGH),
    4: Movement(4, "N", Turn.LEFT),
    5: Movement(5, "W", Turn.LEFT),
    6: Movement(6, "E", Turn.THROUGH),
    7: Movement(7, "N", Turn.THROUGH),
    8: Movement(8, "S", Turn.LEFT),
}

RIGHT_TURNS = {arm: Movement(0, arm, Turn.RIGHT) for arm in ARMS}

# movement ids available to (ring, orientation): always one through + one left
RING_ORIENTATION_MOVEMENTS = {
    (1, Orientation.EW): (1, 2),
    (1, Orientation.NS): (3, 4),
    (2, Orientation.EW): (5, 6),
    (2, Orientation.NS): (7, 8),
}


def movement_for(arm: str, turn: Turn) -> Movement:
    if turn is Turn.RIGHT:
        return RIGHT_TURNS[arm]
    for m in MOVEMENTS.values():
        if m.arm == arm and m.turn == turn:
            return m
    raise KeyError((arm, turn))


def orientation_of(movement_id: int) -> Orientation:
    return MOVEMENTS[movement_id].orientation


def _as_slot_map(value, name: str) -> dict:
    """Accept a scalar or a {(p, r): value} mapping covering all four slots."""
    if isinstance(value, dict):
        missing = [s for s in SLOTS if s not in value]
        if missing:
            raise ValueError(f"{name} mapping missing slots {missing}")
        return {s: float(value[s]) for s in SLOTS}
    return {s: float(value) for s in SLOTS}


@dataclass(frozen=True)
class TimingParams:
    """Signal timing parameters. Scalars apply to every (phase, ring) slot;
    mappings keyed by (p, r) allow asymmetric rings."""

    g_min: object = 15.0
    g_max: object = 25.0
    green_interval: object = 4.0
    dt: float = 1.0
    t0: int = 0

    g_min_s: dict = field(init=False, repr=False)
    g_max_s: dict = field(init=False, repr=False)
    green_interval_s: dict = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "g_min_s", _as_slot_map(self.g_min, "g_min"))
        object.__setattr__(self, "g_max_s", _as_slot_map(self.g_max, "g_max"))
        object.__setattr__(self, "green_interval_s",
                           _as_slot_map(self.green_interval, "green_interval"))
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        for s in SLOTS:
            if self.g_min_s[s] > self.g_max_s[s]:
                raise ValueError(f"g_min > g_max at slot {s}")
            r = self.green_interval_s[s] / self.dt
            if abs(r - round(r)) > 1e-9:
                raise ValueError(
                    f"green_interval/dt must be an integer at slot {s}")

    def r_steps(self, p: int, r: int) -> int:
        return int(round(self.green_interval_s[(p, r)] / self.dt))

    def g_step_range(self, p: int, r: int) -> tuple:
        """Integer green-step range [lo, hi] admissible for slot (p, r)."""
        lo = math.ceil(self.g_min_s[(p, r)] / self.dt - 1e-9)
        hi = math.floor(self.g_max_s[(p, r)] / self.dt + 1e-9)
        return lo, hi


@dataclass(frozen=True)
class KinematicParams:
    v_max: float = 14.0
    a_up: float = 2.0
    a_low_mag: float = 2.0
    v0_low: float = 3.0
    v0_up: float = 14.0
    passing_zone_length: float = 500.0

    def __post_init__(self):
        if not (0 < self.v0_low <= self.v0_up <= self.v_max):
            raise ValueError("need 0 < v0_low <= v0_up <= v_max")
        if self.a_up <= 0 or self.a_low_mag <= 0:
            raise ValueError("acceleration magnitudes must be positive")
        if self.passing_zone_length <= 0:
            raise ValueError("passing_zone_length must be positive")


@dataclass(frozen=True)
class PhaseAssignment:
    """Movement selection (the alpha vector) and green splits for one barrier.

    ``movement[(p, r)]`` is the movement id served by phase p of ring r;
    ``g[(p, r)]`` its green duration in whole time steps.
    """

    orientation: Orientation
    movement: dict
    g: dict

    def __post_init__(self):
        object.__setattr__(self, "movement",
                           {s: int(self.movement[s]) for s in SLOTS})
        object.__setattr__(self, "g", {s: int(self.g[s]) for s in SLOTS})

    @property
    def alpha_key(self) -> tuple:
        """Canonical encoding of the phase sequence, used for tie-breaking."""
        return tuple(self.movement[s] for s in SLOTS)

    def slot_of(self, movement_id: int):
        for s in SLOTS:
            if self.movement[s] == movement_id:
                return s
        return None

    def left_slot(self, ring: int) -> int:
        """Phase index (1 or 2) in which this ring serves its left turn."""
        for p in PHASES:
            if MOVEMENTS[self.movement[(p, ring)]].turn is Turn.LEFT:
                return p
        raise ValueError("ring serves no left turn")

    def structure_violations(self) -> list:
        """Check Eqs. (15)-(19): selection, no repeats, orientation grouping,
        and ring compatibility."""
        out = []
        for (p, r) in SLOTS:
            m = self.movement[(p, r)]
            if m not in MOVEMENTS or MOVEMENTS[m].ring != r:
                out.append(("eq15", f"slot {(p, r)} selects movement {m} "
                                    f"outside ring {r}"))
        for r in RINGS:
            if self.movement[(1, r)] == self.movement[(2, r)]:
                out.append(("eq16", f"ring {r} repeats movement "
                                    f"{self.movement[(1, r)]}"))
            orients = {orientation_of(self.movement[(p, r)]) for p in PHASES
                       if self.movement[(p, r)] in MOVEMENTS}
            if len(orients) > 1:
                out.append(("eq17-18", f"ring {r} mixes orientations"))
        o1 = orientation_of(self.movement[(1, 1)])
        o2 = orientation_of(self.movement[(1, 2)])
        if o1 != o2:
            out.append(("eq19", "rings serve incompatible orientations"))
        elif o1 != self.orientation:
            out.append(("eq19", "assignment orientation tag does not match "
                               "selected movements"))
        return out


@dataclass(frozen=True)
class BarrierPlan:
    x: int  # time steps assigned to the barrier group
    assignment: PhaseAssignment


@dataclass(frozen=True)
class SignalPlan:
    """An ordered sequence of barrier groups plus the orientation served by
    the barrier immediately before it (the live cycle's last barrier)."""

    barriers: tuple
    prev_orientation: Orientation | None = None

    def __post_init__(self):
        object.__setattr__(self, "barriers", tuple(self.barriers))

    def barrier_start_step(self, j: int, t0: int = 0) -> int:
        return t0 + sum(b.x for b in self.barriers[:j])

    def phase_start_step(self, j: int, p: int, r: int,
                         params: TimingParams, t0: int = 0) -> int:
        b = self.barriers[j]
        start = self.barrier_start_step(j, t0)
        if p == 1:
            return start
        return start + b.assignment.g[(1, r)] + params.r_steps(1, r)


@dataclass(frozen=True)
class Violation:
    barrier: int
    code: str
    detail: str


def validate_plan(plan: SignalPlan, params: TimingParams) -> list:
    """Check a signal plan against the ring-barrier constraints (Eqs. 15-22).

    Returns the full list of violations; an empty list means the plan is
    valid. All checks are exact integer arithmetic.
    """
    if not plan.barriers:
        raise ValueError("plan is empty")
    out = []
    prev = plan.prev_orientation
    for j, b in enumerate(plan.barriers):
        a = b.assignment
        for code, detail in a.structure_violations():
            out.append(Violation(j, code, detail))
        if prev is not None and a.orientation == prev:
            out.append(Violation(j, "eq20",
                                 f"barrier {j} repeats orientation {prev.value}"))
        for (p, r) in SLOTS:
            gsec = a.g[(p, r)] * params.dt
            if gsec < params.g_min_s[(p, r)] - 1e-9 or \
                    gsec > params.g_max_s[(p, r)] + 1e-9:
                out.append(Violation(j, "eq21",
                                     f"slot {(p, r)} green {gsec}s outside "
                                     f"[{params.g_min_s[(p, r)]}, "
                                     f"{params.g_max_s[(p, r)]}]"))
        for r in RINGS:
            total = (a.g[(1, r)] + a.g[(2, r)]
                     + params.r_steps(1, r) + params.r_steps(2, r))
            if total != b.x:
                out.append(Violation(j, "eq22",
                                     f"ring {r} sums to {total} steps, "
                                     f"barrier has x={b.x}"))
        prev = a.orientation
    return out


@dataclass
class Vehicle:
    """Arrival record plus kinematic bookkeeping for one vehicle.

    ``arrival_time`` is the instant the vehicle reaches the upstream end of
    the approach (buffer entry). Live position/speed are owned by the
    simulator's lane arrays; this record carries identity and accounting.
    """

    id: int
    kind: VehicleKind
    movement: Movement
    arrival_time: float
    free_flow_travel_time: float
    length_plus_jam: float = 6.0
    reaction_time: float = 0.0
    position: float = 0.0
    speed: float = 0.0
    exit_time: float | None = None
