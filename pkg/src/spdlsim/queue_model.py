"""Deterministic fluid queue evolution and delay accounting per phase slot.

Queues are real-valued point queues. Within one barrier of x steps the
slot (p, r) discharges at min(saturation, queue + arrivals) during its
green window and accumulates arrivals otherwise; every slot contributes
queue * dt to the barrier delay at every step. Queue state at the end of
a barrier carries into the next one.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ._kernels import evolve_slots
from .domain import SLOTS, PhaseAssignment, TimingParams


@dataclass(frozen=True)
class QueueState:
    """Queue length in vehicles per (phase, ring) slot, in SLOTS order."""

    values: tuple

    def __post_init__(self):
        vs = tuple(float(v) for v in self.values)
        if len(vs) != 4:
            raise ValueError("QueueState holds exactly four slot queues")
        if any(v < 0 for v in vs):
            raise ValueError("queue lengths must be nonnegative")
        object.__setattr__(self, "values", vs)

    @classmethod
    def zero(cls) -> "QueueState":
        return cls((0.0, 0.0, 0.0, 0.0))

    def __getitem__(self, slot) -> float:
        return self.values[SLOTS.index(slot)]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


@dataclass(frozen=True)
class MovementFlowProfile:
    """Arrival series (veh/step over the horizon), saturation rate (veh/step)
    and initial queue (veh) for each signalized movement id 1..8."""

    arrivals: dict      # movement id -> np.ndarray of veh/step
    saturation: dict    # movement id -> veh/step
    initial_queue: dict  # movement id -> veh

    def __post_init__(self):
        for m, series in self.arrivals.items():
            arr = np.asarray(series, dtype=float)
            if (arr < 0).any():
                raise ValueError(f"negative arrival rate for movement {m}")
            self.arrivals[m] = arr
        for m, s in self.saturation.items():
            if s <= 0:
                raise ValueError(f"saturation must be positive, movement {m}")

    @classmethod
    def constant(cls, rates_veh_s: dict, sat_veh_s: dict, horizon_steps: int,
                 dt: float, initial: dict | None = None
                 ) -> "MovementFlowProfile":
        arr = {m: np.full(horizon_steps, r * dt) for m, r in rates_veh_s.items()}
        sat = {m: s * dt for m, s in sat_veh_s.items()}
        init = dict(initial or {})
        return cls(arr, sat, {m: init.get(m, 0.0) for m in rates_veh_s})


def slot_rates(assignment: PhaseAssignment, profile: MovementFlowProfile,
               n_steps: int):
    """Map per-movement arrivals and saturation onto the four slots of one
    barrier (Eqs. 11-12). Arrival series shorter than n_steps are padded
    with zeros (demand beyond the prediction horizon)."""
    qa = np.zeros((4, n_steps))
    qs = np.zeros(4)
    for k, slot in enumerate(SLOTS):
        m = assignment.movement[slot]
        series = profile.arrivals.get(m)
        if series is not None:
            ln = min(len(series), n_steps)
            qa[k, :ln] = series[:ln]
        qs[k] = profile.saturation.get(m, 0.0)
    return qa, qs


def green_windows(assignment: PhaseAssignment, params: TimingParams):
    """Inclusive 1-based local-step green window per slot for one barrier."""
    lo = np.zeros(4, dtype=np.int64)
    hi = np.zeros(4, dtype=np.int64)
    x_by_ring = {}
    for r in (1, 2):
        x_by_ring[r] = (assignment.g[(1, r)] + assignment.g[(2, r)]
                        + params.r_steps(1, r) + params.r_steps(2, r))
    for k, (p, r) in enumerate(SLOTS):
        if p == 1:
            lo[k] = 1
            hi[k] = assignment.g[(1, r)]
        else:
            lo[k] = assignment.g[(1, r)] + params.r_steps(1, r) + 1
            hi[k] = x_by_ring[r] - params.r_steps(2, r)
    return lo, hi


@dataclass(frozen=True)
class BarrierResult:
    delay: float            # veh*s over the barrier window
    final: QueueState
    trace: np.ndarray       # (4, x+1) queue lengths incl. the initial state
    arrivals: tuple         # total arrivals per slot, veh
    departures: tuple       # total departures per slot, veh


class WindowError(ValueError):
    """Phase windows and barrier length are inconsistent (Eq. 22)."""


def evolve_barrier(assignment: PhaseAssignment, x_j: int, initial: QueueState,
                   profile: MovementFlowProfile, params: TimingParams,
                   offset_steps: int = 0) -> BarrierResult:
    """Evolve the four slot queues through barrier group j (Eqs. 5-10).

    offset_steps positions the barrier within the arrival series (local
    step 1 of this barrier reads series index offset_steps).
    """
    for r in (1, 2):
        total = (assignment.g[(1, r)] + assignment.g[(2, r)]
                 + params.r_steps(1, r) + params.r_steps(2, r))
        if total != x_j:
            raise WindowError(
                f"ring {r}: g1+g2+R1+R2 = {total} steps but x_j = {x_j}")
    qa_full, qs = slot_rates(assignment, profile, offset_steps + x_j)
    qa = qa_full[:, offset_steps:offset_steps + x_j]
    lo, hi = green_windows(assignment, params)
    delay_steps, final, trace = evolve_slots(initial.as_array(), qa, qs,
                                             lo, hi, x_j)
    arr = qa.sum(axis=1)
    dep = initial.as_array() + arr - final
    return BarrierResult(delay=float(delay_steps) * params.dt,
                         final=QueueState(tuple(final)),
                         trace=trace,
                         arrivals=tuple(arr),
                         departures=tuple(dep))


def trace_to_csv(trace: np.ndarray, path: str, dt: float = 1.0):
    """Dump a per-step queue trace for debugging."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s"] + [f"l_p{p}_r{r}" for (p, r) in SLOTS])
        for t in range(trace.shape[1]):
            w.writerow([f"{t * dt:.9g}"] + [f"{trace[k, t]:.9g}"
                                            for k in range(4)])
