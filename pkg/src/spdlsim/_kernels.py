"""Numba kernels for the hot loops: fluid queue recursions, batched
middle-level plan evaluation, and car-following chain propagation."""

from __future__ import annotations

import numpy as np
from numba import njit

# ---------------------------------------------------------------------------
# fluid queue recursion (4 slots over one barrier window)


@njit(cache=True)
def evolve_slots(l0, qa, qs, win_lo, win_hi, x):
    """Step the four slot queues through one barrier of x steps.

    qa has shape (4, x) in veh/step. win_lo/win_hi are the inclusive local
    green windows (1-based steps) per slot. Returns (delay_steps, final,
    trace) where delay is in veh*steps and trace has shape (4, x+1).
    """
    trace = np.empty((4, x + 1))
    l = l0.copy()
    trace[:, 0] = l
    delay = 0.0
    for t in range(1, x + 1):
        for k in range(4):
            a = qa[k, t - 1]
            if win_lo[k] <= t <= win_hi[k]:
                dep = min(qs[k], l[k] + a)
            else:
                dep = 0.0
            v = l[k] + a - dep
            l[k] = v if v > 0.0 else 0.0
            trace[k, t] = l[k]
            delay += l[k]
    return delay, l, trace


@njit(cache=True)
def _serve_barrier_const(q, rates, qs, serve_mov, win_lo, win_hi,
                         x, t_abs, horizon_end):
    """One barrier with constant arrival rates cut off after horizon_end.

    q holds all eight movement queues (veh) and is updated in place. Only
    the four movements in serve_mov accrue delay (one per slot); the idle
    orientation accumulates arrivals without service. Returns delay in
    veh*steps.
    """
    delay = 0.0
    for t in range(1, x + 1):
        on = 1.0 if (t_abs + t) <= horizon_end else 0.0
        for m in range(8):
            q[m] += rates[m] * on
        for k in range(4):
            m = serve_mov[k]
            if win_lo[k] <= t <= win_hi[k]:
                dep = min(qs[m], q[m])
                q[m] -= dep
                if q[m] < 0.0:
                    q[m] = 0.0
            delay += q[m]
    return delay


@njit(cache=True)
def _blue_accumulate(q, rates, bl, t_abs, horizon_end):
    """All-red steps appended after a barrier: every queue grows and every
    queued vehicle accrues delay."""
    delay = 0.0
    for tt in range(1, bl + 1):
        on = 1.0 if (t_abs + tt) <= horizon_end else 0.0
        for m in range(8):
            q[m] += rates[m] * on
            delay += q[m]
    return delay


@njit(cache=True)
def hv_stage1_batch(q0, rates, qs, cand_mov, cand_wlo, cand_whi,
                    x1, blue, t_abs, horizon_end):
    """Barrier-1 HV delay (plus any trailing all-red block) for every
    candidate plan. Returns (delay, qfinal) with shapes (P,) and (P, 8)."""
    n = cand_mov.shape[0]
    out = np.empty(n)
    qfin = np.empty((n, 8))
    for i in range(n):
        q = q0.copy()
        d = _serve_barrier_const(q, rates, qs, cand_mov[i],
                                 cand_wlo[i], cand_whi[i],
                                 x1, t_abs, horizon_end)
        d += _blue_accumulate(q, rates, blue, t_abs + x1, horizon_end)
        out[i] = d
        qfin[i] = q
    return out, qfin


@njit(cache=True)
def hv_stage2_batch(q0, rates, qs,
                    cand_mov, cand_wlo, cand_whi, x2, blue2,
                    p1_mov, p1_wlo, p1_whi, x1, blue1,
                    t_abs, horizon_end, cap, eps):
    """Barrier-2 plus repeated tail (odd tail barriers replay plan 1, even
    ones the candidate) until all queues drain, for every candidate.

    blue1/blue2 are all-red steps appended after each barrier (zero for the
    shared-phase controller, G_min+R steps for the blue-phase baseline).
    Returns (delay, J, capped) per candidate; a capped evaluation adds the
    residual l^2/(2 qs) drain estimate for whatever is left.
    """
    n = cand_mov.shape[0]
    out = np.empty(n)
    jlast = np.empty(n, dtype=np.int64)
    capped = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        q = q0.copy()
        delay = 0.0
        t = t_abs
        j = 2
        while True:
            if j % 2 == 0:
                delay += _serve_barrier_const(q, rates, qs, cand_mov[i],
                                              cand_wlo[i], cand_whi[i],
                                              x2, t, horizon_end)
                t += x2
                bl = blue2
            else:
                delay += _serve_barrier_const(q, rates, qs, p1_mov,
                                              p1_wlo, p1_whi,
                                              x1, t, horizon_end)
                t += x1
                bl = blue1
            delay += _blue_accumulate(q, rates, bl, t, horizon_end)
            t += bl
            done = True
            for m in range(8):
                if q[m] > eps:
                    done = False
                    break
            if done:
                break
            if j - 1 >= cap:
                capped[i] = True
                for m in range(8):
                    if q[m] > eps and qs[m] > 0.0:
                        delay += q[m] * q[m] / (2.0 * qs[m])
                break
            j += 1
        out[i] = delay
        jlast[i] = j
    return out, jlast, capped


# ---------------------------------------------------------------------------
# NGSIM car-following chain (planning-time platoon crossing times)


@njit(cache=True)
def gipps_advance(gap_net, v_lead, dt, b, tau):
    """Braking-safety advance of Eq. (40); clamps an imaginary root to 0."""
    inner = (b * tau) ** 2 + 2.0 * b * gap_net + v_lead * v_lead
    if inner < 0.0:
        return 0.0
    return dt * (-b * tau + np.sqrt(inner))


@njit(cache=True)
def _trail_speed(pos, row, t, valid_from, dt):
    """Speed of a trail row at grid index t by backward difference."""
    if t <= valid_from:
        return 0.0
    return (pos[row, t] - pos[row, t - 1]) / dt


@njit(cache=True)
def chain_positions(lead_pos, entry_idx, entry_speed, tau_steps,
                    dt, vmax, a_up, b, gap, stop_x):
    """Propagate a follower chain behind a leader position trail.

    lead_pos: (n,) leader positions on the dt grid. entry_idx[k] is the
    grid index at which follower k appears; before it the row is -1e18.
    Followers are seeded at min(0, predecessor - gap) with a speed capped
    by the braking-safety rule. Returns (pos, cross) where pos is
    (K+1, n) including the leader row and cross[k] is the interpolated
    stop-line crossing time in fractional grid steps (inf if never).
    """
    n = lead_pos.shape[0]
    kk = entry_idx.shape[0]
    tau = tau_steps * dt
    pos = np.empty((kk + 1, n))
    pos[0] = lead_pos
    cross = np.full(kk + 1, np.inf)
    if n > 0 and lead_pos[0] >= stop_x:
        cross[0] = 0.0
    else:
        for t in range(1, n):
            if lead_pos[t - 1] < stop_x <= lead_pos[t]:
                cross[0] = (t - 1) + (stop_x - lead_pos[t - 1]) / (
                    lead_pos[t] - lead_pos[t - 1])
                break
    valid_from = np.empty(kk + 1, dtype=np.int64)
    valid_from[0] = 0
    for k in range(1, kk + 1):
        valid_from[k] = entry_idx[k - 1]
        e = entry_idx[k - 1]
        for t in range(n):
            pos[k, t] = -1e18
        if e >= n - 1:
            continue
        x = min(0.0, pos[k - 1, e] - gap)
        gap_net = pos[k - 1, e] - x - gap
        v_lead = _trail_speed(pos, k - 1, e, valid_from[k - 1], dt)
        v = min(entry_speed[k - 1],
                gipps_advance(gap_net, v_lead, dt, b, tau) / dt)
        if v < 0.0:
            v = 0.0
        pos[k, e] = x
        for t in range(e, n - 1):
            di = t + 1 - tau_steps
            if di < valid_from[k - 1]:
                di = valid_from[k - 1]
            x_first = pos[k - 1, di] - gap
            x_acc = x + v * dt + a_up * dt * dt
            x_spd = x + vmax * dt
            gn = pos[k - 1, t] - x - gap
            vl = _trail_speed(pos, k - 1, t, valid_from[k - 1], dt)
            x_gip = x + gipps_advance(gn, vl, dt, b, tau)
            xu = min(min(x_first, x_acc), min(x_spd, x_gip))
            xl = x + v * dt - b * dt * dt
            if xl < x:
                xl = x
            xn = xu if xu > xl else xl
            if x < stop_x <= xn and not np.isfinite(cross[k]):
                cross[k] = t + (stop_x - x) / (xn - x) if xn > x else t + 1.0
            v = (xn - x) / dt
            x = xn
            pos[k, t + 1] = x
    return pos, cross
