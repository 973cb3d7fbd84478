"""Array kernels shared by the Python API and the batched Monte-Carlo path.

Conventions: task and control codes are 1-based (``N + 1`` is idle); arrays
are indexed by ``code - 1``. Unit indices are 0-based inside kernels. A value
of 0 in ``active``/``last_task`` means "none".
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from numba import njit

# step() status codes
OK = 0
ERR_PREEMPT = 1
ERR_INELIGIBLE = 2
ERR_CODE = 3
ERR_RESTART = 4


class InstanceArrays(NamedTuple):
    eligible: np.ndarray  # (N, nu) bool
    batch: np.ndarray  # (N, nu) kg per batch
    nb: np.ndarray  # (N, nu) batches per campaign
    pt: np.ndarray  # (N, nu) expected periods per batch
    succ: np.ndarray  # (N, N) succ[m, i]: i may follow m
    tcl: np.ndarray  # (N, N) cleaning periods m -> i
    rtt: np.ndarray  # (N,)
    rtu: np.ndarray  # (nu,)
    order_size: np.ndarray  # (N,)
    due: np.ndarray  # (N,) expected due period
    horizon: int


class StateArrays(NamedTuple):
    inv: np.ndarray  # (N,) float
    last_ctrl: np.ndarray  # (nu,)
    delta: np.ndarray  # (nu,)
    rho: np.ndarray  # (N,)
    clock: np.ndarray  # (1,) current period
    finished: np.ndarray  # (N,) bool
    finish_period: np.ndarray  # (N,) -1 until finished
    last_task: np.ndarray  # (nu,) most recently completed task code, 0 if none
    last_finish: np.ndarray  # (nu,)
    active: np.ndarray  # (nu,) task in process, 0 if free
    camp_start: np.ndarray  # (nu,)
    camp_setup: np.ndarray  # (nu,)
    camp_done: np.ndarray  # (nu,) batches completed in current campaign
    next_done: np.ndarray  # (nu,) period at which the next batch completes


@njit(cache=True)
def new_state(n_tasks, n_units):
    return StateArrays(
        np.zeros(n_tasks, dtype=np.float64),
        np.full(n_units, n_tasks + 1, dtype=np.int64),
        np.zeros(n_units, dtype=np.int64),
        np.zeros(n_tasks, dtype=np.int64),
        np.zeros(1, dtype=np.int64),
        np.zeros(n_tasks, dtype=np.bool_),
        np.full(n_tasks, -1, dtype=np.int64),
        np.zeros(n_units, dtype=np.int64),
        np.zeros(n_units, dtype=np.int64),
        np.zeros(n_units, dtype=np.int64),
        np.zeros(n_units, dtype=np.int64),
        np.zeros(n_units, dtype=np.int64),
        np.zeros(n_units, dtype=np.int64),
        np.zeros(n_units, dtype=np.int64),
    )


@njit(cache=True)
def reset_state(st, ia, due_true, confirm_at):
    n = st.inv.shape[0]
    nu = st.delta.shape[0]
    st.inv[:] = 0.0
    st.last_ctrl[:] = n + 1
    for l in range(nu):
        st.delta[l] = ia.rtu[l]
    for i in range(n):
        # a due date confirmed at period 0 is known from the start
        st.rho[i] = due_true[i] if confirm_at[i] <= 0 else ia.due[i]
    st.clock[0] = 0
    st.finished[:] = False
    st.finish_period[:] = -1
    st.last_task[:] = 0
    st.last_finish[:] = 0
    st.active[:] = 0
    st.camp_start[:] = 0
    st.camp_setup[:] = 0
    st.camp_done[:] = 0
    st.next_done[:] = 0


@njit(cache=True)
def setup_periods(st, ia, task, unit, t):
    """Sequence-dependent setup for 0-based ``task`` on 0-based ``unit`` chosen at period t."""
    wait = max(max(ia.rtt[task] - t, 0), max(ia.rtu[unit] - t, 0))
    m = st.last_task[unit]
    if m > 0:
        wait = max(max(ia.tcl[m - 1, task] + st.last_finish[unit] - t, 0), wait)
    return wait


@njit(cache=True)
def feasible_kernel(st, ia, out, counts):
    """Fill ``out[l, :counts[l]]`` with the admissible control codes of unit l, ascending."""
    n = ia.eligible.shape[0]
    nu = ia.eligible.shape[1]
    for l in range(nu):
        a = st.active[l]
        if a > 0:
            out[l, 0] = a
            counts[l] = 1
            continue
        m = st.last_task[l]
        k = 0
        for i in range(n):
            if not ia.eligible[i, l] or st.finished[i]:
                continue
            if m > 0 and not ia.succ[m - 1, i]:
                continue
            out[l, k] = i + 1
            k += 1
        out[l, k] = n + 1
        counts[l] = k + 1


@njit(cache=True)
def round_kernel(latent, feas, counts, control):
    for l in range(latent.shape[0]):
        k = counts[l]
        idx = int(math.floor(latent[l] * (k - 1) / 6.0 + 0.5))
        if idx < 0:
            idx = 0
        elif idx > k - 1:
            idx = k - 1
        control[l] = feas[l, idx]


@njit(cache=True)
def penalty_kernel(control, n_tasks, kappa, p):
    counts = np.zeros(n_tasks, dtype=np.int64)
    for l in range(control.shape[0]):
        c = control[l]
        if 1 <= c <= n_tasks:
            counts[c - 1] += 1
    acc = 0.0
    for i in range(n_tasks):
        g = counts[i] - 1
        if g > 0:
            if p == 1:
                acc += g
            else:
                acc += g * g
    if p != 1:
        acc = math.sqrt(acc)
    return kappa * acc


@njit(cache=True)
def observe_kernel(st, out):
    n = st.inv.shape[0]
    nu = st.delta.shape[0]
    for i in range(n):
        out[i] = st.inv[i]
    for l in range(nu):
        out[n + l] = st.last_ctrl[l]
        out[n + nu + l] = st.delta[l]
    for i in range(n):
        out[n + 2 * nu + i] = st.rho[i]
    out[2 * n + 2 * nu] = st.clock[0]


@njit(cache=True)
def normalize_kernel(st, ia, out):
    n = st.inv.shape[0]
    nu = st.delta.shape[0]
    horizon = float(ia.horizon)
    for i in range(n):
        out[i] = st.inv[i] / ia.order_size[i]
    for l in range(nu):
        out[n + l] = st.last_ctrl[l] / (n + 1.0)
        out[n + nu + l] = st.delta[l] / horizon
    for i in range(n):
        out[n + 2 * nu + i] = st.rho[i] / horizon
    out[2 * n + 2 * nu] = st.clock[0] / horizon


@njit(cache=True)
def forward_kernel(theta, dims, h1_tanh, x, hidden, new_hidden, latent):
    """Layer-major parameter layout: W1,b1 | W2,U2,b2 | W3,b3 | W4,b4 (weights row-major)."""
    nx, n1, n2, n3, no = dims[0], dims[1], dims[2], dims[3], dims[4]
    o = 0
    a1 = np.empty(n1)
    for r in range(n1):
        s = 0.0
        base = o + r * nx
        for c in range(nx):
            s += theta[base + c] * x[c]
        a1[r] = s
    o += n1 * nx
    for r in range(n1):
        a1[r] += theta[o + r]
        if h1_tanh:
            a1[r] = math.tanh(a1[r])
    o += n1
    w2 = o
    u2 = w2 + n2 * n1
    b2 = u2 + n2 * n2
    for r in range(n2):
        s = theta[b2 + r]
        for c in range(n1):
            s += theta[w2 + r * n1 + c] * a1[c]
        for c in range(n2):
            s += theta[u2 + r * n2 + c] * hidden[c]
        new_hidden[r] = math.tanh(s)
    o = b2 + n2
    a3 = np.empty(n3)
    b3 = o + n3 * n2
    for r in range(n3):
        s = theta[b3 + r]
        for c in range(n2):
            s += theta[o + r * n2 + c] * new_hidden[c]
        a3[r] = 1.0 / (1.0 + math.exp(-s))
    o = b3 + n3
    b4 = o + no * n3
    for r in range(no):
        s = theta[b4 + r]
        for c in range(n3):
            s += theta[o + r * n3 + c] * a3[c]
        latent[r] = min(max(s, 0.0), 6.0)


@njit(cache=True)
def check_control(st, ia, control, allow_preempt):
    n = ia.eligible.shape[0]
    for l in range(control.shape[0]):
        u = control[l]
        if u < 1 or u > n + 1:
            return ERR_CODE, l
        a = st.active[l]
        if a > 0 and u != a and not allow_preempt:
            return ERR_PREEMPT, l
        if u <= n and u != a:
            if not ia.eligible[u - 1, l]:
                return ERR_INELIGIBLE, l
            if st.finished[u - 1]:
                return ERR_RESTART, l
    return OK, -1


@njit(cache=True)
def step_kernel(st, control, ia, pl, due_true, confirm_at, dvec, allow_preempt):
    """Advance one period in place. Returns (reward, done, status)."""
    status, _ = check_control(st, ia, control, allow_preempt)
    if status != OK:
        return 0.0, False, status
    n = st.inv.shape[0]
    nu = st.delta.shape[0]
    t = st.clock[0]

    for l in range(nu):
        u = control[l]
        a = st.active[l]
        if a > 0 and u != a:
            # preemption voids the campaign retroactively, including batches already delivered
            st.inv[a - 1] -= st.camp_done[l] * ia.batch[a - 1, l]
            st.active[l] = 0
            st.delta[l] = 0
            a = 0
        if a == 0 and u <= n:
            i = u - 1
            s = setup_periods(st, ia, i, l, t)
            st.active[l] = u
            st.camp_start[l] = t
            st.camp_setup[l] = s
            st.camp_done[l] = 0
            st.next_done[l] = t + s + pl[i, l, 0]
            st.delta[l] = s + ia.nb[i, l] * ia.pt[i, l]

    t1 = t + 1
    done_before = st.finished.copy()
    just = np.zeros(n, dtype=np.bool_)
    for l in range(nu):
        st.delta[l] -= 1
        a = st.active[l]
        if a > 0 and st.next_done[l] == t1:
            i = a - 1
            st.inv[i] += ia.batch[i, l]
            st.camp_done[l] += 1
            if st.camp_done[l] == ia.nb[i, l]:
                if not st.finished[i]:
                    st.finished[i] = True
                    st.finish_period[i] = t1
                    just[i] = True
                st.last_task[l] = a
                st.last_finish[l] = t1
                st.active[l] = 0
                st.delta[l] = 0
            else:
                st.next_done[l] += pl[i, l, st.camp_done[l]]
                st.delta[l] = (ia.nb[i, l] - st.camp_done[l]) * ia.pt[i, l]
        st.last_ctrl[l] = control[l]

    for i in range(n):
        if done_before[i]:
            continue
        st.rho[i] -= 1
        if confirm_at[i] > 0 and confirm_at[i] == t1:
            st.rho[i] = due_true[i] - t1
        if just[i]:
            st.rho[i] = min(0, st.rho[i])
    st.clock[0] = t1

    all_done = True
    for i in range(n):
        if not st.finished[i]:
            all_done = False
            break
    done = all_done or t1 >= ia.horizon
    reward = 0.0
    if done:
        # d . x_{t+1} over [I, w, delta, rho, t]
        for i in range(n):
            reward += dvec[i] * st.inv[i] + dvec[n + 2 * nu + i] * st.rho[i]
        for l in range(nu):
            reward += dvec[n + l] * st.last_ctrl[l] + dvec[n + nu + l] * st.delta[l]
        reward += dvec[2 * n + 2 * nu] * t1
    return reward, done, OK


@njit(cache=True)
def decide_kernel(st, ia, theta, dims, h1_tanh, normalize, hidden, new_hidden, x, latent, feas, counts, control):
    """One decision: mask, featurize, forward pass, round."""
    feasible_kernel(st, ia, feas, counts)
    if normalize:
        normalize_kernel(st, ia, x)
    else:
        observe_kernel(st, x)
    forward_kernel(theta, dims, h1_tanh, x, hidden, new_hidden, latent)
    round_kernel(latent, feas, counts, control)


@njit(cache=True)
def episode_kernel(theta, dims, h1_tanh, normalize, ia, pl, due_true, confirm_at, dvec, kappa, pnorm):
    """Roll out one episode. Returns (Z, Z_phi, total_penalty, violated, final_period, status)."""
    n = ia.eligible.shape[0]
    nu = ia.eligible.shape[1]
    st = new_state(n, nu)
    reset_state(st, ia, due_true, confirm_at)
    hidden = np.zeros(dims[2])
    new_hidden = np.zeros(dims[2])
    x = np.empty(dims[0])
    latent = np.empty(dims[4])
    feas = np.empty((nu, n + 1), dtype=np.int64)
    counts = np.empty(nu, dtype=np.int64)
    control = np.empty(nu, dtype=np.int64)
    z = 0.0
    zphi = 0.0
    pen_total = 0.0
    violated = False
    while True:
        decide_kernel(st, ia, theta, dims, h1_tanh, normalize, hidden, new_hidden, x, latent, feas, counts, control)
        hidden[:] = new_hidden
        pen = penalty_kernel(control, n, kappa, pnorm)
        r, done, status = step_kernel(st, control, ia, pl, due_true, confirm_at, dvec, False)
        if status != OK:
            return z, zphi, pen_total, violated, st.clock[0], status
        z += r
        zphi += r - pen
        pen_total += pen
        if pen > 0.0:
            violated = True
        if done:
            break
    return z, zphi, pen_total, violated, st.clock[0], OK


@njit(cache=True, nogil=True)
def batch_kernel(theta, dims, h1_tanh, normalize, ia, pls, dues, confirms, dvec, kappa, pnorm,
                 z_out, zphi_out, pen_out, viol_out, t_out, status_out):
    for k in range(pls.shape[0]):
        z, zphi, pen, viol, tf, status = episode_kernel(
            theta, dims, h1_tanh, normalize, ia, pls[k], dues[k], confirms[k], dvec, kappa, pnorm
        )
        z_out[k] = z
        zphi_out[k] = zphi
        pen_out[k] = pen
        viol_out[k] = viol
        t_out[k] = tf
        status_out[k] = status
