"""Compiled inner loops: link ODE right-hand side, RK4 step, controller state
machine and the closed-loop driver.

Everything here works on flat float64 arrays so numba can compile it; the
typed wrappers live in :mod:`wptlink.circuit` and :mod:`wptlink.controller`.
"""

import math

import numpy as np
from numba import njit

# circuit parameter vector layout
P_VS, P_RON, P_R1, P_L1, P_C1, P_M, P_R2, P_L2, P_C2 = range(9)
P_VF, P_RON_D, P_C_RECT, P_L_IN, P_C_MID, P_L_OUT, P_DCR = range(9, 16)
P_LOAD_KIND, P_LOAD_R, P_KE, P_RA, P_J, P_B, P_I_CONST, P_RECTIFIER = range(16, 24)
N_PARAMS = 24

LOAD_RESISTOR, LOAD_MOTOR, LOAD_CURRENT = 0, 1, 2

# state vector layout
X_I1, X_I2, X_VC1, X_VC2, X_VRECT, X_ILIN, X_VCMID, X_ILOUT, X_OMEGA = range(9)
X_ESRC, X_EDISS, X_ELOAD = 9, 10, 11
N_STATE = 12
N_PHYS = 9

# controller config layout
C_FSEARCH, C_DUTY, C_THR, C_FLO, C_FHI, C_PMAX, C_TMAX = range(7)
C_RTH, C_CTH, C_TAMB, C_IDLE, C_SETTLE, C_DEBOUNCE = range(7, 13)
N_CCFG = 13

# controller state layout
S_MODE, S_FAULT, S_DRIVE, S_LAST_ZC, S_PERIOD, S_TEMP, S_PREV_T, S_PREV_I1 = range(8)
S_HAS_PREV, S_LAST_RISE, S_LAST_TOGGLE, S_T0, S_SEARCH_IDX, S_AMP_CUR = range(8, 14)
S_AMP_LAST, S_AMP_PREV, S_EWIN, S_WIN_T0, S_PAVG, S_LOCK_CYCLES = range(14, 20)
S_LOCK_TIME, S_N_SEARCH, S_FAULT_TIME, S_FREQ_BAD = range(20, 24)
N_CSTATE = 24

MODE_SEARCH, MODE_LOCK, MODE_FAULT = 0, 1, 2
FAULT_NONE, FAULT_OVERTEMP, FAULT_OVERPOWER, FAULT_FREQ = 0, 1, 2, 3

STATUS_OK, STATUS_FAULT, STATUS_UNSTABLE = 0, 1, 2


@njit(cache=True)
def _bridge_ac_voltage(x, drive, p):
    """Voltage across the rectifier AC terminals and whether i2 is blocked."""
    i2 = x[X_I2]
    clamp = max(x[X_VRECT] + 2.0 * p[P_VF], 0.0)
    if i2 > 0.0:
        return clamp + 2.0 * p[P_RON_D] * i2, False
    if i2 < 0.0:
        return -clamp + 2.0 * p[P_RON_D] * i2, False
    # zero current: blocked unless the open-circuit voltage breaks over
    i1 = x[X_I1]
    u1 = drive * p[P_VS] - (p[P_RON] + p[P_R1]) * i1 - x[X_VC1]
    v_oc = -x[X_VC2] - p[P_M] * u1 / p[P_L1]
    if abs(v_oc) <= clamp:
        return v_oc, True
    if v_oc > 0.0:
        return clamp, False
    return -clamp, False


@njit(cache=True)
def derivs(x, drive, p, out):
    i1 = x[X_I1]
    i2 = x[X_I2]
    l1 = p[P_L1]
    l2 = p[P_L2]
    m = p[P_M]
    ron = p[P_RON]
    u1 = drive * p[P_VS] - (ron + p[P_R1]) * i1 - x[X_VC1]
    rectify = p[P_RECTIFIER] > 0.5

    blocked = False
    if rectify:
        v_ac, blocked = _bridge_ac_voltage(x, drive, p)
    else:
        v_ac = p[P_LOAD_R] * i2

    if blocked:
        di1 = u1 / l1
        di2 = 0.0
    else:
        u2 = -p[P_R2] * i2 - x[X_VC2] - v_ac
        det = l1 * l2 - m * m
        di1 = (l2 * u1 - m * u2) / det
        di2 = (l1 * u2 - m * u1) / det

    out[X_I1] = di1
    out[X_I2] = di2
    out[X_VC1] = i1 / p[P_C1]
    out[X_VC2] = i2 / p[P_C2]

    p_diss = (ron + p[P_R1]) * i1 * i1 + p[P_R2] * i2 * i2
    p_load = 0.0
    if rectify:
        v_rect = x[X_VRECT]
        i_lin = x[X_ILIN]
        i_lout = x[X_ILOUT]
        v_cmid = x[X_VCMID]
        dcr = p[P_DCR]
        i_fw = max(0.0, -v_rect - 2.0 * p[P_VF]) / p[P_RON_D]
        out[X_VRECT] = (abs(i2) + i_fw - i_lin) / p[P_C_RECT]
        out[X_ILIN] = (v_rect - v_cmid - dcr * i_lin) / p[P_L_IN]
        out[X_VCMID] = (i_lin - i_lout) / p[P_C_MID]
        kind = int(p[P_LOAD_KIND])
        if kind == LOAD_RESISTOR:
            v_load = p[P_LOAD_R] * i_lout
            out[X_ILOUT] = (v_cmid - dcr * i_lout - v_load) / p[P_L_OUT]
            out[X_OMEGA] = 0.0
        elif kind == LOAD_MOTOR:
            w = x[X_OMEGA]
            v_load = p[P_KE] * w + p[P_RA] * i_lout
            out[X_ILOUT] = (v_cmid - dcr * i_lout - v_load) / p[P_L_OUT]
            out[X_OMEGA] = (p[P_KE] * i_lout - p[P_B] * w) / p[P_J]
        else:
            v_load = v_cmid - dcr * i_lout
            out[X_ILOUT] = 0.0
            out[X_OMEGA] = 0.0
        p_load = v_load * i_lout
        p_diss += (v_ac * i2 - v_rect * abs(i2)) + i_fw * (-v_rect) \
            + dcr * (i_lin * i_lin + i_lout * i_lout)
    else:
        for j in range(X_VRECT, X_OMEGA + 1):
            out[j] = 0.0
        p_load = p[P_LOAD_R] * i2 * i2

    out[X_ESRC] = drive * p[P_VS] * i1
    out[X_EDISS] = p_diss
    out[X_ELOAD] = p_load


@njit(cache=True)
def stored_energy(x, p):
    i1 = x[X_I1]
    i2 = x[X_I2]
    e = 0.5 * p[P_L1] * i1 * i1 + p[P_M] * i1 * i2 + 0.5 * p[P_L2] * i2 * i2
    e += 0.5 * p[P_C1] * x[X_VC1] ** 2 + 0.5 * p[P_C2] * x[X_VC2] ** 2
    if p[P_RECTIFIER] > 0.5:
        e += 0.5 * p[P_C_RECT] * x[X_VRECT] ** 2 + 0.5 * p[P_L_IN] * x[X_ILIN] ** 2
        e += 0.5 * p[P_C_MID] * x[X_VCMID] ** 2 + 0.5 * p[P_L_OUT] * x[X_ILOUT] ** 2
    return e


@njit(cache=True)
def rk4_step(x, drive, dt, p, work):
    """Advance ``x`` in place by one classical RK4 step.

    ``work`` is a (5, N_STATE) scratch array. After the step, an Rx current
    that changed sign while the bridge would block is pinned to zero; the
    stored energy released that way is booked as dissipation.
    """
    k1 = work[0]
    k2 = work[1]
    k3 = work[2]
    k4 = work[3]
    tmp = work[4]
    n = x.shape[0]
    derivs(x, drive, p, k1)
    for j in range(n):
        tmp[j] = x[j] + 0.5 * dt * k1[j]
    derivs(tmp, drive, p, k2)
    for j in range(n):
        tmp[j] = x[j] + 0.5 * dt * k2[j]
    derivs(tmp, drive, p, k3)
    for j in range(n):
        tmp[j] = x[j] + dt * k3[j]
    derivs(tmp, drive, p, k4)
    i2_old = x[X_I2]
    for j in range(n):
        x[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])

    if p[P_RECTIFIER] > 0.5 and i2_old != 0.0 and x[X_I2] * i2_old <= 0.0:
        i2_new = x[X_I2]
        x[X_I2] = 0.0
        _, blocked = _bridge_ac_voltage(x, drive, p)
        if blocked:
            e_after = stored_energy(x, p)
            x[X_I2] = i2_new
            e_before = stored_energy(x, p)
            x[X_I2] = 0.0
            x[X_EDISS] += e_before - e_after
        else:
            x[X_I2] = i2_new


@njit(cache=True)
def all_finite(x):
    for j in range(x.shape[0]):
        if not math.isfinite(x[j]):
            return False
    return True


# ---------------------------------------------------------------------------
# controller
# ---------------------------------------------------------------------------

@njit(cache=True)
def thermal_update(c, temp, p_loss, dt):
    tau = c[C_RTH] * c[C_CTH]
    return temp + dt * ((c[C_TAMB] - temp) / tau + p_loss / c[C_CTH])


@njit(cache=True)
def fault_code(c, p_tx, f_lock, temp, locked):
    if temp > c[C_TMAX]:
        return FAULT_OVERTEMP
    if p_tx > c[C_PMAX]:
        return FAULT_OVERPOWER
    if locked and not (c[C_FLO] < f_lock < c[C_FHI]):
        return FAULT_FREQ
    return FAULT_NONE


@njit(cache=True)
def _latch(s, code, t):
    s[S_MODE] = MODE_FAULT
    s[S_FAULT] = code
    s[S_DRIVE] = 0.0
    s[S_FAULT_TIME] = t


@njit(cache=True)
def _close_power_window(c, s, t):
    span = t - s[S_WIN_T0]
    if span > 0.0:
        s[S_PAVG] = s[S_EWIN] / span
    s[S_EWIN] = 0.0
    s[S_WIN_T0] = t


@njit(cache=True)
def controller_update(c, s, t, i1, p_tx, p_loss):
    """One controller sample; returns the drive for the next interval."""
    has_prev = s[S_HAS_PREV] > 0.5
    if has_prev:
        h = t - s[S_PREV_T]
        s[S_TEMP] = thermal_update(c, s[S_TEMP], p_loss, h)
        s[S_EWIN] += p_tx * h

    mode = int(s[S_MODE])
    if mode == MODE_FAULT:
        s[S_DRIVE] = 0.0
    elif s[S_TEMP] > c[C_TMAX]:
        _latch(s, FAULT_OVERTEMP, t)
    elif mode == MODE_SEARCH:
        ts = 1.0 / c[C_FSEARCH]
        pos = (t - s[S_T0]) / ts + 1e-9
        idx = math.floor(pos)
        s[S_AMP_CUR] = max(s[S_AMP_CUR], abs(i1))
        if idx > s[S_SEARCH_IDX]:
            s[S_SEARCH_IDX] = idx
            s[S_AMP_PREV] = s[S_AMP_LAST]
            s[S_AMP_LAST] = s[S_AMP_CUR]
            s[S_AMP_CUR] = abs(i1)
            s[S_N_SEARCH] += 1.0
            _close_power_window(c, s, t)
            code = fault_code(c, s[S_PAVG], c[C_FSEARCH], s[S_TEMP], False)
            if code != FAULT_NONE:
                _latch(s, code, t)
            else:
                amp = s[S_AMP_LAST]
                detected = amp > c[C_THR]
                idle = c[C_IDLE]
                if detected and math.isfinite(idle):
                    # settled: the period-to-period change is small next to the
                    # deficit itself, so a tank still ringing up does not count
                    deficit = idle - amp
                    settled = (s[S_N_SEARCH] >= 2.0
                               and abs(amp - s[S_AMP_PREV]) <= c[C_SETTLE] * deficit)
                    detected = settled and deficit > c[C_THR]
                if detected:
                    s[S_MODE] = MODE_LOCK
                    s[S_DRIVE] = 1.0 if i1 >= 0.0 else -1.0
                    s[S_LAST_TOGGLE] = t
                    s[S_PERIOD] = ts
                    s[S_LAST_RISE] = math.nan
                    s[S_LOCK_TIME] = t
                    s[S_LOCK_CYCLES] = 0.0
        if int(s[S_MODE]) == MODE_SEARCH:
            phase = pos - idx
            half = 0.5 * c[C_DUTY]
            if phase < half:
                s[S_DRIVE] = 1.0
            elif 0.5 <= phase < 0.5 + half:
                s[S_DRIVE] = -1.0
            else:
                s[S_DRIVE] = 0.0
    else:
        i_prev = s[S_PREV_I1]
        rising = has_prev and i_prev < 0.0 and i1 >= 0.0
        falling = has_prev and i_prev > 0.0 and i1 <= 0.0
        half_min = 0.8 / (2.0 * c[C_FHI])
        half_max = 1.2 / (2.0 * c[C_FLO])
        if rising or falling:
            if t - s[S_LAST_TOGGLE] >= half_min:
                tp = s[S_PREV_T]
                tc = tp + (-i_prev) / (i1 - i_prev) * (t - tp)
                s[S_LAST_ZC] = tc
                s[S_LAST_TOGGLE] = t
                s[S_DRIVE] = 1.0 if rising else -1.0
                if rising:
                    if math.isfinite(s[S_LAST_RISE]):
                        s[S_PERIOD] = tc - s[S_LAST_RISE]
                        s[S_LOCK_CYCLES] += 1.0
                        _close_power_window(c, s, t)
                        code = fault_code(c, s[S_PAVG], 1.0 / s[S_PERIOD], s[S_TEMP],
                                          True)
                        # the window fault needs several consecutive bad cycles
                        if code == FAULT_FREQ:
                            s[S_FREQ_BAD] += 1.0
                            if s[S_FREQ_BAD] < c[C_DEBOUNCE]:
                                code = FAULT_NONE
                        else:
                            s[S_FREQ_BAD] = 0.0
                        if code != FAULT_NONE:
                            _latch(s, code, t)
                    else:
                        _close_power_window(c, s, t)
                    s[S_LAST_RISE] = tc
        elif t - s[S_LAST_TOGGLE] > half_max:
            s[S_DRIVE] = -s[S_DRIVE] if s[S_DRIVE] != 0.0 else 1.0
            s[S_LAST_TOGGLE] = t

    s[S_PREV_T] = t
    s[S_PREV_I1] = i1
    s[S_HAS_PREV] = 1.0
    return s[S_DRIVE]


# ---------------------------------------------------------------------------
# closed loop
# ---------------------------------------------------------------------------

@njit(cache=True)
def run_loop(p, c, x, s, n_steps, dt, out_every, rec_t, rec_x, rec_drive, rec_vsw,
             rec_isup):
    """Integrate ``n_steps`` steps with the controller in the loop.

    When the controller toggles on a current zero crossing that happened inside
    the last step, the step is redone in two pieces split at the interpolated
    crossing time, so the polarity change lands on the crossing itself rather
    than on the step grid.

    Returns (n_recorded, status, t_end). ``x`` and ``s`` are updated in place.
    """
    work = np.zeros((5, x.shape[0]))
    saved = np.empty(x.shape[0])
    vs = p[P_VS]
    ron = p[P_RON]
    n_rec = 0
    n_cap = rec_t.shape[0]
    i1 = x[X_I1]
    drive = controller_update(c, s, 0.0, i1, 0.0, ron * i1 * i1)
    for k in range(n_steps + 1):
        t = k * dt
        if k > 0:
            i1 = x[X_I1]
            p_tx = vs * drive * i1
            zc_before = s[S_LAST_ZC]
            new_drive = controller_update(c, s, t, i1, p_tx, ron * i1 * i1)
            if (new_drive != drive and int(s[S_MODE]) == MODE_LOCK
                    and s[S_LAST_ZC] != zc_before and t - dt < s[S_LAST_ZC] < t):
                h1 = s[S_LAST_ZC] - (t - dt)
                for j in range(x.shape[0]):
                    x[j] = saved[j]
                rk4_step(x, drive, h1, p, work)
                rk4_step(x, new_drive, dt - h1, p, work)
                s[S_PREV_I1] = x[X_I1]
                i1 = x[X_I1]
            drive = new_drive
        fault = int(s[S_MODE]) == MODE_FAULT
        if k % out_every == 0 and n_rec < n_cap:
            rec_t[n_rec] = t
            for j in range(x.shape[0]):
                rec_x[n_rec, j] = x[j]
            rec_drive[n_rec] = drive
            rec_vsw[n_rec] = drive * vs - ron * i1
            rec_isup[n_rec] = drive * i1
            n_rec += 1
        if fault:
            return n_rec, STATUS_FAULT, t
        if k == n_steps:
            break
        for j in range(x.shape[0]):
            saved[j] = x[j]
        rk4_step(x, drive, dt, p, work)
        if not all_finite(x):
            return n_rec, STATUS_UNSTABLE, t + dt
    return n_rec, STATUS_OK, n_steps * dt
