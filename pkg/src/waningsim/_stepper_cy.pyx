# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled adaptive Runge-Kutta 5(4) stepper (Dormand-Prince pair).

Statement-by-statement twin of ``_stepper_py.integrate_core``; keep the two
in sync.  The hot loop (stage evaluations, error control, equilibrium
detection) runs entirely in C.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt, pow, isfinite

cnp.import_array()

KERNEL_NAME = "cython"

STATUS_REACHED_END = 0
STATUS_CONVERGED = 1
STATUS_UNDERFLOW = -1
STATUS_MAX_STEPS = -2
STATUS_NONFINITE = -3
STATUS_NEGATIVE = -4

cdef double NEG_CLAMP = 1e-12
cdef double MIN_FACTOR = 0.2
cdef double MAX_FACTOR = 10.0
cdef double SAFETY = 0.9
cdef double EPS = 2.220446049250313e-16

cdef double[6][6] A_TAB
A_TAB[0][:] = [1.0 / 5, 0, 0, 0, 0, 0]
A_TAB[1][:] = [3.0 / 40, 9.0 / 40, 0, 0, 0, 0]
A_TAB[2][:] = [44.0 / 45, -56.0 / 15, 32.0 / 9, 0, 0, 0]
A_TAB[3][:] = [19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729, 0, 0]
A_TAB[4][:] = [9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656, 0]
A_TAB[5][:] = [35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84]

cdef double[7] E_TAB
E_TAB[:] = [71.0 / 57600, 0.0, -71.0 / 16695, 71.0 / 1920, -17253.0 / 339200, 22.0 / 525, -1.0 / 40]


cdef inline void rhs(
    int n,
    const double* beta,
    const double* omega_i,
    const double* delta_i,
    double mu,
    double r,
    const double* y,
    double* out,
) noexcept nogil:
    cdef int j
    cdef double i = y[n + 1]
    cdef double vacc = 0.0
    cdef double transmission = 0.0
    for j in range(n + 1):
        vacc += omega_i[j] * y[j]
        transmission += beta[j] * y[j]
    out[0] = vacc - delta_i[0] * y[0] + r * i - beta[0] * i * y[0] - mu * y[0]
    for j in range(1, n + 1):
        out[j] = (
            -omega_i[j] * y[j]
            + delta_i[j - 1] * y[j - 1]
            - delta_i[j] * y[j]
            - beta[j] * i * y[j]
            - mu * y[j]
        )
    out[n] += mu  # births enter the least-immune tier
    out[n + 1] = transmission * i - r * i - mu * i


def integrate_core(
    object beta_in,
    object omega_in,
    object delta_in,
    double mu,
    double r,
    object y0_in,
    double t_end,
    double rtol,
    double atol,
    object targets_in,
    long max_steps,
    double fixed_step,
    bint stop_at_equilibrium,
    double eq_tol,
    long eq_run,
):
    """See ``_stepper_py.integrate_core``; identical contract."""
    cdef cnp.ndarray[double, ndim=1] beta = np.ascontiguousarray(beta_in, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] omega_i = np.ascontiguousarray(omega_in, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] delta_i = np.ascontiguousarray(delta_in, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] y = np.array(y0_in, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] targets = np.ascontiguousarray(targets_in, dtype=np.float64)

    cdef int m = <int>y.shape[0]
    cdef int n = <int>beta.shape[0] - 1
    cdef cnp.ndarray[double, ndim=2] k = np.empty((7, m))
    cdef cnp.ndarray[double, ndim=1] y_new = np.empty(m)
    cdef cnp.ndarray[double, ndim=1] stage_y = np.empty(m)

    cdef long cap = 4096
    cdef cnp.ndarray[double, ndim=1] rec_t = np.empty(cap)
    cdef cnp.ndarray[double, ndim=2] rec_y = np.empty((cap, m))
    cdef long n_rec = 0

    cdef double* yp = <double*>y.data
    cdef double* kp = <double*>k.data
    cdef double* ynp = <double*>y_new.data
    cdef double* sp = <double*>stage_y.data

    rec_t[0] = 0.0
    rec_y[0, :] = y
    n_rec = 1

    rhs(n, <double*>beta.data, <double*>omega_i.data, <double*>delta_i.data, mu, r, yp, kp)

    cdef double h
    cdef double d0 = 0.0
    cdef double d1 = 0.0
    cdef double sc
    cdef int j, stage, jj
    if fixed_step > 0:
        h = fixed_step
    else:
        for j in range(m):
            sc = atol + rtol * fabs(yp[j])
            d0 += (yp[j] / sc) * (yp[j] / sc)
            d1 += (kp[j] / sc) * (kp[j] / sc)
        d0 = sqrt(d0 / m)
        d1 = sqrt(d1 / m)
        h = 0.01 * d0 / d1 if d1 > 1e-30 else t_end / 100.0
        h = min(h, t_end / 10.0)
        if targets.shape[0] > 0:
            h = min(h, targets[0])

    cdef double t = 0.0
    cdef long idx = 0
    cdef long n_targets = targets.shape[0]
    cdef long n_accepted = 0
    cdef long n_rejected = 0
    cdef long quiet_run = 0
    cdef int status = STATUS_REACHED_END
    cdef double target, h_use, err_norm, err_j, factor, fnorm, acc
    cdef bint clipped, accept, clamped, neg_bad

    while t < t_end:
        if n_accepted + n_rejected >= max_steps:
            status = STATUS_MAX_STEPS
            break
        if fixed_step > 0:
            h = fixed_step
        if h < 1e3 * 2.2250738585072014e-308:
            h = 1e3 * 2.2250738585072014e-308
        if fixed_step <= 0 and h < 16.0 * EPS * max(fabs(t), 1.0):
            status = STATUS_UNDERFLOW
            break

        # clip to the next requested sample time; the 2% stretch prevents a
        # sliver step from being left behind after a near-exact hit
        target = targets[idx] if idx < n_targets else t_end
        clipped = 1.02 * h >= target - t
        h_use = target - t if clipped else h

        # seven stages; k[6] is the derivative at the proposed solution (FSAL)
        for stage in range(1, 7):
            for j in range(m):
                acc = A_TAB[stage - 1][0] * kp[j]
                for jj in range(1, stage):
                    acc += A_TAB[stage - 1][jj] * kp[jj * m + j]
                if stage == 6:
                    ynp[j] = yp[j] + h_use * acc
                else:
                    sp[j] = yp[j] + h_use * acc
            rhs(
                n,
                <double*>beta.data,
                <double*>omega_i.data,
                <double*>delta_i.data,
                mu,
                r,
                ynp if stage == 6 else sp,
                kp + stage * m,
            )

        for j in range(m):
            if not isfinite(ynp[j]):
                status = STATUS_NONFINITE
                break
        if status == STATUS_NONFINITE:
            break

        if fixed_step > 0:
            accept = True
            err_norm = 0.0
        else:
            err_norm = 0.0
            for j in range(m):
                err_j = 0.0
                for stage in range(7):
                    err_j += E_TAB[stage] * kp[stage * m + j]
                err_j *= h_use
                sc = atol + rtol * max(fabs(yp[j]), fabs(ynp[j]))
                err_norm += (err_j / sc) * (err_j / sc)
            err_norm = sqrt(err_norm / m)
            accept = err_norm <= 1.0

        if accept:
            # a component dipping below the roundoff clamp rejects the step:
            # retry smaller, give up only once the step cannot shrink further
            neg_bad = False
            for j in range(m):
                if ynp[j] < -NEG_CLAMP:
                    neg_bad = True
                    break
            if neg_bad:
                if fixed_step > 0 or h_use <= 32.0 * EPS * max(fabs(t), 1.0):
                    status = STATUS_NEGATIVE
                    break
                n_rejected += 1
                h = h_use * 0.25
                continue

        if accept:
            if clipped:
                t = target
                idx += 1
            else:
                t = t + h_use
            clamped = False
            for j in range(m):
                if ynp[j] < 0.0:
                    ynp[j] = 0.0
                    clamped = True
            for j in range(m):
                yp[j] = ynp[j]
            if clamped:
                rhs(n, <double*>beta.data, <double*>omega_i.data, <double*>delta_i.data, mu, r, yp, kp + 6 * m)
            for j in range(m):
                kp[j] = kp[6 * m + j]
            n_accepted += 1

            if n_rec >= cap:
                cap *= 2
                rec_t = np.resize(rec_t, cap)
                rec_y = np.resize(rec_y, (cap, m))
            rec_t[n_rec] = t
            rec_y[n_rec, :] = y
            n_rec += 1

            fnorm = 0.0
            for j in range(m):
                fnorm += kp[j] * kp[j]
            fnorm = sqrt(fnorm)
            quiet_run = quiet_run + 1 if fnorm < eq_tol else 0
            if stop_at_equilibrium and quiet_run >= eq_run:
                status = STATUS_CONVERGED
                break
        else:
            n_rejected += 1

        if fixed_step <= 0:
            factor = MAX_FACTOR if err_norm == 0.0 else SAFETY * pow(err_norm, -0.2)
            factor = min(MAX_FACTOR, max(MIN_FACTOR, factor))
            if not accept:
                h = h_use * min(factor, 1.0)
            elif clipped:
                # a clipped step says nothing against the controller's preference
                h = max(h, h_use * factor)
            else:
                h = h_use * factor

    if status == STATUS_REACHED_END and (
        quiet_run >= eq_run or (quiet_run == n_accepted and n_accepted >= 1)
    ):
        status = STATUS_CONVERGED
    return rec_t[:n_rec].copy(), rec_y[:n_rec].copy(), status, n_accepted, n_rejected, t
