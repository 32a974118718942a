"""Pure-NumPy adaptive Runge-Kutta 5(4) stepper (Dormand-Prince pair).

Reference implementation of the integration kernel.  The compiled Cython
twin in ``_stepper_cy.pyx`` mirrors this algorithm statement by statement;
keep the two in sync.  The kernel works on raw parameter arrays so it stays
picklable and free of package types.

Status codes returned by :func:`integrate_core`:

*  0 - reached ``t_end``
*  1 - equilibrium detected (derivative norm below threshold, sustained)
* -1 - step size underflow (stiffness signal)
* -2 - step budget exhausted (stiffness signal)
* -3 - non-finite state encountered
* -4 - component fell below the negativity clamp threshold
"""

from __future__ import annotations

import numpy as np

KERNEL_NAME = "python"

STATUS_REACHED_END = 0
STATUS_CONVERGED = 1
STATUS_UNDERFLOW = -1
STATUS_MAX_STEPS = -2
STATUS_NONFINITE = -3
STATUS_NEGATIVE = -4

NEG_CLAMP = 1e-12

# Dormand-Prince 5(4) tableau (FSAL: stage 7 equals the propagated solution)
_A = (
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_ERR = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])

MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
SAFETY = 0.9


def _rhs(beta, omega_i, delta_i, mu, r, y, out):
    n = beta.size - 1
    s = y[:-1]
    i = y[-1]
    inf = beta * s * i
    out[0] = omega_i @ s - delta_i[0] * s[0] + r * i - inf[0] - mu * s[0]
    if n >= 1:
        k = np.arange(1, n + 1)
        out[1 : n + 1] = (
            -omega_i[k] * s[k]
            + delta_i[k - 1] * s[k - 1]
            - delta_i[k] * s[k]
            - inf[k]
            - mu * s[k]
        )
    out[n] += mu  # births enter the least-immune tier
    out[n + 1] = (beta @ s) * i - r * i - mu * i
    return out


def _initial_step(f0, y0, t_span, atol, rtol, first_gap):
    scale = atol + rtol * np.abs(y0)
    d0 = float(np.sqrt(np.mean((y0 / scale) ** 2)))
    d1 = float(np.sqrt(np.mean((f0 / scale) ** 2)))
    h = 0.01 * d0 / d1 if d1 > 1e-30 else t_span / 100.0
    return min(h, t_span / 10.0, first_gap)


def integrate_core(
    beta,
    omega_i,
    delta_i,
    mu,
    r,
    y0,
    t_end,
    rtol,
    atol,
    targets,
    max_steps,
    fixed_step,
    stop_at_equilibrium,
    eq_tol,
    eq_run,
):
    """Integrate the model ODE from t=0 to ``t_end``.

    ``targets`` is a sorted array of times in ``(0, t_end]`` ending exactly at
    ``t_end``; steps are clipped so each target is hit exactly (no dense-output
    interpolation error at sample times).  Every accepted step is recorded.

    Returns ``(times, states, status, n_accepted, n_rejected, t_reached)``.
    """
    beta = np.ascontiguousarray(beta, dtype=float)
    omega_i = np.ascontiguousarray(omega_i, dtype=float)
    delta_i = np.ascontiguousarray(delta_i, dtype=float)
    y = np.array(y0, dtype=float)
    m = y.size
    targets = np.ascontiguousarray(targets, dtype=float)

    k = np.empty((7, m))
    work = [np.empty(m) for _ in range(2)]
    times = [0.0]
    states = [y.copy()]

    _rhs(beta, omega_i, delta_i, mu, r, y, k[0])
    h = fixed_step if fixed_step > 0 else _initial_step(
        k[0], y, t_end, atol, rtol, targets[0] if targets.size else t_end
    )

    t = 0.0
    idx = 0
    n_accepted = 0
    n_rejected = 0
    quiet_run = 0
    status = STATUS_REACHED_END

    while t < t_end:
        if n_accepted + n_rejected >= max_steps:
            return _finish(times, states, STATUS_MAX_STEPS, n_accepted, n_rejected, t)
        if fixed_step > 0:
            h = fixed_step
        h = max(h, 1e3 * np.finfo(float).tiny)
        hmin = 16.0 * np.spacing(max(abs(t), 1.0))
        if h < hmin and fixed_step <= 0:
            return _finish(times, states, STATUS_UNDERFLOW, n_accepted, n_rejected, t)

        # clip to the next requested sample time; the 2% stretch prevents a
        # sliver step from being left behind after a near-exact hit
        target = targets[idx] if idx < targets.size else t_end
        clipped = 1.02 * h >= target - t
        h_use = target - t if clipped else h

        # seven stages; k[6] is the derivative at the proposed solution (FSAL)
        y_new = work[0]
        for stage in range(1, 7):
            acc = work[1]
            np.multiply(k[0], _A[stage - 1][0], out=acc)
            for j in range(1, stage):
                acc += _A[stage - 1][j] * k[j]
            np.multiply(acc, h_use, out=acc)
            np.add(y, acc, out=y_new if stage == 6 else acc)
            _rhs(beta, omega_i, delta_i, mu, r, y_new if stage == 6 else acc, k[stage])

        if not np.all(np.isfinite(y_new)):
            return _finish(times, states, STATUS_NONFINITE, n_accepted, n_rejected, t)

        if fixed_step > 0:
            accept, err_norm = True, 0.0
        else:
            err = (_ERR @ k) * h_use
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            err_norm = float(np.sqrt(np.mean((err / scale) ** 2)))
            accept = err_norm <= 1.0

        if accept and np.any(y_new < -NEG_CLAMP):
            # a component dipped below the roundoff clamp: retry smaller, and
            # only give up once the step cannot shrink any further
            if fixed_step > 0 or h_use <= 32.0 * np.spacing(max(abs(t), 1.0)):
                return _finish(times, states, STATUS_NEGATIVE, n_accepted, n_rejected, t)
            n_rejected += 1
            h = h_use * 0.25
            continue

        if accept:
            t = target if clipped else t + h_use
            if clipped:
                idx += 1
            clamped = False
            for j in range(m):
                if y_new[j] < 0.0:
                    y_new[j] = 0.0
                    clamped = True
            y[:] = y_new
            if clamped:
                _rhs(beta, omega_i, delta_i, mu, r, y, k[6])
            k[0][:] = k[6]
            n_accepted += 1
            times.append(t)
            states.append(y.copy())

            fnorm = float(np.sqrt(k[0] @ k[0]))
            quiet_run = quiet_run + 1 if fnorm < eq_tol else 0
            if stop_at_equilibrium and quiet_run >= eq_run:
                return _finish(times, states, STATUS_CONVERGED, n_accepted, n_rejected, t)
        else:
            n_rejected += 1

        if fixed_step <= 0:
            factor = MAX_FACTOR if err_norm == 0.0 else SAFETY * err_norm ** -0.2
            factor = min(MAX_FACTOR, max(MIN_FACTOR, factor))
            if not accept:
                h = h_use * min(factor, 1.0)
            elif clipped:
                # a clipped step says nothing against the controller's preference
                h = max(h, h_use * factor)
            else:
                h = h_use * factor

    if quiet_run >= eq_run or (quiet_run == n_accepted and n_accepted >= 1):
        status = STATUS_CONVERGED
    return _finish(times, states, status, n_accepted, n_rejected, t)


def _finish(times, states, status, n_accepted, n_rejected, t):
    return np.array(times), np.array(states), status, n_accepted, n_rejected, t
