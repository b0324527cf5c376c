"""Compiled zero-order-hold stepper for the crane benchmark.

A numba twin of rk45.integrate hard-wired to the crane's augmented field
(same Dormand-Prince tableau, same step controller), because the crane
experiments spend nearly all of their time inside this one integration.
Falls back silently when numba is unavailable: crane_model then uses the
generic interpreter path, which computes the same quantities more slowly.

Status codes instead of exceptions (numba cannot raise with dynamic
messages): 0 success, 1 step-size underflow, 2 step budget exhausted.
"""

import math

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional accelerator
    HAVE_NUMBA = False

from .benchmarks import (
    ANGLE_DAMPING,
    CRANE_TARGET_POS,
    CRANE_TARGET_ROPE,
    CRANE_WEIGHTS,
    GRAVITY,
)

_C2, _C3, _C4, _C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
_A = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1 / 5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3 / 40, 9 / 40, 0.0, 0.0, 0.0, 0.0, 0.0],
    [44 / 45, -56 / 15, 32 / 9, 0.0, 0.0, 0.0, 0.0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0.0, 0.0, 0.0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0.0, 0.0],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0],
])
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920,
               -17253 / 339200, 22 / 525, -1 / 40])
_W1, _W2, _W3, _W4, _W5, _W6, _W7 = CRANE_WEIGHTS

if HAVE_NUMBA:

    @njit(cache=True, error_model="numpy")
    def _crane_rhs(y, u, out):
        pos = y[0]
        vel = y[1]
        rope = y[2]
        rope_vel = y[3]
        angle = y[4]
        angle_vel = y[5]
        u1 = u[0]
        u2 = u[1]
        if rope <= 1e-12:
            # Poison the stage so the error controller rejects and shrinks.
            for i in range(7):
                out[i] = np.nan
            return
        sin_a = math.sin(angle)
        cos_a = math.cos(angle)
        out[0] = vel
        out[1] = u1
        out[2] = rope_vel
        out[3] = u2
        out[4] = angle_vel
        out[5] = -ANGLE_DAMPING * angle_vel - (GRAVITY / rope) * sin_a - u1 * cos_a
        out[6] = (
            _W1 * angle_vel * angle_vel * rope * rope
            + _W2 * GRAVITY * rope * (1.0 - cos_a)
            + _W3 * (pos - CRANE_TARGET_POS) ** 2
            + _W4 * vel * vel
            + _W5 * (rope - CRANE_TARGET_ROPE) ** 2
            + _W6 * rope_vel * rope_vel
            + _W7 * (u1 * u1 + u2 * u2)
        )

    @njit(cache=True, error_model="numpy")
    def crane_zoh_step(y0, u, t1, rtol, atol):
        n = y0.size
        y = y0.copy()
        k = np.empty((7, n))
        stage = np.empty(n)
        y_new = np.empty(n)
        t = 0.0
        _crane_rhs(y, u, k[0])

        d0 = 0.0
        d1 = 0.0
        for i in range(n):
            s = atol + rtol * abs(y[i])
            d0 += (y[i] / s) ** 2
            d1 += (k[0, i] / s) ** 2
        d0 = math.sqrt(d0 / n)
        d1 = math.sqrt(d1 / n)
        if d1 > 1e-12:
            h = min(t1, max(1e-8 * t1, 0.01 * max(d0, 1e-5) / d1))
        else:
            h = t1

        min_step = 1e-14 * t1
        for _ in range(100_000):
            if t >= t1:
                return 0, y
            if h > t1 - t:
                h = t1 - t
            if h < min_step:
                return 1, y
            for i in range(1, 7):
                for j in range(n):
                    acc = 0.0
                    for m in range(i):
                        acc += _A[i, m] * k[m, j]
                    stage[j] = y[j] + h * acc
                _crane_rhs(stage, u, k[i])
            for j in range(n):
                acc = 0.0
                for m in range(6):
                    acc += _A[6, m] * k[m, j]
                y_new[j] = y[j] + h * acc
            _crane_rhs(y_new, u, k[6])
            err = 0.0
            bad = False
            for j in range(n):
                acc = 0.0
                for m in range(7):
                    acc += _E[m] * k[m, j]
                ev = h * acc
                ay = abs(y[j])
                ayn = abs(y_new[j])
                scale = atol + rtol * (ay if ay > ayn else ayn)
                ratio = ev / scale
                if math.isnan(ratio) or math.isinf(ratio):
                    bad = True
                    break
                err += ratio * ratio
            if bad:
                h *= 0.2
                continue
            err = math.sqrt(err / n)
            if err <= 1.0:
                t += h
                for j in range(n):
                    y[j] = y_new[j]
                    k[0, j] = k[6, j]
                if err == 0.0:
                    h *= 5.0
                else:
                    factor = 0.9 * err ** -0.2
                    if factor > 5.0:
                        factor = 5.0
                    elif factor < 0.2:
                        factor = 0.2
                    h *= factor
            else:
                factor = 0.9 * err ** -0.2
                if factor < 0.2:
                    factor = 0.2
                h *= factor
        return 2, y

else:  # pragma: no cover - exercised only without numba
    crane_zoh_step = None
