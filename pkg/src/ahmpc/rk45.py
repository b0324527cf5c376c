"""Embedded adaptive Runge-Kutta integrator (Dormand-Prince 5(4) pair).

Seven stages, fifth order propagation with a fourth order embedded solution
for the local error estimate, FSAL (first-same-as-last) so an accepted step
costs six new right-hand-side evaluations. Step size control is the classic
proportional controller with safety factor 0.9 and growth limits.

Kept deliberately small and allocation-light: the optimal control layer
integrates one sampling period at a time, millions of times per experiment,
so per-call overhead matters more than feature breadth. The right-hand side
writes its result into a caller-provided buffer for the same reason.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .errors import IntegrationFailure

# Butcher tableau (Dormand & Prince 1980), padded square for row dots.
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1 / 5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3 / 40, 9 / 40, 0.0, 0.0, 0.0, 0.0, 0.0],
    [44 / 45, -56 / 15, 32 / 9, 0.0, 0.0, 0.0, 0.0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0.0, 0.0, 0.0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0.0, 0.0],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0],
])
# Fifth-order weights equal the last A row (FSAL); error weights are the
# difference between the fifth and fourth order solutions.
_B5 = _A[6, :6].copy()
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920,
               -17253 / 339200, 22 / 525, -1 / 40])

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0
_MAX_STEPS = 100_000

Rhs = Callable[[float, np.ndarray, np.ndarray], None]


def integrate(rhs: Rhs, y0: np.ndarray, t0: float, t1: float,
              rtol: float, atol: float) -> np.ndarray:
    """Integrate dy/dt = rhs(t, y, out) from t0 to t1 (t1 > t0), returning y(t1).

    ``rhs`` writes the derivative into ``out``. Local error per step is kept
    below atol + rtol*|y| componentwise in the RMS sense. Raises
    IntegrationFailure when the controller underflows the minimum step size
    or the step budget, which signals stiff or singular dynamics rather
    than a tolerance problem.
    """
    span = t1 - t0
    if span <= 0.0:
        raise ValueError("integrate requires t1 > t0")
    y = np.asarray(y0, dtype=float).copy()
    n = y.size
    t = t0
    k = np.empty((7, n))
    stage = np.empty(n)
    rhs(t, y, k[0])

    # Initial step from the magnitude of the derivative; a resting system
    # (zero derivative) integrates the whole span in one exact step.
    scale0 = atol + rtol * np.abs(y)
    d0 = math.sqrt(float(np.mean((y / scale0) ** 2)))
    d1 = math.sqrt(float(np.mean((k[0] / scale0) ** 2)))
    if d1 > 1e-12:
        h = min(span, max(1e-8 * span, 0.01 * max(d0, 1e-5) / d1))
    else:
        h = span

    min_step = 1e-14 * span
    for _ in range(_MAX_STEPS):
        if t >= t1:
            return y
        h = min(h, t1 - t)
        if h < min_step:
            raise IntegrationFailure(
                f"step size underflow at t={t:.6g} (h={h:.3e}); dynamics appear singular"
            )
        try:
            for i in range(1, 7):
                np.dot(_A[i, :i], k[:i], out=stage)
                stage *= h
                stage += y
                rhs(t + _C[i] * h, stage, k[i])
            y_new = y + h * np.dot(_B5, k[:6])
            rhs(t + h, y_new, k[6])
        except IntegrationFailure:
            # A trial step wandered into a singular region; retry smaller.
            h *= _MIN_FACTOR
            continue
        err_vec = h * np.dot(_E, k)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        with np.errstate(invalid="ignore"):
            err = math.sqrt(float(np.mean((err_vec / scale) ** 2)))
        if math.isnan(err) or math.isinf(err):
            h *= _MIN_FACTOR
            continue
        if err <= 1.0:
            t += h
            y = y_new
            k[0] = k[6]  # FSAL
            factor = _MAX_FACTOR if err == 0.0 else min(
                _MAX_FACTOR, max(_MIN_FACTOR, _SAFETY * err ** -0.2)
            )
            h *= factor
        else:
            h *= max(_MIN_FACTOR, _SAFETY * err ** -0.2)
    raise IntegrationFailure(f"step budget exhausted ({_MAX_STEPS} steps) before t={t1:.6g}")
