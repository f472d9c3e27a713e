"""Compiled inner loops for the mean-field density recursion.

Weights are carried unnormalised between steps; every pass folds the previous
normalisation into the update so a step costs a single sweep over the atoms.
"""

import numba as nb
import numpy as np

OK = 0
DOMINATED = 1

# masses below this are flushed to zero to keep the loop out of denormals
_TINY = 1e-290


@nb.njit(cache=True, nogil=True)
def _moments(w, s, sphi):
    z = 0.0
    a = 0.0
    b = 0.0
    for i in range(w.size):
        z += w[i]
        a += w[i] * s[i]
        b += w[i] * sphi[i]
    return z, a, b


@nb.njit(cache=True, nogil=True)
def _top(w, top):
    while top > 0 and w[top] == 0.0:
        top -= 1
    return top


# fastmath lets the three reductions vectorise; results stay deterministic
# for a given build, only the summation order differs from strict IEEE
@nb.njit(cache=True, nogil=True, fastmath=True)
def _sweep(w, s, sphi, z, total_s):
    """One infection step in place; returns the new (z, a, b) moments."""
    scale = 1.0 / z
    slope = scale / total_s
    nz = 0.0
    na = 0.0
    nb_ = 0.0
    for i in range(w.size):
        x = w[i] * (scale - slope * s[i])
        x = x if x >= _TINY else 0.0
        w[i] = x
        nz += x
        na += x * s[i]
        nb_ += x * sphi[i]
    return nz, na, nb_


@nb.njit(cache=True, nogil=True)
def advance(w0, s, sphi, remaining, n_steps):
    """Run ``n_steps`` steps from normalised weights ``w0``.

    Returns ``(weights, steps_done, status)`` with weights renormalised.
    """
    w = w0.copy()
    z, a, b = _moments(w, s, sphi)
    top = _top(w, w.size - 1)
    done = 0
    status = OK
    while done < n_steps:
        total_s = remaining * a / z
        if s[top] > total_s:
            status = DOMINATED
            break
        z, a, b = _sweep(w, s, sphi, z, total_s)
        top = _top(w, top)
        remaining -= 1
        done += 1
    w /= z
    return w, done, status


@nb.njit(cache=True, nogil=True)
def trajectory(w0, s, sphi, remaining, max_steps, overshoot):
    """Record R, remaining and mean susceptibility step by step.

    Stops ``overshoot`` steps after R first drops below 1 (``overshoot < 0``
    never stops on the threshold), after ``max_steps`` steps, or when fewer
    than two susceptibles remain.

    Returns ``(R, remaining, mean_s, hit, weights, status)`` where ``hit`` is
    the index of the first R < 1 or -1.
    """
    cap = min(max_steps, remaining - 1) + 1
    r_out = np.empty(cap)
    rem_out = np.empty(cap, dtype=np.int64)
    mean_out = np.empty(cap)
    w = w0.copy()
    z, a, b = _moments(w, s, sphi)
    top = _top(w, w.size - 1)
    hit = -1
    status = OK
    j = 0
    while True:
        r = remaining * b / z
        r_out[j] = r
        rem_out[j] = remaining
        mean_out[j] = a / z
        if hit < 0 and r < 1.0:
            hit = j
        if hit >= 0 and overshoot >= 0 and j - hit >= overshoot:
            break
        if j + 1 >= cap:
            break
        total_s = remaining * a / z
        if s[top] > total_s:
            status = DOMINATED
            break
        z, a, b = _sweep(w, s, sphi, z, total_s)
        top = _top(w, top)
        remaining -= 1
        j += 1
    w /= z
    m = j + 1
    return r_out[:m].copy(), rem_out[:m].copy(), mean_out[:m].copy(), hit, w, status


@nb.njit(cache=True, nogil=True)
def _bottom(w):
    i = 0
    while i < w.size - 1 and w[i] == 0.0:
        i += 1
    return i


@nb.njit(cache=True, nogil=True)
def _single_atom(w, sphi, remaining, max_steps):
    w = w / w.sum()
    r0 = remaining * sphi
    if r0 < 1.0:
        return 0, 0, w, remaining, OK, r0, r0
    # largest pool size with pool * sphi < 1, checked in floating point
    target = int(np.ceil(1.0 / sphi)) - 1
    while target > 0 and target * sphi >= 1.0:
        target -= 1
    while (target + 1) * sphi < 1.0:
        target += 1
    target = max(target, 1)
    steps = remaining - target
    if target * sphi >= 1.0 or steps > max_steps:
        steps = min(max_steps, remaining - 1)
        r = (remaining - steps) * sphi
        return -1, steps, w, remaining - steps, OK, r, r
    return steps, steps, w, target, OK, (target + 1) * sphi, target * sphi


@nb.njit(cache=True, nogil=True)
def threshold(w0, s, sphi, remaining, max_steps):
    """Step until R < 1 without recording the path.

    Returns ``(hit, steps_done, weights, remaining, status, r_prev, r_last)``;
    ``hit`` is the number of steps taken before R first dropped below 1, or
    -1. ``r_last`` is R at the final step and ``r_prev`` at the one before
    (equal to ``r_last`` when no step was taken).
    """
    w = w0.copy()
    z, a, b = _moments(w, s, sphi)
    top = _top(w, w.size - 1)
    hit = -1
    status = OK
    j = 0
    if _bottom(w) == top:
        # one-point density is a fixed point: R falls by sphi per step
        return _single_atom(w, sphi[top], remaining, max_steps)
    r = remaining * b / z
    r_prev = r
    while True:
        if r < 1.0:
            hit = j
            break
        if j >= max_steps or remaining < 2:
            break
        total_s = remaining * a / z
        if s[top] > total_s:
            status = DOMINATED
            break
        z, a, b = _sweep(w, s, sphi, z, total_s)
        top = _top(w, top)
        remaining -= 1
        j += 1
        r_prev = r
        r = remaining * b / z
    w /= z
    return hit, j, w, remaining, status, r_prev, r
