"""Adaptive quadrature and bracketed root finding used by the rate calculus."""

from __future__ import annotations

import math
from typing import Callable


class NumericsError(RuntimeError):
    pass


def _simpson(fa: float, fm: float, fb: float, width: float) -> float:
    return width * (fa + 4.0 * fm + fb) / 6.0


def adaptive_simpson(
    f: Callable[[float], float],
    a: float,
    b: float,
    rel_tol: float = 1e-10,
    abs_tol: float = 1e-12,
    max_depth: int = 48,
) -> float:
    """Integrate f over [a, b] with adaptive Simpson refinement.

    The error control is the classical Richardson estimate |S2 - S1| / 15
    on each subinterval, with the tolerance budget halved on recursion.
    Intended for smooth monotone integrands; raises NumericsError if the
    recursion depth is exhausted before the tolerance is met.
    """
    if b < a:
        raise ValueError(f"integration bounds out of order: [{a}, {b}]")
    if a == b:
        return 0.0
    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    whole = _simpson(fa, fm, fb, b - a)
    tol = max(abs_tol, rel_tol * abs(whole))
    return _adapt(f, a, b, fa, fm, fb, whole, tol, rel_tol, max_depth)


def _adapt(f, a, b, fa, fm, fb, whole, tol, rel_tol, depth):
    m = 0.5 * (a + b)
    lm, rm = 0.5 * (a + m), 0.5 * (m + b)
    flm, frm = f(lm), f(rm)
    left = _simpson(fa, flm, fm, m - a)
    right = _simpson(fm, frm, fb, b - m)
    s2 = left + right
    err = (s2 - whole) / 15.0
    if abs(err) <= max(tol, rel_tol * abs(s2)) or (b - a) <= abs(m) * 1e-15:
        return s2 + err
    if depth <= 0:
        raise NumericsError(f"adaptive Simpson depth exhausted on [{a}, {b}]")
    half = 0.5 * tol
    return _adapt(f, a, m, fa, flm, fm, left, half, rel_tol, depth - 1) + _adapt(
        f, m, b, fm, frm, fb, right, half, rel_tol, depth - 1
    )


def bisect_increasing(
    f: Callable[[float], float],
    target: float,
    lo: float,
    hi: float,
    rel_width: float = 1e-13,
    max_iter: int = 200,
) -> float:
    """Solve f(x) = target for non-decreasing f with f(lo) <= target <= f(hi)."""
    flo, fhi = f(lo), f(hi)
    if flo > target or fhi < target:
        raise NumericsError(
            f"bracket [{lo}, {hi}] does not contain the target {target}"
        )
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if hi - lo <= rel_width * max(1.0, abs(mid)):
            return mid
        if f(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
