"""Small 1-D root finding and maximisation helpers shared by the solvers."""

from __future__ import annotations

import math
from typing import Callable, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

MAX_ITER = 200


class ConvergenceError(RuntimeError):
    pass


def bisect_decreasing(
    fn: Callable[[float], float],
    lo: float,
    hi: float,
    tol: float = 1e-10,
    max_iter: int = MAX_ITER,
    xtol: float = 1e-15,
) -> Tuple[float, float]:
    """Root of a strictly decreasing ``fn`` with ``fn(lo) > 0 > fn(hi)``.

    The endpoint signs are taken on trust; callers check them where the
    endpoint value is finite. Stops when ``|fn| < tol`` or the bracket has
    shrunk below ``xtol`` or float resolution; the absolute ``xtol`` matters
    for roots at the origin, where float resolution is far finer than the
    accuracy of ``fn``. Returns ``(root, fn(root))``.
    """
    x, fx = 0.5 * (lo + hi), math.nan
    for _ in range(max_iter):
        x = 0.5 * (lo + hi)
        fx = fn(x)
        if fx == 0.0 or abs(fx) < tol:
            return x, fx
        if fx > 0:
            lo = x
        else:
            hi = x
        if hi - lo <= max(xtol, 4 * math.ulp(max(abs(lo), abs(hi)))):
            # bracket exhausted; return whichever end is closer to the root
            fhi = fn(hi)
            try:
                flo = fn(lo)
            except ZeroDivisionError:
                return hi, fhi
            return (lo, flo) if abs(flo) <= abs(fhi) else (hi, fhi)
    if abs(fx) < tol:
        return x, fx
    raise ConvergenceError(f"bisection stalled after {max_iter} iterations, residual {fx:.3g}")


def maximize_scalar(
    fn: Callable[[float], float],
    lo: float,
    hi: float,
    n_grid: int = 1000,
    xtol: float = 1e-10,
) -> Tuple[float, float]:
    """Global-ish maximiser on ``[lo, hi]``: dense grid, then bounded Brent refinement."""
    xs = np.linspace(lo, hi, n_grid)
    vals = np.array([fn(x) for x in xs])
    i = int(np.nanargmax(vals))
    best_x, best_f = float(xs[i]), float(vals[i])
    a, b = float(xs[max(i - 1, 0)]), float(xs[min(i + 1, n_grid - 1)])
    if b > a:
        res = minimize_scalar(
            lambda x: -fn(x), bounds=(a, b), method="bounded", options={"xatol": xtol}
        )
        if -res.fun > best_f:
            best_x, best_f = float(res.x), float(-res.fun)
    return best_x, best_f
