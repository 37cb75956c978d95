"""Limited-memory BFGS with a strong-Wolfe line search.

Small, dependency-free minimizer for the low-dimensional layout energies in
this package.  The two-loop recursion and the bracketing/zoom line search
follow the standard formulation (Nocedal & Wright, ch. 3 and 7).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class LbfgsResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    iterations: int
    n_evals: int
    converged: bool


def _cubic_min(a, fa, dfa, b, fb):
    """Minimizer of the cubic through (a, fa) with slope dfa and (b, fb).

    Falls back to bisection when the interpolation is ill-conditioned.
    """
    d = b - a
    if d == 0:
        return a
    # quadratic fit using fa, dfa, fb
    denom = 2.0 * (fb - fa - dfa * d)
    if denom == 0:
        return a + 0.5 * d
    t = -dfa * d * d / denom
    cand = a + t
    lo, hi = (a, b) if a < b else (b, a)
    span = hi - lo
    if not np.isfinite(cand) or cand < lo + 0.1 * span or cand > hi - 0.1 * span:
        return a + 0.5 * d
    return cand


def _zoom(phi, a_lo, a_hi, f_lo, g_lo, f_hi, f0, g0, c1, c2, max_iter=30):
    """Wolfe zoom stage on the bracketing interval [a_lo, a_hi]."""
    n_evals = 0
    for _ in range(max_iter):
        a = _cubic_min(a_lo, f_lo, g_lo, a_hi, f_hi)
        f, g = phi(a)
        n_evals += 1
        if f > f0 + c1 * a * g0 or f >= f_lo:
            a_hi, f_hi = a, f
        else:
            if abs(g) <= -c2 * g0:
                return a, f, g, n_evals
            if g * (a_hi - a_lo) >= 0:
                a_hi, f_hi = a_lo, f_lo
            a_lo, f_lo, g_lo = a, f, g
        if abs(a_hi - a_lo) < 1e-16:
            break
    return a_lo, f_lo, g_lo, n_evals


def _wolfe_line_search(phi, f0, g0, a_init=1.0, c1=1e-4, c2=0.9, a_max=1e3, max_iter=25):
    """Find a step length satisfying the strong Wolfe conditions.

    ``phi(a)`` returns the 1-D function value and directional derivative at
    step ``a``.  Returns (a, f, dphi, n_evals); a = 0 signals failure.
    """
    a_prev, f_prev, g_prev = 0.0, f0, g0
    a = a_init
    n_evals = 0
    for i in range(max_iter):
        f, g = phi(a)
        n_evals += 1
        if f > f0 + c1 * a * g0 or (i > 0 and f >= f_prev):
            res = _zoom(phi, a_prev, a, f_prev, g_prev, f, f0, g0, c1, c2)
            return res[0], res[1], res[2], n_evals + res[3]
        if abs(g) <= -c2 * g0:
            return a, f, g, n_evals
        if g >= 0:
            res = _zoom(phi, a, a_prev, f, g, f_prev, f0, g0, c1, c2)
            return res[0], res[1], res[2], n_evals + res[3]
        a_prev, f_prev, g_prev = a, f, g
        a = min(2.0 * a, a_max)
        if a_prev >= a_max:
            break
    return 0.0, f0, g0, n_evals


def minimize(fun, x0, history=10, grad_tol=1e-9, max_iter=500) -> LbfgsResult:
    """Minimize ``fun(x) -> (value, gradient)`` starting from ``x0``.

    Convergence is declared when the gradient infinity norm drops below
    ``grad_tol``.  On line-search failure the best iterate found so far is
    returned with ``converged=False`` (unless the gradient test passes).
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    f, g = fun(x)
    g = np.asarray(g, dtype=np.float64)
    n_evals = 1
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    rho_hist: list[float] = []

    for it in range(max_iter):
        if np.max(np.abs(g)) < grad_tol:
            return LbfgsResult(x, f, g, it, n_evals, True)

        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if y_hist:
            s, y = s_hist[-1], y_hist[-1]
            q *= (s @ y) / (y @ y)
        for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        p = -q

        dphi0 = float(g @ p)
        if dphi0 >= 0:
            # not a descent direction; fall back to steepest descent
            p = -g
            dphi0 = float(g @ p)
            if dphi0 == 0.0:
                return LbfgsResult(x, f, g, it, n_evals, True)

        evals = [0]

        def phi(a, _x=x, _p=p):
            fa, ga = fun(_x + a * _p)
            evals[0] += 1
            return fa, float(np.asarray(ga) @ _p)

        a, fa, _, _ = _wolfe_line_search(phi, f, dphi0)
        n_evals += evals[0]
        if a == 0.0:
            return LbfgsResult(x, f, g, it, n_evals, bool(np.max(np.abs(g)) < grad_tol))

        x_new = x + a * p
        f_new, g_new = fun(x_new)
        g_new = np.asarray(g_new, dtype=np.float64)
        n_evals += 1

        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > history:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)

        x, f, g = x_new, f_new, g_new

    return LbfgsResult(x, f, g, max_iter, n_evals, bool(np.max(np.abs(g)) < grad_tol))
