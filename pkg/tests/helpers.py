"""Shared numerical oracles for the test suite.

Everything here is deliberately independent of the solver code paths it
checks: dense linear algebra, central finite differences, brute-force
enumeration, and a textbook preconditioned CG.
"""

from __future__ import annotations

import numpy as np


def central_diff_gradient(fun, x, rel_step=1e-6):
    """Central finite-difference gradient with per-coordinate scaled steps."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        h = rel_step * (1.0 + abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2.0 * h)
    return g


def gradient_matches_fd(fun, grad, points, rtol=1e-6):
    """Max relative error of an analytic gradient against central differences."""
    worst = 0.0
    for x in points:
        g = np.asarray(grad(x), dtype=float)
        fd = central_diff_gradient(fun, x)
        scale = max(1.0, float(np.linalg.norm(fd)))
        worst = max(worst, float(np.linalg.norm(g - fd)) / scale)
    return worst <= rtol, worst


def box_qp_bruteforce(B, b, lower, upper):
    """Global minimiser of 0.5 x^T B x + b^T x over a finite box (B SPD).

    Enumerates all 3^n assignments of coordinates to {lower, upper, free},
    solves the free subsystem, and keeps the best feasible KKT point.
    Independent oracle for active-set identification tests (n <= ~10).
    """
    import itertools

    n = b.size
    best = None
    best_val = np.inf
    for pattern in itertools.product((0, 1, 2), repeat=n):
        x = np.zeros(n)
        free = [i for i, p in enumerate(pattern) if p == 0]
        fixed = [i for i, p in enumerate(pattern) if p != 0]
        for i, p in enumerate(pattern):
            if p == 1:
                x[i] = lower[i]
            elif p == 2:
                x[i] = upper[i]
        if free:
            rhs = -b[free]
            if fixed:
                rhs = rhs - B[np.ix_(free, fixed)] @ x[fixed]
            try:
                x[free] = np.linalg.solve(B[np.ix_(free, free)], rhs)
            except np.linalg.LinAlgError:
                continue
            if np.any(x[free] < lower[free] - 1e-12) or np.any(x[free] > upper[free] + 1e-12):
                continue
        g = B @ x + b
        ok = True
        for i, p in enumerate(pattern):
            if p == 1 and g[i] < -1e-9:
                ok = False
            elif p == 2 and g[i] > 1e-9:
                ok = False
        if not ok:
            continue
        val = 0.5 * float(x @ B @ x) + float(b @ x)
        if val < best_val - 1e-14:
            best_val = val
            best = x.copy()
    return best, best_val


def textbook_pcg(A, b, x0, M_inv=None, tol=1e-12, maxiter=500):
    """Standard preconditioned CG (Golub-Van Loan form); returns iterates."""
    x = x0.copy()
    r = b - A @ x
    z = M_inv @ r if M_inv is not None else r.copy()
    p = z.copy()
    rz = float(r @ z)
    iterates = [x.copy()]
    for _ in range(maxiter):
        Ap = A @ p
        alpha = rz / float(p @ Ap)
        x = x + alpha * p
        r = r - alpha * Ap
        iterates.append(x.copy())
        z = M_inv @ r if M_inv is not None else r.copy()
        rz_new = float(r @ z)
        if np.sqrt(max(rz_new, 0.0)) <= tol:
            break
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, iterates


def newton_minimize(grad, hess, x0, tol=1e-13, maxiter=200):
    """Plain damped Newton on a smooth strongly convex function (oracle)."""
    x = np.asarray(x0, dtype=float).copy()
    for _ in range(maxiter):
        g = grad(x)
        if np.linalg.norm(g) <= tol:
            break
        step = np.linalg.solve(hess(x), -g)
        t = 1.0
        while np.linalg.norm(grad(x + t * step)) > (1.0 - 1e-4 * t) * np.linalg.norm(g) and t > 1e-8:
            t *= 0.5
        x = x + t * step
    return x


def random_feasible_point(rng, box, spread=2.0):
    """Uniform point inside the box; unbounded sides sampled near zero."""
    lo = np.where(np.isfinite(box.lower), box.lower, -spread)
    hi = np.where(np.isfinite(box.upper), box.upper, spread)
    hi = np.maximum(hi, lo)
    return lo + (hi - lo) * rng.random(box.dim)
