"""Logit quantal response equilibria and brute-force minimax values for small zero-sum matrix games.

Row player maximises ``x^T A y``, column player minimises it. At temperatures
``(a_row, a_col)`` the logit QRE is the fixed point

    x = softmax(A y / a_row),    y = softmax(-A^T x / a_col).
"""
from __future__ import annotations

import math
from itertools import combinations
from dataclasses import dataclass

import numpy as np


class QREConvergenceError(RuntimeError):
    def __init__(self, msg, residual):
        super().__init__(f"{msg} (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class MatrixGame:
    payoff: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.payoff, dtype=np.float64)
        if a.ndim != 2 or not (2 <= a.shape[0] <= 8 and 2 <= a.shape[1] <= 8):
            raise ValueError(f"payoff must be m x n with 2 <= m, n <= 8, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("payoff entries must be finite")
        object.__setattr__(self, "payoff", a)

    @property
    def shape(self):
        return self.payoff.shape

    def value_of(self, x, y) -> float:
        return float(np.asarray(x) @ self.payoff @ np.asarray(y))


def check_strategy(p, tol: float = 1e-12) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > tol:
        raise ValueError("not a mixed strategy")
    return p


def strategy_entropy(p) -> float:
    """Shannon entropy in nats, with 0 log 0 = 0."""
    p = check_strategy(p, tol=1e-9)
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


# small local versions: the scipy ones carry array-API overhead that dominates on 3-vectors
def softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


def logsumexp(z):
    top = z.max()
    return top + math.log(np.exp(z - top).sum())


def _residual(a, x, y, a_row, a_col) -> float:
    bx = softmax(a @ y / a_row)
    by = softmax(-a.T @ x / a_col)
    return max(np.abs(bx - x).max(), np.abs(by - y).max())


def _log_residual(a, p, q, a_row, a_col):
    x, y = softmax(p), softmax(q)
    ur, uc = a @ y / a_row, -a.T @ x / a_col
    return np.concatenate([p - logsumexp(p) - (ur - logsumexp(ur)), q - logsumexp(q) - (uc - logsumexp(uc))])


def _log_jacobian(a, p, q, a_row, a_col):
    m, n = a.shape
    x, y = softmax(p), softmax(q)
    sr, sc = softmax(a @ y / a_row), softmax(-a.T @ x / a_col)
    dx = np.diag(x) - np.outer(x, x)
    dy = np.diag(y) - np.outer(y, y)
    jac = np.zeros((m + n, m + n))
    jac[:m, :m] = np.eye(m) - np.outer(np.ones(m), x)
    jac[:m, m:] = -(np.eye(m) - np.outer(np.ones(m), sr)) @ a @ dy / a_row
    jac[m:, m:] = np.eye(n) - np.outer(np.ones(n), y)
    jac[m:, :m] = (np.eye(n) - np.outer(np.ones(n), sc)) @ a.T @ dx / a_col
    return jac


def _newton(a, p, q, a_row, a_col, tol, max_iter=200):
    m = a.shape[0]
    for _ in range(max_iter):
        x, y = softmax(p), softmax(q)
        if _residual(a, x, y, a_row, a_col) <= tol:
            return p, q, True
        f = _log_residual(a, p, q, a_row, a_col)
        # logits carry a free additive constant, so the system is solved in the least-squares sense
        d = np.linalg.lstsq(_log_jacobian(a, p, q, a_row, a_col), -f, rcond=None)[0]
        f_norm = np.linalg.norm(f)
        s = 1.0
        while s > 1e-10:
            pn, qn = p + s * d[:m], q + s * d[m:]
            if np.linalg.norm(_log_residual(a, pn, qn, a_row, a_col)) < (1.0 - 1e-4 * s) * f_norm:
                break
            s *= 0.5
        else:
            return p, q, False
        p, q = pn - pn.max(), qn - qn.max()
    x, y = softmax(p), softmax(q)
    return p, q, _residual(a, x, y, a_row, a_col) <= tol


def logit_qre(game: MatrixGame, a_row: float, a_col: float, damping: float = 0.5, tol: float = 1e-10,
              max_iter: int = 100_000, plain_budget: int = 2_000):
    """Logit QRE of a zero-sum matrix game.

    Damped simultaneous iteration is tried first. Its map has gain of order
    ``|A| / temperature``, so below roughly 0.3 it orbits instead of
    converging; in that case the solver continues in temperature from a hot,
    easily solved game, applying damped Newton steps on the log-strategy
    fixed-point system at each rung.
    """
    if not (a_row > 0 and a_col > 0):
        raise ValueError("temperatures must be > 0")
    a = game.payoff
    m, n = a.shape
    x, y = np.full(m, 1.0 / m), np.full(n, 1.0 / n)
    best, best_at = math.inf, 0
    for it in range(min(plain_budget, max_iter)):
        bx = softmax(a @ y / a_row)
        by = softmax(-a.T @ x / a_col)
        res = max(np.abs(bx - x).max(), np.abs(by - y).max())
        if res <= tol:
            return bx / bx.sum(), by / by.sum()
        if res < 0.99 * best:
            best, best_at = res, it
        elif it - best_at > 100:
            break  # orbiting, not contracting
        x = (1.0 - damping) * x + damping * bx
        y = (1.0 - damping) * y + damping * by

    scale = max(float(np.abs(a).max()), 1e-12)
    hot = 10.0 * scale
    p, q = np.zeros(m), np.zeros(n)
    ratio = a_col / a_row
    t = max(hot, a_row)
    iters = 0
    while True:
        t = max(t * 0.7, a_row)
        p, q, ok = _newton(a, p, q, t, t * ratio, tol if t == a_row else 1e-8)
        iters += 1
        if t == a_row:
            break
        if iters > max_iter:
            break
    x, y = softmax(p), softmax(q)
    final = _residual(a, x, y, a_row, a_col)
    if final > tol:
        raise QREConvergenceError("logit QRE did not converge", final)
    return x, y


def qre_value(game: MatrixGame, a_row: float, a_col: float | None = None) -> float:
    """Expected payoff ``x^T A y`` at the logit QRE."""
    x, y = logit_qre(game, a_row, a_row if a_col is None else a_col)
    return game.value_of(x, y)


def exploitability(game: MatrixGame, x, y) -> float:
    """Duality gap max_i (A y)_i - min_j (x^T A)_j; zero exactly at a Nash equilibrium."""
    a = game.payoff
    return float((a @ y).max() - (x @ a).min())


def _simplex_grid(m: int, step: float) -> np.ndarray:
    """All points of the m-simplex whose coordinates are multiples of ``step``."""
    k = int(round(1.0 / step))
    if m == 2:
        i = np.arange(k + 1)
        return np.stack([i, k - i], axis=1) / k
    if m == 3:
        i, j = np.triu_indices(k + 1)
        # i <= j: x0 = i, x1 = j - i, x2 = k - j
        return np.stack([i, j - i, k - j], axis=1) / k
    rows = []

    def rec(prefix, left, slots):
        if slots == 1:
            rows.append(prefix + [left])
            return
        for v in range(left + 1):
            rec(prefix + [v], left - v, slots - 1)

    rec([], k, m)
    return np.asarray(rows, dtype=np.float64) / k


def _security(a, xs):
    return (xs @ a).min(axis=1)


def _ternary_max(f, lo, hi, tol):
    """Maximiser of a concave function on [lo, hi] (plateaus allowed)."""
    while hi - lo > tol:
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if f(m1) < f(m2):
            lo = m1
        else:
            hi = m2
    return 0.5 * (lo + hi)


def _grid_value(a, refine_tol):
    def one_side(mat):
        m = mat.shape[0]
        xs = _simplex_grid(m, 1e-3)
        grid_best = float(_security(mat, xs).max())
        tol = refine_tol * 1e-4

        def sec(x):
            return float((x @ mat).min())

        # The security level is concave, so ternary search over each coordinate
        # (nested for three rows) converges to the maximum without stalling on
        # kinks. It searches the whole simplex: along a shallow ridge the grid
        # optimum can sit far from the true one.
        if m == 2:
            p = _ternary_max(lambda p: sec(np.array([p, 1.0 - p])), 0.0, 1.0, tol)
            return max(grid_best, sec(np.array([p, 1.0 - p])))

        def inner(p1):
            p2 = _ternary_max(lambda q: sec(np.array([p1, q, 1.0 - p1 - q])), 0.0, 1.0 - p1, tol)
            return sec(np.array([p1, p2, 1.0 - p1 - p2]))

        p1 = _ternary_max(inner, 0.0, 1.0, tol)
        return max(grid_best, inner(p1))

    lower = one_side(a)
    upper = -one_side(-a.T)
    return 0.5 * (lower + upper)


def _support_value(a, tol=1e-9):
    m, n = a.shape
    for k in range(1, min(m, n) + 1):
        for rows in combinations(range(m), k):
            for cols in combinations(range(n), k):
                sub = a[np.ix_(rows, cols)]
                lhs = np.zeros((k + 1, k + 1))
                lhs[:k, :k] = sub.T
                lhs[:k, k] = -1.0
                lhs[k, :k] = 1.0
                rhs = np.zeros(k + 1)
                rhs[k] = 1.0
                lhs_c = np.zeros((k + 1, k + 1))
                lhs_c[:k, :k] = sub
                lhs_c[:k, k] = -1.0
                lhs_c[k, :k] = 1.0
                try:
                    sx = np.linalg.solve(lhs, rhs)
                    sy = np.linalg.solve(lhs_c, rhs)
                except np.linalg.LinAlgError:
                    continue
                if np.any(sx[:k] < -tol) or np.any(sy[:k] < -tol):
                    continue
                v = sx[k]
                x = np.zeros(m)
                y = np.zeros(n)
                x[list(rows)] = sx[:k]
                y[list(cols)] = sy[:k]
                if (x @ a).min() >= v - 1e-7 and (a @ y).max() <= v + 1e-7:
                    return float(v)
    raise RuntimeError("no equalising support pair found")  # pragma: no cover


def nash_value(game: MatrixGame, refine_tol: float = 1e-5) -> float:
    """Minimax value by brute force.

    Up to 3 x 3: the row player's security level ``min_j (x^T A)_j`` is
    maximised on a 1e-3 simplex grid and then refined by (nested) ternary
    search well past ``refine_tol``; the same search on
    ``-A^T`` bounds the value from above and the midpoint is returned.

    Larger games: dense grids stop fitting in memory, so every square support
    pair is enumerated instead (a zero-sum game always has an optimal pair
    supported on a square non-singular submatrix).
    """
    a = game.payoff
    if max(a.shape) <= 3:
        return _grid_value(a, refine_tol)
    return _support_value(a)
