"""Self-paced curriculum over the adversary temperature.

The temperature is drawn from a Gamma distribution with shape ``k`` and scale
``theta``. Each update moves ``(log k, log theta)`` along the straight line to
a target Gamma, as far as a KL trust region and an importance-weighted
performance constraint allow.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, gammaln


@dataclass(frozen=True)
class GammaParams:
    k: float
    theta: float

    def __post_init__(self):
        if not (math.isfinite(self.k) and math.isfinite(self.theta) and self.k > 0 and self.theta > 0):
            raise ValueError(f"Gamma parameters must be finite and > 0, got k={self.k}, theta={self.theta}")

    @property
    def mean(self) -> float:
        return self.k * self.theta

    @property
    def variance(self) -> float:
        return self.k * self.theta ** 2


# Shape 1 with a 1e3 *rate*: mean 1e-3, the near-Dirac-at-zero target.
DEFAULT_TARGET = GammaParams(1.0, 1e-3)
DEFAULT_INITIAL = GammaParams(2.0, 5.0)


@dataclass(frozen=True)
class CurriculumConfig:
    target: GammaParams = DEFAULT_TARGET
    initial: GammaParams = DEFAULT_INITIAL
    xi: float = 0.0
    epsilon: float = 0.1
    perf_window: int = 20
    update_every: int = 20

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("curriculum.epsilon must be > 0")
        if self.perf_window < 10:
            raise ValueError("curriculum.perf_window must be >= 10")
        if self.update_every < 1:
            raise ValueError("curriculum.update_every must be >= 1")
        if not math.isfinite(self.xi):
            raise ValueError("curriculum.xi must be finite")


@dataclass
class PerfBuffer:
    """Sliding window of (sampled temperature, protagonist return) pairs."""

    window: int
    _items: deque = field(default_factory=deque, repr=False)

    def append(self, alpha: float, ret: float):
        if not (math.isfinite(alpha) and math.isfinite(ret)):
            raise ValueError("performance entries must be finite")
        self._items.append((float(alpha), float(ret)))
        while len(self._items) > self.window:
            self._items.popleft()

    def __len__(self):
        return len(self._items)

    @property
    def alphas(self) -> np.ndarray:
        return np.array([a for a, _ in self._items])

    @property
    def returns(self) -> np.ndarray:
        return np.array([r for _, r in self._items])


def gamma_sample(params: GammaParams, rng: np.random.Generator, size=None):
    out = rng.gamma(params.k, params.theta, size=size)
    # a draw can underflow to 0 for tiny shapes; keep the support open
    return np.maximum(out, np.finfo(float).tiny) if size is not None else max(float(out), np.finfo(float).tiny)


def gamma_mean(params: GammaParams) -> float:
    return params.k * params.theta


def gamma_logpdf(x, params: GammaParams):
    x = np.asarray(x, dtype=np.float64)
    k, th = params.k, params.theta
    with np.errstate(over="ignore"):  # x / th overflowing means density 0, i.e. -inf here
        return (k - 1.0) * np.log(x) - x / th - gammaln(k) - k * math.log(th)


def gamma_kl(p: GammaParams, q: GammaParams) -> float:
    """KL(p || q) between two shape/scale Gammas, closed form."""
    kp, tp, kq, tq = p.k, p.theta, q.k, q.theta
    kl = ((kp - kq) * digamma(kp) - gammaln(kp) + gammaln(kq)
          + kq * (math.log(tq) - math.log(tp)) + kp * (tp - tq) / tq)
    return max(float(kl), 0.0)


class DisjointSupportError(ValueError):
    """Every importance weight vanished: the two distributions are too far apart."""


def estimate_expected_return(buf: PerfBuffer, candidate: GammaParams, current: GammaParams) -> float:
    """Self-normalised importance-weighted mean return under ``candidate``."""
    if len(buf) == 0:
        raise ValueError("performance buffer is empty")
    a = buf.alphas
    logw = gamma_logpdf(a, candidate) - gamma_logpdf(a, current)
    top = np.max(logw)
    if not np.isfinite(top):
        raise DisjointSupportError("all importance weights are zero")
    w = np.exp(logw - top)
    return float(np.sum(w * buf.returns) / np.sum(w))


def interpolate(omega: GammaParams, target: GammaParams, t: float) -> GammaParams:
    """Point at fraction ``t`` of the straight line in (log k, log theta)."""
    if t >= 1.0:
        return target
    if t <= 0.0:
        return omega
    lk = (1.0 - t) * math.log(omega.k) + t * math.log(target.k)
    lt = (1.0 - t) * math.log(omega.theta) + t * math.log(target.theta)
    return GammaParams(math.exp(lk), math.exp(lt))


@dataclass(frozen=True)
class UpdateResult:
    params: GammaParams
    accepted: bool
    t: float
    kl_step: float
    estimate: float
    current_estimate: float


def curriculum_step(omega: GammaParams, cfg: CurriculumConfig, buf: PerfBuffer, t_tol: float = 1e-6) -> UpdateResult:
    """Constrained update with diagnostics; :func:`curriculum_update` returns only the parameters.

    The gate uses the current distribution. If it passes, bisection finds the
    largest ``t`` whose point keeps KL(new || old) <= epsilon and the
    importance-weighted return >= xi.
    """
    target = cfg.target
    if not isinstance(target, GammaParams):
        raise ValueError("curriculum target must be a GammaParams")
    current = estimate_expected_return(buf, omega, omega)
    if current < cfg.xi or omega == target:
        return UpdateResult(omega, False, 0.0, 0.0, current, current)

    def feasible(t):
        cand = interpolate(omega, target, t)
        if gamma_kl(cand, omega) > cfg.epsilon:
            return False
        try:
            return estimate_expected_return(buf, cand, omega) >= cfg.xi
        except DisjointSupportError:
            return False

    if feasible(1.0):
        t = 1.0
    else:
        lo, hi = 0.0, 1.0
        while hi - lo > t_tol:
            mid = 0.5 * (lo + hi)
            if feasible(mid):
                lo = mid
            else:
                hi = mid
        t = lo
    new = interpolate(omega, target, t)
    if t <= 0.0:
        return UpdateResult(omega, False, 0.0, 0.0, current, current)
    return UpdateResult(new, True, t, gamma_kl(new, omega), estimate_expected_return(buf, new, omega), current)


def curriculum_update(omega: GammaParams, cfg: CurriculumConfig, buf: PerfBuffer) -> GammaParams:
    return curriculum_step(omega, cfg, buf).params
