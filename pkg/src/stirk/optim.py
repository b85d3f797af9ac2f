"""Adam and L-BFGS on flat parameter vectors."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


def pack(arrays) -> np.ndarray:
    return np.concatenate([np.ravel(a) for a in arrays]) if arrays else np.zeros(0)


def unpack(vec, like):
    out, i = [], 0
    for a in like:
        out.append(vec[i:i + a.size].reshape(a.shape).copy())
        i += a.size
    return out


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None


def adam_step(state: AdamState, w, g, lr):
    """One bias-corrected Adam update; returns the new parameter vector."""
    if state.m is None:
        state.m = np.zeros_like(w)
        state.v = np.zeros_like(w)
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    mhat = state.m / (1.0 - state.beta1 ** state.t)
    vhat = state.v / (1.0 - state.beta2 ** state.t)
    return w - lr * mhat / (np.sqrt(vhat) + state.eps)


@dataclass
class LBFGSState:
    """Curvature memory and bookkeeping for :func:`lbfgs_step`."""

    memory: int = 10
    lr: float = 1.0
    c1: float = 1e-4
    c2: float = 0.9
    tolerance_grad: float = 1e-12
    max_ls: int = 25
    s: deque = field(default_factory=deque)
    y: deque = field(default_factory=deque)
    iterations: int = 0
    evaluations: int = 0
    events: list = field(default_factory=list)

    def __post_init__(self):
        self.s = deque(self.s, maxlen=self.memory)
        self.y = deque(self.y, maxlen=self.memory)


def two_loop(g, s_hist, y_hist):
    """Apply the inverse-Hessian approximation to ``g``."""
    q = g.copy()
    alphas = []
    rhos = [1.0 / (y @ s) for s, y in zip(s_hist, y_hist)]
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rhos)):
        a = rho * (s @ q)
        q -= a * y
        alphas.append(a)
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(zip(s_hist, y_hist, rhos), reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def _cubic_min(x1, f1, g1, x2, f2, g2, lo, hi):
    """Minimizer of the cubic through two points with slopes, clipped to ``[lo, hi]``."""
    d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2)
    disc = d1 * d1 - g1 * g2
    if disc >= 0.0:
        d2 = np.sqrt(disc) * np.sign(x2 - x1)
        den = g2 - g1 + 2.0 * d2
        if den != 0.0:
            x = x2 - (x2 - x1) * ((g2 + d2 - d1) / den)
            if np.isfinite(x):
                return min(max(x, lo), hi)
    return 0.5 * (lo + hi)


def strong_wolfe(fg, w, f0, g0, d, alpha, c1=1e-4, c2=0.9, max_iter=25):
    """Strong-Wolfe line search along ``d``.

    Returns ``(alpha, f, g, evaluations, ok)``. When the conditions cannot be
    met the best sufficient-decrease point found is returned with ``ok=False``
    (``alpha = 0`` if there is none).
    """
    dphi0 = float(g0 @ d)
    evals = 0
    a_prev, f_prev, dphi_prev, g_prev = 0.0, f0, dphi0, g0
    best = (0.0, f0, g0)

    def zoom(a_lo, f_lo, dphi_lo, g_lo, a_hi, f_hi, dphi_hi):
        nonlocal evals
        for _ in range(max_iter):
            lo, hi = min(a_lo, a_hi), max(a_lo, a_hi)
            if hi - lo < 1e-14 * max(1.0, hi):
                break
            width = hi - lo
            a = _cubic_min(a_lo, f_lo, dphi_lo, a_hi, f_hi, dphi_hi, lo + 0.1 * width, hi - 0.1 * width)
            f, g = fg(w + a * d)
            evals += 1
            dphi = float(g @ d)
            if not np.isfinite(f) or f > f0 + c1 * a * dphi0 or f >= f_lo:
                a_hi, f_hi, dphi_hi = a, f, dphi
            else:
                if abs(dphi) <= -c2 * dphi0:
                    return a, f, g, True
                if dphi * (a_hi - a_lo) >= 0:
                    a_hi, f_hi, dphi_hi = a_lo, f_lo, dphi_lo
                a_lo, f_lo, dphi_lo, g_lo = a, f, dphi, g
        return a_lo, f_lo, g_lo, False

    for i in range(max_iter):
        f, g = fg(w + alpha * d)
        evals += 1
        dphi = float(g @ d) if np.isfinite(f) else np.nan
        if not np.isfinite(f) or f > f0 + c1 * alpha * dphi0 or (i > 0 and f >= f_prev):
            if not np.isfinite(f):
                f, dphi = np.inf, 0.0
            a, fa, ga, ok = zoom(a_prev, f_prev, dphi_prev, g_prev, alpha, f, dphi)
            return a, fa, ga, evals, ok
        if abs(dphi) <= -c2 * dphi0:
            return alpha, f, g, evals, True
        if dphi >= 0:
            a, fa, ga, ok = zoom(alpha, f, dphi, g, a_prev, f_prev, dphi_prev)
            return a, fa, ga, evals, ok
        best = (alpha, f, g)
        lo, hi = alpha + 0.01 * (alpha - a_prev), 10.0 * alpha
        nxt = _cubic_min(a_prev, f_prev, dphi_prev, alpha, f, dphi, lo, hi)
        a_prev, f_prev, dphi_prev, g_prev = alpha, f, dphi, g
        alpha = nxt
    return best[0], best[1], best[2], evals, False


def lbfgs_step(state: LBFGSState, w, fg, f=None, g=None):
    """One L-BFGS iteration on the closure ``fg(w) -> (loss, grad)``.

    Returns ``(w_new, f_new, g_new)``. The loss never increases: a failed line
    search keeps ``w``, logs an event and clears the curvature memory.
    """
    if f is None or g is None:
        f, g = fg(w)
        state.evaluations += 1
    if not np.any(np.abs(g) > state.tolerance_grad):
        return w, f, g
    d = -two_loop(g, list(state.s), list(state.y))
    if not g @ d < 0:
        state.s.clear()
        state.y.clear()
        d = -g
    if state.iterations == 0 and not state.s:
        alpha0 = state.lr * min(1.0, 1.0 / np.abs(g).sum())
    else:
        alpha0 = state.lr
    alpha, f_new, g_new, evals, ok = strong_wolfe(fg, w, f, g, d, alpha0, state.c1, state.c2, state.max_ls)
    state.evaluations += evals
    state.iterations += 1
    if alpha == 0.0 or not f_new <= f:
        state.events.append({"iteration": state.iterations, "event": "line-search-failure"})
        log.debug("L-BFGS line search failed at iteration %d", state.iterations)
        state.s.clear()
        state.y.clear()
        return w, f, g
    if not ok:
        state.events.append({"iteration": state.iterations, "event": "weak-step"})
    w_new = w + alpha * d
    s, y = w_new - w, g_new - g
    if s @ y > 1e-10 * np.sqrt((s @ s) * (y @ y)):
        state.s.append(s)
        state.y.append(y)
    return w_new, f_new, g_new
