"""Adam, L-BFGS with backtracking line search, and conjugate gradients."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ContractError, NumericalError


# --- Adam -----------------------------------------------------------------

@dataclass(frozen=True)
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: tuple = ()
    v: tuple = ()

    def __post_init__(self):
        if not self.lr > 0:
            raise ContractError(f"learning rate must be > 0, got {self.lr}")

    @classmethod
    def for_params(cls, params, **hyper):
        zeros = tuple(np.zeros_like(np.asarray(p, dtype=np.float64)) for p in params)
        return cls(m=zeros, v=zeros, **hyper)


def adam_step(params, grads, state):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``; inputs are not mutated."""
    params = [np.asarray(p, dtype=np.float64) for p in params]
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ContractError(f"adam_step got {len(params)} params, {len(grads)} grads, "
                            f"{len(state.m)} moment slots")
    for i, (p, g, m) in enumerate(zip(params, grads, state.m)):
        if p.shape != g.shape or p.shape != m.shape:
            raise ContractError(f"adam_step shape mismatch at slot {i}: param {p.shape}, "
                                f"grad {g.shape}, moment {m.shape}")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        mhat = m / c1
        vhat = v / c2
        new_p.append(p - state.lr * mhat / (np.sqrt(vhat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, replace(state, step=t, m=tuple(new_m), v=tuple(new_v))


# --- L-BFGS ---------------------------------------------------------------

@dataclass
class LbfgsState:
    memory: int = 10
    c1: float = 1e-4
    shrink: float = 0.5
    max_trials: int = 20
    s_hist: deque = field(default_factory=deque)
    y_hist: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.memory < 1:
            raise ContractError("L-BFGS memory must be a positive integer")

    def push(self, s, y):
        sy = float(s @ y)
        # curvature condition; skipped pairs would break positive-definiteness
        if sy <= 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            return False
        self.s_hist.append(s)
        self.y_hist.append(y)
        while len(self.s_hist) > self.memory:
            self.s_hist.popleft()
            self.y_hist.popleft()
        return True

    def clear(self):
        self.s_hist.clear()
        self.y_hist.clear()

    def direction(self, g):
        """Two-loop recursion: returns -H g."""
        q = g.copy()
        alphas = []
        for s, y in zip(reversed(self.s_hist), reversed(self.y_hist)):
            rho = 1.0 / (y @ s)
            a = rho * (s @ q)
            q -= a * y
            alphas.append((rho, a))
        if self.s_hist:
            s, y = self.s_hist[-1], self.y_hist[-1]
            q *= (s @ y) / (y @ y)
        for (s, y), (rho, a) in zip(zip(self.s_hist, self.y_hist), reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        return -q


@dataclass
class LbfgsResult:
    x: np.ndarray
    history: list
    converged: bool
    line_search_failed: bool
    iterations: int
    grad_norm: float


def _acceptable(f_new, g_new, f, gnorm, step, slope, c1):
    if not np.isfinite(f_new):
        return False
    if f_new <= f + c1 * step * slope and f_new < f:
        return True
    # below the resolution of f, fall back to requiring a smaller gradient
    # without any increase in f (keeps the history non-increasing)
    return (f_new <= f and f - f_new <= 1e-13 * max(1.0, abs(f))
            and float(np.linalg.norm(g_new)) < gnorm)


def lbfgs_minimize(fun, x0, max_iters=100, grad_tol=1e-8, state=None):
    """Minimize ``fun(x) -> (value, gradient)`` from ``x0``.

    Every accepted step satisfies the Armijo condition (or, once decreases
    drop below the floating-point resolution of f, leaves f unchanged while
    shrinking the gradient), so ``history`` (one entry per accepted iterate,
    starting with ``f(x0)``) never increases. An acceptable trial step is
    refined once by a secant step on the directional derivative, which makes
    the search exact on quadratics. A failed line search stops early and
    returns the best iterate with ``line_search_failed=True``.
    """
    if max_iters < 1:
        raise ContractError("max_iters must be a positive integer")
    if not grad_tol > 0:
        raise ContractError("grad_tol must be > 0")
    state = state if state is not None else LbfgsState()
    x = np.array(x0, dtype=np.float64).ravel()
    f, g = fun(x)
    f = float(f)
    g = np.asarray(g, dtype=np.float64).ravel()
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NumericalError("objective is not finite at the starting point")
    history = [f]
    failed = False
    it = 0
    gnorm = float(np.linalg.norm(g))
    while it < max_iters and gnorm > grad_tol:
        d = state.direction(g)
        slope = float(g @ d)
        if not slope < 0:
            state.clear()
            d = -g
            slope = float(g @ d)
        step = 1.0 if state.s_hist else min(1.0, 1.0 / gnorm)
        best = None
        for _ in range(state.max_trials):
            f_try, g_try = fun(x + step * d)
            f_try = float(f_try)
            trials = [(f_try, step, g_try)]
            if _acceptable(f_try, g_try, f, gnorm, step, slope, state.c1):
                # refine an acceptable step with the secant root of the directional
                # derivative; exact minimizer on quadratics
                dslope = float(np.ravel(g_try) @ d)
                if dslope > slope:
                    step_q = step * slope / (slope - dslope)
                    if abs(step_q - step) > 1e-12 * step:
                        f_q, g_q = fun(x + step_q * d)
                        trials.append((float(f_q), step_q, g_q))
            for cand in trials:
                if not _acceptable(cand[0], cand[2], f, gnorm, cand[1], slope, state.c1):
                    continue
                if best is None or cand[0] < best[0]:
                    best = (cand[0], cand)
            if best is not None:
                break
            step *= state.shrink
        if best is None:
            failed = True
            break
        f_new, step, g_new = best[1]
        x_new = x + step * d
        g_new = np.asarray(g_new, dtype=np.float64).ravel()
        if not state.push(x_new - x, g_new - g):
            # a stale model keeps proposing the same bad direction; restart it
            state.clear()
        x, f, g = x_new, f_new, g_new
        gnorm = float(np.linalg.norm(g))
        history.append(f)
        it += 1
    return LbfgsResult(x=x, history=history, converged=gnorm <= grad_tol,
                       line_search_failed=failed, iterations=it, grad_norm=gnorm)


# --- conjugate gradients --------------------------------------------------

@dataclass
class CgResult:
    x: np.ndarray
    converged: bool
    iterations: int
    residual_norm: float


def cg_solve(apply_A, b, tol=1e-8, max_iter=None, x0=None):
    """Solve ``A x = b`` for symmetric positive-definite ``A`` given as a matvec.

    Convergence is declared only when the recomputed true residual satisfies
    ``||A x - b|| <= tol * ||b||``.
    """
    b = np.asarray(b, dtype=np.float64)
    shape = b.shape
    b = b.ravel()
    n = b.size
    max_iter = 10 * max(n, 1) if max_iter is None else int(max_iter)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return CgResult(np.zeros(shape), True, 0, 0.0)
    A = lambda v: np.asarray(apply_A(v.reshape(shape)), dtype=np.float64).ravel()  # noqa: E731
    target = tol * bnorm
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64).ravel()
    r = b - A(x)
    p = r.copy()
    rr = float(r @ r)
    it = 0
    while it < max_iter:
        if np.sqrt(rr) <= target:
            true_r = float(np.linalg.norm(b - A(x)))
            if true_r <= target:
                return CgResult(x.reshape(shape), True, it, true_r)
            r = b - A(x)
            p = r.copy()
            rr = float(r @ r)
        Ap = A(p)
        pAp = float(p @ Ap)
        if not pAp > 0:
            raise NumericalError(f"CG breakdown: p^T A p = {pAp:.3e} <= 0 (operator not SPD)")
        alpha = rr / pAp
        x = x + alpha * p
        r = r - alpha * Ap
        rr_new = float(r @ r)
        p = r + (rr_new / rr) * p
        rr = rr_new
        it += 1
    true_r = float(np.linalg.norm(b - A(x)))
    return CgResult(x.reshape(shape), true_r <= target, it, true_r)
