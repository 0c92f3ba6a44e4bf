"""Quasi-Newton SQP driver over the reduced design variables.

Each iteration solves a box-constrained quadratic subproblem built from a
damped-BFGS Hessian approximation, takes an Armijo-backtracking step, and
applies the stopping policy: objective limit, projected-gradient
optimality, global iteration/evaluation caps, and a step-tolerance rule
that triggers level-set reinitialization (when available) instead of
stopping until four consecutive failures.  A schedule also reinitializes
every fixed number of iterations or function evaluations.  The best-seen
iterate is returned, not the last.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from igatop.errors import ConfigError
from igatop.levelset import DesignField, reinitialize
from igatop.objectives import HeatProblem, ObjectiveValue, eval_total

__all__ = [
    "SqpConfig",
    "SqpState",
    "IterationRecord",
    "solve_qp_subproblem",
    "line_search",
    "bfgs_update",
    "check_stop",
    "minimize",
    "optimize",
]


@dataclass
class SqpConfig:
    objective_limit: float = 1.0e-9
    step_tolerance: float = 1.0e-8
    optimality_tolerance: float = 1.0e-6
    max_iterations: int = 500
    max_function_evaluations: int = 5000
    lower: float | np.ndarray | None = None
    upper: float | np.ndarray | None = None
    reinit_every_iters: int | None = 10
    reinit_every_fevals: int | None = 100
    consecutive_steptol_stop: int = 4
    armijo_c1: float = 1.0e-4
    alpha_min: float = 1.0e-10

    def __post_init__(self):
        for name in ("objective_limit", "step_tolerance", "optimality_tolerance"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")

    def bounds_for(self, n: int):
        lo = self.lower if self.lower is not None else -np.inf
        hi = self.upper if self.upper is not None else np.inf
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (n,)).copy()
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (n,)).copy()
        if np.any(lo > hi):
            raise ConfigError("lower bounds exceed upper bounds")
        return lo, hi


@dataclass
class IterationRecord:
    iteration: int
    fevals: int
    j_main: float
    j_tknv: float
    j_vol: float
    j_total: float
    grad_inf: float
    step_norm: float
    alpha: float
    event: str = ""


@dataclass
class SqpState:
    x: np.ndarray
    g: np.ndarray
    H: np.ndarray
    j_total: float
    iteration: int = 0
    fevals: int = 0
    round_iters: int = 0
    round_fevals: int = 0
    steptol_streak: int = 0
    best_x: np.ndarray = None
    best_j: float = np.inf
    history: list = dc_field(default_factory=list)


def solve_qp_subproblem(g, H, lower, upper, x, tol=1e-12):
    """Minimize g.p + p.H.p/2 subject to bounds on x + p (primal active set).

    H must be symmetric positive definite; the iteration adds blocking
    bounds one at a time and releases bounds with negative multipliers.
    """
    n = g.size
    lo = lower - x
    hi = upper - x
    p = np.clip(np.zeros(n), lo, hi)
    act_lo = p <= lo
    act_hi = p >= hi
    scale = max(np.abs(g).max(), 1.0)
    for _ in range(4 * n + 16):
        free = ~(act_lo | act_hi)
        grad_p = g + H @ p
        d = np.zeros(n)
        if np.any(free):
            idx = np.where(free)[0]
            d[idx] = np.linalg.solve(H[np.ix_(idx, idx)], -grad_p[idx])
        if (np.abs(d).max() if d.size else 0.0) <= tol * max(1.0, np.abs(p).max()):
            lam_lo = grad_p[act_lo]
            lam_hi = -grad_p[act_hi]
            ok_lo = lam_lo.size == 0 or lam_lo.min() >= -tol * scale
            ok_hi = lam_hi.size == 0 or lam_hi.min() >= -tol * scale
            if ok_lo and ok_hi:
                return p
            # release the most violated bound
            cand = []
            if lam_lo.size:
                i = np.where(act_lo)[0][np.argmin(lam_lo)]
                cand.append((lam_lo.min(), i, "lo"))
            if lam_hi.size:
                i = np.where(act_hi)[0][np.argmin(lam_hi)]
                cand.append((lam_hi.min(), i, "hi"))
            _, i, side = min(cand)
            (act_lo if side == "lo" else act_hi)[i] = False
            continue
        # largest feasible step along d
        alpha = 1.0
        blocking = None
        pos = d > tol * scale / max(scale, 1.0)
        neg = d < -tol * scale / max(scale, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            a_hi = np.where(pos, (hi - p) / d, np.inf)
            a_lo = np.where(neg, (lo - p) / d, np.inf)
        a_all = np.minimum(a_hi, a_lo)
        i_min = int(np.argmin(a_all))
        if a_all[i_min] < alpha:
            alpha = max(a_all[i_min], 0.0)
            blocking = (i_min, "hi" if a_hi[i_min] <= a_lo[i_min] else "lo")
        p = np.clip(p + alpha * d, lo, hi)
        if blocking is not None:
            i, side = blocking
            (act_hi if side == "hi" else act_lo)[i] = True
        else:
            # full step taken; loop back to verify optimality/multipliers
            continue
    return p


def line_search(f, x, p, f0, gtp, cfg: SqpConfig):
    """Armijo backtracking from alpha = 1; returns (alpha, f_new, n_evals) or None."""
    if gtp >= 0:
        return None
    alpha = 1.0
    n_evals = 0
    while alpha >= cfg.alpha_min:
        f_new = f(x + alpha * p)
        n_evals += 1
        if f_new <= f0 + cfg.armijo_c1 * alpha * gtp:
            return alpha, f_new, n_evals
        alpha *= 0.5
    return None


def bfgs_update(H, s, y):
    """Damped BFGS (Powell's rule): keeps the approximation positive definite."""
    s = np.asarray(s, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.linalg.norm(s) == 0.0:
        return H
    Hs = H @ s
    sHs = float(s @ Hs)
    sy = float(s @ y)
    if sy < 0.2 * sHs:
        theta = 0.8 * sHs / (sHs - sy)
        y = theta * y + (1.0 - theta) * Hs
        sy = float(s @ y)
    return H - np.outer(Hs, Hs) / sHs + np.outer(y, y) / sy


def projected_grad_inf(x, g, lower, upper):
    pg = g.copy()
    fin_lo = np.isfinite(lower)
    fin_hi = np.isfinite(upper)
    at_lo = fin_lo & (x <= np.where(fin_lo, lower, -np.inf) + 1e-14 * np.maximum(1.0, np.abs(x)))
    at_hi = fin_hi & (x >= np.where(fin_hi, upper, np.inf) - 1e-14 * np.maximum(1.0, np.abs(x)))
    pg[at_lo] = np.minimum(g[at_lo], 0.0)
    pg[at_hi] = np.maximum(g[at_hi], 0.0)
    return float(np.abs(pg).max()) if pg.size else 0.0


def check_stop(state: SqpState, cfg: SqpConfig, lower, upper, can_reinit: bool):
    """Stopping decision: 'continue', 'reinit', or ('stop', reason)."""
    if state.j_total <= cfg.objective_limit:
        return ("stop", "objective_limit")
    if projected_grad_inf(state.x, state.g, lower, upper) <= cfg.optimality_tolerance:
        return ("stop", "optimality")
    if state.iteration >= cfg.max_iterations:
        return ("stop", "max_iterations")
    if state.fevals >= cfg.max_function_evaluations:
        return ("stop", "max_function_evaluations")
    if state.steptol_streak >= cfg.consecutive_steptol_stop:
        return ("stop", "step_tolerance")
    if can_reinit and cfg.reinit_every_iters and state.round_iters >= cfg.reinit_every_iters:
        return "reinit"
    if can_reinit and cfg.reinit_every_fevals and state.round_fevals >= cfg.reinit_every_fevals:
        return "reinit"
    return "continue"


def _hessian_reset(g: np.ndarray) -> np.ndarray:
    scale = np.clip(np.abs(g).max(), 1e-8, 1e8)
    return scale * np.eye(g.size)


def minimize(fun, x0, cfg: SqpConfig, reinit_hook=None, record_hook=None):
    """Core SQP loop over fun(x) -> (j_total, gradient, aux).

    reinit_hook(x) -> x_new restores the level-set scaling; when absent, a
    step-tolerance failure stops immediately.  Returns
    (best_x, state, stop_reason).
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    lower, upper = cfg.bounds_for(n)
    x = np.clip(x0, lower, upper)

    j, g, aux = fun(x)
    state = SqpState(x=x, g=g, H=_hessian_reset(g), j_total=j, fevals=1)
    state.best_x, state.best_j = x.copy(), j
    _record(state, cfg, aux, 0.0, 0.0, "start", record_hook)

    can_reinit = reinit_hook is not None

    def do_reinit():
        x_new = reinit_hook(state.x)
        j_new, g_new, aux_new = fun(x_new)
        state.fevals += 1
        state.x, state.g, state.j_total = x_new, g_new, j_new
        state.H = _hessian_reset(g_new)
        state.round_iters = 0
        state.round_fevals = 0
        if j_new < state.best_j:
            state.best_j, state.best_x = j_new, x_new.copy()
        _record(state, cfg, aux_new, 0.0, 0.0, "reinit", record_hook)

    stop_reason = None
    while True:
        decision = check_stop(state, cfg, lower, upper, can_reinit)
        if decision == "continue":
            pass
        elif decision == "reinit":
            do_reinit()
            state.steptol_streak = 0
            continue
        else:
            stop_reason = decision[1]
            break

        p = solve_qp_subproblem(state.g, state.H, lower, upper, state.x)
        gtp = float(state.g @ p)
        aux_box = {}

        def f_only(xt):
            jt, gt, at = fun(xt)
            state.fevals += 1
            state.round_fevals += 1
            aux_box[xt.tobytes()] = (jt, gt, at)
            return jt

        ls = line_search(f_only, state.x, p, state.j_total, gtp, cfg)
        state.iteration += 1
        state.round_iters += 1
        if ls is not None:
            alpha, j_new, _ = ls
            s = alpha * p
            x_new = state.x + s
            j_new, g_new, aux = aux_box[x_new.tobytes()]
            state.H = bfgs_update(state.H, s, g_new - state.g)
            state.x, state.g, state.j_total = x_new, g_new, j_new
            if j_new < state.best_j:
                state.best_j, state.best_x = j_new, x_new.copy()
            small = np.abs(s).max() <= cfg.step_tolerance
            _record(state, cfg, aux, float(np.abs(s).max()), alpha,
                    "steptol" if small else "", record_hook)
            if not small:
                state.steptol_streak = 0
                continue
        else:
            _record(state, cfg, None, 0.0, 0.0, "steptol", record_hook)

        # step-tolerance failure: reinitialize and restart, or give up
        state.steptol_streak += 1
        if not can_reinit:
            stop_reason = "step_tolerance"
            break
        if state.steptol_streak < cfg.consecutive_steptol_stop:
            do_reinit()

    state.history.append(("stop", stop_reason))
    return state.best_x, state, stop_reason


def _record(state, cfg, aux, step_norm, alpha, event, hook):
    if isinstance(aux, ObjectiveValue):
        jm, jt, jv = aux.j_main, aux.j_tknv, aux.j_vol
    else:
        jm, jt, jv = state.j_total, 0.0, 0.0
    rec = IterationRecord(
        iteration=state.iteration,
        fevals=state.fevals,
        j_main=jm,
        j_tknv=jt,
        j_vol=jv,
        j_total=state.j_total,
        grad_inf=float(np.abs(state.g).max()) if state.g.size else 0.0,
        step_norm=step_norm,
        alpha=alpha,
        event=event,
    )
    state.history.append(rec)
    if hook is not None:
        hook(rec, state)


def optimize(
    problem: HeatProblem,
    field0: DesignField,
    cfg: SqpConfig,
    use_reinit: bool = True,
    lines_per_span: int = 20,
    record_hook=None,
):
    """Full level-set optimization; returns (best field, state, stop reason)."""
    from dataclasses import replace as _replace

    sym = problem.sym
    if cfg.lower is None or cfg.upper is None:
        # default box: signed-distance magnitudes cannot exceed the diameter
        d = problem.disc.model.diameter()
        cfg = _replace(
            cfg,
            lower=-d if cfg.lower is None else cfg.lower,
            upper=d if cfg.upper is None else cfg.upper,
        )

    cache = {}

    def fun(x):
        key = x.tobytes()
        if key not in cache:
            val = eval_total(problem, problem.field(sym.expand(x)))
            cache[key] = (val.j_total, val.grad_reduced, val)
            if len(cache) > 8:
                cache.pop(next(iter(cache)))
        return cache[key]

    reinit_hook = None
    if use_reinit:
        def reinit_hook(x):
            fld = problem.field(sym.expand(x))
            fld2 = reinitialize(fld, problem.quad, lines_per_span)
            return sym.reduce_coeffs(fld2.coeffs)

    x0 = sym.reduce_coeffs(field0.coeffs)
    best_x, state, reason = minimize(fun, x0, cfg, reinit_hook, record_hook)
    best = problem.field(sym.expand(best_x))
    return best, state, reason
