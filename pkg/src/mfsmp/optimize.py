"""Projected-gradient solver over nodal controls, plus an exhaustive grid oracle.

The iteration is u <- project(u - alpha * g) with g the adjoint-based gradient
(-H_u node by node) and alpha found by Armijo backtracking on the exact cost.
Boxes make the projection exact and cheap, and the predicted-decrease inner
product carries the node probabilities (the Euclidean gradient of the stacked
cost), so accepted steps decrease J monotonically.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import CostDomainError, MfsmpError, SimulationError
from .forward import cost
from .smp import adjoint_gradient
from .tree import AdaptedProcess, expect


@dataclass
class OptimizerOptions:
    max_iters: int = 500
    step_init: float = 1.0
    armijo_c: float = 1e-4
    shrink: float = 0.5
    grad_tol: float = 1e-8
    stall_tol: float = 1e-12
    seed: int | None = None

    def __post_init__(self):
        if not 0.0 < self.shrink < 1.0:
            raise MfsmpError("shrink factor must lie in (0, 1)")
        if not 0.0 < self.armijo_c < 1.0:
            raise MfsmpError("Armijo constant must lie in (0, 1)")


@dataclass(eq=False)
class OptimizeResult:
    u: AdaptedProcess
    cost: float
    iterations: int
    history: list = field(default_factory=list)  # rows [J, projected-gradient norm]
    reason: str = ""


def _project_control(spec, u: AdaptedProcess) -> AdaptedProcess:
    out = u.copy()
    for k in out.levels():
        out.set_level(k, spec.admissible.project(k, out.at(k)))
    return out


def _initial_control(spec, tree, options) -> AdaptedProcess:
    n_steps = tree.grid.n_steps
    if options.seed is None:
        return _project_control(spec, AdaptedProcess.zeros(tree, 0, n_steps, (spec.r,)))
    rng = np.random.default_rng(options.seed)
    u = AdaptedProcess.zeros(tree, 0, n_steps, (spec.r,))
    for k in range(n_steps + 1):
        lo = np.where(np.isfinite(spec.admissible.lo[k]), spec.admissible.lo[k], -1.0)
        hi = np.where(np.isfinite(spec.admissible.hi[k]), spec.admissible.hi[k], 1.0)
        u.set_level(k, rng.uniform(lo, hi, (tree.size(k), spec.r)))
    return _project_control(spec, u)


def _predicted_decrease(tree, u, trial, g) -> float:
    """<grad J, u - trial> in stacked coordinates (probability-weighted)."""
    total = 0.0
    for k in u.levels():
        per_node = np.einsum("ma,ma->m", g.at(k), u.at(k) - trial.at(k))
        total += float(expect(tree, per_node, k))
    return total


def _pg_norm(spec, u, g) -> float:
    """Sup norm of the unit-step projected gradient displacement."""
    worst = 0.0
    for k in u.levels():
        moved = spec.admissible.project(k, u.at(k) - g.at(k))
        worst = max(worst, float(np.max(np.abs(moved - u.at(k)), initial=0.0)))
    return worst


def _safe_cost(spec, tree, u) -> float:
    try:
        return cost(spec, tree, u)
    except (CostDomainError, SimulationError):
        return np.inf


def optimize(spec, tree, u0: AdaptedProcess | None = None,
             options: OptimizerOptions | None = None) -> OptimizeResult:
    options = options or OptimizerOptions()
    u = _project_control(spec, u0) if u0 is not None else _initial_control(spec, tree, options)
    j_val = _safe_cost(spec, tree, u)
    if not np.isfinite(j_val):
        raise CostDomainError("cost undefined at the (projected) initial control")
    history = []
    reason = "max-iters"
    iterations = 0
    for _ in range(options.max_iters):
        g = adjoint_gradient(spec, tree, u)
        pg = _pg_norm(spec, u, g)
        history.append([j_val, pg])
        if pg <= options.grad_tol:
            reason = "gradient-tolerance"
            break
        alpha = options.step_init
        accepted = False
        while alpha > 1e-16:
            trial = u.copy()
            for k in u.levels():
                trial.set_level(k, spec.admissible.project(k, u.at(k) - alpha * g.at(k)))
            predicted = _predicted_decrease(tree, u, trial, g)
            j_trial = _safe_cost(spec, tree, trial)
            if np.isfinite(j_trial) and j_trial <= j_val - options.armijo_c * predicted:
                accepted = True
                break
            alpha *= options.shrink
        if not accepted:
            reason = "line-search-failure"
            break
        iterations += 1
        decrease = j_val - j_trial
        u, j_val = trial, j_trial
        if decrease <= options.stall_tol:
            history.append([j_val, _pg_norm(spec, u, adjoint_gradient(spec, tree, u))])
            reason = "cost-stall"
            break
    else:
        history.append([j_val, _pg_norm(spec, u, adjoint_gradient(spec, tree, u))])
    return OptimizeResult(u=u, cost=j_val, iterations=iterations,
                          history=history, reason=reason)


def _batch_cost(spec, tree, controls) -> np.ndarray:
    """Exact cost of a batch of nodal controls.

    `controls` lists, per step k, an array (batch, m_k, r).  Mirrors the
    forward recursion with a leading batch axis; candidates whose running or
    terminal cost is undefined get +inf.
    """
    grid = tree.grid
    c = spec.coeffs
    n = spec.n
    h = grid.h
    bs = controls[0].shape[0]
    branch = tree.branch
    x = np.broadcast_to(spec.x0, (bs, 1, n)).copy()
    total = np.zeros(bs)
    for k in range(grid.n_steps + 1):
        m = tree.size(k)
        mean = np.einsum("bmn,m->bn", x, tree.abs_prob[k])
        xf = x.reshape(bs * m, n)
        yf = np.repeat(mean, m, axis=0)
        uf = controls[k].reshape(bs * m, spec.r)
        t = grid.time(k)
        lvals = np.asarray(c.l(t, xf, yf, uf)).reshape(bs, m)
        with np.errstate(invalid="ignore"):
            run = np.einsum("bm,m->b", lvals, tree.abs_prob[k])
        total = total + run
        drift = np.asarray(c.f(t, xf, yf, uf)).reshape(bs, m, n)
        diff = np.asarray(c.sigma(t, xf, yf, uf)).reshape(bs, m, spec.d, n)
        base = np.repeat(x + h * drift, branch, axis=1)
        diff_rep = np.repeat(diff, branch, axis=1)
        x = base + np.einsum("cj,bcjn->bcn", tree.increments[k + 1], diff_rep)
    kT = grid.n_steps + 1
    mT = tree.size(kT)
    meanT = np.einsum("bmn,m->bn", x, tree.abs_prob[kT])
    phi = np.asarray(c.phi(x.reshape(bs * mT, n), np.repeat(meanT, mT, axis=0))).reshape(bs, mT)
    total = total + np.einsum("bm,m->b", phi, tree.abs_prob[kT])
    return np.where(np.isfinite(total), total, np.inf)


def brute_force(spec, tree, grid_per_axis: int, comb_cap: int = 10 ** 7,
                chunk: int = 65536):
    """Exhaustively grid every nodal control coordinate over its box and return
    the best candidate with its exact cost.  Refuses unbounded boxes and
    combinatorial sizes beyond `comb_cap`."""
    if grid_per_axis < 1:
        raise MfsmpError("grid_per_axis must be >= 1")
    n_steps = tree.grid.n_steps
    axes = []       # (step, node, coord) -> grid values
    layout = []
    for k in range(n_steps + 1):
        lo, hi = spec.admissible.lo[k], spec.admissible.hi[k]
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise MfsmpError("brute force needs bounded admissible boxes")
        for node in range(tree.size(k)):
            for i in range(spec.r):
                vals = np.unique(np.linspace(lo[i], hi[i], grid_per_axis))
                axes.append(vals)
                layout.append((k, node, i))
    sizes = np.array([a.size for a in axes], dtype=np.int64)
    total = int(np.prod(sizes, dtype=np.int64))
    if total > comb_cap:
        raise MfsmpError(
            f"brute-force grid of {total} candidates exceeds the cap {comb_cap}")
    strides = np.ones(len(axes), dtype=np.int64)
    for j in range(len(axes) - 2, -1, -1):
        strides[j] = strides[j + 1] * sizes[j + 1]

    best_j = np.inf
    best_combo = None
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
        digits = (idx[:, None] // strides[None, :]) % sizes[None, :]
        controls = [np.zeros((idx.size, tree.size(k), spec.r)) for k in range(n_steps + 1)]
        for j, (k, node, i) in enumerate(layout):
            controls[k][:, node, i] = axes[j][digits[:, j]]
        costs = _batch_cost(spec, tree, controls)
        pos = int(np.argmin(costs))
        if costs[pos] < best_j:
            best_j = float(costs[pos])
            best_combo = digits[pos].copy()
    if best_combo is None or not np.isfinite(best_j):
        raise MfsmpError("brute force found no admissible candidate with finite cost")
    u = AdaptedProcess.zeros(tree, 0, n_steps, (spec.r,))
    for j, (k, node, i) in enumerate(layout):
        u.at(k)[node, i] = axes[j][best_combo[j]]
    return u, best_j
