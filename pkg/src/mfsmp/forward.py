"""Exact forward simulation of the controlled mean-field system and its cost.

Levels are processed breadth-first: the level mean enters every node's step,
so it must be available before any child state is computed.  On a finite tree
the simulated level means coincide (to roundoff) with the deterministic mean
recursion, because the diffusion terms have exactly zero conditional mean.
"""

from dataclasses import dataclass

import numpy as np

from .errors import CostDomainError, MfsmpError, SimulationError
from .tree import AdaptedProcess, ScenarioTree, expect


@dataclass(eq=False)
class StateTrajectory:
    """Adapted state process over levels 0..N+1 plus its per-level mean."""

    states: AdaptedProcess
    means: np.ndarray  # (N+2, n)

    def at(self, level):
        return self.states.at(level)


def check_feasible(spec, tree, u: AdaptedProcess, tol: float = 1e-9):
    """Raise if the control leaves its admissible box anywhere (beyond tol)."""
    if u.first_level != 0 or u.last_level != tree.grid.n_steps:
        raise MfsmpError("control process must cover levels 0..N")
    if u.value_shape != (spec.r,):
        raise MfsmpError(f"control values must have shape ({spec.r},), got {u.value_shape}")
    for k in u.levels():
        viol = spec.admissible.violation(k, u.at(k))
        if viol > tol:
            raise MfsmpError(f"control violates admissible box at step {k} by {viol:.3e}")


def constant_control(spec, tree, value) -> AdaptedProcess:
    value = np.broadcast_to(np.asarray(value, dtype=float), (spec.r,))
    return AdaptedProcess.constant(tree, 0, tree.grid.n_steps, value)


def simulate(spec, tree: ScenarioTree, u: AdaptedProcess, validate: bool = True) -> StateTrajectory:
    """Run the state recursion node by node; exact on the tree."""
    if validate:
        check_feasible(spec, tree, u)
    grid = tree.grid
    n = spec.n
    h = grid.h
    c = spec.coeffs
    states = AdaptedProcess.zeros(tree, 0, grid.n_steps + 1, (n,))
    means = np.zeros((grid.n_levels, n))
    states.set_level(0, np.broadcast_to(spec.x0, (1, n)))
    for k in range(grid.n_steps + 1):
        x = states.at(k)
        mean = expect(tree, x, k)
        means[k] = mean
        y = np.broadcast_to(mean, x.shape)
        uk = u.at(k)
        t = grid.time(k)
        with np.errstate(over="ignore", invalid="ignore"):
            drift = c.f(t, x, y, uk)
            diff = c.sigma(t, x, y, uk)          # (m, d, n)
            base = x + h * drift                 # (m, n)
            child_inc = tree.increments[k + 1]   # (m*branch, d)
            child = (np.repeat(base, tree.branch, axis=0)
                     + np.einsum("cj,cjn->cn", child_inc,
                                 np.repeat(diff, tree.branch, axis=0)))
        if not np.all(np.isfinite(child)):
            raise SimulationError(f"non-finite state at level {k + 1}", level=k + 1)
        states.set_level(k + 1, child)
    means[grid.n_steps + 1] = expect(tree, states.at(grid.n_steps + 1), grid.n_steps + 1)
    return StateTrajectory(states, means)


def running_costs(spec, tree, u, traj) -> list[np.ndarray]:
    """Per-level running cost values l(t_k, x, Ex, u); raises on undefined nodes."""
    c = spec.coeffs
    out = []
    for k in range(tree.grid.n_steps + 1):
        x = traj.at(k)
        y = np.broadcast_to(traj.means[k], x.shape)
        vals = c.l(tree.grid.time(k), x, y, u.at(k))
        if not np.all(np.isfinite(vals)):
            node = int(np.flatnonzero(~np.isfinite(vals))[0])
            raise CostDomainError(
                f"running cost undefined at level {k}, node {node}", level=k, node=node)
        out.append(vals)
    return out


def cost(spec, tree, u: AdaptedProcess, traj: StateTrajectory | None = None,
         validate: bool = True) -> float:
    """Expected cost J (minimization sign; maximize problems were negated at build)."""
    if traj is None:
        traj = simulate(spec, tree, u, validate=validate)
    total = 0.0
    for k, vals in enumerate(running_costs(spec, tree, u, traj)):
        total += float(expect(tree, vals, k))
    kT = tree.grid.n_steps + 1
    xT = traj.at(kT)
    yT = np.broadcast_to(traj.means[kT], xT.shape)
    terminal = spec.coeffs.phi(xT, yT)
    if not np.all(np.isfinite(terminal)):
        node = int(np.flatnonzero(~np.isfinite(terminal))[0])
        raise CostDomainError(
            f"terminal cost undefined at node {node}", level=kT, node=node)
    return total + float(expect(tree, terminal, kT))


def mean_recursion_residual(spec, tree, u, traj) -> float:
    """Largest gap between tree-level means and the deterministic mean recursion."""
    grid = tree.grid
    mean = spec.x0.copy()
    worst = float(np.max(np.abs(traj.means[0] - mean)))
    for k in range(grid.n_steps + 1):
        x = traj.at(k)
        y = np.broadcast_to(traj.means[k], x.shape)
        drift_mean = expect(tree, spec.coeffs.f(grid.time(k), x, y, u.at(k)), k)
        mean = mean + grid.h * drift_mean
        worst = max(worst, float(np.max(np.abs(traj.means[k + 1] - mean))))
    return worst
