"""Finite scenario trees: exact filtered probability spaces for discrete-time noise.

A tree realizes the noise lattice of a discrete-time system on times
t_k = t0 + k*h, k = 0..N+1.  Edges from level k to k+1 carry the step-k noise
increment (a point of the joint finite support) and its conditional
probability, so every expectation and conditional expectation is an exact
finite sum.  Increments are indexed by the step k = 0..N and stored on the
child level k+1 they generate.
"""

from dataclasses import dataclass
import itertools

import numpy as np

from .errors import MfsmpError, TreeSizeError
from .report import CheckReport

DEFAULT_NODE_CAP = 1_000_000


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = t0 + k*h with N control steps (states live on 0..N+1)."""

    t0: float
    h: float
    n_steps: int

    def __post_init__(self):
        if not self.h > 0:
            raise MfsmpError(f"step size must be positive, got h={self.h}")
        if self.n_steps < 0:
            raise MfsmpError(f"number of control steps must be >= 0, got {self.n_steps}")

    @property
    def n_levels(self) -> int:
        return self.n_steps + 2

    def time(self, k: int) -> float:
        return self.t0 + k * self.h

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(self.n_levels)


class NoiseModel:
    """Finite-support law of one noise increment, satisfying the moment conditions.

    Each of the `dim` components is an independent scalar with zero mean and
    second moment equal to the grid step; joint increments are the product
    distribution, which makes cross second moments h times the identity.
    """

    def __init__(self, dim, step, values, probs, kind="custom", params=None):
        if dim < 1:
            raise MfsmpError(f"noise dimension must be >= 1, got {dim}")
        if len(values) != dim or len(probs) != dim:
            raise MfsmpError("need one support per noise component")
        self.dim = int(dim)
        self.step = float(step)
        self.values = tuple(np.asarray(v, dtype=float) for v in values)
        self.probs = tuple(np.asarray(p, dtype=float) for p in probs)
        self.kind = kind
        self.params = dict(params or {})
        for j, (v, p) in enumerate(zip(self.values, self.probs)):
            if v.ndim != 1 or p.shape != v.shape or v.size == 0:
                raise MfsmpError(f"component {j}: support and probabilities must be equal-length 1-d")
            if np.any(p <= 0.0):
                raise MfsmpError(f"component {j}: probabilities must be positive")
            if abs(p.sum() - 1.0) > 1e-12:
                raise MfsmpError(f"component {j}: probabilities sum to {p.sum()!r}, not 1")

    @classmethod
    def binary(cls, dim, step):
        """Symmetric two-point law +-sqrt(h), the minimal admissible increment."""
        a = np.sqrt(step)
        return cls(
            dim,
            step,
            [np.array([a, -a])] * dim,
            [np.array([0.5, 0.5])] * dim,
            kind="binary",
        )

    @classmethod
    def trinomial(cls, dim, step, p=0.25):
        """Three-point law {-a, 0, +a} with P(+-a) = p and 2*p*a^2 = h."""
        if not 0.0 < p < 0.5:
            raise MfsmpError(f"trinomial tail probability must lie in (0, 0.5), got {p}")
        a = np.sqrt(step / (2.0 * p))
        return cls(
            dim,
            step,
            [np.array([-a, 0.0, a])] * dim,
            [np.array([p, 1.0 - 2.0 * p, p])] * dim,
            kind="trinomial",
            params={"p": float(p)},
        )

    @classmethod
    def from_support(cls, dim, step, support):
        """Custom per-component support given as [(value, prob), ...] (shared by all components)."""
        vals = np.array([s[0] for s in support], dtype=float)
        prb = np.array([s[1] for s in support], dtype=float)
        return cls(dim, step, [vals] * dim, [prb] * dim,
                   kind="custom", params={"support": [[float(v), float(p)] for v, p in support]})

    @property
    def branch_count(self) -> int:
        out = 1
        for v in self.values:
            out *= v.size
        return out

    def joint_support(self):
        """Product law across components: (values (B, dim), probs (B,))."""
        grids = list(itertools.product(*[range(v.size) for v in self.values]))
        vals = np.array([[self.values[j][g[j]] for j in range(self.dim)] for g in grids])
        probs = np.array([np.prod([self.probs[j][g[j]] for j in range(self.dim)]) for g in grids])
        return vals, probs


def validate_noise(noise: NoiseModel, tol: float = 1e-14) -> CheckReport:
    """Check the increment moment conditions: zero mean, second moment h,
    diagonal cross moments, finite fourth moment (the latter is reported,
    not tolerance-bounded; it is automatic for finite support)."""
    report = CheckReport("noise-moments")
    h = noise.step
    vals, probs = noise.joint_support()
    mean = probs @ vals
    for j in range(noise.dim):
        report.add(f"|E w^{j+1}|", abs(mean[j]), tol)
    second = np.einsum("b,bm,bl->ml", probs, vals, vals)
    for m in range(noise.dim):
        for l in range(noise.dim):
            target = h if m == l else 0.0
            report.add(f"|E w^{m+1} w^{l+1} - {'h' if m == l else '0'}|",
                       abs(second[m, l] - target), tol)
    fourth = probs @ (vals ** 4)
    for j in range(noise.dim):
        report.add(f"E (w^{j+1})^4 (finite)", float(fourth[j]), np.inf)
    return report


class ScenarioTree:
    """Immutable event tree over levels 0..N+1 built from a product noise law.

    Per level k >= 1: `parent[k]` maps each node to its level k-1 parent,
    `increments[k]` holds the step k-1 noise increment on the incoming edge,
    `cond_prob[k]` the edge probability, `abs_prob[k]` the path probability.
    Children of node i at level k occupy the contiguous index range
    i*branch .. (i+1)*branch - 1 at level k+1.
    """

    def __init__(self, grid, noise, parent, increments, cond_prob, abs_prob):
        self.grid = grid
        self.noise = noise
        self.parent = parent
        self.increments = increments
        self.cond_prob = cond_prob
        self.abs_prob = abs_prob
        self.branch = noise.branch_count
        self.level_sizes = [a.size for a in abs_prob]
        self._offsets = np.concatenate([[0], np.cumsum(self.level_sizes)])

    @property
    def n_levels(self) -> int:
        return len(self.level_sizes)

    @property
    def n_nodes(self) -> int:
        return int(self._offsets[-1])

    def size(self, level: int) -> int:
        return self.level_sizes[level]

    def global_id(self, level: int, index) -> int:
        return self._offsets[level] + index

    def _check_level(self, level, lo=0):
        if not lo <= level < self.n_levels:
            raise MfsmpError(f"level {level} outside tree range 0..{self.n_levels - 1}")


def build_tree(grid: TimeGrid, noise: NoiseModel, node_cap: int = DEFAULT_NODE_CAP) -> ScenarioTree:
    """Enumerate the full lattice: branching factor = (support size)^dim per node,
    depth N+1.  Refuses instances whose node count exceeds `node_cap`."""
    if abs(noise.step - grid.h) > 1e-12 * max(1.0, grid.h):
        raise MfsmpError(
            f"noise second moment target {noise.step} does not match grid step {grid.h}")
    branch = noise.branch_count
    total, width = 1, 1
    for _ in range(grid.n_levels - 1):
        width *= branch
        total += width
        if total > node_cap:
            raise TreeSizeError(
                f"instance too large for exact enumeration: more than {node_cap} nodes "
                f"(branching {branch}, depth {grid.n_levels - 1})")

    joint_vals, joint_probs = noise.joint_support()
    parent = [None]
    increments = [None]
    cond_prob = [None]
    abs_prob = [np.array([1.0])]
    m = 1
    for _ in range(grid.n_levels - 1):
        parent.append(np.repeat(np.arange(m), branch))
        increments.append(np.tile(joint_vals, (m, 1)))
        cond_prob.append(np.tile(joint_probs, m))
        abs_prob.append(np.repeat(abs_prob[-1], branch) * cond_prob[-1])
        m *= branch
    return ScenarioTree(grid, noise, parent, increments, cond_prob, abs_prob)


class AdaptedProcess:
    """Values attached to every node of a contiguous level range.

    Measurability is by construction: the level-k array is indexed by level-k
    nodes only.  The value shape (vector, matrix, ...) is fixed across levels.
    """

    def __init__(self, tree, first_level, arrays):
        arrays = [np.asarray(a, dtype=float) for a in arrays]
        if not arrays:
            raise MfsmpError("adapted process needs at least one level")
        last = first_level + len(arrays) - 1
        tree._check_level(first_level)
        tree._check_level(last)
        shape = arrays[0].shape[1:]
        for off, a in enumerate(arrays):
            k = first_level + off
            if a.shape[0] != tree.size(k):
                raise MfsmpError(
                    f"level {k}: expected {tree.size(k)} node values, got {a.shape[0]}")
            if a.shape[1:] != shape:
                raise MfsmpError(f"level {k}: value shape {a.shape[1:]} differs from {shape}")
        self.tree = tree
        self.first_level = first_level
        self._arrays = arrays

    @classmethod
    def zeros(cls, tree, first_level, last_level, shape=()):
        if isinstance(shape, int):
            shape = (shape,)
        arrays = [np.zeros((tree.size(k),) + tuple(shape))
                  for k in range(first_level, last_level + 1)]
        return cls(tree, first_level, arrays)

    @classmethod
    def constant(cls, tree, first_level, last_level, value):
        value = np.asarray(value, dtype=float)
        arrays = [np.broadcast_to(value, (tree.size(k),) + value.shape).copy()
                  for k in range(first_level, last_level + 1)]
        return cls(tree, first_level, arrays)

    @property
    def last_level(self) -> int:
        return self.first_level + len(self._arrays) - 1

    @property
    def value_shape(self) -> tuple:
        return self._arrays[0].shape[1:]

    def levels(self):
        return range(self.first_level, self.last_level + 1)

    def at(self, level: int) -> np.ndarray:
        if not self.first_level <= level <= self.last_level:
            raise MfsmpError(
                f"process defined on levels {self.first_level}..{self.last_level}, asked for {level}")
        return self._arrays[level - self.first_level]

    def set_level(self, level: int, values):
        values = np.asarray(values, dtype=float)
        current = self.at(level)
        if values.shape != current.shape:
            raise MfsmpError(f"level {level}: shape {values.shape} != {current.shape}")
        self._arrays[level - self.first_level] = values

    def copy(self):
        return AdaptedProcess(self.tree, self.first_level, [a.copy() for a in self._arrays])


def _level_values(tree, proc, level):
    if isinstance(proc, AdaptedProcess):
        return proc.at(level)
    values = np.asarray(proc, dtype=float)
    if values.shape[0] != tree.size(level):
        raise MfsmpError(
            f"level {level}: expected {tree.size(level)} node values, got {values.shape[0]}")
    return values


def cond_expect(tree, proc, level, node=None):
    """Conditional expectation of level-`level` values given the level-1 partition.

    Returns the array over level-1 parent nodes (exact weighted sums over
    children), or the single parent value if `node` is given.
    """
    tree._check_level(level)
    if level == 0:
        raise MfsmpError("level-0 values have no parent level to condition on")
    values = _level_values(tree, proc, level)
    branch = tree.branch
    m_parent = tree.size(level - 1)
    weights = tree.cond_prob[level].reshape(m_parent, branch)
    shaped = values.reshape((m_parent, branch) + values.shape[1:])
    out = np.einsum("mb...,mb->m...", shaped, weights)
    if node is None:
        return out
    return out[node]


def expect(tree, proc, level, node=None):
    """Unconditional expectation at a level: absolute-probability weighted sum."""
    tree._check_level(level)
    values = _level_values(tree, proc, level)
    if node is not None:
        raise MfsmpError("expect is a total expectation; it takes no node argument")
    return np.einsum("m...,m->...", values, tree.abs_prob[level])


def tree_invariants_report(tree: ScenarioTree, tol: float = 1e-14) -> CheckReport:
    """Structural checks: probability normalization, martingale increments,
    conditional second moments of the increments."""
    report = CheckReport("tree-invariants")
    h = tree.grid.h
    for k in range(tree.n_levels):
        report.add(f"|sum abs_prob - 1| @level {k}", abs(tree.abs_prob[k].sum() - 1.0), tol, level=k)
    for k in range(1, tree.n_levels):
        weights = tree.cond_prob[k].reshape(tree.size(k - 1), tree.branch)
        report.add(f"|sum cond_prob - 1| @level {k}",
                   float(np.max(np.abs(weights.sum(axis=1) - 1.0))), tol, level=k)
        inc = tree.increments[k]
        mean = cond_expect(tree, inc, k)
        report.add(f"max |E(w | parent)| @step {k - 1}", float(np.max(np.abs(mean))), tol, level=k)
        second = cond_expect(tree, inc ** 2, k)
        report.add(f"max |E(w^2 | parent) - h| @step {k - 1}",
                   float(np.max(np.abs(second - h))), 10 * tol, level=k)
    return report
