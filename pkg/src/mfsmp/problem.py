"""Problem definitions: coefficients with exact partials, admissible boxes, config I/O.

Coefficient evaluators are vectorized over nodes: with m evaluation points,
state x is (m, n), mean argument y is (m, n) (the level mean broadcast to rows,
or a genuine per-row batch), control u is (m, r), and t is the scalar time.
Returned shapes are

    f (m, n)          sigma (m, d, n)        l (m,)        phi (m,)
    f_x, f_y (m, n, n)   f_u (m, n, r)
    sigma_x, sigma_y (m, d, n, n)   sigma_u (m, d, n, r)
    l_x, l_y (m, n)   l_u (m, r)   phi_x, phi_y (m, n)

Maximization problems are normalized at construction: the stored running and
terminal costs are negated so that every downstream consumer minimizes.
"""

from dataclasses import dataclass
import json

import numpy as np

from .errors import ConfigError, MfsmpError
from .report import CheckReport
from .tree import NoiseModel, TimeGrid, build_tree

_TOP_KEYS = {"dims", "grid", "noise", "x0", "family", "tables", "admissible", "direction"}

_LQ_MATRIX_KEYS = {
    "A": ("n", "n"), "A_mean": ("n", "n"), "B": ("n", "r"), "f0": ("n",),
    "Q": ("n", "n"), "Q_mean": ("n", "n"), "R": ("r", "r"),
    "q": ("n",), "q_mean": ("n",), "r_lin": ("r",), "l0": (),
    "G": ("n", "n"), "G_mean": ("n", "n"), "g": ("n",), "g_mean": ("n",), "phi0": (),
}
_LQ_SIGMA_KEYS = {"C": ("n", "n"), "C_mean": ("n", "n"), "D": ("n", "r"), "s0": ("n",)}


@dataclass
class CoefficientSet:
    """Vectorized evaluators for the drift, diffusions, running and terminal cost."""

    f: callable
    f_x: callable
    f_y: callable
    f_u: callable
    sigma: callable
    sigma_x: callable
    sigma_y: callable
    sigma_u: callable
    l: callable
    l_x: callable
    l_y: callable
    l_u: callable
    phi: callable
    phi_x: callable
    phi_y: callable


class AdmissibleSet:
    """Per-step box constraints lo(t) <= v <= hi(t); components may be infinite."""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        if self.lo.shape != self.hi.shape or self.lo.ndim != 2:
            raise MfsmpError("admissible bounds must be (n_steps+1, r) arrays")
        if np.any(self.lo > self.hi):
            k, i = np.argwhere(self.lo > self.hi)[0]
            raise MfsmpError(f"empty admissible box at step {k}, coordinate {i}: "
                             f"lo={self.lo[k, i]} > hi={self.hi[k, i]}")

    @classmethod
    def box(cls, n_steps, r, lo, hi):
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (n_steps + 1, r)).copy()
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (n_steps + 1, r)).copy()
        return cls(lo, hi)

    @property
    def n_steps(self):
        return self.lo.shape[0] - 1

    @property
    def r(self):
        return self.lo.shape[1]

    def project(self, step, v):
        """Componentwise clamp into the step's box; idempotent and nonexpansive."""
        return np.clip(np.asarray(v, dtype=float), self.lo[step], self.hi[step])

    def violation(self, step, v):
        v = np.asarray(v, dtype=float)
        return float(np.max(np.maximum(self.lo[step] - v, v - self.hi[step]), initial=0.0))

    def bounded(self):
        return bool(np.all(np.isfinite(self.lo)) and np.all(np.isfinite(self.hi)))


@dataclass(eq=False)
class ProblemSpec:
    """A fully specified control problem instance (internal minimization sign)."""

    n: int
    r: int
    d: int
    grid: TimeGrid
    noise: NoiseModel
    x0: np.ndarray
    coeffs: CoefficientSet
    admissible: AdmissibleSet
    direction: str = "minimize"
    family: str | None = None
    family_params: dict | None = None
    label: str = ""

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float).reshape(self.n)
        if not np.all(np.isfinite(self.x0)):
            raise MfsmpError("initial state must be finite")
        if self.direction not in ("minimize", "maximize"):
            raise MfsmpError(f"direction must be 'minimize' or 'maximize', got {self.direction!r}")
        if self.admissible.n_steps != self.grid.n_steps or self.admissible.r != self.r:
            raise MfsmpError("admissible set shape does not match grid/control dimensions")

    def build_tree(self, node_cap=None):
        if node_cap is None:
            return build_tree(self.grid, self.noise)
        return build_tree(self.grid, self.noise, node_cap)

    def objective_value(self, internal_cost):
        """Map the internal minimization value back to the declared direction."""
        return -internal_cost if self.direction == "maximize" else internal_cost


def project(spec: ProblemSpec, step: int, v):
    return spec.admissible.project(step, v)


def _rows(arr, m):
    return np.broadcast_to(arr, (m,) + np.shape(arr))


def _sym(mat):
    mat = np.asarray(mat, dtype=float)
    return 0.5 * (mat + mat.T)


def _as_steps(value, n_steps, shape, key):
    """Normalize a table entry to a stacked (n_steps+1, *shape) array."""
    if isinstance(value, dict):
        extra = set(value) - {"per_step"}
        if extra:
            raise ConfigError(f"{key}: unknown table keys {sorted(extra)}")
        rows = value.get("per_step")
        if not isinstance(rows, list) or len(rows) != n_steps + 1:
            raise ConfigError(f"{key}: per_step must list exactly {n_steps + 1} entries")
        out = np.array([np.asarray(rw, dtype=float) for rw in rows])
    else:
        out = np.broadcast_to(np.asarray(value, dtype=float), (n_steps + 1,) + shape).copy()
    if out.shape != (n_steps + 1,) + shape:
        raise ConfigError(f"{key}: expected shape {shape} per step, got {out.shape[1:]}")
    return out


def _lq_tables(n, r, d, n_steps, params, time_varying):
    """Collect the affine/quadratic coefficient tables, zero-filled by default."""
    params = dict(params or {})
    sigma_params = params.pop("sigma", None)
    shapes = {k: tuple({"n": n, "r": r}[c] for c in spec_shape)
              for k, spec_shape in _LQ_MATRIX_KEYS.items()}
    unknown = set(params) - set(shapes)
    if unknown:
        raise ConfigError(f"unknown coefficient keys {sorted(unknown)}")
    tables = {}
    for key, shape in shapes.items():
        raw = params.get(key, np.zeros(shape))
        if not time_varying and isinstance(raw, dict):
            raise ConfigError(f"{key}: per-step tables are only allowed under 'tables'")
        tables[key] = _as_steps(raw, n_steps, shape, key)
    sig_shapes = {k: tuple({"n": n, "r": r}[c] for c in s) for k, s in _LQ_SIGMA_KEYS.items()}
    sigma_tabs = []
    sigma_params = sigma_params if sigma_params is not None else [{} for _ in range(d)]
    if len(sigma_params) != d:
        raise ConfigError(f"sigma: expected {d} diffusion entries, got {len(sigma_params)}")
    for j, entry in enumerate(sigma_params):
        entry = dict(entry or {})
        unknown = set(entry) - set(sig_shapes)
        if unknown:
            raise ConfigError(f"sigma[{j}]: unknown keys {sorted(unknown)}")
        tab = {}
        for key, shape in sig_shapes.items():
            raw = entry.get(key, np.zeros(shape))
            if not time_varying and isinstance(raw, dict):
                raise ConfigError(f"sigma[{j}].{key}: per-step tables only under 'tables'")
            tab[key] = _as_steps(raw, n_steps, shape, f"sigma[{j}].{key}")
        sigma_tabs.append(tab)
    return tables, sigma_tabs


def _lq_coeffs(n, r, d, grid, tables, sigma_tabs, sign):
    """Build exact-derivative evaluators from stacked coefficient tables.

    `sign` is +1 for minimize, -1 for maximize (flips the cost family only).
    """
    t0, h, n_steps = grid.t0, grid.h, grid.n_steps
    tb = {k: v.copy() for k, v in tables.items()}
    for key in ("Q", "Q_mean", "G", "G_mean"):
        tb[key] = sign * np.stack([_sym(m) for m in tb[key]])
    for key in ("R",):
        tb[key] = sign * np.stack([_sym(m) for m in tb[key]])
    for key in ("q", "q_mean", "r_lin", "l0", "g", "g_mean", "phi0"):
        tb[key] = sign * tb[key]
    sg = [{k: v.copy() for k, v in tab.items()} for tab in sigma_tabs]

    def step_of(t):
        k = int(round((t - t0) / h))
        if not 0 <= k <= n_steps:
            raise MfsmpError(f"time {t} is outside the control grid")
        return k

    def f(t, x, y, u):
        k = step_of(t)
        return x @ tb["A"][k].T + y @ tb["A_mean"][k].T + u @ tb["B"][k].T + tb["f0"][k]

    def f_x(t, x, y, u):
        return _rows(tb["A"][step_of(t)], x.shape[0])

    def f_y(t, x, y, u):
        return _rows(tb["A_mean"][step_of(t)], x.shape[0])

    def f_u(t, x, y, u):
        return _rows(tb["B"][step_of(t)], x.shape[0])

    def sigma(t, x, y, u):
        k = step_of(t)
        cols = [x @ sg[j]["C"][k].T + y @ sg[j]["C_mean"][k].T + u @ sg[j]["D"][k].T + sg[j]["s0"][k]
                for j in range(d)]
        return np.stack(cols, axis=1)

    def sigma_x(t, x, y, u):
        k = step_of(t)
        return _rows(np.stack([sg[j]["C"][k] for j in range(d)]), x.shape[0])

    def sigma_y(t, x, y, u):
        k = step_of(t)
        return _rows(np.stack([sg[j]["C_mean"][k] for j in range(d)]), x.shape[0])

    def sigma_u(t, x, y, u):
        k = step_of(t)
        return _rows(np.stack([sg[j]["D"][k] for j in range(d)]), x.shape[0])

    def l(t, x, y, u):
        k = step_of(t)
        quad = 0.5 * (np.einsum("mi,ij,mj->m", x, tb["Q"][k], x)
                      + np.einsum("mi,ij,mj->m", y, tb["Q_mean"][k], y)
                      + np.einsum("mi,ij,mj->m", u, tb["R"][k], u))
        return quad + x @ tb["q"][k] + y @ tb["q_mean"][k] + u @ tb["r_lin"][k] + tb["l0"][k]

    def l_x(t, x, y, u):
        k = step_of(t)
        return x @ tb["Q"][k].T + tb["q"][k]

    def l_y(t, x, y, u):
        k = step_of(t)
        return y @ tb["Q_mean"][k].T + tb["q_mean"][k]

    def l_u(t, x, y, u):
        k = step_of(t)
        return u @ tb["R"][k].T + tb["r_lin"][k]

    def phi(x, y):
        return (0.5 * (np.einsum("mi,ij,mj->m", x, tb["G"][0], x)
                       + np.einsum("mi,ij,mj->m", y, tb["G_mean"][0], y))
                + x @ tb["g"][0] + y @ tb["g_mean"][0] + tb["phi0"][0])

    def phi_x(x, y):
        return x @ tb["G"][0].T + tb["g"][0]

    def phi_y(x, y):
        return y @ tb["G_mean"][0].T + tb["g_mean"][0]

    return CoefficientSet(f, f_x, f_y, f_u, sigma, sigma_x, sigma_y, sigma_u,
                          l, l_x, l_y, l_u, phi, phi_x, phi_y)


def _pospow(v, expo):
    """v**expo on v > 0, NaN elsewhere (consumers raise a domain error on NaN)."""
    safe = np.where(v > 0, v, 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(v > 0, np.power(safe, expo), np.nan)


def _prodcons_coeffs(grid, delta_util, depreciation):
    """Production/consumption model: capital grows by retained income, is consumed
    directly (no step factor on the consumption term), and carries proportional
    noise; utility of consumption is the CRRA-type power law.  Stored with the
    minimization sign (the model maximizes)."""
    h = grid.h
    du = delta_util
    coef = du / (du - 1.0)      # negative for 0 < du < 1
    expo = 1.0 - 1.0 / du       # negative for 0 < du < 1
    growth = 1.0 - depreciation

    def f(t, x, y, u):
        return growth * x - u / h

    def f_x(t, x, y, u):
        return np.full((x.shape[0], 1, 1), growth)

    def f_y(t, x, y, u):
        return np.zeros((x.shape[0], 1, 1))

    def f_u(t, x, y, u):
        return np.full((x.shape[0], 1, 1), -1.0 / h)

    def sigma(t, x, y, u):
        return 0.5 * x.reshape(-1, 1, 1)

    def sigma_x(t, x, y, u):
        return np.full((x.shape[0], 1, 1, 1), 0.5)

    def sigma_y(t, x, y, u):
        return np.zeros((x.shape[0], 1, 1, 1))

    def sigma_u(t, x, y, u):
        return np.zeros((x.shape[0], 1, 1, 1))

    def l(t, x, y, u):
        return -coef * _pospow(u[:, 0], expo)

    def l_x(t, x, y, u):
        return np.zeros((x.shape[0], 1))

    l_y = l_x

    def l_u(t, x, y, u):
        return (-_pospow(u[:, 0], -1.0 / du)).reshape(-1, 1)

    def phi(x, y):
        return -x[:, 0]

    def phi_x(x, y):
        return np.full((x.shape[0], 1), -1.0)

    def phi_y(x, y):
        return np.zeros((x.shape[0], 1))

    return CoefficientSet(f, f_x, f_y, f_u, sigma, sigma_x, sigma_y, sigma_u,
                          l, l_x, l_y, l_u, phi, phi_x, phi_y)


def _noise_from_config(kind, params, d, h):
    params = dict(params or {})
    if kind == "binary":
        if params:
            raise ConfigError("binary noise takes no params")
        return NoiseModel.binary(d, h)
    if kind == "trinomial":
        p = params.pop("p", 0.25)
        if params:
            raise ConfigError(f"trinomial noise: unknown params {sorted(params)}")
        return NoiseModel.trinomial(d, h, p)
    if kind == "custom":
        support = params.pop("support", None)
        if params or support is None:
            raise ConfigError("custom noise needs exactly a 'support' list of [value, prob] pairs")
        return NoiseModel.from_support(d, h, support)
    raise ConfigError(f"unknown noise kind {kind!r}")


def _bound(value):
    if isinstance(value, str):
        if value in ("inf", "+inf"):
            return np.inf
        if value == "-inf":
            return -np.inf
        raise ConfigError(f"bound must be a number or 'inf'/'-inf', got {value!r}")
    return float(value)


def _admissible_from_config(entries, n_steps, r):
    if not isinstance(entries, list) or not entries:
        raise ConfigError("admissible must be a non-empty list of {t, lo, hi} entries")
    lo = np.full((n_steps + 1, r), np.nan)
    hi = np.full((n_steps + 1, r), np.nan)
    for entry in entries:
        extra = set(entry) - {"t", "lo", "hi"}
        if extra:
            raise ConfigError(f"admissible entry: unknown keys {sorted(extra)}")
        lo_row = np.array([_bound(v) for v in entry["lo"]])
        hi_row = np.array([_bound(v) for v in entry["hi"]])
        if lo_row.shape != (r,) or hi_row.shape != (r,):
            raise ConfigError(f"admissible bounds must have length r={r}")
        t = entry["t"]
        steps = range(n_steps + 1) if t == "all" else [int(t)]
        for k in steps:
            if not 0 <= k <= n_steps:
                raise ConfigError(f"admissible step {k} outside 0..{n_steps}")
            if not np.isnan(lo[k]).all():
                raise ConfigError(f"admissible step {k} specified more than once")
            lo[k], hi[k] = lo_row, hi_row
    if np.isnan(lo).any():
        missing = sorted(set(np.argwhere(np.isnan(lo[:, 0])).ravel().tolist()))
        raise ConfigError(f"admissible bounds missing for steps {missing}")
    return AdmissibleSet(lo, hi)


def _canonical(obj):
    """JSON-ready copy with numpy containers turned into plain lists/floats."""
    if isinstance(obj, dict):
        return {k: _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _canonical(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    return obj


def builtin(name, params=None, **kw) -> ProblemSpec:
    """Construct a built-in problem family with analytically exact partials."""
    params = dict(params or {})
    params.update(kw)
    if name == "lq_meanfield":
        return _builtin_lq(params)
    if name == "prodcons":
        return _builtin_prodcons(params)
    raise ConfigError(f"unknown builtin family {name!r}")


def _builtin_lq(params):
    meta = {k: params.pop(k, None) for k in
            ("n", "r", "d", "h", "N", "t0", "x0", "lo", "hi", "noise", "trinomial_p", "direction")}
    for key in ("n", "r", "d", "h", "N", "x0"):
        if meta[key] is None:
            raise ConfigError(f"lq_meanfield requires parameter {key!r}")
    n, r, d = int(meta["n"]), int(meta["r"]), int(meta["d"])
    grid = TimeGrid(float(meta["t0"] or 0.0), float(meta["h"]), int(meta["N"]))
    direction = meta["direction"] or "minimize"
    noise_kind = meta["noise"] or "binary"
    noise = _noise_from_config(noise_kind,
                               {"p": meta["trinomial_p"]} if meta["trinomial_p"] else {},
                               d, grid.h)
    lo = meta["lo"] if meta["lo"] is not None else -np.inf
    hi = meta["hi"] if meta["hi"] is not None else np.inf
    admissible = AdmissibleSet.box(grid.n_steps, r, lo, hi)
    tables, sigma_tabs = _lq_tables(n, r, d, grid.n_steps, params, time_varying=False)
    sign = -1.0 if direction == "maximize" else 1.0
    coeffs = _lq_coeffs(n, r, d, grid, tables, sigma_tabs, sign)
    raw = _canonical({k: v for k, v in params.items()})
    return ProblemSpec(n, r, d, grid, noise, meta["x0"], coeffs, admissible,
                       direction=direction, family="lq_meanfield", family_params=raw)


def _builtin_prodcons(params):
    known = {"delta_util", "depreciation", "h", "N", "x0", "t0", "v_floor", "v_cap",
             "noise", "trinomial_p"}
    unknown = set(params) - known
    if unknown:
        raise ConfigError(f"prodcons: unknown parameters {sorted(unknown)}")
    for key in ("delta_util", "h", "N", "x0"):
        if key not in params:
            raise ConfigError(f"prodcons requires parameter {key!r}")
    du = float(params["delta_util"])
    if not 0.0 < du < 1.0:
        raise ConfigError(f"prodcons utility exponent must lie in (0, 1), got {du}")
    dep = float(params.get("depreciation", du))
    grid = TimeGrid(float(params.get("t0", 0.0)), float(params["h"]), int(params["N"]))
    noise = _noise_from_config(params.get("noise", "binary"),
                               {"p": params["trinomial_p"]} if params.get("trinomial_p") else {},
                               1, grid.h)
    v_floor = float(params.get("v_floor", 1e-6))
    v_cap = params.get("v_cap")
    admissible = AdmissibleSet.box(grid.n_steps, 1, v_floor,
                                   np.inf if v_cap is None else float(v_cap))
    coeffs = _prodcons_coeffs(grid, du, dep)
    # The consumption floor/cap live in the admissible section of the config
    # schema, so family params carry only the model constants.
    raw = {"delta_util": du, "depreciation": dep}
    return ProblemSpec(1, 1, 1, grid, noise, [float(params["x0"])], coeffs, admissible,
                       direction="maximize", family="prodcons", family_params=raw)


def parse_problem(config_text: str) -> ProblemSpec:
    """Parse the JSON problem document; unknown keys are rejected."""
    try:
        cfg = json.loads(config_text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(cfg) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    for key in ("dims", "grid", "noise", "x0", "admissible", "direction"):
        if key not in cfg:
            raise ConfigError(f"missing top-level key {key!r}")
    if ("family" in cfg) == ("tables" in cfg):
        raise ConfigError("config needs exactly one of 'family' or 'tables'")

    dims = cfg["dims"]
    if set(dims) != {"n", "r", "d"}:
        raise ConfigError("dims must have exactly keys n, r, d")
    n, r, d = int(dims["n"]), int(dims["r"]), int(dims["d"])
    gr = cfg["grid"]
    if set(gr) != {"t0", "h", "N"}:
        raise ConfigError("grid must have exactly keys t0, h, N")
    grid = TimeGrid(float(gr["t0"]), float(gr["h"]), int(gr["N"]))
    noise_cfg = cfg["noise"]
    extra = set(noise_cfg) - {"kind", "params"}
    if extra:
        raise ConfigError(f"noise: unknown keys {sorted(extra)}")
    noise = _noise_from_config(noise_cfg.get("kind"), noise_cfg.get("params"), d, grid.h)
    x0 = np.asarray(cfg["x0"], dtype=float)
    if x0.shape != (n,):
        raise ConfigError(f"x0 must have length n={n}")
    admissible = _admissible_from_config(cfg["admissible"], grid.n_steps, r)
    direction = cfg["direction"]

    if "family" in cfg:
        fam = cfg["family"]
        extra = set(fam) - {"name", "params"}
        if extra:
            raise ConfigError(f"family: unknown keys {sorted(extra)}")
        name = fam.get("name")
        fparams = dict(fam.get("params") or {})
        if name == "lq_meanfield":
            tables, sigma_tabs = _lq_tables(n, r, d, grid.n_steps, fparams, time_varying=False)
            sign = -1.0 if direction == "maximize" else 1.0
            coeffs = _lq_coeffs(n, r, d, grid, tables, sigma_tabs, sign)
            spec = ProblemSpec(n, r, d, grid, noise, x0, coeffs, admissible,
                               direction=direction, family="lq_meanfield",
                               family_params=_canonical(fparams))
        elif name == "prodcons":
            if (n, r, d) != (1, 1, 1):
                raise ConfigError("prodcons requires dims n = r = d = 1")
            extra = set(fparams) - {"delta_util", "depreciation"}
            if extra:
                raise ConfigError(f"prodcons family: unknown params {sorted(extra)}")
            du = float(fparams["delta_util"])
            if not 0.0 < du < 1.0:
                raise ConfigError(f"prodcons utility exponent must lie in (0, 1), got {du}")
            dep = float(fparams.get("depreciation", du))
            if direction != "maximize":
                raise ConfigError("prodcons is a maximization family; set direction = maximize")
            coeffs = _prodcons_coeffs(grid, du, dep)
            spec = ProblemSpec(n, r, d, grid, noise, x0, coeffs, admissible,
                               direction=direction, family="prodcons",
                               family_params={"delta_util": du, "depreciation": dep})
        else:
            raise ConfigError(f"unknown family name {name!r}")
    else:
        tables, sigma_tabs = _lq_tables(n, r, d, grid.n_steps, cfg["tables"], time_varying=True)
        sign = -1.0 if direction == "maximize" else 1.0
        coeffs = _lq_coeffs(n, r, d, grid, tables, sigma_tabs, sign)
        spec = ProblemSpec(n, r, d, grid, noise, x0, coeffs, admissible,
                           direction=direction, family="tables",
                           family_params=_canonical(cfg["tables"]))
    return spec


def to_config(spec: ProblemSpec) -> dict:
    """Reconstruct the canonical configuration document for a parseable spec."""
    if spec.family is None:
        raise ConfigError("spec was built programmatically and has no config form")
    noise = {"kind": spec.noise.kind}
    if spec.noise.params:
        noise["params"] = _canonical(spec.noise.params)
    lo, hi = spec.admissible.lo, spec.admissible.hi

    def row(bounds_row):
        return [("inf" if v == np.inf else "-inf" if v == -np.inf else float(v))
                for v in bounds_row]

    if all(np.array_equal(lo[0], lo[k]) and np.array_equal(hi[0], hi[k])
           for k in range(lo.shape[0])):
        admissible = [{"t": "all", "lo": row(lo[0]), "hi": row(hi[0])}]
    else:
        admissible = [{"t": k, "lo": row(lo[k]), "hi": row(hi[k])} for k in range(lo.shape[0])]
    cfg = {
        "dims": {"n": spec.n, "r": spec.r, "d": spec.d},
        "grid": {"t0": spec.grid.t0, "h": spec.grid.h, "N": spec.grid.n_steps},
        "noise": noise,
        "x0": spec.x0.tolist(),
        "admissible": admissible,
        "direction": spec.direction,
    }
    if spec.family == "tables":
        cfg["tables"] = _canonical(spec.family_params)
    else:
        cfg["family"] = {"name": spec.family, "params": _canonical(spec.family_params)}
    return cfg


def serialize_problem(spec: ProblemSpec) -> str:
    return json.dumps(to_config(spec), sort_keys=True, indent=2)


def _sample_controls(spec, rng, count):
    lo, hi = spec.admissible.lo[0], spec.admissible.hi[0]
    out = np.empty((count, spec.r))
    for i in range(spec.r):
        a, b = lo[i], hi[i]
        if np.isfinite(a) and np.isfinite(b):
            w = b - a
            if w == 0.0:
                out[:, i] = a
            else:
                out[:, i] = rng.uniform(a + 0.1 * w, b - 0.1 * w, count)
        elif np.isfinite(a):
            out[:, i] = a + (1.0 + abs(a)) * rng.uniform(0.1, 1.0, count)
        elif np.isfinite(b):
            out[:, i] = b - (1.0 + abs(b)) * rng.uniform(0.1, 1.0, count)
        else:
            out[:, i] = rng.uniform(-1.0, 1.0, count)
    return out


def validate_spec(spec: ProblemSpec, tol: float = 1e-6, n_points: int = 20,
                  seed: int = 0, fd_step: float = 1e-6) -> CheckReport:
    """Sampled consistency check: output shapes, analytic partials against
    central finite differences, and non-empty boxes.  This samples smoothness
    near the initial state; it certifies nothing globally."""
    report = CheckReport("spec-validation")
    rng = np.random.default_rng(seed)
    n, r, d = spec.n, spec.r, spec.d
    m = n_points
    scale = 1.0 + np.abs(spec.x0)
    x = spec.x0 + rng.uniform(-0.5, 0.5, (m, n)) * scale
    y = spec.x0 + rng.uniform(-0.5, 0.5, (m, n)) * scale
    u = _sample_controls(spec, rng, m)
    t = spec.grid.t0
    c = spec.coeffs

    expected = {
        "f": (m, n), "sigma": (m, d, n), "l": (m,), "f_x": (m, n, n), "f_y": (m, n, n),
        "f_u": (m, n, r), "sigma_x": (m, d, n, n), "sigma_y": (m, d, n, n),
        "sigma_u": (m, d, n, r), "l_x": (m, n), "l_y": (m, n), "l_u": (m, r),
    }
    for name, shape in expected.items():
        got = np.shape(getattr(c, name)(t, x, y, u))
        report.add(f"shape[{name}]", 0.0 if got == shape else 1.0, 0.0)
    for name, shape in {"phi": (m,), "phi_x": (m, n), "phi_y": (m, n)}.items():
        got = np.shape(getattr(c, name)(x, y))
        report.add(f"shape[{name}]", 0.0 if got == shape else 1.0, 0.0)

    def fd_check(label, value_fn, grad_fn, wrt, dim):
        analytic = np.asarray(grad_fn())
        worst = 0.0
        for i in range(dim):
            shift = np.zeros(dim)
            shift[i] = fd_step
            if wrt == "x":
                hi_v, lo_v = value_fn(x + shift, y, u), value_fn(x - shift, y, u)
            elif wrt == "y":
                hi_v, lo_v = value_fn(x, y + shift, u), value_fn(x, y - shift, u)
            else:
                hi_v, lo_v = value_fn(x, y, u + shift), value_fn(x, y, u + (-shift))
            fd = (np.asarray(hi_v) - np.asarray(lo_v)) / (2.0 * fd_step)
            an = analytic[..., i]
            err = np.max(np.abs(fd - an) / np.maximum(1.0, np.abs(fd)))
            worst = max(worst, float(err))
        report.add(f"fd[{label}]", worst, tol)

    fd_check("f_x", lambda a, b, v: c.f(t, a, b, v), lambda: c.f_x(t, x, y, u), "x", n)
    fd_check("f_y", lambda a, b, v: c.f(t, a, b, v), lambda: c.f_y(t, x, y, u), "y", n)
    fd_check("f_u", lambda a, b, v: c.f(t, a, b, v), lambda: c.f_u(t, x, y, u), "u", r)
    fd_check("sigma_x", lambda a, b, v: c.sigma(t, a, b, v), lambda: c.sigma_x(t, x, y, u), "x", n)
    fd_check("sigma_y", lambda a, b, v: c.sigma(t, a, b, v), lambda: c.sigma_y(t, x, y, u), "y", n)
    fd_check("sigma_u", lambda a, b, v: c.sigma(t, a, b, v), lambda: c.sigma_u(t, x, y, u), "u", r)
    fd_check("l_x", lambda a, b, v: c.l(t, a, b, v), lambda: c.l_x(t, x, y, u), "x", n)
    fd_check("l_y", lambda a, b, v: c.l(t, a, b, v), lambda: c.l_y(t, x, y, u), "y", n)
    fd_check("l_u", lambda a, b, v: c.l(t, a, b, v), lambda: c.l_u(t, x, y, u), "u", r)
    fd_check("phi_x", lambda a, b, v: c.phi(a, b), lambda: c.phi_x(x, y), "x", n)
    fd_check("phi_y", lambda a, b, v: c.phi(a, b), lambda: c.phi_y(x, y), "y", n)

    report.add("boxes nonempty",
               0.0 if np.all(spec.admissible.lo <= spec.admissible.hi) else 1.0, 0.0)
    return report
