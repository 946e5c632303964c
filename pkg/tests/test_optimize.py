import pytest

from mfsmp.adjoint import linearize, solve_adjoint
from mfsmp.errors import CostDomainError, MfsmpError
from mfsmp.forward import check_feasible, constant_control, simulate
from mfsmp.instances import random_lq
from mfsmp.optimize import OptimizerOptions, brute_force, optimize
from mfsmp.problem import builtin
from mfsmp.smp import necessary_check


def test_e1_converges_to_closed_form_minimum(e1):
    spec, tree = e1
    result = optimize(spec, tree, constant_control(spec, tree, 1.0),
                      OptimizerOptions(grad_tol=1e-10, stall_tol=1e-16))
    assert abs(result.u.at(0)[0, 0]) <= 1e-8
    assert result.cost == pytest.approx(1.0, abs=1e-10)
    assert result.reason == "gradient-tolerance"


def test_mean_field_cost_minimum():
    spec = builtin("lq_meanfield", n=1, r=1, d=1, h=1.0, N=0, x0=[0.0],
                   B=[[1.0]], G_mean=[[2.0]], lo=-5.0, hi=5.0)
    tree = spec.build_tree()
    result = optimize(spec, tree, constant_control(spec, tree, 0.7))
    assert abs(result.u.at(0)[0, 0]) <= 1e-7


def test_stationary_start_stops_immediately(e1):
    spec, tree = e1
    result = optimize(spec, tree, constant_control(spec, tree, 0.0))
    assert result.iterations == 0
    assert result.reason == "gradient-tolerance"


def test_history_monotone_and_iterates_feasible(e1):
    spec, tree = e1
    result = optimize(spec, tree, constant_control(spec, tree, 1.0))
    js = [row[0] for row in result.history]
    assert all(b <= a + 1e-15 for a, b in zip(js, js[1:]))
    check_feasible(spec, tree, result.u, tol=0.0)


def test_max_iters_termination(e1):
    spec, tree = e1
    result = optimize(spec, tree, constant_control(spec, tree, 1.0),
                      OptimizerOptions(max_iters=1, step_init=1e-3))
    assert result.reason == "max-iters" and result.iterations == 1


def test_infeasible_cost_at_start_raises():
    spec = builtin("prodcons", delta_util=0.5, h=0.5, N=1, x0=1.0,
                   v_floor=-1.0, v_cap=-0.5)  # box forces v < 0 where utility is undefined
    tree = spec.build_tree()
    with pytest.raises(CostDomainError):
        optimize(spec, tree)


def test_brute_force_e1_grid(e1):
    spec, tree = e1
    u, j_val = brute_force(spec, tree, 41)
    assert u.at(0)[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert j_val == pytest.approx(1.0)


def test_brute_force_recovers_grid_point():
    # l = (u - 0.3)^2 with 0.3 on the 11-point grid of [0, 1]
    spec = builtin("lq_meanfield", n=1, r=1, d=1, h=1.0, N=0, x0=[0.0],
                   R=[[2.0]], r_lin=[-0.6], l0=0.09, lo=0.0, hi=1.0)
    tree = spec.build_tree()
    u, j_val = brute_force(spec, tree, 11)
    assert u.at(0)[0, 0] == pytest.approx(0.3)
    assert j_val == pytest.approx(0.0, abs=1e-15)


def test_brute_force_degenerate_box():
    spec = builtin("lq_meanfield", n=1, r=1, d=1, h=1.0, N=0, x0=[0.0],
                   R=[[2.0]], lo=0.25, hi=0.25)
    tree = spec.build_tree()
    u, j_val = brute_force(spec, tree, 7)
    assert u.at(0)[0, 0] == 0.25
    assert j_val == pytest.approx(0.0625)


def test_brute_force_guards():
    spec = builtin("lq_meanfield", n=1, r=1, d=1, h=1.0, N=3, x0=[0.0],
                   lo=-1.0, hi=1.0)
    tree = spec.build_tree()
    with pytest.raises(MfsmpError, match="exceeds the cap"):
        brute_force(spec, tree, 101, comb_cap=10 ** 6)
    unbounded = builtin("lq_meanfield", n=1, r=1, d=1, h=1.0, N=0, x0=[0.0])
    with pytest.raises(MfsmpError, match="bounded"):
        brute_force(unbounded, unbounded.build_tree(), 11)


def test_batch_cost_matches_plain_cost():
    # the oracle's batched forward pass is an independent reimplementation
    # of the cost; it must agree rowwise on awkward shapes (n, r, d = 2)
    import numpy as np
    from mfsmp.optimize import _batch_cost
    from mfsmp.forward import cost
    from mfsmp.tree import AdaptedProcess
    for seed in (3, 6, 9):
        spec = random_lq(seed, steps_max=3)
        tree = spec.build_tree()
        rng = np.random.default_rng(1000 + seed)
        controls = [rng.uniform(-0.8, 0.8, (5, tree.size(k), spec.r))
                    for k in range(tree.grid.n_steps + 1)]
        j_batch = _batch_cost(spec, tree, controls)
        for b in range(5):
            u = AdaptedProcess(tree, 0, [c[b] for c in controls])
            assert j_batch[b] == pytest.approx(cost(spec, tree, u, validate=False),
                                               abs=1e-12)


def test_maximize_direction_pushes_to_upper_bound():
    # maximizing a positively weighted terminal drives the control to its cap
    spec = builtin("lq_meanfield", n=1, r=1, d=1, h=1.0, N=0, x0=[0.0],
                   B=[[1.0]], sigma=[{"s0": [0.5]}], g=[1.0],
                   direction="maximize", lo=-1.0, hi=1.0)
    tree = spec.build_tree()
    result = optimize(spec, tree)
    assert result.u.at(0)[0, 0] == pytest.approx(1.0)
    assert spec.objective_value(result.cost) == pytest.approx(1.0)  # E x(T) at u = 1


def test_time_varying_boxes_respected():
    spec = builtin("lq_meanfield", n=1, r=1, d=1, h=0.5, N=1, x0=[0.4],
                   A=[[0.3]], B=[[1.0]], sigma=[{"s0": [0.3]}],
                   Q=[[0.8]], R=[[0.6]], G=[[0.9]], q=[0.3],
                   lo=[[-1.0], [0.2]], hi=[[0.5], [1.0]])
    tree = spec.build_tree()
    result = optimize(spec, tree, options=OptimizerOptions(grad_tol=1e-10,
                                                           stall_tol=1e-16))
    _, j_star = brute_force(spec, tree, 101)
    assert abs(result.cost - j_star) <= 1e-4
    assert float(result.u.at(1).min()) >= 0.2 - 1e-12
    assert float(result.u.at(1).max()) <= 1.0 + 1e-12


def test_optimizer_matches_oracle_on_convex_instances():
    for seed in range(3):
        spec = random_lq(seed, n_max=2, r_max=1, d_max=1, steps_max=1, convex=True)
        tree = spec.build_tree()
        result = optimize(spec, tree,
                          options=OptimizerOptions(seed=seed, grad_tol=1e-9,
                                                   stall_tol=1e-16))
        u_star, j_star = brute_force(spec, tree, 101)
        assert abs(result.cost - j_star) <= 1e-4
        traj = simulate(spec, tree, result.u)
        adj = solve_adjoint(linearize(spec, tree, traj, result.u), tree)
        assert necessary_check(spec, tree, traj, adj, result.u, tol=1e-6).passed
