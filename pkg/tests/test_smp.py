import numpy as np
import pytest

from mfsmp.adjoint import linearize, solve_adjoint
from mfsmp.forward import constant_control, simulate
from mfsmp.instances import (random_control, random_lq, random_prodcons, random_spike,
                             smooth_nonlinear)
from mfsmp.problem import builtin
from mfsmp.smp import (SpikeVariation, adjoint_gradient, duality_residual,
                       fd_cost_gradient, gradient_consistency, hamiltonian,
                       hamiltonian_gradient, necessary_check, rate_check, rate_ratios,
                       spike_cost_increment, sufficiency_check, variational_state)
from mfsmp.tree import expect


def _solved(spec, tree, u):
    traj = simulate(spec, tree, u)
    adj = solve_adjoint(linearize(spec, tree, traj, u), tree)
    return traj, adj


def test_hamiltonian_e1_closed_form(e1):
    spec, tree = e1
    u = constant_control(spec, tree, 0.0)
    traj, adj = _solved(spec, tree, u)
    # E{p|F} = 0, q = -2, sigma = 1, l = v^2: H(v) = -2 - v^2
    for v in (-1.0, -0.3, 0.0, 0.5, 1.0):
        assert hamiltonian(spec, tree, traj, adj, 0, [v])[0] == pytest.approx(-2.0 - v ** 2)
    grid = np.linspace(-1, 1, 201)
    values = [hamiltonian(spec, tree, traj, adj, 0, [v])[0] for v in grid]
    assert grid[int(np.argmax(values))] == pytest.approx(0.0, abs=1e-12)


def test_hamiltonian_zero_problem_identically_zero():
    spec = builtin("lq_meanfield", n=1, r=1, d=1, h=1.0, N=1, x0=[0.0],
                   lo=-1.0, hi=1.0)
    tree = spec.build_tree()
    u = constant_control(spec, tree, 0.2)
    traj, adj = _solved(spec, tree, u)
    for k in (0, 1):
        assert np.all(hamiltonian(spec, tree, traj, adj, k, [0.7]) == 0.0)
        assert np.all(hamiltonian_gradient(spec, tree, traj, adj, u, k) == 0.0)


def test_hamiltonian_prodcons_dynamics_consistent_form():
    # H(t, v) = utility(v) + E{p|F} (h (1 - dep) x - v) + q x / 2; the consumption
    # term carries no extra step factor because the dynamics subtract v directly
    spec = builtin("prodcons", delta_util=0.5, depreciation=0.5, h=0.5, N=1, x0=1.0,
                   v_floor=0.2)
    tree = spec.build_tree()
    u = constant_control(spec, tree, 0.6)
    traj, adj = _solved(spec, tree, u)
    k = 0
    ep = expect(tree, adj.p.at(1), 1)  # root: conditional = total expectation
    x0, v = 1.0, 0.85
    utility = -1.0 / v  # delta/(delta-1) v^{1-1/delta} at delta = 1/2
    expected = utility + ep[0] * (0.5 * 0.5 * x0 - v) + adj.q.at(0)[0, 0, 0] * 0.5 * x0
    assert hamiltonian(spec, tree, traj, adj, k, [v])[0] == pytest.approx(expected)


def test_hamiltonian_gradient_e1_values(e1):
    spec, tree = e1
    u0 = constant_control(spec, tree, 0.0)
    traj0, adj0 = _solved(spec, tree, u0)
    assert hamiltonian_gradient(spec, tree, traj0, adj0, u0, 0)[0, 0] == pytest.approx(0.0)
    u1 = constant_control(spec, tree, 1.0)
    traj1, adj1 = _solved(spec, tree, u1)
    assert hamiltonian_gradient(spec, tree, traj1, adj1, u1, 0)[0, 0] == pytest.approx(-4.0)


def test_necessary_check_examples(e1):
    spec, tree = e1
    u0 = constant_control(spec, tree, 0.0)
    traj0, adj0 = _solved(spec, tree, u0)
    report = necessary_check(spec, tree, traj0, adj0, u0, tol=1e-10)
    assert report.passed and report.worst.value == pytest.approx(0.0, abs=1e-14)

    u_bad = constant_control(spec, tree, 0.5)
    traj_b, adj_b = _solved(spec, tree, u_bad)
    report_b = necessary_check(spec, tree, traj_b, adj_b, u_bad, tol=1e-6)
    assert not report_b.passed
    # H_u = -2 at u = 0.5; worst feasible direction is v = -1: <-2, -1.5> = 3
    assert report_b.worst.value == pytest.approx(3.0)


def test_necessary_check_interior_stationary_unbounded():
    spec = builtin("lq_meanfield", n=1, r=1, d=1, h=1.0, N=0, x0=[0.0],
                   B=[[1.0]], sigma=[{"s0": [1.0]}], R=[[2.0]], G=[[2.0]])
    tree = spec.build_tree()
    u = constant_control(spec, tree, 0.0)
    traj, adj = _solved(spec, tree, u)
    assert necessary_check(spec, tree, traj, adj, u, tol=1e-10).passed


def test_variational_state_zero_scale_and_single_step(e1):
    spec, tree = e1
    u = constant_control(spec, tree, 0.0)
    traj, _ = _solved(spec, tree, u)
    xi0 = variational_state(spec, tree, traj, u, SpikeVariation(0, np.array([[1.0]]), 0.0))
    assert all(np.all(xi0.at(k) == 0.0) for k in (0, 1))
    xi = variational_state(spec, tree, traj, u, SpikeVariation(0, np.array([[1.0]]), 0.25))
    np.testing.assert_allclose(xi.at(1), 0.25)


def test_variational_state_linearity_in_scale():
    spec = random_lq(51, steps_max=3)
    tree = spec.build_tree()
    u = random_control(spec, tree, 52)
    traj = simulate(spec, tree, u)
    delta = np.random.default_rng(53).uniform(-1, 1, (tree.size(1), spec.r))
    xi1 = variational_state(spec, tree, traj, u, SpikeVariation(1, delta, 0.5))
    xi2 = variational_state(spec, tree, traj, u, SpikeVariation(1, delta, 1.0))
    for k in range(tree.grid.n_steps + 2):
        np.testing.assert_array_equal(2.0 * xi1.at(k), xi2.at(k))


def test_duality_residual_e1_both_sides_zero(e1):
    spec, tree = e1
    u = constant_control(spec, tree, 0.0)
    traj, adj = _solved(spec, tree, u)
    spike = SpikeVariation(0, np.array([[1.0]]), 0.3)
    xi = variational_state(spec, tree, traj, u, spike)
    lhs = expect(tree, np.einsum("mi,mi->m", adj.p.at(1), xi.at(1)), 1)
    assert lhs == pytest.approx(0.0, abs=1e-14)
    assert duality_residual(spec, tree, traj, adj, u, spike) <= 1e-14
    # degenerate zero-magnitude spike: both sides of the identity vanish
    assert duality_residual(spec, tree, traj, adj, u,
                            SpikeVariation(0, np.array([[1.0]]), 0.0)) == 0.0


def test_duality_residual_random_instances():
    for seed in range(20):
        spec = random_lq(seed) if seed % 3 else random_prodcons(seed)
        tree = spec.build_tree()
        u = random_control(spec, tree, 500 + seed)
        traj, adj = _solved(spec, tree, u)
        spike = random_spike(spec, tree, u, 700 + seed, 0.05)
        assert duality_residual(spec, tree, traj, adj, u, spike) <= 1e-10


def test_spike_cost_increment_e1(e1):
    spec, tree = e1
    eps = 0.25
    pred, act = spike_cost_increment(spec, tree, constant_control(spec, tree, 0.0),
                                     SpikeVariation(0, np.array([[1.0]]), eps))
    assert pred == pytest.approx(0.0, abs=1e-14)
    assert act == pytest.approx(2.0 * eps ** 2)

    pred, act = spike_cost_increment(spec, tree, constant_control(spec, tree, 0.5),
                                     SpikeVariation(0, np.array([[1.0]]), eps))
    assert pred == pytest.approx(2.0 * eps)
    assert act == pytest.approx(2.0 * eps + 2.0 * eps ** 2)

    pred, act = spike_cost_increment(spec, tree, constant_control(spec, tree, 0.5),
                                     SpikeVariation(0, np.array([[1.0]]), 0.0))
    assert (pred, act) == (0.0, 0.0)


def test_first_order_increment_vanishing_gap():
    # |actual - predicted| / eps -> 0 down a geometric ladder
    spec = smooth_nonlinear(2)
    tree = spec.build_tree()
    u = random_control(spec, tree, 61)
    gaps = []
    for eps in (1e-1, 1e-2, 1e-3):
        spike = random_spike(spec, tree, u, 62, eps, max_scale=1e-1, step=0)
        pred, act = spike_cost_increment(spec, tree, u, spike)
        gaps.append(abs(act - pred) / eps)
    assert gaps[1] <= 0.15 * gaps[0]
    assert gaps[2] <= 0.15 * gaps[1]


def test_predicted_slope_matches_gradient_pairing():
    spec = random_lq(71, steps_max=3)
    tree = spec.build_tree()
    u = random_control(spec, tree, 72)
    spike = random_spike(spec, tree, u, 73, 0.02)
    g = adjoint_gradient(spec, tree, u)
    pairing = spike.scale * float(expect(
        tree, np.einsum("ma,ma->m", g.at(spike.step), spike.delta), spike.step))
    pred, _ = spike_cost_increment(spec, tree, u, spike)
    assert pred == pytest.approx(pairing, abs=1e-12)


def test_rate_check_lq_and_zero_dynamics(e1):
    spec, tree = e1
    u = constant_control(spec, tree, 0.0)
    spike = SpikeVariation(0, np.array([[0.5]]), 1e-1)
    rates = rate_ratios(spec, tree, u, spike)
    assert max(rates["ratio2"]) <= 1e-20
    assert rate_check(spec, tree, u, spike).passed

    zero = builtin("lq_meanfield", n=1, r=1, d=1, h=1.0, N=1, x0=[0.0],
                   lo=-1.0, hi=1.0)
    tz = zero.build_tree()
    uz = constant_control(zero, tz, 0.0)
    rz = rate_ratios(zero, tz, uz, SpikeVariation(0, np.array([[0.5]]), 1e-1))
    assert max(rz["ratio1"]) == 0.0 and max(rz["ratio2"]) == 0.0


def test_rate_check_smooth_nonlinear_second_order():
    spec = smooth_nonlinear(1)
    tree = spec.build_tree()
    u = random_control(spec, tree, 81)
    spike = random_spike(spec, tree, u, 82, 1e-1, max_scale=1e-1, step=0)
    rates = rate_ratios(spec, tree, u, spike)
    r2 = rates["ratio2"]
    assert r2[1] <= 0.1 * r2[0] and r2[2] <= 0.1 * r2[1]
    assert rate_check(spec, tree, u, spike).passed


def test_sufficiency_e1_and_negative_mean_gradient(e1):
    spec, tree = e1
    u = constant_control(spec, tree, 0.0)
    traj, adj = _solved(spec, tree, u)
    report = sufficiency_check(spec, tree, traj, adj, u)
    assert report.passed

    bad = builtin("lq_meanfield", n=1, r=1, d=1, h=1.0, N=0, x0=[0.0],
                  B=[[1.0]], R=[[2.0]], q_mean=[-1.0], lo=-1.0, hi=1.0)
    tb = bad.build_tree()
    ub = constant_control(bad, tb, 0.0)
    traj_b, adj_b = _solved(bad, tb, ub)
    report_b = sufficiency_check(bad, tb, traj_b, adj_b, ub)
    signs = [r for r in report_b.residuals if "mean-gradient" in r.label][0]
    assert signs.value >= 1.0 - 1e-12 and not report_b.passed


def test_adjoint_gradient_closed_forms(e1):
    spec, tree = e1
    for u_val in (0.5, -0.25):
        g = adjoint_gradient(spec, tree, constant_control(spec, tree, u_val))
        assert g.at(0)[0, 0] == pytest.approx(4.0 * u_val)
    zero = builtin("lq_meanfield", n=1, r=1, d=1, h=1.0, N=1, x0=[0.0],
                   lo=-1.0, hi=1.0)
    tz = zero.build_tree()
    gz = adjoint_gradient(zero, tz, constant_control(zero, tz, 0.4))
    assert all(np.all(gz.at(k) == 0.0) for k in (0, 1))
    mf = builtin("lq_meanfield", n=1, r=1, d=1, h=1.0, N=0, x0=[0.0],
                 B=[[1.0]], G_mean=[[2.0]], lo=-5.0, hi=5.0)
    tm = mf.build_tree()
    gm = adjoint_gradient(mf, tm, constant_control(mf, tm, 0.7))
    assert gm.at(0)[0, 0] == pytest.approx(1.4)


def test_gradient_consistency_random_instances():
    for seed in range(8):
        spec = random_lq(seed, steps_max=3) if seed % 2 else random_prodcons(seed, steps_max=3)
        tree = spec.build_tree()
        u = random_control(spec, tree, 900 + seed)
        err, _, _ = gradient_consistency(spec, tree, u)
        assert err <= 1e-6


def test_fd_gradient_carries_probability_weight(e1):
    # raw dJ/du at a node equals the node probability times the costate value
    spec, tree = e1
    u = constant_control(spec, tree, 0.5)
    g_fd = fd_cost_gradient(spec, tree, u)
    assert g_fd.at(0)[0, 0] == pytest.approx(4.0 * 0.5, rel=1e-8)  # root prob is 1


def test_literal_mean_drift_convention_breaks_duality():
    # dropping the step factor on the mean-drift gradient (the h-free variant)
    # breaks the summation-by-parts identity whenever h != 1 and the mean
    # coupling is active; the default convention keeps it exact
    spec = builtin("lq_meanfield", n=2, r=1, d=1, h=0.5, N=2, x0=[0.3, -0.2],
                   A_mean=[[0.4, 0.1], [0.0, 0.3]], B=[[1.0], [0.5]],
                   Q=[[0.5, 0.0], [0.0, 0.5]], R=[[1.0]], G=[[1.0, 0.0], [0.0, 1.0]],
                   lo=-1.0, hi=1.0)
    tree = spec.build_tree()
    u = random_control(spec, tree, 3)
    traj = simulate(spec, tree, u)
    # spike at the first step so the response crosses the mean-coupled drift
    spike = random_spike(spec, tree, u, 4, 0.05, step=0)
    adj_default = solve_adjoint(linearize(spec, tree, traj, u), tree)
    assert duality_residual(spec, tree, traj, adj_default, u, spike) <= 1e-12
    adj_literal = solve_adjoint(
        linearize(spec, tree, traj, u, mean_drift_step=False), tree)
    assert duality_residual(spec, tree, traj, adj_literal, u, spike) > 1e-6


def test_literal_variational_drift_differs():
    # the h-free response recursion is exposed for comparison and genuinely
    # differs from the exact derivative when h != 1
    spec = random_lq(77, steps_max=2)
    assert spec.grid.h != 1.0
    tree = spec.build_tree()
    u = random_control(spec, tree, 78)
    traj = simulate(spec, tree, u)
    spike = random_spike(spec, tree, u, 79, 0.1, step=0)
    xi = variational_state(spec, tree, traj, u, spike)
    xi_lit = variational_state(spec, tree, traj, u, spike, drift_step=False)
    gap = max(float(np.max(np.abs(xi.at(k) - xi_lit.at(k))))
              for k in range(tree.grid.n_steps + 2))
    assert gap > 1e-6


def test_gradient_scales_with_cost_scaling():
    # doubling both cost families doubles H_u node by node, exactly
    base = dict(n=1, r=1, d=1, h=0.5, N=2, x0=[0.4], A=[[0.3]], B=[[0.8]],
                sigma=[{"C": [[0.2]], "s0": [0.3]}], lo=-1.0, hi=1.0)
    spec1 = builtin("lq_meanfield", Q=[[0.6]], R=[[0.8]], G=[[0.5]], q=[0.2], **base)
    spec2 = builtin("lq_meanfield", Q=[[1.2]], R=[[1.6]], G=[[1.0]], q=[0.4], **base)
    tree = spec1.build_tree()
    u = random_control(spec1, tree, 7)
    g1 = adjoint_gradient(spec1, tree, u)
    g2 = adjoint_gradient(spec2, tree, u)
    for k in range(3):
        np.testing.assert_array_equal(2.0 * g1.at(k), g2.at(k))
