import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfsmp.errors import MfsmpError, TreeSizeError
from mfsmp.tree import (AdaptedProcess, NoiseModel, TimeGrid, build_tree, cond_expect,
                        expect, tree_invariants_report, validate_noise)


def test_binary_one_step_two_leaves():
    tree = build_tree(TimeGrid(0.0, 1.0, 0), NoiseModel.binary(1, 1.0))
    assert tree.level_sizes == [1, 2]
    np.testing.assert_allclose(tree.abs_prob[1], [0.5, 0.5])
    np.testing.assert_allclose(sorted(tree.increments[1][:, 0]), [-1.0, 1.0])


def test_product_law_two_components():
    tree = build_tree(TimeGrid(0.0, 1.0, 0), NoiseModel.binary(2, 1.0))
    assert tree.level_sizes == [1, 4]
    np.testing.assert_allclose(tree.abs_prob[1], 0.25)


def test_three_step_path_probabilities():
    tree = build_tree(TimeGrid(0.0, 0.5, 2), NoiseModel.binary(1, 0.5))
    assert tree.level_sizes == [1, 2, 4, 8]
    # product of conditional probabilities along each path
    for level in range(1, 4):
        manual = tree.cond_prob[level].copy()
        parents = tree.parent[level]
        manual *= tree.abs_prob[level - 1][parents]
        np.testing.assert_allclose(tree.abs_prob[level], manual, atol=1e-15)
    np.testing.assert_allclose(tree.abs_prob[3], 1.0 / 8.0)


def test_node_cap_guard():
    with pytest.raises(TreeSizeError, match="too large"):
        build_tree(TimeGrid(0.0, 1.0, 25), NoiseModel.binary(1, 1.0), node_cap=1000)


def test_grid_validation():
    with pytest.raises(MfsmpError):
        TimeGrid(0.0, 0.0, 1)
    with pytest.raises(MfsmpError):
        TimeGrid(0.0, 1.0, -1)


def test_validate_noise_binary_exact():
    report = validate_noise(NoiseModel.binary(1, 1.0), tol=1e-14)
    assert report.passed
    bounded = [r for r in report.residuals if np.isfinite(r.tol)]
    assert max(r.value for r in bounded) <= 1e-14


def test_validate_noise_trinomial():
    # {-a, 0, +a} with tail mass p and 2 p a^2 = h hits all moment targets
    report = validate_noise(NoiseModel.trinomial(2, 0.5, 0.2), tol=1e-14)
    assert report.passed


def test_validate_noise_one_point_fails_mean():
    model = NoiseModel(1, 1.0, [np.array([1.0])], [np.array([1.0])])
    report = validate_noise(model, tol=1e-14)
    assert not report.passed
    mean_res = [r for r in report.residuals if r.label.startswith("|E w^1|")][0]
    assert mean_res.value == pytest.approx(1.0)


def test_noise_model_rejects_bad_probabilities():
    with pytest.raises(MfsmpError):
        NoiseModel(1, 1.0, [np.array([1.0, -1.0])], [np.array([0.7, 0.2])])
    with pytest.raises(MfsmpError):
        NoiseModel(1, 1.0, [np.array([1.0, -1.0])], [np.array([1.0, -0.0])])
    with pytest.raises(MfsmpError):
        NoiseModel.trinomial(1, 1.0, p=0.6)


def test_cond_expect_examples():
    tree = build_tree(TimeGrid(0.0, 1.0, 0), NoiseModel.binary(1, 1.0))
    np.testing.assert_allclose(cond_expect(tree, np.array([7.0, 7.0]), 1), [7.0])
    vals = np.array([3.0, 1.0])
    assert cond_expect(tree, vals, 1, node=0) == pytest.approx(2.0)
    # increments come out as (+1, -1) at unit step: 0.5*3*1 + 0.5*1*(-1) = 1,
    # the conditional covariation that defines the martingale part of a costate
    np.testing.assert_array_equal(tree.increments[1][:, 0], [1.0, -1.0])
    weighted = vals * tree.increments[1][:, 0]
    assert cond_expect(tree, weighted, 1, node=0) == pytest.approx(1.0)


def test_expect_examples():
    tree = build_tree(TimeGrid(0.0, 1.0, 1), NoiseModel.binary(1, 1.0))
    root = AdaptedProcess.constant(tree, 0, 0, [4.0])
    assert expect(tree, root, 0) == pytest.approx(4.0)
    assert expect(tree, AdaptedProcess.constant(tree, 2, 2, [2.5]), 2) == pytest.approx(2.5)


def test_usage_errors():
    tree = build_tree(TimeGrid(0.0, 1.0, 0), NoiseModel.binary(1, 1.0))
    with pytest.raises(MfsmpError):
        cond_expect(tree, np.zeros(2), 0)       # root has no parent level
    with pytest.raises(MfsmpError):
        cond_expect(tree, np.zeros(3), 1)       # wrong node count
    with pytest.raises(MfsmpError):
        expect(tree, np.zeros(2), 5)            # level out of range


def test_adapted_process_range():
    tree = build_tree(TimeGrid(0.0, 1.0, 1), NoiseModel.binary(1, 1.0))
    proc = AdaptedProcess.zeros(tree, 1, 2, (2,))
    assert proc.at(1).shape == (2, 2)
    with pytest.raises(MfsmpError):
        proc.at(0)
    with pytest.raises(MfsmpError):
        AdaptedProcess(tree, 0, [np.zeros((3, 1))])  # wrong level size


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 30))
def test_tower_property(seed):
    """E[E[z | parent]] equals E[z], exactly up to roundoff, on a 3-level tree."""
    tree = build_tree(TimeGrid(0.0, 0.5, 1), NoiseModel.trinomial(1, 0.5, 0.25))
    rng = np.random.default_rng(seed)
    for level in (1, 2):
        z = rng.uniform(-5.0, 5.0, (tree.size(level), 2))
        inner = cond_expect(tree, z, level)
        lhs = expect(tree, z, level)
        rhs = expect(tree, inner, level - 1)
        np.testing.assert_allclose(lhs, rhs, atol=1e-14)


def test_martingale_increments_and_probability_sums():
    tree = build_tree(TimeGrid(0.0, 0.25, 3), NoiseModel.binary(2, 0.25))
    h = tree.grid.h
    for level in range(1, tree.n_levels):
        inc = tree.increments[level]
        assert np.max(np.abs(cond_expect(tree, inc, level))) <= 1e-14
        assert np.max(np.abs(cond_expect(tree, inc ** 2, level) - h)) <= 1e-13
        assert abs(tree.abs_prob[level].sum() - 1.0) <= 1e-14
    assert tree_invariants_report(tree).passed
