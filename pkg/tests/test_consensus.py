import numpy as np
import pytest

from feddag.consensus import (
    GlobalStepInput,
    global_update,
    majorizer_value,
    smooth_gradient,
    smooth_value,
)
from feddag.dag import h_and_grad
from feddag.errors import NonFinite
from feddag.types import PenaltyConfig


def rand_mat(rng, d, scale=1.0):
    M = rng.normal(size=(d, d)) * scale
    np.fill_diagonal(M, 0)
    return M


def test_gradient_terms_cancel():
    rng = np.random.default_rng(0)
    Z = rand_mat(rng, 4, 0.5)
    h, gh = h_and_grad(Z)
    g = smooth_gradient(Z, Z, 0.0, np.zeros((4, 4)), 2.0, 3.0)
    np.testing.assert_allclose(g, 2.0 * h * gh)
    dag = np.triu(rand_mat(rng, 4), 1)
    assert not smooth_gradient(dag, dag, 0.0, np.zeros((4, 4)), 2.0, 3.0).any()


def test_gradient_isolates_h_term():
    rng = np.random.default_rng(1)
    Z = rand_mat(rng, 4, 0.5)
    np.testing.assert_array_equal(
        smooth_gradient(Z, rand_mat(rng, 4), 1.0, np.zeros((4, 4)), 0.0, 0.0), h_and_grad(Z).gradient)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    Z, W, beta = rand_mat(rng, 4, 0.5), rand_mat(rng, 4), rand_mat(rng, 4)
    alpha, r1, r2 = 0.7, 1.3, 2.1
    g = smooth_gradient(Z, W, alpha, beta, r1, r2)
    eps = 1e-6
    for i in range(4):
        for j in range(4):
            if i == j:
                continue
            E = np.zeros((4, 4))
            E[i, j] = eps
            fd = (smooth_value(Z + E, W, alpha, beta, r1, r2) - smooth_value(Z - E, W, alpha, beta, r1, r2)) / (2 * eps)
            assert g[i, j] == pytest.approx(fd, abs=1e-5)


def test_unpenalised_step_is_pull_towards_w():
    rng = np.random.default_rng(3)
    Z, W = rand_mat(rng, 3), rand_mat(rng, 3)
    pen = PenaltyConfig(lambda1=0.0, lambda2=0.0)
    res = global_update(GlobalStepInput([Z], [W], [0.0], [np.zeros((3, 3))], 0.0, 2.0, pen), floor="quadratic")
    C = res.step[0]
    np.testing.assert_allclose(res.Z[0], Z - (2.0 / C) * (Z - W), atol=1e-15)
    assert C == 2.0  # a quadratic is majorized by its own curvature


def test_single_site_ignores_fusion_penalty():
    rng = np.random.default_rng(4)
    Z, W, beta = rand_mat(rng, 4, 0.3), rand_mat(rng, 4), rand_mat(rng, 4, 0.1)
    args = ([Z], [W], [0.2], [beta], 1.0, 1.5)
    a = global_update(GlobalStepInput(*args, PenaltyConfig(lambda2=0.0)))
    b = global_update(GlobalStepInput(*args, PenaltyConfig(lambda2=3.0)))
    np.testing.assert_array_equal(a.Z[0], b.Z[0])


@pytest.mark.parametrize("shared", [False, True])
def test_majorizer_decreases_and_diagonals_zero(shared):
    rng = np.random.default_rng(5)
    K, d = 3, 4
    Z = [rand_mat(rng, d, 0.4) for _ in range(K)]
    W = [rand_mat(rng, d) for _ in range(K)]
    beta = [rand_mat(rng, d, 0.2) for _ in range(K)]
    alpha = np.array([0.5, 0.1, 0.0])
    pen = PenaltyConfig(lambda1=0.05, lambda2=0.1)
    inp = GlobalStepInput(Z, W, alpha, beta, 2.0, 1.5, pen)
    res = global_update(inp, shared=shared)
    grads = [smooth_gradient(Z[k], W[k], alpha[k], beta[k], 2.0, 1.5) for k in range(K)]
    f_prev = [smooth_value(Z[k], W[k], alpha[k], beta[k], 2.0, 1.5) for k in range(K)]
    C = float(res.step.max())
    l2 = 0.0 if shared else pen.lambda2
    before = majorizer_value(Z, Z, grads, f_prev, C, pen.lambda1, l2)
    after = majorizer_value(res.Z, Z, grads, f_prev, C, pen.lambda1, l2)
    assert after <= before + 1e-12
    # sufficient decrease of the true objective follows from the accepted majorizer
    f_new = sum(smooth_value(res.Z[k], W[k], alpha[k], beta[k], 2.0, 1.5) for k in range(K))
    assert f_new <= sum(f_prev) + sum(np.sum(g * (z - zp)) for g, z, zp in zip(grads, res.Z, Z)) \
        + 0.5 * C * sum(np.sum((z - zp) ** 2) for z, zp in zip(res.Z, Z)) + 1e-9
    assert all(np.all(np.diag(z) == 0) for z in res.Z)
    if shared:
        assert all(np.array_equal(res.Z[0], z) for z in res.Z)


def test_step_floor_and_warm_start():
    rng = np.random.default_rng(6)
    Z, W = rand_mat(rng, 3), rand_mat(rng, 3)
    inp = GlobalStepInput([Z], [W], [0.3], [np.zeros((3, 3))], 2.0, 1.0, PenaltyConfig())
    res = global_update(inp)
    assert res.step[0] >= 1.0 + 2.0 + 0.3
    res2 = global_update(inp, C_start=res.step * 4)
    assert res2.step[0] >= res.step[0] * 4
    with pytest.raises(ValueError):
        global_update(inp, floor="nope")


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_gradient():
    Z = np.array([[0.0, 1e200], [1e200, 0.0]])
    with pytest.raises(NonFinite):
        global_update(GlobalStepInput([Z], [Z], [0.0], [np.zeros((2, 2))], 1.0, 1.0, PenaltyConfig()))


def test_site_steps_certify_each_site():
    rng = np.random.default_rng(8)
    K, d = 3, 4
    Z = [rand_mat(rng, d, 0.4) for _ in range(K)]
    W = [rand_mat(rng, d) for _ in range(K)]
    beta = [rand_mat(rng, d, 0.2) for _ in range(K)]
    alpha = np.array([3.0, 0.0, 0.2])
    pen = PenaltyConfig(lambda1=0.05, lambda2=0.1)
    inp = GlobalStepInput(Z, W, alpha, beta, 5.0, 1.0, pen)
    res = global_update(inp, C_start=np.array([0.5, 0.5, 0.5]), floor="quadratic", site_steps=True)
    assert res.step.shape == (K,) and np.all(res.step >= 1.0)
    for k in range(K):
        g = smooth_gradient(Z[k], W[k], alpha[k], beta[k], 5.0, 1.0)
        f0 = smooth_value(Z[k], W[k], alpha[k], beta[k], 5.0, 1.0)
        diff = res.Z[k] - Z[k]
        bound = f0 + np.sum(g * diff) + 0.5 * res.step[k] * np.sum(diff * diff)
        assert smooth_value(res.Z[k], W[k], alpha[k], beta[k], 5.0, 1.0) <= bound + 1e-9
    grads = [smooth_gradient(Z[k], W[k], alpha[k], beta[k], 5.0, 1.0) for k in range(K)]
    f_prev = [smooth_value(Z[k], W[k], alpha[k], beta[k], 5.0, 1.0) for k in range(K)]
    before = majorizer_value(Z, Z, grads, f_prev, res.step, pen.lambda1, pen.lambda2)
    after = majorizer_value(res.Z, Z, grads, f_prev, res.step, pen.lambda1, pen.lambda2)
    assert after <= before + 1e-12
