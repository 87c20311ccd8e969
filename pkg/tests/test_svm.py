import numpy as np
import pytest

from deep_bow.errors import DimMismatch, NoConvergence, SingleClass
from deep_bow.schemas.features import FeatureMatrix
from deep_bow.schemas.models import SvmParams
from deep_bow.services.svm import (
    ALPHA_EPS,
    decision_function,
    kernel_matrix,
    load_svm,
    predict_labels,
    project_feasible,
    qp_oracle,
    rbf_kernel,
    save_svm,
    signed_labels,
    solve_dual,
    svm_predict,
    svm_predict_many,
    svm_train,
)

from tests.conftest import blobs


def _kkt_violation(alpha, y, K, bias, C):
    """Largest violation of the soft-margin optimality conditions."""
    margin = y * (K @ (alpha * y) + bias)
    worst = 0.0
    for a, m in zip(alpha, margin):
        if a <= ALPHA_EPS:
            worst = max(worst, 1.0 - m)
        elif a >= C - ALPHA_EPS:
            worst = max(worst, m - 1.0)
        else:
            worst = max(worst, abs(m - 1.0))
    return worst


def test_rbf_kernel_values():
    assert rbf_kernel([0.0, 0.0], [0.0, 0.0], 0.7) == 1.0
    assert rbf_kernel([1.0, 0.0], [0.0, 2.0], 0.5) == pytest.approx(np.exp(-2.5))
    with pytest.raises(DimMismatch):
        rbf_kernel([1.0], [1.0, 2.0], 1.0)


def test_kernel_matrix_matches_pairwise(rng):
    a, b = rng.standard_normal((4, 3)), rng.standard_normal((2, 3))
    K = kernel_matrix(a, b, 0.3)
    assert K.shape == (4, 2)
    assert K[2, 1] == pytest.approx(rbf_kernel(a[2], b[1], 0.3))


def test_single_class_is_rejected():
    with pytest.raises(SingleClass):
        signed_labels(np.array([1, 1, 1]))
    with pytest.raises(SingleClass):
        svm_train(np.zeros((3, 2)), np.zeros(3), SvmParams(C=1.0, gamma=1.0))


@pytest.mark.parametrize("C,gamma", [(0.5, 0.5), (1.0, 1.0), (10.0, 0.2), (100.0, 2.0)])
def test_smo_matches_the_qp_oracle(rng, C, gamma):
    X, y = blobs(rng, n_per_class=8, d=2, gap=1.5)
    params = SvmParams(C=C, gamma=gamma)
    model = svm_train(X, y, params, tol=1e-8, max_passes=2000)
    oracle = qp_oracle(X, y, params)
    assert model.converged
    assert model.dual_objective == pytest.approx(oracle.objective, rel=1e-6, abs=1e-8)
    np.testing.assert_allclose(
        decision_function(model, X),
        kernel_matrix(X, X, gamma) @ (oracle.alpha * signed_labels(y)) + oracle.bias,
        atol=1e-2,
    )


def test_solution_satisfies_kkt(rng):
    X, y = blobs(rng, n_per_class=12, d=3, gap=1.0)
    C, gamma = 2.0, 0.4
    K = kernel_matrix(X, X, gamma)
    ys = signed_labels(y)
    solution = solve_dual(K, ys, C, tol=1e-6, max_passes=1000)
    assert solution.converged
    assert np.all(solution.alpha >= 0.0) and np.all(solution.alpha <= C)
    assert abs(solution.alpha @ ys) < 1e-9
    assert _kkt_violation(solution.alpha, ys, K, solution.bias, C) < 1e-4


def test_separable_data_is_fit_exactly(rng):
    X, y = blobs(rng, n_per_class=10, d=2, gap=6.0)
    model = svm_train(X, y, SvmParams(C=10.0, gamma=0.5))
    np.testing.assert_array_equal(svm_predict_many(model, X), y)
    assert 0 < len(model.support_vectors) <= len(X)
    assert np.all(np.abs(model.dual_coef) > ALPHA_EPS)


def test_xor_needs_the_kernel():
    X = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
    y = np.array([0, 0, 1, 1])
    model = svm_train(X, y, SvmParams(C=100.0, gamma=2.0), tol=1e-6)
    np.testing.assert_array_equal(svm_predict_many(model, X), y)


def test_two_points_split_the_difference():
    X = np.array([[-1.0, 0.0], [1.0, 0.0]])
    model = svm_train(X, np.array([0, 1]), SvmParams(C=10.0, gamma=0.5), tol=1e-9)
    assert model.bias == pytest.approx(0.0, abs=1e-9)
    label, decision = svm_predict(model, [0.0, 3.0])
    assert decision == pytest.approx(0.0, abs=1e-9)
    assert svm_predict(model, [1.0, 0.0])[0] == 1
    assert svm_predict(model, [-1.0, 0.0])[0] == 0


def test_zero_decision_counts_as_positive():
    assert predict_labels(np.array([-1e-12, 0.0, 2.0])).tolist() == [0, 1, 1]


def test_feature_matrix_input_carries_names(rng):
    X, y = blobs(rng, n_per_class=5)
    matrix = FeatureMatrix(values=X, names=["a", "b"], labels=y, subject_ids=[str(i) for i in range(10)])
    model = svm_train(matrix, params=SvmParams(C=1.0, gamma=1.0))
    assert model.feature_names == ["a", "b"]
    with pytest.raises(DimMismatch):
        svm_predict(model, [1.0, 2.0, 3.0])


def test_iteration_cap(rng):
    X, y = blobs(rng, n_per_class=15, d=2, gap=0.5)
    params = SvmParams(C=100.0, gamma=5.0)
    model = svm_train(X, y, params, tol=1e-12, max_passes=1)
    assert not model.converged
    with pytest.raises(NoConvergence):
        svm_train(X, y, params, tol=1e-12, max_passes=1, strict=True)


def test_projection_is_feasible_and_fixes_feasible_points(rng):
    y = np.array([1.0, 1.0, -1.0, -1.0, 1.0])
    v = 3.0 * rng.standard_normal(5)
    p = project_feasible(v, y, 2.0)
    assert np.all(p >= 0.0) and np.all(p <= 2.0)
    assert abs(p @ y) < 1e-12
    np.testing.assert_allclose(project_feasible(p, y, 2.0), p, atol=1e-12)


def test_model_round_trip(tmp_path, rng):
    X, y = blobs(rng, n_per_class=6)
    model = svm_train(X, y, SvmParams(C=1.0, gamma=0.5), feature_names=["f0", "f1"])
    save_svm(model, tmp_path / "svm.json")
    again = load_svm(tmp_path / "svm.json")
    np.testing.assert_allclose(decision_function(again, X), decision_function(model, X))
    assert again.feature_names == ["f0", "f1"]


@pytest.mark.slow
def test_smo_agrees_with_the_oracle_on_random_instances():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        n_per_class = int(rng.integers(2, 11))
        X, y = blobs(rng, n_per_class=n_per_class, d=int(rng.integers(1, 4)), gap=float(rng.uniform(0.5, 3.0)))
        params = SvmParams(C=float(rng.choice([0.5, 1.0, 10.0])), gamma=float(rng.choice([0.2, 1.0])))
        model = svm_train(X, y, params, tol=1e-8, max_passes=2000)
        oracle = qp_oracle(X, y, params)
        assert model.dual_objective == pytest.approx(oracle.objective, rel=1e-6, abs=1e-8)

        oracle_decisions = kernel_matrix(X, X, params.gamma) @ (oracle.alpha * signed_labels(y)) + oracle.bias
        clear = np.abs(oracle_decisions) > 5e-2
        np.testing.assert_array_equal(
            svm_predict_many(model, X)[clear], predict_labels(oracle_decisions)[clear]
        )
        alpha = np.zeros(len(y))
        alpha[model.support_indices] = np.abs(model.dual_coef)
        K = kernel_matrix(X, X, params.gamma)
        assert _kkt_violation(alpha, signed_labels(y), K, model.bias, params.C) < 1e-3
