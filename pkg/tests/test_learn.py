import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qp_oracle import fixtures, solve_dual
from scantex.errors import DimensionError, FormatError, NonFiniteError, SingleClassError, VersionError
from scantex.learn import (STD_FLOOR, SvmModel, default_gamma, fit_standardizer, load_model, rbf_kernel,
                           save_model, svm_fit, svm_score, svm_train, transform)

# --------------------------------------------------------------------------- standardizer


def test_standardizer_two_points():
    std = fit_standardizer([[0.0], [2.0]])
    assert transform(std, [[0.0], [2.0]]).ravel().tolist() == [-1.0, 1.0]


def test_constant_column_is_zeroed(rng):
    X = np.column_stack([rng.normal(size=10), np.full(10, 3.0)])
    std = fit_standardizer(X)
    assert std.std[1] == STD_FLOOR
    assert not transform(std, X)[:, 1].any()


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 20), st.integers(1, 5)), elements=st.floats(-1e3, 1e3)))
def test_standardized_moments(X):
    std = fit_standardizer(X)
    Z = transform(std, X)
    live = X.std(axis=0) > 1e-6
    assert np.allclose(Z.mean(axis=0), 0, atol=1e-9)
    assert np.allclose(Z[:, live].std(axis=0), 1, atol=1e-6)


def test_standardizer_dimension_errors():
    std = fit_standardizer(np.ones((3, 2)))
    with pytest.raises(DimensionError):
        transform(std, np.ones((3, 4)))
    with pytest.raises(DimensionError):
        fit_standardizer(np.ones((0, 2)))


# --------------------------------------------------------------------------- small worked examples


def test_two_point_matches_grid_search():
    X = np.array([[0.0], [1.0]])
    y = np.array([-1.0, 1.0])
    res = svm_fit(X, y, C=10.0, gamma=1.0, tol=1e-6)
    k12 = np.exp(-1.0)
    grid = np.linspace(0, 10, 200001)
    # the equality constraint forces alpha_1 = alpha_2 = a
    obj = 2 * grid - grid ** 2 * (1 - k12)
    assert res.alpha == pytest.approx([grid[obj.argmax()]] * 2, abs=1e-4)
    assert res.dual_objective() == pytest.approx(obj.max(), abs=1e-8)
    m = res.model
    assert svm_score(m, [0.0]) < 0 < svm_score(m, [1.0])
    for sv, coef in zip(m.support_vectors, m.dual_coef):
        assert np.sign(svm_score(m, sv)) == np.sign(coef)


def test_xor_fits_perfectly():
    X = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
    y = np.array([-1.0, -1.0, 1.0, 1.0])
    m = svm_train(X, y, C=10.0, gamma=1.0)
    assert np.array_equal(np.sign(svm_score(m, X)), y)


def test_tiny_gamma_score_is_bias(rng):
    X = rng.normal(size=(12, 3))
    y = np.where(X[:, 0] > 0, 1.0, -1.0)
    y[:2] = (-1.0, 1.0)
    m = svm_train(X, y, C=1.0, gamma=1e-12, tol=1e-6)
    probe = rng.normal(size=(5, 3))
    assert np.allclose(svm_score(m, probe), m.bias, atol=1e-6)


def test_empty_model_scores_bias():
    m = SvmModel(np.zeros((0, 3)), np.zeros(0), 0.25, 1.0, 1.0)
    assert svm_score(m, np.ones(3)) == 0.25


def test_training_errors():
    with pytest.raises(SingleClassError):
        svm_train(np.ones((3, 2)), [1, 1, 1])
    with pytest.raises(NonFiniteError):
        svm_train([[np.nan], [1.0]], [1, -1])
    with pytest.raises(DimensionError):
        svm_train([[0.0], [1.0]], [1, 0])
    with pytest.raises(DimensionError):
        svm_train([[0.0], [1.0]], [1, -1], C=0.0)
    m = svm_train([[0.0], [1.0]], [-1, 1])
    with pytest.raises(DimensionError):
        svm_score(m, [[0.0, 1.0]])


def test_default_gamma():
    X = np.array([[0.0, 2.0], [2.0, 0.0]])
    assert default_gamma(X) == pytest.approx(1 / (2 * 1.0))


# --------------------------------------------------------------------------- reference QP


@pytest.mark.parametrize("fx", range(12))
@pytest.mark.parametrize("use_numba", [True, False])
def test_smo_matches_reference_qp(fx, use_numba):
    X, y, C, gamma = fixtures()[fx]
    res = svm_fit(X, y, C=C, gamma=gamma, tol=1e-4, use_numba=use_numba)
    K = rbf_kernel(X, X, gamma)
    ref_alpha, ref_obj, ref_b = solve_dual(K, y, C)
    assert abs(res.dual_objective() - ref_obj) <= 1e-4
    ref_scores = K @ (ref_alpha * y) + ref_b
    ours = svm_score(res.model, X)
    confident = np.abs(ref_scores) > 1e-3
    assert np.array_equal(np.sign(ours[confident]), np.sign(ref_scores[confident]))
    # box and equality constraints
    assert np.all(res.alpha >= 0) and np.all(res.alpha <= C)
    assert abs(res.alpha @ y) <= 1e-6


def test_kkt_conditions_at_convergence():
    for X, y, C, gamma in fixtures(seed=9):
        tol = 1e-4
        res = svm_fit(X, y, C=C, gamma=gamma, tol=tol)
        f = res.kernel @ (res.alpha * y) + res.model.bias
        margin = y * f
        a = res.alpha
        slack = 2 * tol
        assert np.all(margin[a <= 0] >= 1 - slack)
        assert np.all(margin[a >= C] <= 1 + slack)
        free = (a > 0) & (a < C)
        assert np.all(np.abs(margin[free] - 1) <= slack)


def test_numba_and_numpy_paths_agree(rng):
    X = rng.normal(size=(60, 5))
    y = np.where(X[:, 0] + 0.3 * rng.normal(size=60) > 0, 1.0, -1.0)
    a = svm_fit(X, y, use_numba=True)
    b = svm_fit(X, y, use_numba=False)
    assert np.array_equal(a.alpha, b.alpha) and a.model.bias == b.model.bias


def test_training_is_deterministic(tmp_path, rng):
    X = rng.normal(size=(40, 4))
    y = np.where(X[:, 1] > 0, 1.0, -1.0)
    for run in ("a", "b"):
        save_model(svm_train(X, y, fingerprint={"method": "x"}), tmp_path / run)
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    assert (tmp_path / "a.svmjson").read_bytes() == (tmp_path / "b.svmjson").read_bytes()


def test_constant_dimension_does_not_change_scores(rng):
    X = rng.normal(size=(30, 3))
    y = np.where(X[:, 0] > 0, 1.0, -1.0)
    padded = np.column_stack([X, np.full(30, 7.5)])
    s1, s2 = fit_standardizer(X), fit_standardizer(padded)
    Z1, Z2 = transform(s1, X), transform(s2, padded)
    m1 = svm_train(Z1, y, gamma=0.3)
    m2 = svm_train(Z2, y, gamma=0.3)
    probe = rng.normal(size=(10, 3))
    p2 = np.column_stack([probe, rng.normal(size=10)])
    assert np.allclose(svm_score(m1, transform(s1, probe)), svm_score(m2, transform(s2, p2)), atol=1e-12)


# --------------------------------------------------------------------------- persistence


def _trained(rng):
    X = rng.normal(size=(30, 4))
    y = np.where(X[:, 0] > 0, 1.0, -1.0)
    std = fit_standardizer(X)
    return svm_train(transform(std, X), y, fingerprint={"method": "dct2", "manifest": "abc"}), std


def test_save_load_round_trip(tmp_path, rng):
    model, std = _trained(rng)
    save_model(model, tmp_path / "m", std)
    back, back_std = load_model(tmp_path / "m")
    probes = rng.normal(size=(100, 4))
    assert np.array_equal(svm_score(model, probes), svm_score(back, probes))
    assert np.array_equal(back_std.mean, std.mean) and np.array_equal(back_std.std, std.std)
    assert back.fingerprint == {"method": "dct2", "manifest": "abc"}


def test_truncated_model(tmp_path, rng):
    model, _ = _trained(rng)
    save_model(model, tmp_path / "m")
    raw = (tmp_path / "m.bin").read_bytes()
    (tmp_path / "m.bin").write_bytes(raw[:-8])
    with pytest.raises(FormatError):
        load_model(tmp_path / "m")


def test_corrupted_model(tmp_path, rng):
    model, _ = _trained(rng)
    save_model(model, tmp_path / "m")
    raw = bytearray((tmp_path / "m.bin").read_bytes())
    raw[3] ^= 1
    (tmp_path / "m.bin").write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        load_model(tmp_path / "m")


def test_version_mismatch(tmp_path, rng):
    model, _ = _trained(rng)
    save_model(model, tmp_path / "m")
    meta = json.loads((tmp_path / "m.svmjson").read_text())
    meta["format_version"] = 99
    (tmp_path / "m.svmjson").write_text(json.dumps(meta))
    with pytest.raises(VersionError):
        load_model(tmp_path / "m")
