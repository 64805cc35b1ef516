import numpy as np
import pytest

from dccm.certifier import (CertGrid, certify_region, estimate_lipschitz, h_from_matrices, h_value)
from dccm.dccm_trainer import omega
from dccm.errors import ConfigError, ContractError


def test_isometry_gives_zero():
    c, s = np.cos(0.3), np.sin(0.3)
    A = np.array([[c, -s], [s, c]])
    h = h_from_matrices(A, np.zeros((2, 1)), np.zeros((1, 2)), np.eye(2), np.eye(2))
    assert h == pytest.approx(0.0, abs=1e-14)


def test_scalar_value():
    assert h_from_matrices([[0.5]], [[0.0]], [[0.0]], [[1.0]], [[1.0]]) == pytest.approx(-0.75)


def test_non_pd_metric_is_nan():
    assert np.isnan(h_from_matrices([[0.5]], [[0.0]], [[0.0]], [[-1.0]], [[1.0]]))


def test_congruence_equivalence(rng):
    """``h < 0`` exactly when ``M_k - Acl^T M_k1 Acl`` is positive definite."""
    agree = 0
    for _ in range(500):
        A, B, K = rng.normal(size=(2, 2)) * 0.7, rng.normal(size=(2, 1)), rng.normal(size=(1, 2)) * 0.3
        X, Y = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
        Mk, Mk1 = X @ X.T + 0.1 * np.eye(2), Y @ Y.T + 0.1 * np.eye(2)
        h = float(h_from_matrices(A, B, K, Mk, Mk1))
        diff = np.linalg.eigvalsh(omega(A, B, K, Mk, Mk1, 0.0)).min()
        if abs(diff) < 1e-9 or abs(h) < 1e-9:
            continue
        assert (h < 0) == (diff > 0)
        agree += 1
    assert agree > 400


def test_rate_relation_to_omega(rng):
    """``-h`` is the largest beta for which Omega stays positive semidefinite."""
    A, B, K = np.array([[0.6, 0.2], [0.0, 0.5]]), np.zeros((2, 1)), np.zeros((1, 2))
    M = np.eye(2)
    lam = -float(h_from_matrices(A, B, K, M, M))
    assert np.linalg.eigvalsh(omega(A, B, K, M, M, lam - 1e-9)).min() >= -1e-12
    assert np.linalg.eigvalsh(omega(A, B, K, M, M, lam + 1e-6)).min() < 0


def test_lipschitz_examples():
    assert estimate_lipschitz(np.full((5, 4), 3.0), [0.1, 0.2]) == 0.0
    xs = np.linspace(0, 1, 11)
    assert estimate_lipschitz(2 * xs, [0.1], safety=1.0) == pytest.approx(2.0, rel=1e-12)
    with pytest.raises(ContractError):
        estimate_lipschitz(np.array([1.0]), [0.1])


def test_lipschitz_refinement_does_not_drop():
    f = lambda x, y: np.sin(3 * x) * np.cos(2 * y)  # noqa: E731
    ests = []
    for n in (11, 21, 41, 81):
        xs = np.linspace(0, 1, n)
        X, Y = np.meshgrid(xs, xs, indexing="ij")
        ests.append(estimate_lipschitz(f(X, Y), [xs[1]] * 2, safety=1.0))
    assert all(b >= a - 0.02 * a for a, b in zip(ests, ests[1:]))
    assert ests[-1] <= 3.0 + 1e-12  # never exceeds the true axis slope bound


def test_scalar_certificate(scalar_trained, scalar_plant):
    _, _, net, _ = scalar_trained
    grid = CertGrid(state_step=0.01, input_step=0.05, param_step=0.1)
    rep = certify_region(net, scalar_plant, grid, lambda_target=0.1)
    assert rep.non_pd_points == 0 and rep.h_max < 0
    assert rep.certified and rep.covering_ok
    assert rep.rate_min <= rep.pointwise_rate_min
    too_much = certify_region(net, scalar_plant, grid, lambda_target=rep.pointwise_rate_min + 0.01)
    assert not too_much.certified and too_much.uncovered_points


def test_refinement_improves_rate(cstr_dccm, cstr):
    coarse = certify_region(cstr_dccm, cstr, CertGrid(0.1, 0.2, 0.5), 0.05)
    fine = certify_region(cstr_dccm, cstr, CertGrid(0.05, 0.1, 0.25), 0.05)
    assert fine.rate_min >= coarse.rate_min
    assert fine.rate_min <= fine.pointwise_rate_min
    assert fine.alpha1 > 0 and fine.alpha2 >= fine.alpha1 and fine.G == pytest.approx(1.0)


def test_h_value_single_point(cstr_dccm, cstr):
    h = h_value(cstr_dccm, cstr, [1.0], [0.9, 0.3], [0.0])
    assert np.isfinite(h) and h < 0


def test_lambda_must_be_positive(cstr_dccm, cstr):
    with pytest.raises(ConfigError):
        certify_region(cstr_dccm, cstr, CertGrid(), 0.0)


def test_report_json(cstr_dccm, cstr):
    import json
    rep = certify_region(cstr_dccm, cstr, CertGrid(0.2, 0.5, 1.0), 0.05)
    d = json.loads(json.dumps(rep.to_json()))
    assert d["beta_equivalent"] == rep.rate_min and "empirical" in d["note"]
