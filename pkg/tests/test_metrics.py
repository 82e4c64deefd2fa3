import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nnfn.linalg import FactorPair, ObservedMatrix
from nnfn.metrics import EvaluationReport, nmse, numerical_rank, rmse
from nnfn.regularizers import prox_nnfn


@pytest.fixture
def G_and_mask():
    rng = np.random.default_rng(0)
    return rng.standard_normal((8, 6)), rng.random((8, 6)) < 0.5


class TestNMSE:
    def test_perfect(self, G_and_mask):
        G, mask = G_and_mask
        assert nmse(G, G, mask) == 0.0

    def test_zero_and_double(self, G_and_mask):
        G, mask = G_and_mask
        assert nmse(np.zeros_like(G), G, mask) == pytest.approx(1.0)
        assert nmse(2 * G, G, mask) == pytest.approx(1.0)

    def test_ratio_of_norms_not_squares(self, G_and_mask):
        G, mask = G_and_mask
        assert nmse(1.5 * G, G, mask) == pytest.approx(0.5)

    def test_mask_forms_agree(self, G_and_mask):
        G, mask = G_and_mask
        X = G + 0.1
        assert nmse(X, G, mask) == nmse(X, G, ObservedMatrix.from_dense(G, mask))

    def test_factor_pair(self):
        rng = np.random.default_rng(1)
        fp = FactorPair(rng.standard_normal((8, 2)), rng.standard_normal((6, 2)))
        G = rng.standard_normal((8, 6))
        mask = rng.random((8, 6)) < 0.5
        assert nmse(fp, G, mask) == pytest.approx(nmse(fp.to_dense(), G, mask), rel=1e-12)

    def test_errors(self, G_and_mask):
        G, mask = G_and_mask
        with pytest.raises(ValueError, match="empty"):
            nmse(G, G, np.zeros_like(mask))
        with pytest.raises(ValueError, match="zero"):
            nmse(G, np.zeros_like(G), mask)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.floats(1e-3, 10))
    def test_residual_scale_covariance(self, seed, scale):
        rng = np.random.default_rng(seed)
        G = rng.standard_normal((5, 4))
        D = scale * rng.standard_normal((5, 4))
        mask = np.ones((5, 4), bool)
        assert nmse(G + D, G, mask) == pytest.approx(np.linalg.norm(D) / np.linalg.norm(G), rel=1e-12)


class TestRMSE:
    def _test(self, vals):
        n = len(vals)
        return ObservedMatrix((n, 1), np.arange(n), np.zeros(n, int), np.array(vals, float))

    def test_exact_match(self):
        t = self._test([1.0, 2.0])
        assert rmse(t.to_dense(), t) == 0.0

    def test_single_error(self):
        assert rmse(np.zeros((1, 1)), self._test([3.0])) == pytest.approx(3.0)

    def test_two_errors(self):
        assert rmse(np.zeros((2, 1)), self._test([3.0, 4.0])) == pytest.approx(np.sqrt(12.5))

    def test_empty(self):
        with pytest.raises(ValueError):
            rmse(np.zeros((2, 2)), ObservedMatrix.empty((2, 2)))


class TestRank:
    def test_examples(self):
        assert numerical_rank(np.diag([3.0, 2.0, 0.0])) == 2
        assert numerical_rank(np.zeros((4, 3))) == 0

    def test_factor_pair(self):
        rng = np.random.default_rng(2)
        W = rng.standard_normal((10, 4))
        W[:, 3] = W[:, 0] + W[:, 1]
        fp = FactorPair(W, rng.standard_normal((9, 4)))
        assert numerical_rank(fp) == 3
        assert numerical_rank(fp.to_dense()) == 3

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0, 5))
    def test_prox_never_raises_rank(self, seed, lam):
        Z = np.random.default_rng(seed).standard_normal((6, 5))
        assert numerical_rank(prox_nnfn(Z, lam)) <= numerical_rank(Z)


def test_report_validation():
    r = EvaluationReport("NMSE", 0.1, 10, 5, 0.2)
    assert r.metric_name.value == "NMSE"
    with pytest.raises(ValueError):
        EvaluationReport("RMSE", -1.0, 10, 5, 0.2)
    with pytest.raises(ValueError):
        EvaluationReport("RMSE", 1.0, 0, 5, 0.2)
