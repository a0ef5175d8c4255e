"""
Unit tests for the sequence mixers: S6 scan, its matrix form and softmax attention.
"""

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from models.errors import InvalidParameterError
from models.ssm import (DTYPE, S6Params, AttnParams, s6_scan, s6_materialize, s6_via_matrix,
                        attention_matrix, sdpa, permutation_discrepancy, check_order_dependence)


def _randn(*shape, seed=0):
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed), dtype=DTYPE)


def _terms(p, X):
    """(delta, B, C) per token, straight from the parametrization."""
    delta = F.softplus(X @ p.W_delta.T + p.b_delta)
    return delta, X @ p.W_B.T, X @ p.W_C.T


def _scalar_s6(w_b, w_c, a_log=1.0):
    """Width 1, one state, constant step softplus(0) = log 2."""
    p = S6Params(1, 1)
    with torch.no_grad():
        p.W_delta.zero_()
        p.b_delta.zero_()
        p.A_log.fill_(a_log)
        p.W_B.fill_(w_b)
        p.W_C.fill_(w_c)
        p.D_skip.fill_(1.0)
    return p


class TestS6Scan:
    """Tests for the recurrent S6 evaluation."""

    def test_output_shape(self):
        """Test batched and single-sequence shapes."""
        p = S6Params.random(6, 4, seed=1)
        assert s6_scan(p, _randn(3, 10, 6)).shape == (3, 10, 6)
        assert s6_scan(p, _randn(10, 6)).shape == (10, 6)

    def test_pointwise_is_identity(self):
        """Test that the degenerate configuration returns its input."""
        p = S6Params.pointwise(5, 3)
        X = _randn(7, 5)
        with torch.no_grad():
            assert torch.equal(s6_scan(p, X), X)

    def test_causal(self):
        """Test that changing the last token leaves earlier outputs bit-identical."""
        p = S6Params.random(4, 4, seed=2)
        X = _randn(9, 4)
        Z = X.clone()
        Z[-1] = 10.0
        with torch.no_grad():
            assert torch.equal(s6_scan(p, X)[:-1], s6_scan(p, Z)[:-1])

    def test_zero_input_gives_zero_output(self):
        """Test that an all-zero sequence stays zero."""
        p = S6Params.random(4, 3, seed=2)
        with torch.no_grad():
            assert torch.equal(s6_scan(p, torch.zeros(9, 4, dtype=DTYPE)), torch.zeros(9, 4, dtype=DTYPE))

    def test_single_token_closed_form(self):
        """Test that N=1 gives Y_0 = (C_0 . delta_0 B_0 + D) X_0 per channel."""
        p = S6Params.random(5, 3, seed=6)
        X = _randn(1, 5, seed=6)
        with torch.no_grad():
            delta, B, C = _terms(p, X)
            expected = (delta * (B * C).sum(-1, keepdim=True) + p.D_skip) * X
            torch.testing.assert_close(s6_scan(p, X), expected, rtol=0, atol=1e-12)

    def test_width_mismatch(self):
        """Test that a width mismatch is rejected."""
        with pytest.raises(InvalidParameterError):
            s6_scan(S6Params.random(4, 2), _randn(5, 3))

    def test_unknown_skip_mode(self):
        """Test that an unknown skip mode is rejected."""
        with pytest.raises(InvalidParameterError):
            S6Params(4, 2, skip_mode="cubic")

    def test_default_init_is_stable(self):
        """Test that fresh parameters have nonnegative decay rates."""
        assert S6Params(8, 4).is_stable()
        p = S6Params(8, 4)
        with torch.no_grad():
            p.A_log.neg_()
        assert not p.is_stable()


class TestMatrixForm:
    """Tests for the materialized token-mixing matrices."""

    @pytest.mark.parametrize("seed", range(20))
    def test_scan_equals_matrix(self, seed):
        """Test |scan - matrix| < 1e-10 on random instances."""
        rng = np.random.default_rng(seed)
        N, d, n = int(rng.integers(1, 65)), int(rng.integers(1, 9)), int(rng.integers(1, 9))
        p = S6Params.random(d, n, seed=seed)
        X = _randn(N, d, seed=seed)
        with torch.no_grad():
            assert float((s6_scan(p, X) - s6_via_matrix(p, X)).abs().max()) < 1e-10

    def test_input_dependent_skip(self):
        """Test scan/matrix agreement with the input-dependent skip term."""
        p = S6Params.random(5, 3, seed=4, skip_mode="input_dependent")
        X = _randn(2, 12, 5, seed=4)
        with torch.no_grad():
            assert float((s6_scan(p, X) - s6_via_matrix(p, X)).abs().max()) < 1e-10

    def test_materialized_matrix_is_lower_triangular(self):
        """Test that the per-channel matrix has zeros above the diagonal."""
        p = S6Params.random(3, 2, seed=5)
        with torch.no_grad():
            phi = s6_materialize(p, _randn(6, 3), channel=1)
        assert phi.shape == (6, 6)
        assert torch.equal(phi, torch.tril(phi))

    def test_pointwise_matrix_is_diagonal_skip(self):
        """Test that the degenerate configuration materializes to D on the diagonal."""
        p = S6Params.pointwise(3, 2)
        with torch.no_grad():
            phi = s6_materialize(p, _randn(4, 3), channel=0)
        assert torch.equal(phi, torch.eye(4, dtype=DTYPE))

    def test_two_token_entries(self):
        """Test the 2 x 2 matrix [[C0 B0 + D, 0], [C1 A1 B0, C1 B1 + D]] entry by entry."""
        p = S6Params.random(3, 4, seed=8)
        X = _randn(2, 3, seed=8)
        c = 2
        with torch.no_grad():
            phi = s6_materialize(p, X, channel=c)
            delta, B, C = _terms(p, X)
            A1 = torch.exp(-delta[1, c] * p.A_log[c])
            expected = torch.tensor([
                [float(delta[0, c] * (C[0] * B[0]).sum() + p.D_skip[c]), 0.0],
                [float((C[1] * A1 * delta[0, c] * B[0]).sum()),
                 float(delta[1, c] * (C[1] * B[1]).sum() + p.D_skip[c])],
            ], dtype=DTYPE)
        torch.testing.assert_close(phi, expected, rtol=0, atol=1e-12)
        assert phi[0, 1] == 0.0

    def test_large_decay_rates_give_diagonal(self):
        """Test that A_k ~ 0 leaves only the diagonal."""
        p = S6Params.random(3, 2, seed=9)
        with torch.no_grad():
            p.A_log.fill_(1e9)
            phi = s6_materialize(p, _randn(7, 3, seed=9), channel=0)
        assert torch.equal(phi, torch.diag(torch.diagonal(phi)))

    def test_channel_out_of_range(self):
        """Test that an invalid channel is rejected."""
        with pytest.raises(InvalidParameterError):
            s6_materialize(S6Params.random(3, 2), _randn(4, 3), channel=3)


class TestAttention:
    """Tests for single-head softmax attention."""

    def test_rows_are_stochastic(self):
        """Test that each attention row sums to one."""
        p = AttnParams.random(4, seed=1)
        with torch.no_grad():
            A = attention_matrix(p, _randn(7, 4))
        torch.testing.assert_close(A.sum(-1), torch.ones(1, 7, dtype=DTYPE))

    def test_single_token(self):
        """Test that one token attends only to itself: Y_0 = X_0 W_V."""
        p = AttnParams.random(4, seed=2)
        X = _randn(1, 4, seed=2)
        with torch.no_grad():
            torch.testing.assert_close(sdpa(p, X), X @ p.W_V, rtol=0, atol=1e-12)

    def test_zero_queries_average_values(self):
        """Test that W_Q = 0 makes every output row the column mean of X W_V."""
        p = AttnParams.random(4, seed=3)
        X = _randn(6, 4, seed=3)
        with torch.no_grad():
            p.W_Q.zero_()
            Y = sdpa(p, X)
            mean = (X @ p.W_V).mean(0, keepdim=True)
        torch.testing.assert_close(Y, mean.expand(6, 4), rtol=0, atol=1e-12)

    def test_causal_mask(self):
        """Test that the causal variant puts no weight on future tokens."""
        p = AttnParams.random(4, seed=1)
        with torch.no_grad():
            A = attention_matrix(p, _randn(5, 4), causal=True)[0]
        assert torch.equal(A, torch.tril(A))

    @pytest.mark.parametrize("seed", range(20))
    def test_permutation_equivariance(self, seed):
        """Test output(PX) = P output(X) within 1e-10 for non-causal attention."""
        rng = np.random.default_rng(seed)
        N, d = int(rng.integers(1, 65)), int(rng.integers(1, 9))
        p = AttnParams.random(d, seed=seed)
        X = _randn(1, N, d, seed=seed)
        perm = torch.as_tensor(rng.permutation(N))
        assert permutation_discrepancy(lambda Z: sdpa(p, Z), X, perm) < 1e-10

    def test_causal_attention_is_order_sensitive(self):
        """Test that masking breaks equivariance."""
        p = AttnParams.random(4, seed=3)
        X = _randn(1, 6, 4, seed=3)
        perm = torch.tensor([5, 4, 3, 2, 1, 0])
        assert permutation_discrepancy(lambda Z: sdpa(p, Z, causal=True), X, perm) > 1e-6


class TestOrderDependence:
    """Tests for the S6 permutation witness search."""

    def test_generic_parameters_find_witness(self):
        """Test that random parameters break equivariance on swapped pairs."""
        report = check_order_dependence(S6Params.random(4, 4, seed=0), trials=10, seed=0)
        assert report.found_witness(1e-6)
        assert report.witness.shape == (2, 4)
        assert len(report.discrepancies) == 10

    def test_pointwise_has_zero_discrepancy(self):
        """Test that the degenerate configuration is exactly equivariant."""
        report = check_order_dependence(S6Params.pointwise(4, 4), trials=10, seed=0)
        assert report.max_discrepancy == 0.0
        assert not report.found_witness()

    def test_trials_must_be_positive(self):
        """Test that zero trials are rejected."""
        with pytest.raises(InvalidParameterError):
            check_order_dependence(S6Params.random(2, 2), trials=0)

    def test_two_token_hand_instance(self):
        """Test that swapping X_0, X_1 moves Y_1 by exactly C_1 A_1 B_0 X_0."""
        w_b, w_c = 0.7, 1.3
        p = _scalar_s6(w_b, w_c)
        x0, x1 = 1.5, -2.0
        X = torch.tensor([[x0], [x1]], dtype=DTYPE)
        with torch.no_grad():
            Y = s6_scan(p, X)
            swapped = s6_scan(p, X.flip(0))
        delta = np.log(2.0)
        A = np.exp(-delta)
        carried = (w_c * x1) * A * delta * (w_b * x0) * x0
        assert float(Y[1, 0] - swapped[0, 0]) == pytest.approx(carried, rel=1e-12)
        assert abs(carried) > 1e-6

    def test_hand_instance_equivariant_when_first_token_is_zero(self):
        """Test that the carried term vanishes for X_0 = 0."""
        p = _scalar_s6(0.7, 1.3)
        X = torch.tensor([[0.0], [-2.0]], dtype=DTYPE)
        assert permutation_discrepancy(lambda Z: s6_scan(p, Z), X.unsqueeze(0), [1, 0]) == 0.0
