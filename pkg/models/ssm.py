"""
Sequence mixers: the S6 selective scan, its materialized (convolutional) matrix
form, and reference softmax attention.

Shapes follow the usual (batch, length, width) convention; a 2D input is
treated as a single sequence. Everything runs in float64 unless the caller
passes float32 tensors (bench mode).
"""

import logging
import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from models.errors import InvalidParameterError

log = logging.getLogger(__name__)

DTYPE = torch.float64


class S6Params(nn.Module):
    """Learned matrices of one S6 layer of width d with state size n.

    Per channel c the layer is an independent n-state system sharing the
    input-dependent B_i = W_B X_i and C_i = W_C X_i projections.
    A_log holds the (nonnegative) decay rates: A_i = exp(-delta * A_log).
    """

    def __init__(self, d, n, skip_mode="constant", dtype=DTYPE, dt_min=1e-3, dt_max=1e-1):
        super().__init__()
        if skip_mode not in ("constant", "input_dependent"):
            raise InvalidParameterError(f"unknown skip mode {skip_mode!r}")
        self.d = d
        self.n = n
        self.skip_mode = skip_mode

        self.W_delta = nn.Parameter(torch.empty(d, d, dtype=dtype).uniform_(-0.1, 0.1))
        # softplus^-1 of a log-uniform step in [dt_min, dt_max]
        dt = torch.exp(torch.empty(d, dtype=dtype).uniform_(math.log(dt_min), math.log(dt_max)))
        self.b_delta = nn.Parameter(dt + torch.log(-torch.expm1(-dt)))
        self.A_log = nn.Parameter(torch.arange(1, n + 1, dtype=dtype).repeat(d, 1))
        self.W_B = nn.Parameter(torch.randn(n, d, dtype=dtype) / math.sqrt(d))
        self.W_C = nn.Parameter(torch.randn(n, d, dtype=dtype) / math.sqrt(d))
        self.D_skip = nn.Parameter(torch.ones(d, dtype=dtype))
        if skip_mode == "input_dependent":
            self.W_D = nn.Parameter(torch.randn(d, d, dtype=dtype) / math.sqrt(d))

    @classmethod
    def random(cls, d, n, seed=0, skip_mode="constant", dtype=DTYPE):
        """Generic random parameters (all entries O(1)), used by the property checks."""
        g = torch.Generator().manual_seed(seed)
        p = cls(d, n, skip_mode=skip_mode, dtype=dtype)
        with torch.no_grad():
            for param in p.parameters():
                param.copy_(torch.randn(param.shape, generator=g, dtype=dtype))
            p.A_log.abs_()
            p.W_delta.mul_(0.5)
        return p

    @classmethod
    def pointwise(cls, d, n, dtype=DTYPE):
        """Degenerate configuration: A_log = 0, W_B = 0, W_delta = 0, D = 1, so Y = X."""
        p = cls(d, n, dtype=dtype)
        with torch.no_grad():
            p.A_log.zero_()
            p.W_B.zero_()
            p.W_delta.zero_()
            p.D_skip.fill_(1.0)
        return p

    def is_stable(self):
        return bool(torch.all(self.A_log >= 0))

    def forward(self, X):
        return s6_scan(self, X)


class AttnParams(nn.Module):
    """W_Q, W_K, W_V of single-head softmax attention (right-multiplied: Q = X W_Q)."""

    def __init__(self, d, dtype=DTYPE):
        super().__init__()
        self.d = d
        scale = 1.0 / math.sqrt(d)
        self.W_Q = nn.Parameter(torch.randn(d, d, dtype=dtype) * scale)
        self.W_K = nn.Parameter(torch.randn(d, d, dtype=dtype) * scale)
        self.W_V = nn.Parameter(torch.randn(d, d, dtype=dtype) * scale)

    @classmethod
    def random(cls, d, seed=0, dtype=DTYPE):
        g = torch.Generator().manual_seed(seed)
        p = cls(d, dtype=dtype)
        with torch.no_grad():
            for param in p.parameters():
                param.copy_(torch.randn(param.shape, generator=g, dtype=dtype))
        return p

    def forward(self, X, causal=False):
        return sdpa(self, X, causal=causal)


def _as_batch(X, d):
    if X.dim() == 2:
        X = X.unsqueeze(0)
    if X.dim() != 3 or X.shape[-1] != d:
        raise InvalidParameterError(f"expected input of width {d}, got shape {tuple(X.shape)}")
    return X


def _selective_terms(p, X):
    delta = F.softplus(X @ p.W_delta.T + p.b_delta)          # (B, N, d)
    Bm = X @ p.W_B.T                                          # (B, N, n)
    Cm = X @ p.W_C.T                                          # (B, N, n)
    return delta, Bm, Cm


def _skip(p, X):
    if p.skip_mode == "input_dependent":
        return (X @ p.W_D.T) * X
    return p.D_skip * X


def s6_scan(p, X):
    """Left-to-right recurrence from a zero state; Y_i depends only on X_<=i."""
    squeeze = X.dim() == 2
    X = _as_batch(X, p.d)
    delta, Bm, Cm = _selective_terms(p, X)
    decay = torch.exp(-delta.unsqueeze(-1) * p.A_log)                     # (B, N, d, n)
    drive = delta.unsqueeze(-1) * Bm.unsqueeze(2) * X.unsqueeze(-1)       # (B, N, d, n)

    state = X.new_zeros(X.shape[0], p.d, p.n)
    outputs = []
    for i in range(X.shape[1]):
        state = decay[:, i] * state + drive[:, i]
        outputs.append((state * Cm[:, i].unsqueeze(1)).sum(-1))
    Y = torch.stack(outputs, dim=1) + _skip(p, X)
    return Y[0] if squeeze else Y


def _mixing_matrices(p, X):
    """(B, d, N, N) lower-triangular token-mixing matrices, one per channel."""
    X = _as_batch(X, p.d)
    N = X.shape[1]
    delta, Bm, Cm = _selective_terms(p, X)
    log_decay = -delta.unsqueeze(-1) * p.A_log                            # (B, N, d, n)
    cum = torch.cumsum(log_decay, dim=1)
    # seg[b, i, j, c, :] = sum_{k=j+1..i} log A_k
    seg = cum.unsqueeze(2) - cum.unsqueeze(1)
    lower = torch.ones(N, N, dtype=torch.bool, device=X.device).tril()
    seg = seg.masked_fill(~lower[None, :, :, None, None], float("-inf"))
    gain = delta.unsqueeze(-1) * Bm.unsqueeze(2)                          # (B, N, d, n): delta_j B_j
    phi = (Cm[:, :, None, None, :] * torch.exp(seg) * gain[:, None, :, :, :]).sum(-1)   # (B, i, j, d)
    phi = phi.permute(0, 3, 1, 2)

    if p.skip_mode == "input_dependent":
        diag = (X @ p.W_D.T).transpose(1, 2)                              # (B, d, N)
    else:
        diag = p.D_skip.view(1, -1, 1).expand(X.shape[0], p.d, N)
    phi = phi + torch.diag_embed(diag)
    return torch.tril(phi)


def s6_materialize(p, X, channel):
    """Phi_S6 for one channel of a single sequence X of shape (N, d)."""
    if not 0 <= channel < p.d:
        raise InvalidParameterError(f"channel {channel} out of range for width {p.d}")
    if X.dim() == 3:
        if X.shape[0] != 1:
            raise InvalidParameterError("s6_materialize takes a single sequence")
        X = X[0]
    return _mixing_matrices(p, X)[0, channel]


def s6_via_matrix(p, X):
    """S6 output computed as Y[:, c] = Phi_c @ X[:, c] for every channel."""
    squeeze = X.dim() == 2
    X = _as_batch(X, p.d)
    phi = _mixing_matrices(p, X)                                          # (B, d, N, N)
    Y = torch.einsum("bcij,bjc->bic", phi, X)
    return Y[0] if squeeze else Y


def attention_matrix(p, X, causal=False):
    """Row-stochastic Phi_SDPA = softmax(Q K^T / sqrt(d))."""
    X = _as_batch(X, p.d)
    Q = X @ p.W_Q
    K = X @ p.W_K
    scores = Q @ K.transpose(1, 2) / math.sqrt(p.d)
    if causal:
        N = X.shape[1]
        upper = torch.ones(N, N, dtype=torch.bool, device=X.device).triu(1)
        scores = scores.masked_fill(upper, float("-inf"))
    return torch.softmax(scores, dim=-1)


def sdpa(p, X, causal=False):
    squeeze = X.dim() == 2
    X = _as_batch(X, p.d)
    Y = attention_matrix(p, X, causal=causal) @ (X @ p.W_V)
    return Y[0] if squeeze else Y


def permutation_discrepancy(mixer, X, perm):
    """max |mixer(Pi X) - Pi mixer(X)| for a row permutation `perm` of a (B, N, d) batch."""
    perm = torch.as_tensor(perm, dtype=torch.long)
    with torch.no_grad():
        permuted_out = mixer(X[:, perm])
        out_permuted = mixer(X)[:, perm]
    return float((permuted_out - out_permuted).abs().max())


@dataclass
class PermutationReport:
    max_discrepancy: float
    witness: torch.Tensor
    witness_trial: int
    discrepancies: list = field(default_factory=list)

    def found_witness(self, tol=1e-6):
        return self.max_discrepancy > tol


def check_order_dependence(p, trials=10, seed=0):
    """Swap the two rows of random N=2 inputs and measure how far S6 is from equivariance."""
    if trials < 1:
        raise InvalidParameterError("trials must be >= 1")
    g = torch.Generator().manual_seed(seed)
    swap = torch.tensor([1, 0])
    discrepancies = []
    best, witness, witness_trial = -1.0, None, -1
    for trial in range(trials):
        X = torch.randn(1, 2, p.d, generator=g, dtype=p.W_B.dtype)
        disc = permutation_discrepancy(lambda Z: s6_scan(p, Z), X, swap)
        discrepancies.append(disc)
        if disc > best:
            best, witness, witness_trial = disc, X[0].clone(), trial
    log.debug("prop2: max discrepancy %.3e over %d trials", best, trials)
    return PermutationReport(best, witness, witness_trial, discrepancies)
