"""Causal attention, relation representation, and the multi-head variational
decoder that yields the per-variable causal-mechanism representation.

Attention scores every lagged candidate (cause j at window position p)
against each effect variable; candidates at or above the causal threshold
form the candidate set feeding the relation representation. A recurrent
variational encoder produces the latent, and one decoder head per variable
realizes that variable's local causal mechanism.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .torchutil import (
    history_by_candidate,
    leaky,
    per_variable_history,
    uniform_param,
    zeros_param,
)


@dataclass
class LatentState:
    """Latent draw plus the encoder recurrence carried across windows."""

    z: Tensor  # (l,), in (-1, 1)
    mu: Tensor  # (l,)
    log_sigma: Tensor  # (l,)
    hidden: Tensor  # (l,), feeds the next window's encoder step


class CausalRepresentation(nn.Module):
    """Eq.-style stack: lagged attention -> relation -> VAE -> decoder heads.

    ``use_candidates=False`` drops the attention-weighted candidate term from
    the relation representation (the "no causal discovery" ablation);
    ``single_head=True`` shares head 0 across variables (the "no
    disentanglement" ablation).
    """

    def __init__(
        self,
        n_sensors: int,
        window: int,
        dim: int,
        embed_dim: int,
        *,
        use_candidates: bool = True,
        single_head: bool = False,
        encoder_uses_current_hidden: bool = False,
        dtype: torch.dtype = torch.float32,
    ) -> None:
        super().__init__()
        self.n_sensors = n_sensors
        self.window = window
        self.dim = dim
        self.embed_dim = embed_dim
        self.use_candidates = use_candidates
        self.single_head = single_head
        self.encoder_uses_current_hidden = encoder_uses_current_hidden

        n, w, m, l = n_sensors, window, dim, embed_dim
        self.attn_vec = uniform_param(2 * m, fan_in=2 * m, dtype=dtype)
        self.w_cause = uniform_param(l, m, fan_in=m, dtype=dtype)
        self.w_effect = uniform_param(l, w * m, fan_in=w * m, dtype=dtype)
        self.w_rec = uniform_param(l, l, fan_in=l, dtype=dtype)
        self.w_hidden = uniform_param(l, l, fan_in=l, dtype=dtype)
        self.b_enc = zeros_param(l, dtype=dtype)
        self.w_mu = uniform_param(l, l, fan_in=l, dtype=dtype)
        self.b_mu = zeros_param(l, dtype=dtype)
        self.w_sigma = uniform_param(l, l, fan_in=l, dtype=dtype)
        self.b_sigma = zeros_param(l, dtype=dtype)
        self.w_reparam = uniform_param(l, l, fan_in=l, dtype=dtype)
        self.b_reparam = zeros_param(l, dtype=dtype)
        self.w_head = uniform_param(n, l, w * m, fan_in=w * m, dtype=dtype)
        self.b_head = zeros_param(n, l, dtype=dtype)
        self.w_latent = uniform_param(l, l, fan_in=l, dtype=dtype)

    @property
    def dtype(self) -> torch.dtype:
        return self.attn_vec.dtype

    def initial_hidden(self) -> Tensor:
        return torch.zeros(self.embed_dim, dtype=self.dtype)

    # -- causal discovery ---------------------------------------------------

    def attention(self, history: Tensor, target: Tensor) -> Tensor:
        """Per effect row, a distribution over all N*window lagged candidates.

        Returns (N, N*window); candidate (j, p) sits at column j*window + p,
        window positions oldest-first.
        """
        effect_score = target @ self.attn_vec[: self.dim]  # (N,)
        cause_score = history_by_candidate(history) @ self.attn_vec[self.dim :]
        logits = leaky(effect_score[:, None] + cause_score[None, :])
        return torch.softmax(logits, dim=1)

    def select_candidates(self, alpha: Tensor, theta: float) -> Tensor:
        """Boolean (N, N*window) mask of candidates with weight >= theta."""
        return alpha >= theta

    def candidate_sets(
        self, alpha: Tensor, theta: float
    ) -> list[dict[tuple[int, int], float]]:
        """Per effect variable, {(cause j, position p): weight} at or above theta."""
        weights = alpha.detach()
        mask = self.select_candidates(weights, theta)
        out: list[dict[tuple[int, int], float]] = []
        for i in range(self.n_sensors):
            cols = torch.nonzero(mask[i], as_tuple=False).flatten().tolist()
            out.append(
                {
                    (c // self.window, c % self.window): float(weights[i, c])
                    for c in cols
                }
            )
        return out

    # -- relation representation --------------------------------------------

    def relation(
        self, history: Tensor, target: Tensor, alpha: Tensor, theta: float
    ) -> Tensor:
        """(N, l) relation rows; empty candidate sets fall back to the
        effect-only term."""
        base = per_variable_history(history) @ self.w_effect.T  # (N, l)
        if self.use_candidates:
            kept = alpha * self.select_candidates(alpha, theta).to(alpha.dtype)
            weighted = kept @ history_by_candidate(history)  # (N, m)
            base = base + weighted @ self.w_cause.T
        return leaky(base)

    # -- variational encoder -------------------------------------------------

    def encode(
        self, relation: Tensor, hidden_prev: Tensor, eps: Tensor | None = None
    ) -> LatentState:
        pooled = relation.mean(dim=0)  # variables share one encoder stream
        hidden = torch.tanh(self.w_rec @ pooled + self.w_hidden @ hidden_prev + self.b_enc)
        source = hidden if self.encoder_uses_current_hidden else hidden_prev
        mu = self.w_mu @ source + self.b_mu
        log_sigma = self.w_sigma @ source + self.b_sigma
        if eps is None:
            eps = torch.randn(self.embed_dim, dtype=self.dtype)
        z_pre = mu + torch.exp(log_sigma) * eps
        z = torch.tanh(self.w_reparam @ z_pre + self.b_reparam)
        return LatentState(z=z, mu=mu, log_sigma=log_sigma, hidden=hidden)

    # -- multi-head decoder ---------------------------------------------------

    def decode(self, history: Tensor, z: Tensor) -> Tensor:
        """One decoder head per variable; (N, l) causal-mechanism rows."""
        per_var = per_variable_history(history)  # (N, w*m)
        if self.single_head:
            head = per_var @ self.w_head[0].T + self.b_head[0]
        else:
            head = torch.einsum("nk,nlk->nl", per_var, self.w_head) + self.b_head
        return torch.tanh(head + (self.w_latent @ z)[None, :])

    def forward(
        self,
        history: Tensor,
        target: Tensor,
        hidden_prev: Tensor,
        theta: float,
        eps: Tensor | None = None,
    ) -> tuple[Tensor, LatentState, Tensor]:
        alpha = self.attention(history, target)
        rel = self.relation(history, target, alpha, theta)
        state = self.encode(rel, hidden_prev, eps)
        d_causal = self.decode(history, state.z)
        return d_causal, state, alpha
