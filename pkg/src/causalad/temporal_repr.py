"""Self-attention over the window's timestep cross-sections.

Each window position is projected from its (N*m) cross-section; attention
is taken over all positions including self, and the per-position aggregates
are mapped back onto the N variables by a learned alignment projection.
"""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .errors import DegenerateWindowError
from .torchutil import leaky, uniform_param


class TemporalRepresentation(nn.Module):
    def __init__(
        self,
        n_sensors: int,
        window: int,
        dim: int,
        embed_dim: int,
        *,
        dtype: torch.dtype = torch.float32,
    ) -> None:
        super().__init__()
        if window < 2:
            raise DegenerateWindowError("temporal attention needs a window of >= 2 steps")
        self.n_sensors = n_sensors
        self.window = window
        self.dim = dim
        self.embed_dim = embed_dim

        n, w, m, l = n_sensors, window, dim, embed_dim
        self.w_time = uniform_param(l, n * m, fan_in=n * m, dtype=dtype)
        self.attn_vec = uniform_param(2 * l, fan_in=2 * l, dtype=dtype)
        self.w_proj = uniform_param(n * l, w * l, fan_in=w * l, dtype=dtype)

    @property
    def dtype(self) -> torch.dtype:
        return self.w_time.dtype

    def project(self, history: Tensor) -> Tensor:
        """(window, N, m) -> (window, l) projected timestep cross-sections."""
        ts = history.reshape(self.window, self.n_sensors * self.dim)
        return ts @ self.w_time.T

    def attention(self, history: Tensor) -> Tensor:
        """Row-stochastic (window, window) attention over positions."""
        if history.shape[0] < 2:
            raise DegenerateWindowError("temporal attention needs a window of >= 2 steps")
        proj = self.project(history)
        l = self.embed_dim
        query = proj @ self.attn_vec[:l]
        key = proj @ self.attn_vec[l:]
        return torch.softmax(leaky(query[:, None] + key[None, :]), dim=1)

    def aggregate(self, history: Tensor, alpha: Tensor) -> Tensor:
        """(window, l) per-position aggregates before variable alignment."""
        return leaky(alpha @ self.project(history))

    def forward(self, history: Tensor) -> Tensor:
        alpha = self.attention(history)
        per_step = self.aggregate(history, alpha)
        flat = self.w_proj @ per_step.reshape(self.window * self.embed_dim)
        return flat.reshape(self.n_sensors, self.embed_dim)
