"""Shared torch helpers: activation slope, init rule, window conversion."""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import Tensor, nn

from .data import SampleWindow

# Negative slope used by every LeakyReLU in the stack.
LEAKY_SLOPE = 0.2


def leaky(x: Tensor) -> Tensor:
    return torch.nn.functional.leaky_relu(x, LEAKY_SLOPE)


def uniform_param(*shape: int, fan_in: int, dtype: torch.dtype) -> nn.Parameter:
    """Weight initialized U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    bound = 1.0 / math.sqrt(fan_in)
    weight = torch.empty(*shape, dtype=dtype).uniform_(-bound, bound)
    return nn.Parameter(weight)


def zeros_param(*shape: int, dtype: torch.dtype) -> nn.Parameter:
    return nn.Parameter(torch.zeros(*shape, dtype=dtype))


def window_tensors(
    window: SampleWindow, dtype: torch.dtype = torch.float32
) -> tuple[Tensor, Tensor]:
    """Convert a SampleWindow to (history, target) tensors."""
    history = torch.as_tensor(np.ascontiguousarray(window.history), dtype=dtype)
    target = torch.as_tensor(np.ascontiguousarray(window.target), dtype=dtype)
    return history, target


def per_variable_history(history: Tensor) -> Tensor:
    """(window, N, m) -> (N, window*m): each variable's flattened history."""
    w, n, m = history.shape
    return history.permute(1, 0, 2).reshape(n, w * m)


def history_by_candidate(history: Tensor) -> Tensor:
    """(window, N, m) -> (N*window, m): candidate (j, p) at row j*window + p."""
    w, n, m = history.shape
    return history.permute(1, 0, 2).reshape(n * w, m)
