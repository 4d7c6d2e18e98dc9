"""Hyperparameter dataclass and the flat ``key = value`` config-file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

# Ablation tokens: each one disables a piece of the representation stack.
#   cdr   - zero out the causal-mechanism representation
#   necr  - zero out the node-edge correlation representation
#   tdr   - zero out the temporal representation
#   edge  - zero out only the edge half of the correlation representation
#   crl   - drop the causal-attention term from the relation representation
#   drl   - collapse the multi-head decoder to a single shared head
ABLATION_TOKENS = ("cdr", "necr", "tdr", "edge", "crl", "drl")

# The nine ablation bundles exercised by the protocol tests: five single
# removals plus the four combined removals.
ABLATION_PROTOCOL: dict[str, frozenset[str]] = {
    "wo_tdr": frozenset({"tdr"}),
    "wo_edge": frozenset({"edge"}),
    "wo_necr": frozenset({"necr"}),
    "wo_drl": frozenset({"drl"}),
    "wo_crl": frozenset({"crl"}),
    "wo_crl_drl": frozenset({"crl", "drl"}),
    "wo_necr_tdr": frozenset({"necr", "tdr"}),
    "wo_necr_cdr": frozenset({"necr", "cdr"}),
    "wo_tdr_cdr": frozenset({"tdr", "cdr"}),
}


@dataclass
class Hyperparams:
    """Model and training settings. Defaults follow the reference protocol."""

    window: int = 100            # sliding-window width (history length)
    embed_dim: int = 64          # latent / embedding dimension
    top_k: int = 20              # neighbors kept in the correlation graph
    causal_threshold: float = 0.06   # attention weight cutoff for causal edges
    score_blend: float = 1.0     # weight of the reconstruction term in rs_i
    learning_rate: float = 1e-3
    batch_size: int = 32
    patience: int = 10           # early-stopping tolerance, in epochs
    max_epochs: int = 50
    pot_risk: float = 1e-2       # target exceedance probability q
    pot_init_quantile: float = 0.98
    seed: int = 0
    val_fraction: float = 0.1    # contiguous tail of the train series held out
    normalization: str = "minmax"
    # Structural switches (see module docs for what each resolves).
    encoder_uses_current_hidden: bool = False
    necr_aggregate_self: bool = False
    reset_state_per_batch: bool = True
    deterministic: bool = False
    ablation: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if self.window < 2:
            raise ValueError("window must be >= 2")
        for name in ("embed_dim", "top_k", "batch_size", "patience", "max_epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.causal_threshold <= 1.0:
            raise ValueError("causal_threshold must lie in [0, 1]")
        if self.score_blend < 0:
            raise ValueError("score_blend must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 < self.pot_risk < 0.5:
            raise ValueError("pot_risk must lie in (0, 0.5)")
        if self.normalization not in ("minmax", "zscore"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if isinstance(self.ablation, str):
            self.ablation = parse_ablation(self.ablation)
        unknown = set(self.ablation) - set(ABLATION_TOKENS)
        if unknown:
            raise ValueError(f"unknown ablation tokens: {sorted(unknown)}")

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["ablation"] = sorted(self.ablation)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Hyperparams":
        known = {f.name for f in dataclasses.fields(cls)}
        kwargs = {k: v for k, v in d.items() if k in known}
        if "ablation" in kwargs and not isinstance(kwargs["ablation"], frozenset):
            kwargs["ablation"] = frozenset(kwargs["ablation"])
        return cls(**kwargs)


def parse_ablation(text: str) -> frozenset[str]:
    """Parse a comma-separated ablation list or a protocol preset name."""
    text = text.strip()
    if not text or text == "none":
        return frozenset()
    if text in ABLATION_PROTOCOL:
        return ABLATION_PROTOCOL[text]
    return frozenset(token.strip() for token in text.split(",") if token.strip())


def _coerce(value: str) -> Any:
    low = value.strip()
    if low.lower() in ("true", "false"):
        return low.lower() == "true"
    for cast in (int, float):
        try:
            return cast(low)
        except ValueError:
            pass
    return low


def read_config(path: str | Path | None, overrides: list[str] | None = None) -> dict[str, Any]:
    """Read a flat ``key = value`` file; ``#`` starts a comment.

    ``overrides`` entries of the form ``key=value`` win over file values.
    ``path=None`` starts from an empty config (overrides only).
    """
    values: dict[str, Any] = {}
    text = Path(path).read_text() if path else ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = _coerce(value)
    for item in overrides or []:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form key=value")
        key, _, value = item.partition("=")
        values[key.strip()] = _coerce(value)
    return values
