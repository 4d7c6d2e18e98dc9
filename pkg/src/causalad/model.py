"""End-to-end detector: representation fusion, joint loss, training loop,
and the archive checkpoint format.

The three representation streams are concatenated per variable and fed
through a shared GRU cell whose state streams across consecutive windows.
Two output heads follow: an affine prediction head for the next value and a
variational head that reconstructs the window, giving the joint
prediction + reconstruction objective.
"""

from __future__ import annotations

import copy
import io
import json
import os
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch
from torch import Tensor, nn

from .causal_repr import CausalRepresentation, LatentState
from .config import Hyperparams
from .correlation_repr import CorrelationRepresentation
from .data import Dataset, NormalizerParams, iter_window_arrays, normalize
from .errors import ContractError, DivergenceError, InsufficientDataError
from .graphs import CorrelationGraph
from .temporal_repr import TemporalRepresentation
from .torchutil import leaky, uniform_param, zeros_param

CHECKPOINT_FORMAT_VERSION = 1
ADAM_DEFAULTS = {"betas": (0.9, 0.999), "eps": 1e-8}


@dataclass
class RecurrentState:
    """Streaming state: encoder hidden plus the per-variable GRU state."""

    encoder_hidden: Tensor  # (l,)
    gru: Tensor  # (N, l)


@dataclass
class WindowOutput:
    x_hat: Tensor  # (N, m)
    s_tilde: Tensor  # (window, N, m)
    recon_loss: Tensor  # scalar
    d_causal: Tensor
    d_corr: Tensor
    d_temporal: Tensor
    fused: Tensor
    state: RecurrentState
    latent: LatentState | None
    attn_causal: Tensor | None = None
    attn_node: Tensor | None = None
    attn_edge: Tensor | None = None
    attn_temporal: Tensor | None = None


class AnomalyDetector(nn.Module):
    """Full network; ablation tokens in ``hp.ablation`` switch parts off."""

    def __init__(
        self,
        n_sensors: int,
        dim: int,
        hp: Hyperparams,
        *,
        dtype: torch.dtype = torch.float32,
    ) -> None:
        super().__init__()
        self.n_sensors = n_sensors
        self.dim = dim
        self.hp = hp
        n, w, m, l = n_sensors, hp.window, dim, hp.embed_dim

        self.causal = CausalRepresentation(
            n, w, m, l,
            use_candidates="crl" not in hp.ablation,
            single_head="drl" in hp.ablation,
            encoder_uses_current_hidden=hp.encoder_uses_current_hidden,
            dtype=dtype,
        )
        self.corr = CorrelationRepresentation(
            n, w, m, l,
            aggregate_self=hp.necr_aggregate_self,
            zero_edge="edge" in hp.ablation,
            dtype=dtype,
        )
        self.temporal = TemporalRepresentation(n, w, m, l, dtype=dtype)

        # Shared per-variable GRU cell over the concatenated representations.
        self.gru_weight_ih = uniform_param(3 * l, 4 * l, fan_in=4 * l, dtype=dtype)
        self.gru_weight_hh = uniform_param(3 * l, l, fan_in=l, dtype=dtype)
        self.gru_bias_ih = zeros_param(3 * l, dtype=dtype)
        self.gru_bias_hh = zeros_param(3 * l, dtype=dtype)

        # Prediction head: affine -> LeakyReLU -> affine, shared across variables.
        self.pred_w1 = uniform_param(l, l, fan_in=l, dtype=dtype)
        self.pred_b1 = zeros_param(l, dtype=dtype)
        self.pred_w2 = uniform_param(m, l, fan_in=l, dtype=dtype)
        self.pred_b2 = zeros_param(m, dtype=dtype)

        # Reconstruction head: per-variable posterior and window decoder.
        self.rec_w_mu = uniform_param(l, l, fan_in=l, dtype=dtype)
        self.rec_b_mu = zeros_param(l, dtype=dtype)
        self.rec_w_sigma = uniform_param(l, l, fan_in=l, dtype=dtype)
        self.rec_b_sigma = zeros_param(l, dtype=dtype)
        self.rec_w_dec = uniform_param(w * m, l, fan_in=l, dtype=dtype)
        self.rec_b_dec = zeros_param(w * m, dtype=dtype)

        self.graph: CorrelationGraph = self.corr.refresh_graph(hp.top_k)

    @property
    def dtype(self) -> torch.dtype:
        return self.pred_w1.dtype

    def refresh_graph(self) -> None:
        self.graph = self.corr.refresh_graph(self.hp.top_k)

    def zero_state(self) -> RecurrentState:
        l = self.hp.embed_dim
        return RecurrentState(
            encoder_hidden=torch.zeros(l, dtype=self.dtype),
            gru=torch.zeros(self.n_sensors, l, dtype=self.dtype),
        )

    # -- fusion ----------------------------------------------------------------

    def fuse(
        self, d_causal: Tensor, d_corr: Tensor, d_temporal: Tensor, gru_state: Tensor
    ) -> tuple[Tensor, Tensor]:
        """Shared GRU cell over [causal | correlation | temporal] rows."""
        n, l = self.n_sensors, self.hp.embed_dim
        for name, tensor, cols in (
            ("causal", d_causal, l),
            ("correlation", d_corr, 2 * l),
            ("temporal", d_temporal, l),
        ):
            if tuple(tensor.shape) != (n, cols):
                raise ContractError(
                    f"{name} representation has shape {tuple(tensor.shape)}, "
                    f"expected {(n, cols)}"
                )
        x = torch.cat([d_causal, d_corr, d_temporal], dim=1)
        gi = x @ self.gru_weight_ih.T + self.gru_bias_ih
        gh = gru_state @ self.gru_weight_hh.T + self.gru_bias_hh
        i_r, i_z, i_n = gi.chunk(3, dim=1)
        h_r, h_z, h_n = gh.chunk(3, dim=1)
        reset = torch.sigmoid(i_r + h_r)
        update = torch.sigmoid(i_z + h_z)
        candidate = torch.tanh(i_n + reset * h_n)
        fused = (1 - update) * candidate + update * gru_state
        return fused, fused

    # -- output heads ------------------------------------------------------------

    def predict(self, fused: Tensor) -> Tensor:
        hidden = leaky(fused @ self.pred_w1.T + self.pred_b1)
        return hidden @ self.pred_w2.T + self.pred_b2

    def reconstruct(
        self, fused: Tensor, history: Tensor, eps: Tensor | None = None
    ) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        """Variational window reconstruction.

        Returns (s_tilde, recon_loss, mu, log_sigma) where recon_loss is the
        negative log-likelihood term (unit-variance Gaussian, constants
        dropped) plus the closed-form KL against the standard-normal prior.
        """
        w, n, m = self.hp.window, self.n_sensors, self.dim
        mu = fused @ self.rec_w_mu.T + self.rec_b_mu  # (N, l)
        log_sigma = fused @ self.rec_w_sigma.T + self.rec_b_sigma
        sigma = torch.exp(log_sigma)
        if eps is None:
            eps = torch.randn(n, self.hp.embed_dim, dtype=fused.dtype)
        z = mu + sigma * eps
        flat = z @ self.rec_w_dec.T + self.rec_b_dec  # (N, w*m)
        s_tilde = flat.reshape(n, w, m).permute(1, 0, 2)
        nll = 0.5 * torch.sum((history - s_tilde) ** 2)
        return s_tilde, nll + gaussian_kl(mu, log_sigma), mu, log_sigma

    # -- one window ---------------------------------------------------------------

    def forward_window(
        self,
        history: Tensor,
        target: Tensor,
        state: RecurrentState,
        *,
        sample: bool = True,
        eps_latent: Tensor | None = None,
        eps_recon: Tensor | None = None,
        trace: bool = False,
    ) -> WindowOutput:
        n, w, m, l = self.n_sensors, self.hp.window, self.dim, self.hp.embed_dim
        if tuple(history.shape) != (w, n, m):
            raise ContractError(
                f"window history has shape {tuple(history.shape)}, expected {(w, n, m)}"
            )
        if tuple(target.shape) != (n, m):
            raise ContractError(
                f"window target has shape {tuple(target.shape)}, expected {(n, m)}"
            )
        ablation = self.hp.ablation
        attn_causal = None
        latent: LatentState | None = None
        encoder_hidden = state.encoder_hidden

        if "cdr" in ablation:
            d_causal = torch.zeros(n, l, dtype=self.dtype)
        else:
            if eps_latent is None and not sample:
                eps_latent = torch.zeros(l, dtype=self.dtype)
            d_causal, latent, attn_causal = self.causal(
                history, target, state.encoder_hidden, self.hp.causal_threshold, eps_latent
            )
            encoder_hidden = latent.hidden

        attn_node = attn_edge = None
        if "necr" in ablation:
            d_corr = torch.zeros(n, 2 * l, dtype=self.dtype)
        else:
            attn_node, attn_edge = self.corr.attention(history, self.graph)
            d_corr = self.corr.aggregate(history, attn_node, attn_edge)

        attn_temporal = None
        if "tdr" in ablation:
            d_temporal = torch.zeros(n, l, dtype=self.dtype)
        else:
            attn_temporal = self.temporal.attention(history)
            per_step = self.temporal.aggregate(history, attn_temporal)
            d_temporal = (self.temporal.w_proj @ per_step.reshape(w * l)).reshape(n, l)

        fused, gru_next = self.fuse(d_causal, d_corr, d_temporal, state.gru)
        x_hat = self.predict(fused)
        if eps_recon is None and not sample:
            eps_recon = torch.zeros(n, l, dtype=self.dtype)
        s_tilde, recon_loss, _, _ = self.reconstruct(fused, history, eps_recon)

        return WindowOutput(
            x_hat=x_hat,
            s_tilde=s_tilde,
            recon_loss=recon_loss,
            d_causal=d_causal,
            d_corr=d_corr,
            d_temporal=d_temporal,
            fused=fused,
            state=RecurrentState(encoder_hidden=encoder_hidden, gru=gru_next),
            latent=latent,
            attn_causal=attn_causal if trace else None,
            attn_node=attn_node if trace else None,
            attn_edge=attn_edge if trace else None,
            attn_temporal=attn_temporal if trace else None,
        )


def gaussian_kl(mu: Tensor, log_sigma: Tensor) -> Tensor:
    """Closed-form KL(N(mu, sigma^2) || N(0, 1)) summed over dimensions."""
    return 0.5 * torch.sum(mu**2 + torch.exp(2.0 * log_sigma) - 1.0 - 2.0 * log_sigma)


def prediction_loss(x_hat: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over the N*m predicted entries."""
    return torch.mean((x_hat - target) ** 2)


def total_loss(x_hat: Tensor, target: Tensor, recon_loss: Tensor) -> Tensor:
    """Joint objective: prediction MSE plus the variational reconstruction loss."""
    return prediction_loss(x_hat, target) + recon_loss


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

@dataclass
class ModelCheckpoint:
    hyperparams: Hyperparams
    n_sensors: int
    dim: int
    seed: int
    normalizer: NormalizerParams | None
    params: dict[str, np.ndarray]  # float32 blocks keyed by canonical names
    calibration_scores: np.ndarray = field(default_factory=lambda: np.zeros(0, np.float32))
    history: dict[str, Any] = field(default_factory=dict)
    format_version: int = CHECKPOINT_FORMAT_VERSION
    optimizer_info: dict[str, Any] = field(default_factory=lambda: dict(ADAM_DEFAULTS))


def checkpoint_from_model(
    model: AnomalyDetector,
    normalizer: NormalizerParams | None,
    history: dict[str, Any] | None = None,
    calibration_scores: np.ndarray | None = None,
) -> ModelCheckpoint:
    params = {
        name: tensor.detach().cpu().numpy().astype(np.float32)
        for name, tensor in model.state_dict().items()
    }
    return ModelCheckpoint(
        hyperparams=model.hp,
        n_sensors=model.n_sensors,
        dim=model.dim,
        seed=model.hp.seed,
        normalizer=normalizer,
        params=params,
        calibration_scores=(
            np.zeros(0, np.float32)
            if calibration_scores is None
            else np.asarray(calibration_scores, dtype=np.float32)
        ),
        history=history or {},
    )


def build_model(cp: ModelCheckpoint, dtype: torch.dtype = torch.float32) -> AnomalyDetector:
    model = AnomalyDetector(cp.n_sensors, cp.dim, cp.hyperparams, dtype=dtype)
    state = {name: torch.as_tensor(arr, dtype=dtype) for name, arr in cp.params.items()}
    model.load_state_dict(state)
    model.refresh_graph()
    model.eval()
    return model


def save_checkpoint(cp: ModelCheckpoint, path: str | Path) -> None:
    """Write the checkpoint archive atomically (temp file then rename)."""
    path = Path(path)
    manifest = {
        "format_version": cp.format_version,
        "hyperparams": cp.hyperparams.to_dict(),
        "n_sensors": cp.n_sensors,
        "dim": cp.dim,
        "seed": cp.seed,
        "normalizer": cp.normalizer.to_dict() if cp.normalizer else None,
        "history": cp.history,
        "optimizer_info": cp.optimizer_info,
        "params": {name: list(arr.shape) for name, arr in cp.params.items()},
        "calibration_len": int(cp.calibration_scores.size),
    }
    buffer = io.BytesIO()
    with zipfile.ZipFile(buffer, "w", zipfile.ZIP_STORED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
        for name in sorted(cp.params):
            zf.writestr(f"params/{name}", cp.params[name].astype("<f4").tobytes())
        zf.writestr(
            "calibration_scores", cp.calibration_scores.astype("<f4").tobytes()
        )
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buffer.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> ModelCheckpoint:
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        params = {}
        for name, shape in manifest["params"].items():
            raw = zf.read(f"params/{name}")
            params[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        calibration = np.frombuffer(zf.read("calibration_scores"), dtype="<f4").copy()
    normalizer = (
        NormalizerParams.from_dict(manifest["normalizer"])
        if manifest.get("normalizer")
        else None
    )
    return ModelCheckpoint(
        hyperparams=Hyperparams.from_dict(manifest["hyperparams"]),
        n_sensors=manifest["n_sensors"],
        dim=manifest["dim"],
        seed=manifest["seed"],
        normalizer=normalizer,
        params=params,
        calibration_scores=calibration,
        history=manifest.get("history", {}),
        format_version=manifest["format_version"],
        optimizer_info=manifest.get("optimizer_info", dict(ADAM_DEFAULTS)),
    )


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def set_determinism(seed: int, deterministic: bool = False) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % (2**32))
    if deterministic:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)


def _epoch_pass(
    model: AnomalyDetector,
    histories: Tensor,
    targets: Tensor,
    optimizer: torch.optim.Optimizer | None,
) -> float:
    """One pass over the window sequence in consecutive chunks.

    Recurrent state resets at each chunk boundary; one optimizer step per
    chunk when training, noise-free forward when evaluating.
    """
    training = optimizer is not None
    chunk = model.hp.batch_size
    n_windows = histories.shape[0]
    total = 0.0
    with torch.set_grad_enabled(training):
        for start in range(0, n_windows, chunk):
            stop = min(start + chunk, n_windows)
            state = model.zero_state()
            losses = []
            for w in range(start, stop):
                out = model.forward_window(
                    histories[w], targets[w], state, sample=training
                )
                state = out.state
                losses.append(total_loss(out.x_hat, targets[w], out.recon_loss))
            batch_loss = torch.stack(losses).mean()
            if training:
                optimizer.zero_grad()
                batch_loss.backward()
                optimizer.step()
            total += float(batch_loss.detach()) * (stop - start)
    return total / n_windows


def _window_scores(model: AnomalyDetector, histories: Tensor, targets: Tensor) -> np.ndarray:
    """Noise-free anomaly scores over a window sequence (state streamed)."""
    from .scoring import anomaly_score, root_cause_scores

    scores = np.empty(histories.shape[0])
    state = model.zero_state()
    with torch.no_grad():
        for w in range(histories.shape[0]):
            out = model.forward_window(histories[w], targets[w], state, sample=False)
            state = out.state
            rs = root_cause_scores(
                targets[w].numpy(),
                out.x_hat.numpy(),
                histories[w].numpy(),
                out.s_tilde.numpy(),
                model.hp.score_blend,
            )
            scores[w] = anomaly_score(rs)
    return scores


def train_model(ds: Dataset, hp: Hyperparams) -> ModelCheckpoint:
    """Train with Adam and early stopping; returns the best-validation model.

    The last ``val_fraction`` of the train series is held out contiguously;
    validation loss is computed noise-free. Raises DivergenceError (carrying
    the last good checkpoint) if the loss leaves the finite range.
    """
    set_determinism(hp.seed, hp.deterministic)
    norm_ds, norm_params = normalize(ds, hp.normalization)

    values = norm_ds.train.values
    t_total = values.shape[1]
    t_split = int(round(t_total * (1.0 - hp.val_fraction)))
    if t_split <= hp.window + 1 or (t_total - t_split) <= hp.window + 1:
        raise InsufficientDataError(
            f"train series of length {t_total} too short for window {hp.window} "
            f"with val_fraction {hp.val_fraction}"
        )
    tr_hist, tr_targ, _ = iter_window_arrays(values[:, :t_split], hp.window)
    va_hist, va_targ, _ = iter_window_arrays(values[:, t_split:], hp.window)
    to_t = lambda a: torch.as_tensor(a, dtype=torch.float32)
    tr_hist, tr_targ = to_t(tr_hist), to_t(tr_targ)
    va_hist, va_targ = to_t(va_hist), to_t(va_targ)

    model = AnomalyDetector(norm_ds.train.n_sensors, norm_ds.train.dim, hp)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=hp.learning_rate, **ADAM_DEFAULTS
    )

    history: dict[str, Any] = {"train_loss": [], "val_loss": []}
    best_val = float("inf")
    best_state: dict[str, Tensor] | None = None
    best_epoch = -1
    bad_epochs = 0

    def snapshot() -> ModelCheckpoint | None:
        if best_state is None:
            return None
        model.load_state_dict(best_state)
        calib = _window_scores(model, va_hist, va_targ)
        history["best_epoch"] = best_epoch
        return checkpoint_from_model(model, norm_params, dict(history), calib)

    for epoch in range(hp.max_epochs):
        model.refresh_graph()
        model.train()
        train_loss = _epoch_pass(model, tr_hist, tr_targ, optimizer)
        model.eval()
        val_loss = _epoch_pass(model, va_hist, va_targ, None)
        history["train_loss"].append(train_loss)
        history["val_loss"].append(val_loss)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise DivergenceError(
                f"non-finite loss at epoch {epoch}: train={train_loss}, val={val_loss}",
                last_good=snapshot(),
            )
        if val_loss < best_val - 1e-12:
            best_val = val_loss
            best_state = copy.deepcopy(model.state_dict())
            best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= hp.patience:
                break

    history["stopped_epoch"] = len(history["train_loss"]) - 1
    cp = snapshot()
    if cp is None:
        raise DivergenceError("training never produced a finite validation loss")
    return cp
