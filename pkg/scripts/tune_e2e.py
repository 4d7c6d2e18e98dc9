"""Experiment harness: sweep blend/epochs/noise profile on the synthetic e2e flow."""
import itertools
import sys
import time

import numpy as np

sys.path.insert(0, "src")
from causalad.cli import default_planted_edges
from causalad.config import Hyperparams
from causalad.data import SyntheticConfig, generate_synthetic, normalize
from causalad.graphs import granger_oracle
from causalad.model import build_model, train_model
from causalad.pipeline import detect, evaluate_report


def run(seed, blend, epochs, boost_roots, coef_scale=1.0):
    edges = [(j, i, lag, min(0.95, c * coef_scale)) for j, i, lag, c in default_planted_edges(8)]
    roots = {j for j, _, _, _ in edges} - {i for _, i, _, _ in edges}
    scales = [3.0 if i in roots else 1.0 for i in range(8)] if boost_roots else None
    cfg = SyntheticConfig(
        n_sensors=8, t_train=4000, t_test=2000, planted_edges=edges,
        noise_std=0.1, noise_scales=scales, anomaly_rate=0.05, seed=seed,
    )
    ds, _ = generate_synthetic(cfg)
    hp = Hyperparams(window=32, embed_dim=16, top_k=4, causal_threshold=0.06,
                     batch_size=32, max_epochs=epochs, patience=10, seed=seed,
                     score_blend=blend)
    t0 = time.time()
    cp = train_model(ds, hp)
    model = build_model(cp)
    norm_ds, _ = normalize(ds, hp.normalization)
    res = detect(model, cp, norm_ds.test, collect_attention=True)
    ev = evaluate_report(res.report, norm_ds.test, res.rs_by_step)

    attn = res.mean_attention
    n, _, w = attn.shape
    k = len(edges)
    top = np.argsort(attn.ravel())[::-1][:k]
    triples = {(int(j), int(i), int(w - p)) for i, j, p in
               (np.unravel_index(f, attn.shape) for f in top)}
    planted = {(j, i, lag) for j, i, lag, _ in edges}
    prec = len(triples & planted) / k

    g = granger_oracle(ds.train, max_lag=3, significance=0.01)
    grec = len(planted & set(g)) / len(planted)

    # FP structure: how far are false positives from the nearest truth segment?
    truth = norm_ds.test.anomaly_labels[res.report.timesteps]
    from causalad.metrics import point_adjust
    adj = point_adjust(res.report.verdicts, truth)
    fp_idx = np.where((adj == 1) & (truth == 0))[0]
    seg_ends = []
    labels = norm_ds.test.anomaly_labels
    for t in range(1, len(labels)):
        if labels[t - 1] == 1 and labels[t] == 0:
            seg_ends.append(t - 1)
    tail_fp = 0
    for idx in fp_idx:
        t = res.report.timesteps[idx]
        if any(0 < t - e <= 32 for e in seg_ends):
            tail_fp += 1
    print(
        f"seed={seed} blend={blend} epochs={epochs} boost={boost_roots} cs={coef_scale} | "
        f"F1={ev.f1:.3f} P={ev.precision:.3f} R={ev.recall:.3f} AUC={ev.auc:.3f} "
        f"H@100={ev.hitrate[100]:.2f} N@100={ev.ndcg[100]:.2f} | "
        f"attn_prec={prec:.3f} granger={grec:.2f} | "
        f"FP={len(fp_idx)} (tail {tail_fp}) thr={res.report.threshold:.3f} "
        f"[{time.time()-t0:.0f}s]",
        flush=True,
    )


if __name__ == "__main__":
    for args in [
        (7, 1.0, 6, False),
        (7, 0.01, 6, False),
        (7, 0.0, 6, False),
        (7, 0.0, 12, False),
        (7, 0.0, 12, True),
    ]:
        run(*args)
