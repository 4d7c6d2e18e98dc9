"""Causality-aware anomaly detection and root-cause ranking for
multivariate time series."""

from .config import Hyperparams
from .data import (
    Dataset,
    NormalizerParams,
    SampleWindow,
    SyntheticConfig,
    TimeSeriesMatrix,
    generate_synthetic,
    load_csv_dataset,
    make_windows,
    normalize,
)
from .graphs import (
    CausalGraph,
    CorrelationGraph,
    TemporalGraph,
    finalize_causal_graph,
    granger_oracle,
    node_embedding_similarity,
    topk_neighbors,
)
from .metrics import (
    EvalResult,
    detection_metrics,
    hitrate_at_p,
    ndcg_at_p,
    point_adjust,
)
from .model import (
    AnomalyDetector,
    ModelCheckpoint,
    build_model,
    load_checkpoint,
    save_checkpoint,
    total_loss,
    train_model,
)
from .pipeline import RepresentationBundle, detect, evaluate_report, forward_window
from .scoring import (
    AnomalyReport,
    anomaly_score,
    localize_root_causes,
    pot_threshold,
    root_cause_scores,
)

__version__ = "0.1.0"
