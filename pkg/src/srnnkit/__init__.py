"""srnnkit: prototype nearest-neighbor classifiers, budgeted label-flipping
attacks, and a confidence-radius defense that detects poisoned samples."""

from .data import (
    Component,
    DataError,
    Dataset,
    MixtureSpec,
    Scaler,
    SplitSpec,
    Truth,
    gen_mixture,
    load_csv,
    save_csv,
    split,
    standardize,
)
from .srnn import (
    Assignment,
    SrnnModel,
    TrainConfig,
    assign,
    error_ratio,
    mode_label,
    predict,
    predict_batch,
    train_srnn,
)
from .attack import (
    AttackPlan,
    Flip,
    apply_attack,
    cluster_flip_cost,
    craft_modality_attack,
    ncar_attack,
    nnar_attack,
    select_clusters,
    check_error_bound,
)
from .defense import (
    MALICIOUS,
    DefenseConfig,
    DetectionResult,
    RsrnnModel,
    ScenarioSets,
    assignment_step,
    classify_scenarios,
    gini,
    optimal_radius,
    predict_rsrnn,
    predict_rsrnn_batch,
    prune,
    surrogate_value_and_gradient,
    train_rsrnn,
    update_centroid,
)
from .baselines import KmeansClassifier, KnnClassifier, fit_knn, knn_predict, train_kmeans_classifier
from .evaluation import (
    ExperimentConfig,
    ExperimentReport,
    benchmark_mixture,
    detection_metrics,
    run_experiment,
    scaling_probe,
)

__version__ = "0.1.0"
