"""Active learning for segment-level sound event detection, desk scale.

Synthetic corpora with known segment labels, a linear softmax classifier
trained from scratch each round, uncertainty-aggregation query strategies,
and a reproducible pool-based labeling loop with an experiment harness.
"""

from .dataset import (
    Dataset,
    DatasetFormatError,
    DatasetSpec,
    GroundTruthEvent,
    PlacementInfeasibleError,
    SoundFile,
    dataset_text_hash,
    generate_dataset,
    load_dataset,
    place_events,
    quantize9,
    round_half_up,
    save_dataset,
    synth_embedding,
)
from .experiment import (
    CSV_COLUMNS,
    REPORT_METRICS,
    ConfigError,
    ExperimentConfig,
    SummaryRow,
    cmd_generate,
    cmd_report,
    cmd_run,
    cmd_sweep,
    file_hash,
    load_experiment_config,
    mean_ci95,
    spec_from_json,
    summarize_runs,
)
from .loop import (
    ALState,
    BatchSchedule,
    RunFormatError,
    RunHistory,
    RunRow,
    default_schedule,
    evaluate,
    init_seed_set,
    load_run,
    run_al,
    save_run,
)
from .metrics import (
    MetricsRow,
    event_averaged_iou,
    interval_iou,
    match_events,
    recall_f1,
    total_iou,
)
from .model import (
    AdamState,
    ClassifierParams,
    PredictedEvent,
    TrainConfig,
    adam_step,
    cross_entropy_and_grad,
    merge_events,
    predict_file,
    predict_proba,
    smooth_labels,
    softmax,
    train,
)
from .strategies import (
    DiversifierKind,
    FileScore,
    StrategyKind,
    aggregate,
    cosine_distance,
    farthest_traversal,
    file_embedding,
    random_from_prebatch,
    rank_and_select,
    segment_entropies,
    shannon_entropy,
    strategy_from_label,
)

__version__ = "0.1.0"
