from .metrics import ClassMetrics, LevelMetrics, average_precision_at_k, macro_f1, map_at_k
from .perturb import Perturbation, perturb_gender, perturb_management, perturb_word_order
from .runner import (
    AblationResult,
    EvalReport,
    KnnPipeline,
    LinearPipeline,
    TfidfKnnPipeline,
    evaluate,
    record_query,
    run_ablation,
)
from .split import split
