"""Synthetic-scene evaluation kit: scenes, metrics, loops, and heatmaps."""
from .harness import (
    TtftStats,
    bench_ttft,
    collect_image_confidences,
    grounding_quality_eval,
    model_answer_fn,
    run_caption_eval,
    run_existence_eval,
)
from .heatmap import export_heatmap
from .metrics import (
    AmberScores,
    EvalReport,
    amber_metrics,
    chair_metrics,
    f1_score,
    point_biserial,
    ranking_auc,
    save_report,
)
from .scenes import (
    NEGATIVE_MODES,
    Question,
    Scene,
    SceneParams,
    build_caption_layout,
    build_vqa_layout,
    load_scenes,
    make_scenes,
    partner_table,
    question_text,
    save_scenes,
    scenes_to_payload,
    size_class,
    zipf_weights,
)

__all__ = [
    "AmberScores",
    "EvalReport",
    "NEGATIVE_MODES",
    "Question",
    "Scene",
    "SceneParams",
    "TtftStats",
    "amber_metrics",
    "bench_ttft",
    "build_caption_layout",
    "build_vqa_layout",
    "chair_metrics",
    "collect_image_confidences",
    "export_heatmap",
    "f1_score",
    "grounding_quality_eval",
    "load_scenes",
    "make_scenes",
    "model_answer_fn",
    "partner_table",
    "point_biserial",
    "question_text",
    "ranking_auc",
    "run_caption_eval",
    "run_existence_eval",
    "save_report",
    "save_scenes",
    "scenes_to_payload",
    "size_class",
    "zipf_weights",
]
