from src.eval.metrics import (
    EvalReport,
    PredictionMatrix,
    StoppedPredictions,
    classwise_report,
    evaluate,
    evaluate_with_stopping,
    read_predictions,
    stopping_infer,
    stopping_report,
    write_predictions,
    write_report,
)

__all__ = [
    "EvalReport",
    "PredictionMatrix",
    "StoppedPredictions",
    "classwise_report",
    "evaluate",
    "evaluate_with_stopping",
    "read_predictions",
    "stopping_infer",
    "stopping_report",
    "write_predictions",
    "write_report",
]
